#include "proxflow/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace proxflow::config {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

bool is_known(const std::string& key) {
  const auto& keys = known_keys();
  return std::any_of(keys.begin(), keys.end(), [&](const auto& kv) { return kv.first == key; });
}

double to_double(const KeyValues& kv, const std::string& key) {
  try {
    std::size_t used = 0;
    const double v = std::stod(kv.at(key), &used);
    if (used != kv.at(key).size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::logic_error&) {
    throw std::invalid_argument("config key '" + key + "': expected a number, got '" +
                                kv.at(key) + "'");
  }
}

long to_long(const KeyValues& kv, const std::string& key) {
  try {
    std::size_t used = 0;
    const long v = std::stol(kv.at(key), &used);
    if (used != kv.at(key).size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::logic_error&) {
    throw std::invalid_argument("config key '" + key + "': expected an integer, got '" +
                                kv.at(key) + "'");
  }
}

const std::string kRequired = "<required>";

}  // namespace

MissingKeyError::MissingKeyError(const std::string& key)
    : std::runtime_error("missing required config key '" + key + "'"), key_(key) {}

const std::vector<std::pair<std::string, std::string>>& known_keys() {
  static const std::vector<std::pair<std::string, std::string>> keys = {
      {"mode", kRequired},
      {"lambda", "0.05"},
      {"T", "5"},
      {"K", "5"},
      {"L", "1"},
      {"f", "reverse_kl"},
      {"widths_U", "512,512,512"},
      {"widths_phi", "256,256,256"},
      {"activation", "softplus"},
      {"M", "256"},
      {"N", "256"},
      {"N_iter_U", "2000"},
      {"N_phi_iter", "5"},
      {"lr", "1e-4"},
      {"lr_phi", ""},
      {"adam_beta1", "0.9"},
      {"lr_final_fraction", "1"},
      {"penalty_weight", "10"},
      {"domain_margin", "1e-3"},
      {"blowup_threshold", "1e3"},
      {"compute_indicators", "1"},
      {"target.kind", kRequired},
      {"target.params", kRequired},
      {"seed", kRequired},
      {"out_dir", kRequired},
  };
  return keys;
}

std::vector<std::string> required_keys(bool need_mode) {
  std::vector<std::string> out;
  for (const auto& [key, def] : known_keys()) {
    if (def == kRequired && (need_mode || key != "mode")) out.push_back(key);
  }
  return out;
}

KeyValues parse_text(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (!is_known(key)) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": unknown key '" +
                                  key + "'");
    }
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

KeyValues read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_text(ss.str());
}

void apply_override(KeyValues& kv, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw std::invalid_argument("override '" + assignment + "' is not key=value");
  }
  const std::string key = trim(assignment.substr(0, eq));
  if (!is_known(key)) throw std::invalid_argument("override: unknown key '" + key + "'");
  kv[key] = trim(assignment.substr(eq + 1));
}

KeyValues resolve(const KeyValues& file_values, bool need_mode) {
  KeyValues out;
  for (const auto& [key, def] : known_keys()) {
    if (def != kRequired) out[key] = def;
  }
  for (const auto& [key, value] : file_values) out[key] = value;
  for (const auto& key : required_keys(need_mode)) {
    if (!out.count(key)) throw MissingKeyError(key);
  }
  if (!need_mode && !out.count("mode")) out["mode"] = "w1w2";
  return out;
}

RunSettings settings_from(const KeyValues& kv) {
  RunSettings s;
  auto& fc = s.flow;
  fc.mode = flow::parse_mode(kv.at("mode"));
  fc.lambda = to_double(kv, "lambda");
  fc.T = to_double(kv, "T");
  fc.K = static_cast<int>(to_long(kv, "K"));
  fc.M = static_cast<int>(to_long(kv, "M"));
  fc.N = static_cast<int>(to_long(kv, "N"));
  fc.outer_iters = static_cast<int>(to_long(kv, "N_iter_U"));
  fc.seed = static_cast<std::uint64_t>(to_long(kv, "seed"));
  fc.u_widths = parse_int_list(kv.at("widths_U"));
  fc.phi_widths = parse_int_list(kv.at("widths_phi"));
  fc.activation = nn::parse_activation(kv.at("activation"));
  fc.learning_rate = to_double(kv, "lr");
  fc.adam_beta1 = to_double(kv, "adam_beta1");
  fc.lr_final_fraction = to_double(kv, "lr_final_fraction");
  fc.blowup_threshold = to_double(kv, "blowup_threshold");
  fc.compute_indicators = to_long(kv, "compute_indicators") != 0;
  fc.validate();

  auto& dc = s.divergence;
  dc.f = divergence::parse_fkind(kv.at("f"));
  dc.lipschitz = to_double(kv, "L");
  dc.inner_iters = static_cast<int>(to_long(kv, "N_phi_iter"));
  dc.penalty_weight = to_double(kv, "penalty_weight");
  dc.domain_margin = to_double(kv, "domain_margin");
  dc.learning_rate = kv.at("lr_phi").empty() ? fc.learning_rate : to_double(kv, "lr_phi");
  dc.validate();

  s.target_kind = kv.at("target.kind");
  s.target_params = kv.at("target.params");
  s.target = datasets::parse_target(s.target_kind, s.target_params);
  s.out_dir = kv.at("out_dir");
  return s;
}

std::string to_text(const KeyValues& resolved) {
  std::ostringstream os;
  for (const auto& [key, def] : known_keys()) {
    const auto it = resolved.find(key);
    if (it != resolved.end()) os << key << " = " << it->second << '\n';
  }
  return os.str();
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    std::size_t used = 0;
    int value = 0;
    try {
      value = std::stoi(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (item.empty() || used != item.size()) {
      throw std::invalid_argument("expected a comma-separated integer list, got '" + text + "'");
    }
    out.push_back(value);
  }
  return out;
}

std::string format_int_list(const std::vector<int>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(values[i]);
  }
  return out;
}

}  // namespace proxflow::config
