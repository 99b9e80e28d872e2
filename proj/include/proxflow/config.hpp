#pragma once

#include "proxflow/datasets.hpp"
#include "proxflow/divergence.hpp"
#include "proxflow/flow.hpp"

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace proxflow::config {

class MissingKeyError : public std::runtime_error {
 public:
  explicit MissingKeyError(const std::string& key);
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

/// Plain `key = value` lines; '#' starts a comment. Later assignments win.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_text(const std::string& text);
KeyValues read_file(const std::string& path);
/// Applies one "key=value" override. Unknown keys are rejected.
void apply_override(KeyValues& kv, const std::string& assignment);

struct RunSettings {
  flow::FlowConfig flow;
  divergence::DivergenceConfig divergence;
  datasets::TargetSpec target;
  std::string target_kind;
  std::string target_params;
  std::string out_dir;
};

/// Every accepted key with its default; keys without a default are required.
const std::vector<std::pair<std::string, std::string>>& known_keys();
std::vector<std::string> required_keys(bool need_mode);

/// Defaults + file values; throws MissingKeyError naming the first absent required key.
KeyValues resolve(const KeyValues& file_values, bool need_mode = true);
RunSettings settings_from(const KeyValues& resolved);

/// `key = value` lines in known-key order; reading the output back gives the same settings.
std::string to_text(const KeyValues& resolved);

std::vector<int> parse_int_list(const std::string& text);
std::string format_int_list(const std::vector<int>& values);

}  // namespace proxflow::config
