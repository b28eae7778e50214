#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "peft/decode.hpp"
#include "peft/tasks.hpp"
#include "peft/trainer.hpp"

namespace peft {

/// One documented setting of a run.
struct RunKey {
  std::string name;
  std::string default_value;
  std::string help;
};

/// Every key a run config accepts, with its default, in manifest order.
const std::vector<RunKey>& run_keys();

/// String-valued settings of one CLI run. Values are validated and typed by
/// the accessors below; unknown keys are rejected on set().
class RunConfig {
 public:
  RunConfig();

  /// Parses `key = value` lines; '#' starts a comment. Errors cite the line.
  static RunConfig from_file(const std::filesystem::path& path);
  static RunConfig from_text(const std::string& text, const std::string& origin = "config");

  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  /// Resolved key/value pairs in run_keys() order.
  std::vector<std::pair<std::string, std::string>> entries() const;

  std::size_t get_size(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;

  TrainConfig train_config() const;
  DecodeConfig decode_config() const;
  LanguageFamilyConfig family_config() const;
  std::filesystem::path output_dir() const { return get("output_dir"); }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace peft
