#include "peft/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "peft/errors.hpp"

namespace peft {

const std::vector<RunKey>& run_keys() {
  static const std::vector<RunKey> keys = {
      {"model", "toy", "built-in model name or key=value model file"},
      {"weights", "", "base weights file; empty builds them from base_seed (train) or reuses output_dir/weights.bin (eval)"},
      {"base_seed", "1234", "seed of the random base model"},
      {"adapter", "prefix:K=10", "adapter spec, or none"},
      {"adapter_file", "", "adapter to evaluate; empty means output_dir/adapter.bin"},
      {"task", "nli3", "nli3, span_qa, mc4 or arith"},
      {"train_data", "", "JSONL training file"},
      {"train_language", "0", "only examples of this language are trained on"},
      {"eval_data", "", "comma-separated JSONL files to evaluate"},
      {"n_examples", "1000", "examples per language written by gen-task"},
      {"languages", "4", "languages in the synthetic family"},
      {"anchor_fraction", "0.5", "share of concepts spelled the same in every language"},
      {"n_concepts", "64", "concepts in the synthetic family"},
      {"family_seed", "0", "seed of the synthetic language family"},
      {"prior_rho", "0.8", "alignment of target-language embeddings to the source when the base is built"},
      {"learning_rate", "3e-3", "peak learning rate"},
      {"epochs", "2", "passes over the training data"},
      {"weight_decay", "0.02", "decoupled weight decay"},
      {"batch_size", "2", "examples per optimizer step"},
      {"optimizer", "adamw", "adamw or sgd"},
      {"lr_schedule", "constant", "constant or cosine"},
      {"warmup_ratio", "0.1", "warm-up share of steps for the cosine schedule"},
      {"grad_clip", "0", "max global gradient norm; 0 disables clipping"},
      {"full_finetune", "false", "train every base weight instead of an adapter"},
      {"temperature", "0", "sampling temperature; 0 decodes greedily"},
      {"top_p", "1", "nucleus mass kept when sampling"},
      {"max_new_tokens", "16", "generation budget per item"},
      {"eval_batch_size", "64", "prompts decoded together"},
      {"output_dir", "out", "directory for every artifact"},
      {"seed", "0", "seed for adapter init, shuffling and sampling"},
  };
  return keys;
}

RunConfig::RunConfig() {
  for (const auto& k : run_keys()) values_[k.name] = k.default_value;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open run config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return from_text(buf.str(), path.string());
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

RunConfig RunConfig::from_text(const std::string& text, const std::string& origin) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(number) + ": expected key = value");
    try {
      c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  return c;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!values_.count(key)) throw ConfigError("unknown config key '" + key + "'");
  values_[key] = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

std::vector<std::pair<std::string, std::string>> RunConfig::entries() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& k : run_keys()) out.emplace_back(k.name, values_.at(k.name));
  return out;
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  const std::string& v = get(key);
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError("config key '" + key + "' needs a non-negative integer, got '" + v + "'");
  return out;
}

std::size_t RunConfig::get_size(const std::string& key) const { return static_cast<std::size_t>(get_u64(key)); }

double RunConfig::get_double(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::logic_error&) {
    throw ConfigError("config key '" + key + "' needs a number, got '" + v + "'");
  }
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "' needs true or false, got '" + v + "'");
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.learning_rate = get_double("learning_rate");
  t.epochs = get_size("epochs");
  t.weight_decay = get_double("weight_decay");
  t.batch_size = get_size("batch_size");
  t.seed = get_u64("seed");
  t.optimizer = parse_optimizer(get("optimizer"));
  t.schedule = parse_schedule(get("lr_schedule"));
  t.warmup_ratio = get_double("warmup_ratio");
  const double clip = get_double("grad_clip");
  if (clip < 0) throw ConfigError("config key 'grad_clip' must be >= 0");
  if (clip > 0) t.grad_clip = clip;
  t.full_finetune = get_bool("full_finetune");
  t.validate();
  return t;
}

DecodeConfig RunConfig::decode_config() const {
  DecodeConfig d;
  d.temperature = get_double("temperature");
  d.top_p = get_double("top_p");
  d.max_new_tokens = get_size("max_new_tokens");
  d.validate();
  return d;
}

LanguageFamilyConfig RunConfig::family_config() const {
  LanguageFamilyConfig f;
  f.n_languages = get_size("languages");
  f.anchor_fraction = get_double("anchor_fraction");
  f.n_concepts = get_size("n_concepts");
  f.seed = get_u64("family_seed");
  return f;
}

}  // namespace peft
