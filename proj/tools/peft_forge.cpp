// peft-forge: parameter accounting, synthetic data, training, evaluation and
// gradient checks for adapters on a toy decoder-only transformer.

#include <charconv>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "peft/accountant.hpp"
#include "peft/adapters.hpp"
#include "peft/errors.hpp"
#include "peft/eval.hpp"
#include "peft/gradcheck.hpp"
#include "peft/graph.hpp"
#include "peft/kernels.hpp"
#include "peft/run_config.hpp"
#include "peft/serialize.hpp"
#include "peft/tasks.hpp"
#include "peft/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace peft;

namespace {

struct Inputs {
  std::string config_file;
  std::string manifest_file;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flags;  // run key -> flag value
};

std::string flag_name(const std::string& key) {
  std::string f = key;
  std::replace(f.begin(), f.end(), '_', '-');
  return "--" + f;
}

void add_run_options(CLI::App* cmd, Inputs& in) {
  cmd->add_option("--config", in.config_file, "key = value run config file")->check(CLI::ExistingFile);
  cmd->add_option("--manifest", in.manifest_file, "rerun the settings recorded in a manifest.json")
      ->check(CLI::ExistingFile);
  cmd->add_option("--set", in.sets, "extra key=value override (repeatable)");
  for (const auto& k : run_keys()) {
    cmd->add_option_function<std::string>(
        flag_name(k.name), [&in, name = k.name](const std::string& v) { in.flags[name] = v; },
        k.help + " [" + (k.default_value.empty() ? "empty" : k.default_value) + "]");
  }
}

// Precedence: defaults < manifest < config file < --set < named flags.
RunConfig resolve(const Inputs& in, const std::string& command) {
  RunConfig c;
  if (!in.manifest_file.empty()) {
    std::ifstream f(in.manifest_file);
    json m;
    try {
      m = json::parse(f);
    } catch (const json::exception& e) {
      throw ConfigError("manifest " + in.manifest_file + " is not valid JSON: " + e.what());
    }
    if (!m.contains("runs") || !m["runs"].contains(command))
      throw ConfigError("manifest " + in.manifest_file + " records no '" + command + "' run");
    for (const auto& [k, v] : m["runs"][command]["config"].items()) c.set(k, v.get<std::string>());
  }
  if (!in.config_file.empty()) {
    const RunConfig file = RunConfig::from_file(in.config_file);
    const RunConfig defaults;
    // File values override the manifest only where the file sets them.
    for (const auto& [k, v] : file.entries())
      if (v != defaults.get(k) || in.manifest_file.empty()) c.set(k, v);
  }
  for (const auto& s : in.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    c.set(s.substr(0, eq), s.substr(eq + 1));
  }
  for (const auto& [k, v] : in.flags) c.set(k, v);
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write to " + path.string() + " failed");
}

// manifest.json keeps one entry per command so train and eval can share a directory.
void write_manifest(const RunConfig& c, const std::string& command, const std::vector<fs::path>& inputs,
                    const std::vector<fs::path>& artifacts, double runtime) {
  const fs::path path = c.output_dir() / "manifest.json";
  json m;
  if (fs::exists(path)) {
    try {
      std::ifstream f(path);
      m = json::parse(f);
    } catch (const json::exception&) {
      m = json();
    }
  }
  m["tool"] = "peft-forge";
  m["format"] = 1;
  json run;
  run["command"] = command;
  run["seed"] = c.get("seed");
  json cfg;
  for (const auto& [k, v] : c.entries()) cfg[k] = v;
  run["config"] = cfg;
  json in;
  for (const auto& p : inputs) in[p.string()] = file_hash(p);
  run["inputs"] = in;
  json out;
  for (const auto& p : artifacts) out[p.filename().string()] = file_hash(p);
  run["artifacts"] = out;
  run["runtime_seconds"] = runtime;
  m["runs"][command] = run;
  write_text(path, m.dump(2) + "\n");
}

void require_file(const std::string& key, const std::string& path) {
  if (path.empty()) throw ConfigError("config key '" + key + "' is required");
  if (!fs::exists(path)) throw ConfigError("config key '" + key + "': file " + path + " does not exist");
}

ModelConfig model_for_tasks(const RunConfig& c) {
  const ModelConfig m = resolve_model_config(c.get("model"));
  if (m.vocab_size < Tokenizer::kVocabSize)
    throw ConfigError("model vocab_size " + std::to_string(m.vocab_size) + " is below the tokenizer's " +
                      std::to_string(Tokenizer::kVocabSize));
  return m;
}

BaseWeights build_base(const RunConfig& c) {
  BaseWeights w = init_random(model_for_tasks(c), c.get_u64("base_seed"));
  const double rho = c.get_double("prior_rho");
  if (rho > 0) apply_multilingual_prior(w, LanguageFamily(c.family_config()), rho);
  return w;
}

std::vector<Example> load_task_examples(const std::string& path, TaskKind task) {
  std::vector<Example> out;
  load_jsonl(path, [&](Example e) {
    if (e.task != task)
      throw DataError(path + ": example of task " + task_name(e.task) + " in a " + task_name(task) + " run");
    out.push_back(std::move(e));
  });
  return out;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

// ---- params ---------------------------------------------------------------

int cmd_params(const std::string& model, const std::string& adapter, bool as_json) {
  const ModelConfig config = resolve_model_config(model);
  const AdapterSpec spec = parse_adapter_spec(adapter);
  const ParamReport r = count(config, spec);
  const ParamReport base = count_base(config);
  const double pct = 100.0 * static_cast<double>(r.all_trainable()) / static_cast<double>(base.total);
  if (as_json) {
    json j;
    j["model"] = model;
    j["adapter"] = to_string(spec);
    j["total"] = r.total;
    j["human"] = r.human;
    json b;
    for (const auto& [k, v] : r.breakdown) b[k] = v;
    j["breakdown"] = b;
    json s;
    for (const auto& [k, v] : r.separate) s[k] = v;
    j["separate"] = s;
    j["formula"] = r.formula;
    j["base_total"] = base.total;
    j["trainable_percent"] = pct;
    std::cout << j.dump(2) << "\n";
    return 0;
  }
  auto row = [](const std::string& k, const std::string& v) { std::cout << std::left << std::setw(16) << k << v << "\n"; };
  row("model", model);
  row("adapter", to_string(spec));
  for (const auto& [k, v] : r.breakdown) row(k, std::to_string(v));
  for (const auto& [k, v] : r.separate) row(k + " (sep.)", std::to_string(v));
  row("total", std::to_string(r.total) + " (" + r.human + ")");
  row("formula", r.formula);
  row("base", std::to_string(base.total) + " (" + base.human + ")");
  std::ostringstream p;
  p << std::setprecision(4) << pct << "%";
  row("trainable", p.str());
  return 0;
}

// ---- gen-task -------------------------------------------------------------

int cmd_gen_task(const RunConfig& c) {
  const auto started = std::chrono::steady_clock::now();
  const TaskKind task = parse_task(c.get("task"));
  const LanguageFamily family(c.family_config());
  const auto sets = gen_task(task, c.get_size("n_examples"), family, c.get_u64("seed"));
  fs::create_directories(c.output_dir());
  std::vector<fs::path> written;
  for (std::size_t l = 0; l < sets.size(); ++l) {
    const fs::path p = c.output_dir() / (task_name(task) + "." + std::to_string(l) + ".jsonl");
    save_jsonl(p, sets[l]);
    written.push_back(p);
    std::cout << p.string() << "\n";
  }
  write_manifest(c, "gen-task", {}, written, seconds_since(started));
  return 0;
}

// ---- train ----------------------------------------------------------------

int cmd_train(const RunConfig& c) {
  const auto started = std::chrono::steady_clock::now();
  const TaskKind task = parse_task(c.get("task"));
  const TrainConfig tc = c.train_config();
  require_file("train_data", c.get("train_data"));
  if (!c.get("weights").empty()) require_file("weights", c.get("weights"));
  std::optional<AdapterSpec> spec;
  if (!tc.full_finetune) {
    if (c.get("adapter") == "none") throw ConfigError("config key 'adapter' is none but full_finetune is off");
    spec = parse_adapter_spec(c.get("adapter"));
  }
  BaseWeights weights = c.get("weights").empty() ? build_base(c) : load_weights(c.get("weights"));
  if (spec) validate(*spec, weights.config);

  const int lang = static_cast<int>(c.get_size("train_language"));
  std::vector<TrainExample> data;
  std::size_t line = 0;
  for (const Example& e : load_task_examples(c.get("train_data"), task)) {
    ++line;
    if (e.language != lang) continue;
    try {
      const RenderedPrompt r = render_training(e);
      data.push_back({r.tokens, r.delimiter});
    } catch (const DataError& err) {
      throw DataError(c.get("train_data") + ":" + std::to_string(line) + ": " + err.what());
    }
  }
  if (data.empty())
    throw DataError(c.get("train_data") + ": no examples of language " + std::to_string(lang));

  fs::create_directories(c.output_dir());
  std::optional<Adapter> adapter;
  if (spec) adapter.emplace(Adapter::init(weights.config, *spec, c.get_u64("seed")));
  const TrainLog log = train(weights, adapter ? &*adapter : nullptr, data, tc);

  std::vector<fs::path> artifacts;
  const fs::path out = c.output_dir();
  if (adapter) {
    save_adapter(out / "adapter.bin", *adapter);
    artifacts.push_back(out / "adapter.bin");
  }
  save_weights(out / "weights.bin", weights);
  artifacts.push_back(out / "weights.bin");
  write_text(out / "train_log.csv", log.to_csv());
  write_text(out / "train_log.json", log.to_json(false) + "\n");
  artifacts.push_back(out / "train_log.csv");
  std::vector<fs::path> inputs = {c.get("train_data")};
  if (!c.get("weights").empty()) inputs.emplace_back(c.get("weights"));
  write_manifest(c, "train", inputs, artifacts, seconds_since(started));
  std::cout << "trained " << log.steps.size() << " steps, final loss " << log.steps.back().loss << "\n";
  return 0;
}

// ---- eval -----------------------------------------------------------------

std::size_t eval_threads() {
  std::size_t n = static_cast<std::size_t>(std::max(1, kernels::max_threads()));
  if (const char* env = std::getenv("PEFT_FORGE_THREADS")) {
    const std::string s(env);
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || v < 1)
      throw ConfigError("PEFT_FORGE_THREADS must be a positive integer, got '" + s + "'");
    n = v;
  }
  return n;
}

int cmd_eval(const RunConfig& c) {
  const auto started = std::chrono::steady_clock::now();
  const TaskKind task = parse_task(c.get("task"));
  const bool full = c.get_bool("full_finetune");
  const DecodeConfig decode = c.decode_config();
  const auto files = split_list(c.get("eval_data"));
  if (files.empty()) throw ConfigError("config key 'eval_data' is required");
  for (const auto& f : files) require_file("eval_data", f);

  std::vector<fs::path> inputs;
  fs::path weights_path = c.get("weights");
  if (!weights_path.empty()) require_file("weights", weights_path.string());
  else if (fs::exists(c.output_dir() / "weights.bin")) weights_path = c.output_dir() / "weights.bin";
  else if (full) throw ConfigError("full_finetune eval needs output_dir/weights.bin or the 'weights' key");
  const BaseWeights weights = weights_path.empty() ? build_base(c) : load_weights(weights_path);
  if (!weights_path.empty()) inputs.push_back(weights_path);

  std::optional<Adapter> adapter;
  std::string method = full ? "full_ft" : "base";
  if (!full && c.get("adapter") != "none") {
    const fs::path path = c.get("adapter_file").empty() ? c.output_dir() / "adapter.bin" : fs::path(c.get("adapter_file"));
    require_file("adapter_file", path.string());
    adapter.emplace(load_adapter(path));
    if (!(adapter->config() == weights.config))
      throw ConfigError("adapter " + path.string() + " was trained for a different model config");
    method = adapter_name(adapter->spec());
    inputs.push_back(path);
  }

  std::vector<Example> examples;
  for (const auto& f : files) {
    auto part = load_task_examples(f, task);
    examples.insert(examples.end(), part.begin(), part.end());
    inputs.emplace_back(f);
  }
  EvalOptions options;
  options.decode = decode;
  options.seed = c.get_u64("seed");
  options.threads = eval_threads();
  options.batch_size = std::max<std::size_t>(1, c.get_size("eval_batch_size"));
  options.method = method;
  options.adapter = adapter ? to_string(adapter->spec()) : "";
  const EvalReport report = evaluate(weights, adapter ? &*adapter : nullptr, examples, options);

  fs::create_directories(c.output_dir());
  const fs::path out = c.output_dir();
  write_text(out / "report.json", report.to_json(false));
  write_text(out / "report.csv", report.to_csv());
  write_manifest(c, "eval", inputs, {out / "report.json", out / "report.csv"}, seconds_since(started));
  std::cout << report.to_csv();
  return 0;
}

// ---- gradcheck ------------------------------------------------------------

int cmd_gradcheck(const RunConfig& c, double eps, double tol, std::size_t probes) {
  const ModelConfig model = resolve_model_config(c.get("model"));
  const AdapterSpec spec = parse_adapter_spec(c.get("adapter"));
  const BaseWeights weights = init_random(model, c.get_u64("base_seed"));
  Adapter adapter = Adapter::init(model, spec, c.get_u64("seed"));
  // Zero-initialized factors and gates would leave their partners without a
  // gradient, so every adapter tensor gets a small perturbation on top of its
  // init. Larger ones saturate attention and the eps^2 truncation term of the
  // central difference alone exceeds 1e-4.
  std::mt19937_64 rng(c.get_u64("seed") + 1);
  std::normal_distribution<double> normal(0.0, 0.1);
  for (const auto& p : adapter.trainable_parameters()) {
    Tensor t = p.tensor;
    for (auto& v : t.data()) v += static_cast<Scalar>(normal(rng));
  }
  std::vector<TrainExample> batch(2);
  std::uniform_int_distribution<TokenId> token(3, static_cast<TokenId>(model.vocab_size - 1));
  for (auto& e : batch) {
    for (int i = 0; i < 8; ++i) e.tokens.push_back(token(rng));
    e.delimiter = 4;
  }
  std::vector<const TrainExample*> ptrs = {&batch[0], &batch[1]};
  GradCheckOptions opt;
  opt.eps = eps;
  opt.tolerance = tol;
  opt.max_probes = probes;
  opt.seed = c.get_u64("seed");
  const GradCheckReport r =
      grad_check([&] { return batch_loss(weights, &adapter, ptrs); }, adapter.trainable_parameters(), opt);
  for (const auto& e : r.entries)
    std::cout << std::left << std::setw(28) << e.name << " probed " << std::setw(6) << e.probed << " max rel err "
              << std::setw(12) << e.max_rel_error << (e.passed ? "ok" : "FAIL") << "\n";
  std::cout << (r.passed ? "gradcheck passed" : "gradcheck FAILED") << " (worst " << r.worst << ")\n";
  return r.passed ? 0 : 4;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"peft-forge: adapters for a toy decoder-only transformer"};
  app.require_subcommand(1);

  std::string p_model = "llama-3.1-8B", p_adapter = "prefix:K=10,L=30";
  bool p_json = false;
  auto* params = app.add_subcommand("params", "count trainable parameters without allocating");
  params->add_option("--model", p_model, "built-in model name or key=value model file");
  params->add_option("--adapter", p_adapter, "adapter spec");
  params->add_flag("--json", p_json, "emit JSON");

  Inputs gen_in, train_in, eval_in, grad_in;
  auto* gen = app.add_subcommand("gen-task", "write synthetic per-language JSONL files");
  add_run_options(gen, gen_in);
  auto* trn = app.add_subcommand("train", "train an adapter (or the full model) on one language");
  add_run_options(trn, train_in);
  auto* evl = app.add_subcommand("eval", "decode and score every example");
  add_run_options(evl, eval_in);
  double g_eps = 1e-5, g_tol = 1e-4;
  std::size_t g_probes = 0;
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of adapter gradients");
  add_run_options(grad, grad_in);
  grad->add_option("--eps", g_eps, "central-difference step");
  grad->add_option("--tol", g_tol, "max relative error");
  grad->add_option("--probes", g_probes, "coordinates per tensor (0 = all)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*params) return cmd_params(p_model, p_adapter, p_json);
    if (*gen) return cmd_gen_task(resolve(gen_in, "gen-task"));
    if (*trn) return cmd_train(resolve(train_in, "train"));
    if (*evl) return cmd_eval(resolve(eval_in, "eval"));
    if (*grad) {
      Inputs in = grad_in;
      if (!in.flags.count("model") && in.config_file.empty() && in.manifest_file.empty()) in.flags["model"] = "toy";
      return cmd_gradcheck(resolve(in, "gradcheck"), g_eps, g_tol, g_probes);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const DimensionError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
