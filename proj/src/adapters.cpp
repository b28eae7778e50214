#include "peft/adapters.hpp"

#include <charconv>
#include <cmath>
#include <map>
#include <random>
#include <sstream>

#include "peft/errors.hpp"
#include "peft/graph.hpp"

namespace peft {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};

std::size_t parse_count(const std::string& key, const std::string& value) {
  std::size_t out = 0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size())
    throw ConfigError("adapter spec: '" + key + "' needs a non-negative integer, got '" + value + "'");
  return out;
}

double parse_real(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::logic_error&) {
    throw ConfigError("adapter spec: '" + key + "' needs a number, got '" + value + "'");
  }
}

const char* target_name(std::size_t t) { return t == 0 ? "q" : t == 1 ? "k" : "v"; }

// Prefix slots shared by prefix tuning and the gated variant.
class PrefixTap : public AttentionTap {
 public:
  PrefixTap(Tensor prefix, Tensor gate) : prefix_(std::move(prefix)), gate_(std::move(gate)) {}

  PrefixKV prefix(const LayerWeights& layer) const override {
    return {matmul(prefix_, layer.wk), matmul(prefix_, layer.wv)};
  }

  Tensor weights(std::size_t head, const Tensor& scores, std::size_t n_prefix) const override {
    if (!gate_.defined()) return softmax(scores);
    // Separate softmax per block; only the prefix block is gated.
    const Tensor prefix_scores = slice(scores, 1, 0, n_prefix);
    const Tensor seq_scores = slice(scores, 1, n_prefix, scores.cols());
    const Tensor g = gate_.numel() == 1 ? gate_ : slice(gate_, 0, head, head + 1);
    return concat(scale_by(softmax(prefix_scores), tanh(g)), softmax(seq_scores), 1);
  }

 private:
  Tensor prefix_;
  Tensor gate_;
};

}  // namespace

AdapterSpec parse_adapter_spec(std::string_view text) {
  const std::string s(text);
  const auto colon = s.find(':');
  const std::string name = s.substr(0, colon);
  std::map<std::string, std::string> kv;
  if (colon != std::string::npos) {
    std::stringstream rest(s.substr(colon + 1));
    std::string item;
    while (std::getline(rest, item, ',')) {
      if (item.empty()) continue;
      const auto eq = item.find('=');
      if (eq == std::string::npos) throw ConfigError("adapter spec: expected key=value, got '" + item + "'");
      if (!kv.emplace(item.substr(0, eq), item.substr(eq + 1)).second)
        throw ConfigError("adapter spec: key '" + item.substr(0, eq) + "' given twice");
    }
  }
  auto take = [&](std::initializer_list<const char*> keys) -> std::optional<std::pair<std::string, std::string>> {
    for (const char* k : keys) {
      if (auto it = kv.find(k); it != kv.end()) {
        auto out = *it;
        kv.erase(it);
        return out;
      }
    }
    return std::nullopt;
  };
  AdapterSpec spec;
  if (name == "lora") {
    LoraSpec l;
    if (auto v = take({"r", "rank"})) l.rank = parse_count(v->first, v->second);
    if (auto v = take({"alpha"})) l.alpha = parse_real(v->first, v->second);
    if (auto v = take({"targets"})) {
      l.targets = 0;
      for (char ch : v->second) {
        if (ch == 'q') l.targets |= kLoraQ;
        else if (ch == 'k') l.targets |= kLoraK;
        else if (ch == 'v') l.targets |= kLoraV;
        else throw ConfigError("adapter spec: 'targets' accepts letters q, k, v; got '" + v->second + "'");
      }
    }
    spec = l;
  } else if (name == "soft") {
    SoftPromptSpec p;
    if (auto v = take({"K", "tokens"})) p.tokens = parse_count(v->first, v->second);
    spec = p;
  } else if (name == "prefix") {
    PrefixSpec p;
    if (auto v = take({"K", "tokens"})) p.tokens = parse_count(v->first, v->second);
    if (auto v = take({"L", "layers"})) p.layers = parse_count(v->first, v->second);
    spec = p;
  } else if (name == "llama_adapter") {
    LlamaAdapterSpec p;
    if (auto v = take({"K", "tokens"})) p.tokens = parse_count(v->first, v->second);
    if (auto v = take({"L", "layers"})) p.layers = parse_count(v->first, v->second);
    if (auto v = take({"gate"})) {
      if (v->second == "layer") p.gate = GateGranularity::kPerLayer;
      else if (v->second == "head") p.gate = GateGranularity::kPerHead;
      else throw ConfigError("adapter spec: 'gate' must be layer or head, got '" + v->second + "'");
    }
    spec = p;
  } else {
    throw ConfigError("adapter spec: unknown adapter '" + name + "' (expected lora, soft, prefix, llama_adapter)");
  }
  if (!kv.empty()) throw ConfigError("adapter spec: unknown key '" + kv.begin()->first + "' for " + name);
  return spec;
}

std::string adapter_name(const AdapterSpec& spec) {
  return std::visit(Overloaded{[](const LoraSpec&) { return std::string("lora"); },
                               [](const SoftPromptSpec&) { return std::string("soft"); },
                               [](const PrefixSpec&) { return std::string("prefix"); },
                               [](const LlamaAdapterSpec&) { return std::string("llama_adapter"); }},
                    spec);
}

std::string to_string(const AdapterSpec& spec) {
  std::ostringstream out;
  std::visit(Overloaded{[&](const LoraSpec& l) {
                          char alpha[32];
                          const auto res = std::to_chars(alpha, alpha + sizeof alpha, l.alpha);
                          out << "lora:r=" << l.rank << ",alpha=" << std::string_view(alpha, res.ptr - alpha)
                              << ",targets=";
                          for (std::size_t t = 0; t < 3; ++t)
                            if (l.targets & (1u << t)) out << target_name(t);
                        },
                        [&](const SoftPromptSpec& p) { out << "soft:K=" << p.tokens; },
                        [&](const PrefixSpec& p) {
                          out << "prefix:K=" << p.tokens;
                          if (p.layers) out << ",L=" << *p.layers;
                        },
                        [&](const LlamaAdapterSpec& p) {
                          out << "llama_adapter:K=" << p.tokens;
                          if (p.layers) out << ",L=" << *p.layers;
                          out << ",gate=" << (p.gate == GateGranularity::kPerHead ? "head" : "layer");
                        }},
             spec);
  return out.str();
}

std::size_t adapted_layers(const AdapterSpec& spec, const ModelConfig& config) {
  if (const auto* p = std::get_if<PrefixSpec>(&spec)) return p->layers.value_or(config.n_layers);
  if (const auto* p = std::get_if<LlamaAdapterSpec>(&spec)) return p->layers.value_or(config.n_layers);
  if (std::holds_alternative<LoraSpec>(spec)) return config.n_layers;
  return 0;
}

std::size_t first_adapted_layer(const AdapterSpec& spec, const ModelConfig& config) {
  if (std::holds_alternative<SoftPromptSpec>(spec)) return 0;
  return config.n_layers - adapted_layers(spec, config);
}

void validate(const AdapterSpec& spec, const ModelConfig& config) {
  config.validate();
  std::visit(Overloaded{[&](const LoraSpec& l) {
                          if (l.rank < 1) throw ConfigError("lora: rank must be >= 1");
                          if (l.targets == 0) throw ConfigError("lora: no target projections");
                          if (!(l.alpha > 0)) throw ConfigError("lora: alpha must be positive");
                          const std::size_t limit_q = std::min(config.d_model, config.q_dim());
                          const std::size_t limit_kv = std::min(config.d_model, config.kv_dim());
                          if ((l.targets & kLoraQ) && l.rank > limit_q)
                            throw ConfigError("lora: rank " + std::to_string(l.rank) + " exceeds min(d, k) = " +
                                              std::to_string(limit_q) + " of W_q");
                          if ((l.targets & (kLoraK | kLoraV)) && l.rank > limit_kv)
                            throw ConfigError("lora: rank " + std::to_string(l.rank) + " exceeds min(d, k) = " +
                                              std::to_string(limit_kv) + " of W_k/W_v");
                        },
                        [&](const SoftPromptSpec& p) {
                          if (p.tokens < 1) throw ConfigError("soft: K must be >= 1");
                          if (p.tokens >= config.max_seq) throw ConfigError("soft: K must be below max_seq");
                        },
                        [&](const auto& p) {
                          if (p.tokens < 1) throw ConfigError(adapter_name(spec) + ": K must be >= 1");
                          const std::size_t layers = p.layers.value_or(config.n_layers);
                          if (layers < 1 || layers > config.n_layers)
                            throw ConfigError(adapter_name(spec) + ": L = " + std::to_string(layers) +
                                              " outside [1, " + std::to_string(config.n_layers) + "]");
                        }},
             spec);
}

std::vector<std::pair<std::string, Shape>> adapter_layout(const ModelConfig& config, const AdapterSpec& spec) {
  validate(spec, config);
  std::vector<std::pair<std::string, Shape>> out;
  std::visit(Overloaded{[&](const LoraSpec& l) {
                          const std::size_t out_dims[3] = {config.q_dim(), config.kv_dim(), config.kv_dim()};
                          for (std::size_t layer = 0; layer < config.n_layers; ++layer)
                            for (std::size_t t = 0; t < 3; ++t) {
                              if (!(l.targets & (1u << t))) continue;
                              const std::string p = "layers." + std::to_string(layer) + "." + target_name(t) + ".";
                              out.emplace_back(p + "lora_a", Shape{l.rank, config.d_model});
                              out.emplace_back(p + "lora_b", Shape{out_dims[t], l.rank});
                            }
                        },
                        [&](const SoftPromptSpec& p) { out.emplace_back("soft_prompt", Shape{p.tokens, config.d_model}); },
                        [&](const PrefixSpec& p) {
                          for (std::size_t layer = first_adapted_layer(spec, config); layer < config.n_layers; ++layer)
                            out.emplace_back("layers." + std::to_string(layer) + ".prefix",
                                             Shape{p.tokens, config.d_model});
                        },
                        [&](const LlamaAdapterSpec& p) {
                          const std::size_t gates = p.gate == GateGranularity::kPerHead ? config.n_heads : 1;
                          for (std::size_t layer = first_adapted_layer(spec, config); layer < config.n_layers;
                               ++layer) {
                            const std::string name = "layers." + std::to_string(layer) + ".";
                            out.emplace_back(name + "prefix", Shape{p.tokens, config.d_model});
                            out.emplace_back(name + "gate", Shape{gates});
                          }
                        }},
             spec);
  return out;
}

Tensor lora_project(const Tensor& w, const Tensor& a, const Tensor& b, double alpha, std::size_t rank,
                    const Tensor& h) {
  if (a.rank() != 2 || b.rank() != 2 || a.rows() != rank || b.cols() != rank || a.cols() != w.rows() ||
      b.rows() != w.cols())
    throw DimensionError("lora_project: W " + shape_str(w.shape()) + ", A " + shape_str(a.shape()) + ", B " +
                         shape_str(b.shape()) + " are not conformal for rank " + std::to_string(rank));
  const Tensor base = matmul(h, w);
  const Tensor update = matmul_nt(matmul_nt(h, a), b);
  return add(base, scale(update, static_cast<Scalar>(alpha / static_cast<double>(rank))));
}

Tensor lora_merge(const Tensor& w, const Tensor& a, const Tensor& b, double alpha, std::size_t rank) {
  if (a.rows() != rank || b.cols() != rank || a.cols() != w.rows() || b.rows() != w.cols())
    throw DimensionError("lora_merge: W " + shape_str(w.shape()) + ", A " + shape_str(a.shape()) + ", B " +
                         shape_str(b.shape()) + " are not conformal");
  const Tensor delta = matmul(transpose(a), transpose(b));
  return add(w, scale(delta, static_cast<Scalar>(alpha / static_cast<double>(rank))));
}

Tensor prefix_attend(const Tensor& prefix, const Tensor& hidden, const Tensor& wq, const Tensor& wk, const Tensor& wv,
                     const Tensor& wo, const Tensor& gate) {
  const Tensor q = matmul(hidden, wq);
  const Tensor k = matmul(hidden, wk);
  const Tensor v = matmul(hidden, wv);
  Tensor pk, pv;
  if (prefix.defined() && prefix.numel() > 0) {
    if (prefix.cols() != hidden.cols())
      throw DimensionError("prefix_attend: prefix " + shape_str(prefix.shape()) + " and hidden " +
                           shape_str(hidden.shape()) + " widths differ");
    pk = matmul(prefix, wk);
    pv = matmul(prefix, wv);
  }
  const PrefixTap tap(prefix, gate);
  return matmul(attend(q, k, v, pk, pv, &tap, 0), wo);
}

Adapter::Adapter(const ModelConfig& config, AdapterSpec spec, NamedTensors state)
    : config_(config), spec_(std::move(spec)), state_(std::move(state)) {
  bind();
}

Adapter::Adapter(Adapter&&) noexcept = default;
Adapter& Adapter::operator=(Adapter&&) noexcept = default;
Adapter::~Adapter() = default;

Adapter Adapter::init(const ModelConfig& config, const AdapterSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  NamedTensors state;
  for (const auto& [name, shape] : adapter_layout(config, spec)) {
    std::vector<Scalar> values(shape_numel(shape), 0);
    if (name.ends_with("lora_a")) {
      std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(shape[1])));
      for (auto& v : values) v = static_cast<Scalar>(normal(rng));
    } else if (name.ends_with("prefix") || name == "soft_prompt") {
      std::normal_distribution<double> normal(0.0, 1.0);
      for (auto& v : values) v = static_cast<Scalar>(normal(rng));
    }
    // lora_b and gates start at exactly zero.
    state.push_back({name, Tensor::from(shape, std::move(values), true)});
  }
  return Adapter(config, spec, std::move(state));
}

Adapter Adapter::from_state(const ModelConfig& config, const AdapterSpec& spec, NamedTensors state) {
  const auto layout = adapter_layout(config, spec);
  if (layout.size() != state.size())
    throw DataError("adapter: expected " + std::to_string(layout.size()) + " tensors for " + to_string(spec) +
                    ", found " + std::to_string(state.size()));
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (layout[i].first != state[i].name || layout[i].second != state[i].tensor.shape())
      throw DataError("adapter: tensor '" + state[i].name + "' " + shape_str(state[i].tensor.shape()) +
                      " does not match expected '" + layout[i].first + "' " + shape_str(layout[i].second));
    state[i].tensor.set_requires_grad(true);
  }
  return Adapter(config, spec, std::move(state));
}

Adapter Adapter::clone() const {
  NamedTensors copy = state_;
  for (auto& t : copy) {
    t.tensor = t.tensor.clone();
    t.tensor.set_requires_grad(true);
  }
  return Adapter(config_, spec_, std::move(copy));
}

void Adapter::bind() {
  lora_.assign(config_.n_layers, {});
  taps_.clear();
  taps_.resize(config_.n_layers);
  std::map<std::string, Tensor> by_name;
  for (const auto& t : state_) by_name[t.name] = t.tensor;
  if (std::holds_alternative<SoftPromptSpec>(spec_)) soft_prompt_ = by_name.at("soft_prompt");
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    for (std::size_t t = 0; t < 3; ++t) {
      const std::string key = p + target_name(t) + ".";
      if (by_name.count(key + "lora_a")) lora_[l][t] = {by_name[key + "lora_a"], by_name[key + "lora_b"]};
    }
    if (by_name.count(p + "prefix")) {
      const Tensor gate = by_name.count(p + "gate") ? by_name[p + "gate"] : Tensor();
      taps_[l] = std::make_unique<PrefixTap>(by_name[p + "prefix"], gate);
    }
  }
}

BaseWeights Adapter::merge_into(const BaseWeights& base) const {
  const auto* l = std::get_if<LoraSpec>(&spec_);
  if (!l) throw ConfigError("merge: only LoRA adapters can be folded into the base weights");
  NoGradGuard no_grad;
  BaseWeights merged = base.clone();
  for (std::size_t layer = 0; layer < config_.n_layers; ++layer) {
    Tensor* targets[3] = {&merged.layers[layer].wq, &merged.layers[layer].wk, &merged.layers[layer].wv};
    for (std::size_t t = 0; t < 3; ++t) {
      const auto& [a, b] = lora_[layer][t];
      if (!a.defined()) continue;
      *targets[t] = lora_merge(*targets[t], a, b, l->alpha, l->rank);
    }
  }
  return merged;
}

Tensor Adapter::input_prefix() const { return soft_prompt_; }

Tensor Adapter::project(std::size_t layer, Projection which, const Tensor& x, const Tensor& w) const {
  const auto* l = std::get_if<LoraSpec>(&spec_);
  if (l) {
    const auto& [a, b] = lora_[layer][static_cast<std::size_t>(which)];
    if (a.defined()) return lora_project(w, a, b, l->alpha, l->rank, x);
  }
  return matmul(x, w);
}

const AttentionTap* Adapter::tap(std::size_t layer) const { return taps_[layer].get(); }

}  // namespace peft
