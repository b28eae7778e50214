#include "peft/accountant.hpp"

#include <cstdio>
#include <variant>

namespace peft {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};

ParamReport finish(ParamReport r) {
  r.total = 0;
  for (const auto& [name, n] : r.breakdown) r.total += n;
  r.human = human_count(r.total);
  return r;
}

}  // namespace

ParamCount ParamReport::all_trainable() const {
  ParamCount n = total;
  for (const auto& [name, c] : separate) n += c;
  return n;
}

std::string human_count(ParamCount count) {
  const ParamCount hundredths = (count + 5000) / 10000;
  char buf[48];
  std::snprintf(buf, sizeof buf, "%llu.%02lluM", static_cast<unsigned long long>(hundredths / 100),
                static_cast<unsigned long long>(hundredths % 100));
  return buf;
}

ParamReport count(const ModelConfig& config, const AdapterSpec& spec) {
  validate(spec, config);
  const ParamCount d = config.d_model;
  const ParamCount layers = adapted_layers(spec, config);
  ParamReport r;
  std::visit(Overloaded{[&](const LoraSpec& l) {
                          const ParamCount out_dims[3] = {config.q_dim(), config.kv_dim(), config.kv_dim()};
                          const char* names[3] = {"lora.q", "lora.k", "lora.v"};
                          for (std::size_t t = 0; t < 3; ++t) {
                            if (!(l.targets & (1u << t))) continue;
                            r.breakdown.emplace_back(names[t], config.n_layers * l.rank * (d + out_dims[t]));
                          }
                          r.formula = "sum over targets and layers of r * (d_in + d_out)";
                        },
                        [&](const SoftPromptSpec& p) {
                          r.breakdown.emplace_back("soft_prompt", p.tokens * d);
                          r.formula = "K * d_model";
                        },
                        [&](const PrefixSpec& p) {
                          r.breakdown.emplace_back("prefix", p.tokens * d * layers);
                          r.formula = "K * d_model * L";
                        },
                        [&](const LlamaAdapterSpec& p) {
                          r.breakdown.emplace_back("prefix", p.tokens * d * layers);
                          const ParamCount per = p.gate == GateGranularity::kPerHead ? config.n_heads : 1;
                          r.separate.emplace_back("gate", layers * per);
                          r.formula = p.gate == GateGranularity::kPerHead ? "K * d_model * L (+ gates L * n_heads)"
                                                                           : "K * d_model * L (+ gates L)";
                        }},
             spec);
  return finish(std::move(r));
}

ParamReport count_base(const ModelConfig& config) {
  config.validate();
  const ParamCount d = config.d_model, v = config.vocab_size, n = config.n_layers;
  const ParamCount q = config.q_dim(), kv = config.kv_dim(), ff = config.d_ff;
  ParamReport r;
  r.breakdown.emplace_back("tok_embeddings", v * d);
  r.breakdown.emplace_back("attention", n * (d * q + 2 * d * kv + q * d));
  r.breakdown.emplace_back("feed_forward", n * 3 * d * ff);
  r.breakdown.emplace_back("norms", n * 2 * d + (n > 0 ? d : 0));
  r.breakdown.emplace_back("output", config.tie_embeddings ? 0 : d * v);
  r.formula =
      "V*d + n_layers*(d*q + 2*d*kv + q*d + 3*d*d_ff + 2*d) + d (final norm, if n_layers > 0) + d*V (untied head)";
  return finish(std::move(r));
}

}  // namespace peft
