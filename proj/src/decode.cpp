#include "peft/decode.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "peft/errors.hpp"
#include "peft/graph.hpp"

namespace peft {

void DecodeConfig::validate() const {
  if (!(temperature >= 0)) throw ConfigError("decode: temperature must be >= 0");
  if (!(top_p > 0 && top_p <= 1)) throw ConfigError("decode: top_p must lie in (0, 1]");
  if (max_new_tokens < 1) throw ConfigError("decode: max_new_tokens must be >= 1");
}

std::vector<double> tempered_probs(std::span<const Scalar> logits, double temperature) {
  std::vector<double> p(logits.size());
  double hi = -INFINITY;
  for (Scalar v : logits) hi = std::max(hi, static_cast<double>(v));
  double total = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp((static_cast<double>(logits[i]) - hi) / temperature);
    total += p[i];
  }
  for (auto& v : p) v /= total;
  return p;
}

std::vector<std::size_t> top_p_support(std::span<const double> probs, double top_p) {
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  double mass = 0;
  std::size_t keep = 0;
  while (keep < order.size()) {
    mass += probs[order[keep]];
    ++keep;
    // Rounding in the running sum must not push the cut past the nominal mass.
    if (mass >= top_p - 1e-12) break;
  }
  order.resize(keep);
  return order;
}

TokenId sample_next(std::span<const Scalar> logits, const DecodeConfig& decode, std::mt19937_64& rng) {
  if (decode.temperature == 0) {
    return static_cast<TokenId>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  }
  const std::vector<double> probs = tempered_probs(logits, decode.temperature);
  const std::vector<std::size_t> support = top_p_support(probs, decode.top_p);
  double mass = 0;
  for (std::size_t i : support) mass += probs[i];
  // 53 random bits → uniform in [0, 1).
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53 * mass;
  double acc = 0;
  for (std::size_t i : support) {
    acc += probs[i];
    if (u < acc) return static_cast<TokenId>(i);
  }
  return static_cast<TokenId>(support.back());
}

std::vector<std::vector<TokenId>> generate_batch(const BaseWeights& weights, const ForwardHooks* hooks,
                                                 std::span<const std::vector<TokenId>> prompts,
                                                 const DecodeConfig& decode, std::span<std::mt19937_64> rngs) {
  decode.validate();
  if (rngs.size() != prompts.size()) throw ConfigError("generate: one rng per prompt required");
  NoGradGuard no_grad;
  std::vector<std::vector<TokenId>> seqs(prompts.begin(), prompts.end());
  std::vector<std::vector<TokenId>> out(prompts.size());
  std::vector<bool> done(prompts.size(), false);
  ForwardOptions options;
  options.hooks = hooks;
  const Tensor soft = hooks ? hooks->input_prefix() : Tensor();
  const std::size_t n_soft = soft.defined() ? soft.rows() : 0;
  for (std::size_t step = 0; step < decode.max_new_tokens; ++step) {
    if (std::all_of(done.begin(), done.end(), [](bool d) { return d; })) break;
    const Tensor hidden = hidden_states(weights, seqs, options);
    const std::size_t len = seqs[0].size();
    std::vector<TokenId> last(seqs.size());
    for (std::size_t i = 0; i < seqs.size(); ++i) last[i] = static_cast<TokenId>(i * len + len - 1);
    const Tensor logits = output_logits(weights, gather_rows(hidden, last));
    const std::size_t vocab = logits.cols();
    for (std::size_t i = 0; i < seqs.size(); ++i) {
      // Finished rows keep padding with EOS so the batch stays rectangular.
      TokenId next = decode.eos;
      if (!done[i]) {
        next = sample_next(logits.data().subspan(i * vocab, vocab), decode, rngs[i]);
        out[i].push_back(next);
        if (next == decode.eos) done[i] = true;
      }
      seqs[i].push_back(next);
    }
    if (seqs[0].size() + n_soft >= weights.config.max_seq) break;
  }
  return out;
}

std::vector<TokenId> generate(const BaseWeights& weights, const ForwardHooks* hooks, std::span<const TokenId> prompt,
                              const DecodeConfig& decode, std::mt19937_64& rng) {
  const std::vector<TokenId> p(prompt.begin(), prompt.end());
  auto out = generate_batch(weights, hooks, std::span(&p, 1), decode, std::span(&rng, 1));
  return std::move(out[0]);
}

}  // namespace peft
