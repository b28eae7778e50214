#include "peft/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "peft/errors.hpp"

namespace peft {

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v < 1) throw ConfigError(std::string("model config: ") + name + " must be >= 1");
  };
  positive(d_model, "d_model");
  positive(n_heads, "n_heads");
  positive(n_kv_heads, "n_kv_heads");
  positive(head_dim, "head_dim");
  positive(vocab_size, "vocab_size");
  positive(max_seq, "max_seq");
  positive(d_ff, "d_ff");
  if (n_heads % n_kv_heads != 0) throw ConfigError("model config: n_heads must be divisible by n_kv_heads");
  if (head_dim % 2 != 0) throw ConfigError("model config: head_dim must be even for rotary encoding");
  if (!(rope_theta > 0)) throw ConfigError("model config: rope_theta must be positive");
  if (!(norm_eps > 0)) throw ConfigError("model config: norm_eps must be positive");
}

ModelConfig builtin_config(std::string_view name) {
  ModelConfig c;
  if (name == "toy") return c;
  if (name == "llama-3.1-8B") {
    c = {32, 4096, 32, 8, 128, 128256, 131072, 14336, 500000.0, 1e-5, false};
    return c;
  }
  if (name == "llama-3.2-1B") {
    c = {16, 2048, 32, 8, 64, 128256, 131072, 8192, 500000.0, 1e-5, true};
    return c;
  }
  if (name == "mistral-7B-v0.3") {
    c = {32, 4096, 32, 8, 128, 32768, 32768, 14336, 1000000.0, 1e-5, false};
    return c;
  }
  throw ConfigError("unknown built-in model config '" + std::string(name) + "'");
}

std::vector<std::string> builtin_config_names() { return {"toy", "llama-3.1-8B", "llama-3.2-1B", "mistral-7B-v0.3"}; }

ModelConfig resolve_model_config(const std::string& name_or_path) {
  for (const auto& n : builtin_config_names()) {
    if (n == name_or_path) return builtin_config(n);
  }
  std::ifstream in(name_or_path);
  if (!in) throw ConfigError("unknown model '" + name_or_path + "' (not a built-in name or readable file)");
  ModelConfig c;
  std::map<std::string, std::size_t*> sizes = {
      {"n_layers", &c.n_layers}, {"d_model", &c.d_model},       {"n_heads", &c.n_heads},
      {"n_kv_heads", &c.n_kv_heads}, {"head_dim", &c.head_dim}, {"vocab_size", &c.vocab_size},
      {"max_seq", &c.max_seq},   {"d_ff", &c.d_ff}};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    auto eq = line.find('=');
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    if (trim(line).empty()) continue;
    if (eq == std::string::npos)
      throw ConfigError(name_or_path + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      if (auto it = sizes.find(key); it != sizes.end()) {
        *it->second = std::stoul(value);
      } else if (key == "rope_theta") {
        c.rope_theta = std::stod(value);
      } else if (key == "norm_eps") {
        c.norm_eps = std::stod(value);
      } else if (key == "tie_embeddings") {
        c.tie_embeddings = value == "true" || value == "1";
      } else {
        throw ConfigError(name_or_path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
      }
    } catch (const std::logic_error&) {
      throw ConfigError(name_or_path + ":" + std::to_string(lineno) + ": bad value for '" + key + "'");
    }
  }
  c.validate();
  return c;
}

std::string to_key_values(const ModelConfig& c) {
  std::ostringstream out;
  out << "n_layers = " << c.n_layers << "\nd_model = " << c.d_model << "\nn_heads = " << c.n_heads
      << "\nn_kv_heads = " << c.n_kv_heads << "\nhead_dim = " << c.head_dim << "\nvocab_size = " << c.vocab_size
      << "\nmax_seq = " << c.max_seq << "\nd_ff = " << c.d_ff << "\nrope_theta = " << c.rope_theta
      << "\nnorm_eps = " << c.norm_eps << "\ntie_embeddings = " << (c.tie_embeddings ? "true" : "false") << "\n";
  return out.str();
}

std::vector<std::pair<std::string, Shape>> weight_layout(const ModelConfig& c) {
  std::vector<std::pair<std::string, Shape>> out;
  out.emplace_back("tok_embeddings", Shape{c.vocab_size, c.d_model});
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    out.emplace_back(p + "attn_norm", Shape{c.d_model});
    out.emplace_back(p + "wq", Shape{c.d_model, c.q_dim()});
    out.emplace_back(p + "wk", Shape{c.d_model, c.kv_dim()});
    out.emplace_back(p + "wv", Shape{c.d_model, c.kv_dim()});
    out.emplace_back(p + "wo", Shape{c.q_dim(), c.d_model});
    out.emplace_back(p + "ffn_norm", Shape{c.d_model});
    out.emplace_back(p + "w1", Shape{c.d_model, c.d_ff});
    out.emplace_back(p + "w3", Shape{c.d_model, c.d_ff});
    out.emplace_back(p + "w2", Shape{c.d_ff, c.d_model});
  }
  if (c.n_layers > 0) out.emplace_back("final_norm", Shape{c.d_model});
  if (!c.tie_embeddings) out.emplace_back("output", Shape{c.d_model, c.vocab_size});
  return out;
}

NamedTensors BaseWeights::named() const {
  NamedTensors out;
  out.push_back({"tok_embeddings", tok_embeddings});
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    const LayerWeights& w = layers[l];
    out.push_back({p + "attn_norm", w.attn_norm});
    out.push_back({p + "wq", w.wq});
    out.push_back({p + "wk", w.wk});
    out.push_back({p + "wv", w.wv});
    out.push_back({p + "wo", w.wo});
    out.push_back({p + "ffn_norm", w.ffn_norm});
    out.push_back({p + "w1", w.w1});
    out.push_back({p + "w3", w.w3});
    out.push_back({p + "w2", w.w2});
  }
  if (final_norm.defined()) out.push_back({"final_norm", final_norm});
  if (output.defined()) out.push_back({"output", output});
  return out;
}

BaseWeights BaseWeights::from_named(const ModelConfig& config, const NamedTensors& tensors) {
  config.validate();
  const auto layout = weight_layout(config);
  if (layout.size() != tensors.size())
    throw DataError("weights: expected " + std::to_string(layout.size()) + " tensors, found " +
                    std::to_string(tensors.size()));
  std::map<std::string, Tensor> by_name;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (layout[i].first != tensors[i].name || layout[i].second != tensors[i].tensor.shape())
      throw DataError("weights: tensor " + std::to_string(i) + " is '" + tensors[i].name + "' " +
                      shape_str(tensors[i].tensor.shape()) + ", expected '" + layout[i].first + "' " +
                      shape_str(layout[i].second));
    by_name[tensors[i].name] = tensors[i].tensor;
  }
  BaseWeights w;
  w.config = config;
  w.tok_embeddings = by_name["tok_embeddings"];
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    w.layers.push_back({by_name[p + "attn_norm"], by_name[p + "wq"], by_name[p + "wk"], by_name[p + "wv"],
                        by_name[p + "wo"], by_name[p + "ffn_norm"], by_name[p + "w1"], by_name[p + "w3"],
                        by_name[p + "w2"]});
  }
  if (config.n_layers > 0) w.final_norm = by_name["final_norm"];
  if (!config.tie_embeddings) w.output = by_name["output"];
  return w;
}

BaseWeights BaseWeights::clone() const {
  NamedTensors copies = named();
  for (auto& t : copies) t.tensor = t.tensor.clone();
  return from_named(config, copies);
}

void BaseWeights::set_trainable(bool trainable) {
  for (auto& t : named()) t.tensor.set_requires_grad(trainable);
}

std::size_t BaseWeights::element_count() const { return total_elements(named()); }

bool BaseWeights::identical(const BaseWeights& other) const {
  const NamedTensors a = named(), b = other.named();
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name || a[i].tensor.shape() != b[i].tensor.shape()) return false;
    if (std::memcmp(a[i].tensor.ptr(), b[i].tensor.ptr(), a[i].tensor.numel() * sizeof(Scalar)) != 0) return false;
  }
  return true;
}

BaseWeights init_random(const ModelConfig& config, std::uint64_t seed, std::size_t element_budget) {
  config.validate();
  const auto layout = weight_layout(config);
  std::size_t total = 0;
  for (const auto& [name, shape] : layout) total += shape_numel(shape);
  if (total > element_budget)
    throw ConfigError("init_random: config needs " + std::to_string(total) + " elements, over the budget of " +
                      std::to_string(element_budget) + "; use the parameter accountant for configs this large");
  std::mt19937_64 rng(seed);
  const double proj_std = 1.0 / std::sqrt(static_cast<double>(config.d_model));
  NamedTensors tensors;
  for (const auto& [name, shape] : layout) {
    const bool is_norm = name.ends_with("norm");
    const double std = name == "tok_embeddings" ? 1.0 : proj_std;
    std::normal_distribution<double> normal(0.0, std);
    std::vector<Scalar> values(shape_numel(shape));
    for (auto& v : values) v = is_norm ? Scalar{1} : static_cast<Scalar>(normal(rng));
    tensors.push_back({name, Tensor::from(shape, std::move(values))});
  }
  return BaseWeights::from_named(config, tensors);
}

Tensor AttentionTap::weights(std::size_t, const Tensor& scores, std::size_t) const { return softmax(scores); }

Tensor ForwardHooks::project(std::size_t, Projection, const Tensor& x, const Tensor& w) const { return matmul(x, w); }

Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& prefix_k, const Tensor& prefix_v,
              const AttentionTap* tap, std::size_t head, std::size_t layer, std::size_t example,
              const AttentionObserver* observer) {
  const Scalar inv_sqrt = 1 / std::sqrt(static_cast<Scalar>(q.cols()));
  const std::size_t n_prefix = prefix_k.defined() ? prefix_k.rows() : 0;
  Tensor scores, weights, out;
  if (n_prefix == 0) {
    scores = causal_mask(scale(matmul_nt(q, k), inv_sqrt));
    weights = softmax(scores);
    out = matmul(weights, v);
  } else {
    // Prefix slots sit before the sequence; only sequence columns are causal.
    const Tensor keys = concat(prefix_k, k, 0);
    const Tensor values = concat(prefix_v, v, 0);
    scores = causal_mask(scale(matmul_nt(q, keys), inv_sqrt), n_prefix);
    weights = tap ? tap->weights(head, scores, n_prefix) : softmax(scores);
    out = matmul(weights, values);
  }
  if (observer && *observer) (*observer)(layer, example, head, scores, weights);
  return out;
}

namespace {

Tensor rows_of(const Tensor& x, std::size_t b, std::size_t len, std::size_t batch) {
  return batch == 1 ? x : slice(x, 0, b * len, (b + 1) * len);
}

Tensor cols_of(const Tensor& x, std::size_t index, std::size_t width) {
  return x.cols() == width ? x : slice(x, 1, index * width, (index + 1) * width);
}

}  // namespace

Tensor hidden_states(const BaseWeights& weights, std::span<const std::vector<TokenId>> batch,
                     const ForwardOptions& options) {
  const ModelConfig& c = weights.config;
  if (batch.empty()) throw DataError("forward: empty batch");
  const std::size_t n_batch = batch.size();
  const std::size_t n_tokens = batch[0].size();
  if (n_tokens == 0) throw DataError("forward: empty token sequence");
  std::vector<TokenId> flat;
  flat.reserve(n_batch * n_tokens);
  for (const auto& seq : batch) {
    if (seq.size() != n_tokens) throw DataError("forward: batched sequences must share one length");
    for (TokenId id : seq) {
      if (id < 0 || static_cast<std::size_t>(id) >= c.vocab_size)
        throw DataError("forward: token id " + std::to_string(id) + " outside vocabulary of " +
                        std::to_string(c.vocab_size));
    }
    flat.insert(flat.end(), seq.begin(), seq.end());
  }
  const ForwardHooks* hooks = options.hooks;
  const Tensor soft = hooks ? hooks->input_prefix() : Tensor();
  const std::size_t n_soft = soft.defined() ? soft.rows() : 0;
  const std::size_t len = n_soft + n_tokens;
  if (len > c.max_seq)
    throw DataError("forward: sequence of " + std::to_string(len) + " positions exceeds max_seq " +
                    std::to_string(c.max_seq));

  Tensor x = gather_rows(weights.tok_embeddings, flat);
  if (n_soft > 0) {
    std::vector<Tensor> parts;
    for (std::size_t b = 0; b < n_batch; ++b) {
      parts.push_back(soft);
      parts.push_back(rows_of(x, b, n_tokens, n_batch));
    }
    x = concat(parts, 0);
  }
  std::vector<std::size_t> positions(n_batch * len);
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i % len;

  const ForwardHooks base_hooks;
  const ForwardHooks& h = hooks ? *hooks : base_hooks;
  const std::size_t group = c.n_heads / c.n_kv_heads;
  const std::size_t hd = c.head_dim;
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const LayerWeights& w = weights.layers[l];
    const Tensor xn = rmsnorm(x, w.attn_norm, static_cast<Scalar>(c.norm_eps));
    const Tensor q = rope(h.project(l, Projection::Q, xn, w.wq), positions, hd, static_cast<Scalar>(c.rope_theta));
    const Tensor k = rope(h.project(l, Projection::K, xn, w.wk), positions, hd, static_cast<Scalar>(c.rope_theta));
    const Tensor v = h.project(l, Projection::V, xn, w.wv);
    const AttentionTap* tap = h.tap(l);
    const PrefixKV prefix = tap ? tap->prefix(w) : PrefixKV{};

    std::vector<Tensor> per_example;
    for (std::size_t b = 0; b < n_batch; ++b) {
      const Tensor qb = rows_of(q, b, len, n_batch);
      const Tensor kb = rows_of(k, b, len, n_batch);
      const Tensor vb = rows_of(v, b, len, n_batch);
      std::vector<Tensor> heads;
      for (std::size_t head = 0; head < c.n_heads; ++head) {
        const std::size_t kv = head / group;
        Tensor pk, pv;
        if (prefix.size() > 0) {
          pk = cols_of(prefix.keys, kv, hd);
          pv = cols_of(prefix.values, kv, hd);
        }
        heads.push_back(attend(cols_of(qb, head, hd), cols_of(kb, kv, hd), cols_of(vb, kv, hd), pk, pv, tap, head, l,
                               b, options.observer));
      }
      per_example.push_back(heads.size() == 1 ? heads[0] : concat(heads, 1));
    }
    const Tensor attn = per_example.size() == 1 ? per_example[0] : concat(per_example, 0);
    x = add(x, matmul(attn, w.wo));

    const Tensor xf = rmsnorm(x, w.ffn_norm, static_cast<Scalar>(c.norm_eps));
    const Tensor gated = mul(silu(matmul(xf, w.w1)), matmul(xf, w.w3));
    x = add(x, matmul(gated, w.w2));
  }
  if (c.n_layers > 0) x = rmsnorm(x, weights.final_norm, static_cast<Scalar>(c.norm_eps));
  if (n_soft > 0) {
    std::vector<TokenId> keep;
    for (std::size_t b = 0; b < n_batch; ++b)
      for (std::size_t t = 0; t < n_tokens; ++t) keep.push_back(static_cast<TokenId>(b * len + n_soft + t));
    x = gather_rows(x, keep);
  }
  return x;
}

Tensor output_logits(const BaseWeights& weights, const Tensor& hidden) {
  return weights.config.tie_embeddings ? matmul_nt(hidden, weights.tok_embeddings) : matmul(hidden, weights.output);
}

Tensor forward(const BaseWeights& weights, std::span<const TokenId> tokens, const ForwardHooks* hooks) {
  const std::vector<TokenId> seq(tokens.begin(), tokens.end());
  ForwardOptions options;
  options.hooks = hooks;
  return output_logits(weights, hidden_states(weights, std::span(&seq, 1), options));
}

}  // namespace peft
