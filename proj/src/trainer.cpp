#include "peft/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "peft/errors.hpp"
#include "peft/graph.hpp"

namespace peft {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0) || !std::isfinite(learning_rate))
    throw ConfigError("learning_rate must be a finite value >= 0");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (grad_clip && !(*grad_clip > 0)) throw ConfigError("grad_clip must be positive");
  if (!(warmup_ratio >= 0 && warmup_ratio < 1)) throw ConfigError("warmup_ratio must lie in [0, 1)");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("adam betas must lie in [0, 1)");
  if (!(adam_eps > 0)) throw ConfigError("adam_eps must be positive");
}

std::string optimizer_name(Optimizer o) { return o == Optimizer::kAdamW ? "adamw" : "sgd"; }

Optimizer parse_optimizer(const std::string& name) {
  if (name == "adamw") return Optimizer::kAdamW;
  if (name == "sgd") return Optimizer::kSgd;
  throw ConfigError("optimizer must be adamw or sgd, got '" + name + "'");
}

std::string schedule_name(LrSchedule s) { return s == LrSchedule::kConstant ? "constant" : "cosine"; }

LrSchedule parse_schedule(const std::string& name) {
  if (name == "constant") return LrSchedule::kConstant;
  if (name == "cosine") return LrSchedule::kCosine;
  throw ConfigError("lr_schedule must be constant or cosine, got '" + name + "'");
}

std::vector<std::uint8_t> loss_mask(std::span<const TokenId> tokens, TokenId delimiter, const std::string& what) {
  const auto it = std::find(tokens.rbegin(), tokens.rend(), delimiter);
  if (it == tokens.rend()) throw DataError(what + ": no response delimiter");
  const std::size_t pos = static_cast<std::size_t>(tokens.rend() - it) - 1;
  if (pos + 1 >= tokens.size()) throw DataError(what + ": empty response after the delimiter");
  std::vector<std::uint8_t> mask(tokens.size(), 0);
  std::fill(mask.begin() + static_cast<std::ptrdiff_t>(pos) + 1, mask.end(), 1);
  return mask;
}

std::string TrainLog::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "step,loss,lr,grad_norm\n";
  for (const auto& s : steps) out << s.step << ',' << s.loss << ',' << s.lr << ',' << s.grad_norm << '\n';
  return out.str();
}

std::string TrainLog::to_json(bool include_wall_time) const {
  nlohmann::ordered_json j;
  j["steps"] = steps.size();
  j["epoch_loss"] = epoch_loss;
  j["final_loss"] = steps.empty() ? 0.0 : steps.back().loss;
  if (include_wall_time) j["wall_seconds"] = wall_seconds;
  return j.dump(2);
}

double scheduled_lr(const TrainConfig& c, std::size_t step, std::size_t total) {
  if (c.schedule == LrSchedule::kConstant) return c.learning_rate;
  const auto warmup = static_cast<std::size_t>(std::ceil(c.warmup_ratio * static_cast<double>(total)));
  if (step < warmup) return c.learning_rate * static_cast<double>(step) / static_cast<double>(warmup);
  const double progress =
      static_cast<double>(step - warmup) / static_cast<double>(std::max<std::size_t>(1, total - warmup));
  return c.learning_rate * 0.5 * (1.0 + std::cos(M_PI * progress));
}

Tensor batch_loss(const BaseWeights& weights, const ForwardHooks* hooks, std::span<const TrainExample* const> batch) {
  // Equal-length groups share one forward; the loss is the mean over all supervised tokens.
  std::map<std::size_t, std::vector<const TrainExample*>> groups;
  std::size_t supervised = 0;
  for (const TrainExample* e : batch) {
    groups[e->tokens.size()].push_back(e);
    supervised += e->tokens.size() - 1 - e->delimiter;
  }
  Tensor total;
  for (const auto& [len, members] : groups) {
    std::vector<std::vector<TokenId>> seqs;
    std::vector<TokenId> rows, targets;
    for (std::size_t b = 0; b < members.size(); ++b) {
      const TrainExample& e = *members[b];
      seqs.push_back(e.tokens);
      // Row t predicts token t + 1; supervise tokens after the delimiter.
      for (std::size_t t = e.delimiter; t + 1 < len; ++t) {
        rows.push_back(static_cast<TokenId>(b * len + t));
        targets.push_back(e.tokens[t + 1]);
      }
    }
    if (rows.empty()) continue;
    ForwardOptions options;
    options.hooks = hooks;
    const Tensor hidden = hidden_states(weights, seqs, options);
    const Tensor logits = output_logits(weights, gather_rows(hidden, rows));
    const std::vector<std::uint8_t> mask(rows.size(), 1);
    const Tensor part = scale(cross_entropy(logits, targets, mask),
                              static_cast<Scalar>(rows.size()) / static_cast<Scalar>(supervised));
    total = total.defined() ? add(total, part) : part;
  }
  if (!total.defined()) throw DataError("batch has no supervised positions");
  return total;
}

TrainLog train(BaseWeights& weights, Adapter* adapter, std::span<const TrainExample> data, const TrainConfig& config,
               const std::function<void(const StepLog&)>& on_step) {
  config.validate();
  if (data.empty()) throw DataError("train: empty dataset");
  if (!config.full_finetune && adapter == nullptr) throw ConfigError("train: no adapter given and full_finetune off");
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& e = data[i];
    if (e.delimiter + 1 >= e.tokens.size())
      throw DataError("train: example " + std::to_string(i) + " has no supervised token after the delimiter");
  }
  const auto started = std::chrono::steady_clock::now();

  NamedTensors params;
  const ForwardHooks* hooks = nullptr;
  if (config.full_finetune) {
    weights.set_trainable(true);
    params = weights.named();
    // An attached adapter stays frozen during full fine-tuning.
    if (adapter) hooks = adapter;
  } else {
    weights.set_trainable(false);
    params = adapter->trainable_parameters();
    hooks = adapter;
  }
  std::vector<std::vector<Scalar>> m(params.size()), v(params.size());
  if (config.optimizer == Optimizer::kAdamW)
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i].assign(params[i].tensor.numel(), 0);
      v[i].assign(params[i].tensor.numel(), 0);
    }

  const std::size_t per_epoch = (data.size() + config.batch_size - 1) / config.batch_size;
  const std::size_t total = per_epoch * config.epochs;
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  TrainLog log;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_sum = 0;
    for (std::size_t start = 0; start < data.size(); start += config.batch_size, ++step) {
      std::vector<const TrainExample*> batch;
      for (std::size_t i = start; i < std::min(data.size(), start + config.batch_size); ++i)
        batch.push_back(&data[order[i]]);
      for (auto& p : params) p.tensor.zero_grad();

      Graph graph;
      Tensor loss;
      {
        auto rec = graph.record();
        loss = batch_loss(weights, hooks, batch);
      }
      const double loss_value = static_cast<double>(loss.item());
      if (!std::isfinite(loss_value))
        throw NumericError("train: loss became non-finite at step " + std::to_string(step));
      graph.backward(loss);

      double sq = 0;
      for (auto& p : params)
        if (p.tensor.has_grad())
          for (Scalar g : p.tensor.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
      const double norm = std::sqrt(sq);
      if (!std::isfinite(norm)) throw NumericError("train: gradient became non-finite at step " + std::to_string(step));
      const Scalar clip = config.grad_clip && norm > *config.grad_clip
                              ? static_cast<Scalar>(*config.grad_clip / (norm + 1e-12))
                              : Scalar(1);

      const double lr = scheduled_lr(config, step, total);
      const Scalar lr_s = static_cast<Scalar>(lr), wd = static_cast<Scalar>(config.weight_decay);
      for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& t = params[i].tensor;
        auto theta = t.data();
        const bool has = t.has_grad();
        if (config.optimizer == Optimizer::kSgd) {
          for (std::size_t j = 0; j < theta.size(); ++j) {
            const Scalar g = has ? t.grad()[j] * clip : Scalar(0);
            theta[j] -= lr_s * (g + wd * theta[j]);
          }
        } else {
          const auto b1 = static_cast<Scalar>(config.beta1), b2 = static_cast<Scalar>(config.beta2);
          const auto c1 = static_cast<Scalar>(1 - std::pow(config.beta1, static_cast<double>(step + 1)));
          const auto c2 = static_cast<Scalar>(1 - std::pow(config.beta2, static_cast<double>(step + 1)));
          const auto eps = static_cast<Scalar>(config.adam_eps);
          for (std::size_t j = 0; j < theta.size(); ++j) {
            const Scalar g = has ? t.grad()[j] * clip : Scalar(0);
            theta[j] -= lr_s * wd * theta[j];
            m[i][j] = b1 * m[i][j] + (1 - b1) * g;
            v[i][j] = b2 * v[i][j] + (1 - b2) * g * g;
            theta[j] -= lr_s * (m[i][j] / c1) / (std::sqrt(v[i][j] / c2) + eps);
          }
        }
      }
      const StepLog s{step, epoch, loss_value, lr, norm};
      log.steps.push_back(s);
      epoch_sum += loss_value;
      if (on_step) on_step(s);
    }
    log.epoch_loss.push_back(epoch_sum / static_cast<double>(per_epoch));
  }
  for (auto& p : params) p.tensor.zero_grad();
  if (config.full_finetune) weights.set_trainable(false);
  log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return log;
}

}  // namespace peft
