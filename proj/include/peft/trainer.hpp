#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "peft/adapters.hpp"
#include "peft/model.hpp"

namespace peft {

enum class Optimizer { kAdamW, kSgd };
enum class LrSchedule { kConstant, kCosine };

struct TrainConfig {
  double learning_rate = 3e-3;
  std::size_t epochs = 2;
  double weight_decay = 0.02;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  Optimizer optimizer = Optimizer::kAdamW;
  std::optional<double> grad_clip;  // max global L2 norm
  LrSchedule schedule = LrSchedule::kCosine;
  double warmup_ratio = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Train every base weight instead of an adapter (control runs only).
  bool full_finetune = false;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

std::string optimizer_name(Optimizer o);
Optimizer parse_optimizer(const std::string& name);
std::string schedule_name(LrSchedule s);
LrSchedule parse_schedule(const std::string& name);

/// Token sequence with its response delimiter position.
struct TrainExample {
  std::vector<TokenId> tokens;
  std::size_t delimiter = 0;
};

/// Per-position mask, 1 for tokens strictly after the last `delimiter` token.
/// Throws DataError (naming `what`) when the delimiter is missing or nothing follows it.
std::vector<std::uint8_t> loss_mask(std::span<const TokenId> tokens, TokenId delimiter, const std::string& what = "example");

struct StepLog {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double loss = 0;
  double lr = 0;
  double grad_norm = 0;
};

struct TrainLog {
  std::vector<StepLog> steps;
  std::vector<double> epoch_loss;  // mean step loss per epoch
  double wall_seconds = 0;

  /// step,loss,lr,grad_norm
  std::string to_csv() const;
  /// Summary: steps, epoch losses, final loss, wall time.
  std::string to_json(bool include_wall_time = true) const;
};

/// Learning rate at 0-based step `step` of `total`.
double scheduled_lr(const TrainConfig& config, std::size_t step, std::size_t total);

/// Token-mean masked cross-entropy of a batch (built on the active graph if any).
Tensor batch_loss(const BaseWeights& weights, const ForwardHooks* hooks, std::span<const TrainExample* const> batch);

/// Optimizes the adapter (or every base weight when config.full_finetune) on
/// `data`. Base weights stay frozen in adapter mode. Deterministic per seed.
/// Throws NumericError when the loss or a gradient turns non-finite.
TrainLog train(BaseWeights& weights, Adapter* adapter, std::span<const TrainExample> data, const TrainConfig& config,
               const std::function<void(const StepLog&)>& on_step = {});

}  // namespace peft
