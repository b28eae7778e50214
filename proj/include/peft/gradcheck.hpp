#pragma once

#include <functional>
#include <string>
#include <vector>

#include "peft/tensor.hpp"

namespace peft {

struct GradCheckOptions {
  double eps = 1e-5;
  double tolerance = 1e-4;
  /// Denominator floor for the relative error, so entries whose true
  /// gradient is ~0 are judged on absolute error. At eps 1e-5 and an O(1)
  /// loss, the rounding noise of the central difference is a few 1e-11, so
  /// relative error stops being meaningful for gradients below ~1e-5.
  double floor = 1e-5;
  /// Coordinates probed per tensor; 0 probes every element. Sampled
  /// coordinates are drawn deterministically from `seed`.
  std::size_t max_probes = 0;
  unsigned long long seed = 0;
};

struct GradCheckEntry {
  std::string name;
  std::size_t probed = 0;
  double max_rel_error = 0.0;
  double max_abs_grad = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  bool passed = true;
  double worst = 0.0;
};

/// Compares the tape gradient of a scalar function against central finite
/// differences for every tensor in `params`.
///
/// `f` must rebuild its computation from the current values of `params` on
/// each call and be deterministic. Throws NumericError if f is non-finite.
GradCheckReport grad_check(const std::function<Tensor()>& f, const NamedTensors& params,
                           const GradCheckOptions& options = {});

}  // namespace peft
