#include "peft/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "peft/errors.hpp"
#include "peft/graph.hpp"

namespace peft {

namespace {

double evaluate(const std::function<Tensor()>& f) {
  NoGradGuard no_grad;
  const double v = static_cast<double>(f().item());
  if (!std::isfinite(v)) throw NumericError("grad_check: function value is not finite");
  return v;
}

std::vector<std::size_t> probes(const Tensor& t, std::span<const Scalar> analytic, const GradCheckOptions& opt,
                                std::mt19937_64& rng) {
  std::vector<std::size_t> idx(t.numel());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (opt.max_probes == 0 || idx.size() <= opt.max_probes) return idx;
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(opt.max_probes);
  // Always include the largest analytic entry.
  const auto top = static_cast<std::size_t>(
      std::max_element(analytic.begin(), analytic.end(),
                       [](Scalar a, Scalar b) { return std::abs(a) < std::abs(b); }) -
      analytic.begin());
  if (std::find(idx.begin(), idx.end(), top) == idx.end()) idx.back() = top;
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor()>& f, const NamedTensors& params,
                           const GradCheckOptions& options) {
  if (options.eps < 1e-7 || options.eps > 1e-3) throw ConfigError("grad_check: eps must lie in [1e-7, 1e-3]");

  NamedTensors ps = params;
  for (auto& p : ps) p.tensor.zero_grad();
  Graph graph;
  Tensor loss;
  {
    auto rec = graph.record();
    loss = f();
  }
  if (!std::isfinite(static_cast<double>(loss.item()))) throw NumericError("grad_check: function value is not finite");
  if (loss.requires_grad()) graph.backward(loss);

  GradCheckReport report;
  std::mt19937_64 rng(options.seed);
  for (auto& p : ps) {
    std::vector<Scalar> analytic(p.tensor.numel(), 0);
    if (p.tensor.has_grad()) {
      auto g = p.tensor.grad();
      std::copy(g.begin(), g.end(), analytic.begin());
    }
    p.tensor.zero_grad();

    GradCheckEntry entry;
    entry.name = p.name;
    for (Scalar a : analytic) entry.max_abs_grad = std::max(entry.max_abs_grad, std::abs(static_cast<double>(a)));
    for (std::size_t i : probes(p.tensor, analytic, options, rng)) {
      const Scalar orig = p.tensor.at(i);
      p.tensor.at(i) = orig + static_cast<Scalar>(options.eps);
      const double up = evaluate(f);
      p.tensor.at(i) = orig - static_cast<Scalar>(options.eps);
      const double down = evaluate(f);
      p.tensor.at(i) = orig;
      const double numeric = (up - down) / (2 * options.eps);
      const double a = static_cast<double>(analytic[i]);
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      entry.max_rel_error = std::max(entry.max_rel_error, std::abs(a - numeric) / denom);
      ++entry.probed;
    }
    entry.passed = entry.max_rel_error <= options.tolerance;
    report.passed = report.passed && entry.passed;
    report.worst = std::max(report.worst, entry.max_rel_error);
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace peft
