#pragma once

#include <functional>
#include <vector>

#include "peft/tensor.hpp"

namespace peft {

/// Reverse-mode tape for one forward pass.
///
/// Differentiable ops append a backward closure while a Recording is alive on
/// the current thread. backward() replays the closures in exact reverse
/// order, then the tape is spent: a second backward() without a fresh
/// recording throws GraphError. A tape belongs to the thread that records it.
class Graph {
 public:
  using Backward = std::function<void()>;

  class Recording {
   public:
    explicit Recording(Graph& graph);
    ~Recording();
    Recording(const Recording&) = delete;
    Recording& operator=(const Recording&) = delete;

   private:
    Graph* previous_;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Starts (or restarts) recording on this thread. Clears any old ops.
  [[nodiscard]] Recording record() { return Recording(*this); }

  /// Graph currently recording on this thread, or nullptr.
  static Graph* active();

  /// Appends an op; returns its index.
  long push(Backward backward);

  /// Seeds d(loss)/d(loss) = 1 and propagates. loss must be a 1-element tensor.
  void backward(Tensor& loss);

  std::size_t size() const { return ops_.size(); }
  bool spent() const { return spent_; }
  void clear();

  /// Order in which the last backward() visited ops (indices into the tape).
  const std::vector<long>& visit_order() const { return visited_; }

 private:
  friend class NoGradGuard;
  std::vector<Backward> ops_;
  std::vector<long> visited_;
  bool spent_ = false;
};

/// Suspends recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Graph* previous_;
};

/// True when an op on these inputs must be taped.
bool needs_grad(std::initializer_list<const Tensor*> inputs);

}  // namespace peft
