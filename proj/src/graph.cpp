#include "peft/graph.hpp"

#include "peft/errors.hpp"

namespace peft {

namespace {
thread_local Graph* g_active = nullptr;
}

Graph::Recording::Recording(Graph& graph) : previous_(g_active) {
  graph.clear();
  g_active = &graph;
}

Graph::Recording::~Recording() { g_active = previous_; }

Graph* Graph::active() { return g_active; }

long Graph::push(Backward backward) {
  ops_.push_back(std::move(backward));
  return static_cast<long>(ops_.size()) - 1;
}

void Graph::clear() {
  ops_.clear();
  visited_.clear();
  spent_ = false;
}

void Graph::backward(Tensor& loss) {
  if (spent_) throw GraphError("backward() already ran on this tape; record a new forward pass first");
  if (loss.numel() != 1) throw DimensionError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
  if (!loss.requires_grad()) throw GraphError("loss does not depend on any tensor that requires grad");
  spent_ = true;
  loss.grad()[0] += 1;
  visited_.clear();
  visited_.reserve(ops_.size());
  for (long i = static_cast<long>(ops_.size()) - 1; i >= 0; --i) {
    visited_.push_back(i);
    ops_[static_cast<std::size_t>(i)]();
  }
  // Release captured intermediates; the visit order stays for inspection.
  ops_.clear();
}

NoGradGuard::NoGradGuard() : previous_(g_active) { g_active = nullptr; }

NoGradGuard::~NoGradGuard() { g_active = previous_; }

bool needs_grad(std::initializer_list<const Tensor*> inputs) {
  if (Graph::active() == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

}  // namespace peft
