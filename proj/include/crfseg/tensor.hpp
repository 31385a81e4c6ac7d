#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "crfseg/common.hpp"

namespace crfseg {

/// Extents of a dense row-major array. 4-D data is ordered (batch, channels,
/// height, width).
using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<float> value;
  std::vector<float> grad;    // sized lazily by Tape::backward
  bool requires_grad = false; // user-set leaf flag
  bool tracked = false;       // participates in the active tape's graph
  bool grad_set = false;      // some gradient has been accumulated this pass
};

using NodePtr = std::shared_ptr<Node>;

}  // namespace detail

/// Dense n-dimensional f32 array. A Tensor is a cheap shared handle to its
/// storage; values are treated as immutable once an operation has produced
/// them. `data()` is exposed for construction, parameter updates between
/// training steps, and read access.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from_vector(Shape shape, std::vector<float> values,
                            bool requires_grad = false);
  /// Samples from N(0, stddev^2).
  static Tensor randn(Shape shape, std::mt19937& rng, float stddev,
                      bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  int dim(int axis) const;
  std::size_t size() const;

  const float* data() const;
  float* data();
  std::span<const float> values() const { return {data(), size()}; }
  std::span<float> values() { return {data(), size()}; }
  float at(std::initializer_list<int> idx) const;

  bool requires_grad() const;
  void set_requires_grad(bool v);

  /// Gradient from the most recent Tape::backward. A leaf that was never
  /// reached holds zeros.
  std::span<const float> grad() const;

  /// Deep copy whose history is cut: not tracked by any tape.
  Tensor detach() const;
  Tensor clone() const;

  bool all_finite() const;

  detail::NodePtr node() const { return node_; }
  static Tensor wrap(detail::NodePtr n);

 private:
  detail::NodePtr node_;
};

/// Ordered record of executed operations. Forward ops executed inside a
/// Tape::Scope append an entry per operation; backward() replays the entries
/// in reverse execution order (a valid reverse topological order) and
/// accumulates gradients into every tracked node. A Tape is confined to one
/// training step on one thread.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* prev_;
  };

  static Tape* current();

  /// Appends one operation record. `backward` reads output->grad and
  /// accumulates into the grads of the tracked inputs.
  void record(std::vector<detail::NodePtr> inputs, detail::NodePtr output,
              std::function<void()> backward);

  /// Replays gradient rules from `loss` (a scalar) back to every tracked
  /// node. Grad buffers of all nodes touched by this tape are zeroed first.
  void backward(const Tensor& loss);

  std::size_t num_entries() const { return entries_.size(); }
  void clear();

 private:
  struct Entry {
    std::vector<detail::NodePtr> inputs;
    detail::NodePtr output;
    std::function<void()> backward;
  };
  std::vector<Entry> entries_;
};

namespace detail {

/// True when at least one input is part of the active differentiation graph,
/// meaning the op must be recorded.
inline bool tracking_enabled(std::initializer_list<const Tensor*> inputs) {
  if (Tape::current() == nullptr) return false;
  for (const Tensor* t : inputs)
    if (t->defined() && (t->node()->tracked || t->node()->requires_grad)) return true;
  return false;
}

/// Ensures a grad buffer exists, then adds `v` at flat index `i`.
void accum_grad(const NodePtr& n, std::size_t i, float v);
/// Whole-buffer accumulate helper.
void accum_grad_span(const NodePtr& n, std::span<const float> g);
/// Grad buffer of `n`, allocated and zeroed on first use in a pass.
std::vector<float>& grad_buf(const NodePtr& n);

inline bool wants_grad(const NodePtr& n) {
  return n->tracked || n->requires_grad;
}

}  // namespace detail

}  // namespace crfseg
