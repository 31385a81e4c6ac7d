#include "crfseg/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace crfseg {

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
#ifdef _OPENMP
  if (n > 1 && omp_get_max_threads() > 1) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(n); ++i)
      body(static_cast<std::size_t>(i));
    return;
  }
#endif
  for (std::size_t i = 0; i < n; ++i) body(i);
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative extent in shape " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = std::make_shared<detail::Node>();
  n->value.assign(shape_numel(shape), 0.0f);
  n->shape = std::move(shape);
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (float& v : t.values()) v = value;
  return t;
}

Tensor Tensor::from_vector(Shape shape, std::vector<float> values,
                           bool requires_grad) {
  if (shape_numel(shape) != values.size())
    throw ShapeError("from_vector: " + std::to_string(values.size()) +
                     " values for shape " + shape_str(shape));
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

Tensor Tensor::randn(Shape shape, std::mt19937& rng, float stddev,
                     bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::normal_distribution<float> dist(0.0f, stddev);
  for (float& v : t.values()) v = dist(rng);
  return t;
}

const Shape& Tensor::shape() const {
  if (!node_) throw ValueError("use of undefined tensor");
  return node_->shape;
}

int Tensor::dim(int axis) const {
  const Shape& s = shape();
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                     shape_str(s));
  return s[axis];
}

std::size_t Tensor::size() const {
  if (!node_) throw ValueError("use of undefined tensor");
  return node_->value.size();
}

const float* Tensor::data() const {
  if (!node_) throw ValueError("use of undefined tensor");
  return node_->value.data();
}

float* Tensor::data() {
  if (!node_) throw ValueError("use of undefined tensor");
  return node_->value.data();
}

float Tensor::at(std::initializer_list<int> idx) const {
  const Shape& s = shape();
  if (idx.size() != s.size())
    throw ShapeError("index rank mismatch for " + shape_str(s));
  std::size_t flat = 0;
  auto it = idx.begin();
  for (std::size_t a = 0; a < s.size(); ++a, ++it) {
    if (*it < 0 || *it >= s[a]) throw ShapeError("index out of bounds");
    flat = flat * static_cast<std::size_t>(s[a]) + static_cast<std::size_t>(*it);
  }
  return node_->value[flat];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool v) {
  if (!node_) throw ValueError("use of undefined tensor");
  node_->requires_grad = v;
}

std::span<const float> Tensor::grad() const {
  if (!node_) throw ValueError("use of undefined tensor");
  if (node_->grad.size() != node_->value.size())
    node_->grad.assign(node_->value.size(), 0.0f);
  return {node_->grad.data(), node_->grad.size()};
}

Tensor Tensor::detach() const {
  if (!node_) return {};
  auto n = std::make_shared<detail::Node>();
  n->shape = node_->shape;
  n->value = node_->value;
  return wrap(std::move(n));
}

Tensor Tensor::clone() const {
  Tensor t = detach();
  if (t.defined()) t.node()->requires_grad = node_->requires_grad;
  return t;
}

bool Tensor::all_finite() const {
  for (float v : values())
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor Tensor::wrap(detail::NodePtr n) {
  Tensor t;
  t.node_ = std::move(n);
  return t;
}

namespace {
thread_local Tape* g_current_tape = nullptr;
}

Tape::Scope::Scope(Tape& tape) : prev_(g_current_tape) { g_current_tape = &tape; }
Tape::Scope::~Scope() { g_current_tape = prev_; }

Tape* Tape::current() { return g_current_tape; }

void Tape::record(std::vector<detail::NodePtr> inputs, detail::NodePtr output,
                  std::function<void()> backward) {
  output->tracked = true;
  entries_.push_back(Entry{std::move(inputs), std::move(output), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw ValueError("backward requires a scalar loss, got " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));

  // Reset gradient state for every node this tape touches.
  std::unordered_set<detail::Node*> seen;
  auto reset = [&seen](const detail::NodePtr& n) {
    if (seen.insert(n.get()).second) {
      n->grad.assign(n->value.size(), 0.0f);
      n->grad_set = false;
    }
  };
  for (const Entry& e : entries_) {
    reset(e.output);
    for (const auto& in : e.inputs) reset(in);
  }
  reset(loss.node());

  loss.node()->grad.assign(1, 1.0f);
  loss.node()->grad_set = true;

  // Gradient rules may call forward kernels internally; none of that may be
  // recorded, so recording is disabled for the replay.
  Tape* saved = g_current_tape;
  g_current_tape = nullptr;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (!it->output->grad_set) continue;  // no gradient flowed here
    it->backward();
  }
  g_current_tape = saved;
}

void Tape::clear() { entries_.clear(); }

namespace detail {

std::vector<float>& grad_buf(const NodePtr& n) {
  if (n->grad.size() != n->value.size()) n->grad.assign(n->value.size(), 0.0f);
  n->grad_set = true;
  return n->grad;
}

void accum_grad(const NodePtr& n, std::size_t i, float v) {
  grad_buf(n)[i] += v;
}

void accum_grad_span(const NodePtr& n, std::span<const float> g) {
  auto& buf = grad_buf(n);
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

}  // namespace detail

}  // namespace crfseg
