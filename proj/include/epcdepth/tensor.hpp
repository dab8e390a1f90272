#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <unordered_map>
#include <utility>
#include <vector>

#include "epcdepth/common.hpp"

namespace epc {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) {
    EPC_CHECK(d > 0, "tensor dimension must be positive, got ", d);
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

template <class T>
struct TensorImplT {
  Shape shape;
  std::vector<T> data;
  bool requires_grad = false;
  // adjoints accumulate in float64 regardless of the value type; the chain
  // arithmetic otherwise drowns small-magnitude gradients in rounding noise
  std::vector<double> grad;     // empty until a gradient is accumulated
  int tape_id = -1;             // node index in the current tape epoch
  int64_t tape_epoch = -1;
};

template <class T>
class TapeT;

/// Dense NCHW-ordered float array with a shared buffer. Copies are shallow;
/// use clone() for a deep copy.
template <class T>
class TensorT {
 public:
  using value_type = T;

  TensorT() = default;

  explicit TensorT(Shape shape, T fill = T(0)) {
    const int64_t n = shape_numel(shape);
    p_ = std::make_shared<TensorImplT<T>>();
    p_->shape = std::move(shape);
    p_->data.assign(static_cast<size_t>(n), fill);
  }

  static TensorT from_data(Shape shape, std::vector<T> data) {
    const int64_t n = shape_numel(shape);
    EPC_CHECK(static_cast<int64_t>(data.size()) == n, "data length ", data.size(),
              " does not match shape ", shape_str(shape));
    TensorT t;
    t.p_ = std::make_shared<TensorImplT<T>>();
    t.p_->shape = std::move(shape);
    t.p_->data = std::move(data);
    return t;
  }

  static TensorT scalar(T v) { return from_data({1}, {v}); }

  template <class Rng>
  static TensorT uniform(Shape shape, T lo, T hi, Rng& rng) {
    TensorT t(std::move(shape));
    std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
    for (auto& v : t.p_->data) v = static_cast<T>(dist(rng));
    return t;
  }

  bool defined() const { return p_ != nullptr; }
  const Shape& shape() const { return p_->shape; }
  int rank() const { return static_cast<int>(p_->shape.size()); }
  int dim(int i) const { return p_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(p_->data.size()); }

  T* data() { return p_->data.data(); }
  const T* data() const { return p_->data.data(); }
  std::vector<T>& vec() { return p_->data; }
  const std::vector<T>& vec() const { return p_->data; }

  T& operator[](int64_t i) { return p_->data[static_cast<size_t>(i)]; }
  T operator[](int64_t i) const { return p_->data[static_cast<size_t>(i)]; }

  // NCHW accessor.
  T& at4(int n, int c, int y, int x) {
    return p_->data[flat4(n, c, y, x)];
  }
  T at4(int n, int c, int y, int x) const {
    return p_->data[flat4(n, c, y, x)];
  }

  bool requires_grad() const { return p_ != nullptr && p_->requires_grad; }
  TensorT& set_requires_grad(bool on) {
    p_->requires_grad = on;
    return *this;
  }

  /// Stops gradient flow: a fresh constant tensor with copied values.
  TensorT detach() const {
    TensorT t;
    t.p_ = std::make_shared<TensorImplT<T>>();
    t.p_->shape = p_->shape;
    t.p_->data = p_->data;
    return t;
  }

  TensorT clone() const {
    TensorT t = detach();
    t.p_->requires_grad = p_->requires_grad;
    return t;
  }

  /// Accumulated gradient (zeros when nothing has been accumulated).
  TensorT grad() const {
    TensorT g(p_->shape);
    if (!p_->grad.empty()) {
      for (size_t i = 0; i < p_->grad.size(); ++i)
        g.p_->data[i] = static_cast<T>(p_->grad[i]);
    }
    return g;
  }

  bool has_grad() const { return !p_->grad.empty(); }
  void zero_grad() { p_->grad.clear(); }

  const std::shared_ptr<TensorImplT<T>>& impl() const { return p_; }

 private:
  size_t flat4(int n, int c, int y, int x) const {
    const Shape& s = p_->shape;
    return ((static_cast<size_t>(n) * s[1] + c) * s[2] + y) * s[3] + x;
  }

  std::shared_ptr<TensorImplT<T>> p_;
};

namespace detail {

template <class T>
void accumulate_grad(const std::shared_ptr<TensorImplT<T>>& impl,
                     const std::vector<double>& g) {
  if (!impl->requires_grad) return;
  if (impl->grad.empty()) {
    impl->grad = g;
  } else {
    for (size_t i = 0; i < g.size(); ++i) impl->grad[i] += g[i];
  }
}

template <class T>
std::vector<double>& grad_buffer(const std::shared_ptr<TensorImplT<T>>& impl) {
  if (impl->grad.empty()) impl->grad.assign(impl->data.size(), 0.0);
  return impl->grad;
}

}  // namespace detail

/// Per-thread record of differentiable operations. Nodes are appended in
/// execution order, which is also a valid topological order, so the
/// backward pass is a single reverse sweep.
template <class T>
class TapeT {
 public:
  struct Node {
    std::function<void()> backward;          // accumulates into input grads
    std::shared_ptr<TensorImplT<T>> out;     // output whose grad feeds `backward`
    bool leaf = false;
  };

  static TapeT& active() {
    static thread_local TapeT tape;
    return tape;
  }

  bool recording() const { return no_grad_depth_ == 0; }
  size_t size() const { return nodes_.size(); }
  int64_t epoch() const { return epoch_; }

  int emit(std::shared_ptr<TensorImplT<T>> out, std::function<void()> backward,
           bool leaf = false) {
    Node n;
    n.backward = std::move(backward);
    n.out = std::move(out);
    n.leaf = leaf;
    nodes_.push_back(std::move(n));
    const int id = static_cast<int>(nodes_.size()) - 1;
    nodes_.back().out->tape_id = id;
    nodes_.back().out->tape_epoch = epoch_;
    return id;
  }

  /// Puts a leaf (parameter/input) on the current epoch if not already there.
  void ensure_leaf(const std::shared_ptr<TensorImplT<T>>& impl) {
    if (impl->tape_epoch == epoch_ && impl->tape_id >= 0) return;
    emit(impl, [] {}, /*leaf=*/true);
  }

  bool on_current_epoch(const std::shared_ptr<TensorImplT<T>>& impl) const {
    return impl->tape_epoch == epoch_ && impl->tape_id >= 0 &&
           impl->tape_id < static_cast<int>(nodes_.size());
  }

  void clear() {
    nodes_.clear();
    ++epoch_;
  }

  void truncate(size_t size) {
    if (size < nodes_.size()) nodes_.resize(size);
  }

  Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }

  void push_no_grad() { ++no_grad_depth_; }
  void pop_no_grad() { --no_grad_depth_; }

 private:
  std::vector<Node> nodes_;
  int no_grad_depth_ = 0;
  int64_t epoch_ = 0;
};

template <class T>
struct NoGradGuardT {
  NoGradGuardT() { TapeT<T>::active().push_no_grad(); }
  ~NoGradGuardT() { TapeT<T>::active().pop_no_grad(); }
  NoGradGuardT(const NoGradGuardT&) = delete;
  NoGradGuardT& operator=(const NoGradGuardT&) = delete;
};

/// Convenience guard covering both scalar instantiations.
struct NoGradGuard {
  NoGradGuardT<float> f_;
  NoGradGuardT<double> d_;
};

namespace detail {

// True when the op should land on the tape; also places requires-grad
// leaves on the current epoch so their gradients are addressable.
template <class T>
bool record_op(std::initializer_list<const TensorT<T>*> inputs) {
  auto& tape = TapeT<T>::active();
  if (!tape.recording()) return false;
  bool any = false;
  for (const TensorT<T>* t : inputs) {
    if (t->defined() && t->requires_grad()) any = true;
  }
  if (!any) return false;
  for (const TensorT<T>* t : inputs) {
    if (t->defined() && t->requires_grad() && t->impl()->tape_id < 0) {
      tape.ensure_leaf(t->impl());
    } else if (t->defined() && t->requires_grad() && !tape.on_current_epoch(t->impl())) {
      tape.ensure_leaf(t->impl());
    }
  }
  return true;
}

}  // namespace detail

/// Reverse sweep from a scalar loss. Returns the gradient of every node
/// reached by the sweep keyed by tape id; leaf tensors additionally keep
/// their accumulated gradient on the tensor itself, so repeated backward
/// calls sum (tape linearity).
template <class T>
std::unordered_map<int, TensorT<T>> backward(const TensorT<T>& loss) {
  EPC_CHECK(loss.defined(), "backward: undefined loss tensor");
  EPC_CHECK(loss.numel() == 1, "backward: loss must be scalar, got shape ",
            shape_str(loss.shape()));
  auto& tape = TapeT<T>::active();
  std::unordered_map<int, TensorT<T>> grads;
  if (!loss.requires_grad()) {
    EPC_CHECK(false, "backward: loss does not require grad (not on the tape)");
  }
  if (!tape.on_current_epoch(loss.impl())) {
    // Leaf scalar: d loss / d loss = 1.
    detail::accumulate_grad(loss.impl(), std::vector<double>{1.0});
    return grads;
  }
  detail::accumulate_grad(loss.impl(), std::vector<double>{1.0});
  for (int i = loss.impl()->tape_id; i >= 0; --i) {
    auto& node = tape.node(i);
    if (node.out->grad.empty()) continue;
    node.backward();
    std::vector<T> g(node.out->grad.size());
    for (size_t j = 0; j < g.size(); ++j) g[j] = static_cast<T>(node.out->grad[j]);
    grads.emplace(i, TensorT<T>::from_data(node.out->shape, std::move(g)));
    if (!node.leaf) node.out->grad.clear();
  }
  return grads;
}

using Tensor = TensorT<float>;
using Tape = TapeT<float>;

}  // namespace epc
