#pragma once

#include <functional>
#include <memory>
#include <unordered_map>
#include <utility>

#include "daegan/common.hpp"

namespace daegan {

template <typename T>
class Graph;

namespace detail {
template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  bool requires_grad = false;
  // Leaves are tensors not produced by a recorded op; only they keep a
  // persistent gradient buffer across backward passes.
  bool leaf = true;
  std::unique_ptr<std::vector<T>> grad;
};
}  // namespace detail

/// Dense row-major tensor handle with value semantics. The underlying buffer
/// is never mutated by ops; parameter updates go through mutable_data().
template <typename T>
class Tensor {
 public:
  Tensor() : impl_(nullptr) {}

  static Tensor zeros(Shape shape) { return filled(std::move(shape), T(0)); }
  static Tensor ones(Shape shape) { return filled(std::move(shape), T(1)); }

  static Tensor filled(Shape shape, T value) {
    Tensor t = uninit(std::move(shape));
    std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
    return t;
  }

  static Tensor scalar(T value) { return filled({1}, value); }

  static Tensor from(Shape shape, std::vector<T> values) {
    check(shape_numel(shape) == int64_t(values.size()), "Tensor::from: shape ",
          shape_str(shape), " needs ", shape_numel(shape), " values, got ",
          values.size());
    Tensor t;
    t.impl_ = std::make_shared<detail::TensorImpl<T>>();
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(values);
    return t;
  }

  static Tensor uninit(Shape shape) {
    Tensor t;
    t.impl_ = std::make_shared<detail::TensorImpl<T>>();
    t.impl_->data.resize(size_t(shape_numel(shape)));
    t.impl_->shape = std::move(shape);
    return t;
  }

  static Tensor randn(Shape shape, Rng& rng, T stddev = T(1)) {
    Tensor t = uninit(std::move(shape));
    for (auto& v : t.impl_->data) v = T(rng.normal()) * stddev;
    return t;
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int64_t dim(int i) const { return impl_->shape[size_t(i)]; }
  int ndim() const { return int(impl_->shape.size()); }
  int64_t numel() const { return int64_t(impl_->data.size()); }

  const T* data() const { return impl_->data.data(); }
  const std::vector<T>& vec() const { return impl_->data; }

  /// Direct buffer access for initialization and optimizer updates only;
  /// never call on a tensor that participates in a recorded graph node.
  T* mutable_data() { return impl_->data.data(); }

  T item() const {
    check(numel() == 1, "Tensor::item: expected scalar, shape is ",
          shape_str(shape()));
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  bool is_leaf() const { return impl_->leaf; }

  Tensor& set_requires_grad(bool on) {
    check(impl_->leaf, "set_requires_grad: only valid on leaf tensors");
    impl_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return impl_->grad != nullptr; }

  std::vector<T>& grad() const {
    if (!impl_->grad)
      impl_->grad = std::make_unique<std::vector<T>>(impl_->data.size(), T(0));
    return *impl_->grad;
  }

  void zero_grad() const {
    if (impl_->grad) std::fill(impl_->grad->begin(), impl_->grad->end(), T(0));
  }

  void accumulate_grad(const std::vector<T>& g) const {
    auto& dst = grad();
    check(dst.size() == g.size(), "accumulate_grad: size mismatch");
    for (size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  }

  /// Same values, cut loose from any graph.
  Tensor detach() const {
    Tensor t;
    t.impl_ = std::make_shared<detail::TensorImpl<T>>();
    t.impl_->shape = impl_->shape;
    t.impl_->data = impl_->data;
    return t;
  }

  Tensor clone() const { return detach(); }

  bool same_impl(const Tensor& other) const { return impl_ == other.impl_; }
  detail::TensorImpl<T>* impl() const { return impl_.get(); }

  // Marks this tensor as the output of a recorded op.
  void mark_recorded() const {
    impl_->requires_grad = true;
    impl_->leaf = false;
  }

  void assert_finite(const char* where) const {
    for (const T& v : impl_->data)
      if (!std::isfinite(double(v)))
        raise(where, ": non-finite value in tensor of shape ",
              shape_str(shape()));
  }

 private:
  std::shared_ptr<detail::TensorImpl<T>> impl_;
};

/// Scratch gradients for one backward sweep. Intermediate nodes live only
/// here; leaf gradients are flushed into Tensor::grad at the end so repeated
/// backward calls accumulate.
template <typename T>
class GradMap {
 public:
  const std::vector<T>* find(const Tensor<T>& t) const {
    auto it = m_.find(t.impl());
    return it == m_.end() ? nullptr : &it->second;
  }

  std::vector<T>& acc(const Tensor<T>& t) {
    auto [it, inserted] = m_.try_emplace(t.impl());
    if (inserted) it->second.assign(size_t(t.numel()), T(0));
    return it->second;
  }

 private:
  std::unordered_map<detail::TensorImpl<T>*, std::vector<T>> m_;
  template <typename U>
  friend class Graph;
};

/// Reverse-mode tape. Ops append one node per call while a Recording scope is
/// active; backward replays the nodes in exact reverse recording order.
template <typename T>
class Graph {
 public:
  class Recording {
   public:
    Recording() : owned_(std::make_unique<Graph>()), prev_(active_ref()) {
      active_ref() = owned_.get();
    }
    explicit Recording(Graph& g) : prev_(active_ref()) { active_ref() = &g; }
    ~Recording() { active_ref() = prev_; }
    Recording(const Recording&) = delete;
    Recording& operator=(const Recording&) = delete;

    Graph& graph() { return owned_ ? *owned_ : *active_ref(); }

   private:
    std::unique_ptr<Graph> owned_;
    Graph* prev_;
  };

  /// Suspends recording (inference forward passes, backward internals).
  class NoRecord {
   public:
    NoRecord() : prev_(active_ref()) { active_ref() = nullptr; }
    ~NoRecord() { active_ref() = prev_; }
    NoRecord(const NoRecord&) = delete;
    NoRecord& operator=(const NoRecord&) = delete;

   private:
    Graph* prev_;
  };

  static Graph* maybe_active() { return active_ref(); }

  static Graph& active() {
    Graph* g = active_ref();
    check(g != nullptr, "Graph::active: no recording scope is active");
    return *g;
  }

  void record(const char* name, std::function<void(GradMap<T>&)> backward) {
    nodes_.push_back(Node{name, std::move(backward)});
  }

  size_t size() const { return nodes_.size(); }

  void backward(const Tensor<T>& loss) {
    check(loss.numel() == 1, "backward: loss must be scalar, shape is ",
          shape_str(loss.shape()));
    NoRecord guard;
    GradMap<T> gm;
    gm.acc(loss)[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
      it->backward(gm);
    for (auto& [impl, g] : gm.m_) {
      if (!impl->leaf || !impl->requires_grad) continue;
      if (!impl->grad)
        impl->grad = std::make_unique<std::vector<T>>(impl->data.size(), T(0));
      auto& dst = *impl->grad;
      for (size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
    }
  }

 private:
  struct Node {
    const char* name;
    std::function<void(GradMap<T>&)> backward;
  };
  std::vector<Node> nodes_;

  static Graph*& active_ref() {
    thread_local Graph* active = nullptr;
    return active;
  }
};

namespace detail {

/// Shared op epilogue: propagate grad participation and record the node.
template <typename T, typename F>
void record_if_needed(const char* name, bool inputs_need_grad,
                      const Tensor<T>& out, F&& backward) {
  if (finite_checks()) out.assert_finite(name);
  auto* g = Graph<T>::maybe_active();
  if (!g || !inputs_need_grad) return;
  out.mark_recorded();
  g->record(name, std::forward<F>(backward));
}

}  // namespace detail

}  // namespace daegan
