#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "daegan/tensor.hpp"

namespace daegan {

/// Adam moment buffers for one parameter set, kept parallel to the
/// registration order of the parameters they belong to.
template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  int64_t t = 0;
  T beta1 = T(0);
  T beta2 = T(0.9);
  T eps = T(1e-8);
};

/// One bias-corrected Adam update over a named parameter list. Parameters
/// without an accumulated gradient are treated as zero-gradient (moments
/// still decay). Gradients are consumed: cleared after the update.
template <typename T>
void adam_step(std::vector<std::pair<std::string, Tensor<T>>>& params,
               AdamState<T>& st, T lr) {
  check(lr > T(0), "adam_step: learning rate must be positive, got ", lr);
  if (st.m.empty()) {
    st.m.resize(params.size());
    st.v.resize(params.size());
    for (size_t p = 0; p < params.size(); ++p) {
      st.m[p].assign(size_t(params[p].second.numel()), T(0));
      st.v[p].assign(size_t(params[p].second.numel()), T(0));
    }
  }
  check(st.m.size() == params.size(), "adam_step: state holds ", st.m.size(),
        " buffers for ", params.size(), " parameters");
  st.t += 1;
  const T bc1 = T(1) - std::pow(st.beta1, T(st.t));
  const T bc2 = T(1) - std::pow(st.beta2, T(st.t));
  for (size_t p = 0; p < params.size(); ++p) {
    Tensor<T>& w = params[p].second;
    check(int64_t(st.m[p].size()) == w.numel(), "adam_step: buffer shape for ",
          params[p].first, " does not match its parameter");
    const bool has = w.has_grad();
    const std::vector<T> g = has ? w.grad() : std::vector<T>();
    T* pw = w.mutable_data();
    auto& m = st.m[p];
    auto& v = st.v[p];
    for (size_t i = 0; i < m.size(); ++i) {
      const T gi = has ? g[i] : T(0);
      m[i] = st.beta1 * m[i] + (T(1) - st.beta1) * gi;
      v[i] = st.beta2 * v[i] + (T(1) - st.beta2) * gi * gi;
      const T mhat = m[i] / bc1;
      const T vhat = v[i] / bc2;
      pw[i] -= lr * mhat / (std::sqrt(vhat) + st.eps);
    }
    if (has) w.zero_grad();
  }
}

/// Linear decay to zero over the stage length, floored at 1% of the base
/// rate so late epochs still move.
template <typename T>
T lr_at(int64_t epoch, int64_t total_epochs, T base) {
  check(total_epochs > 0, "lr_at: total_epochs must be positive");
  const T decayed = base * (T(1) - T(epoch) / T(total_epochs));
  return std::max(decayed, T(0.01) * base);
}

}  // namespace daegan
