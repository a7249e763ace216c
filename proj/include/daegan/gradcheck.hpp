#pragma once

#include <functional>
#include <set>
#include <string>
#include <vector>

#include "daegan/tensor.hpp"

namespace daegan {

/// Central-difference gradient verification. The closure must be a pure
/// function of the input list returning a scalar; it is re-evaluated at
/// perturbed copies, so the same expression also defines the numeric side.
/// Returns the worst relative error over every coordinate of every input.
template <typename T>
T grad_check(
    const std::function<Tensor<T>(const std::vector<Tensor<T>>&)>& f,
    const std::vector<Tensor<T>>& inputs, T delta = T(1e-5)) {
  std::vector<Tensor<T>> tracked;
  tracked.reserve(inputs.size());
  for (const auto& in : inputs) {
    Tensor<T> t = Tensor<T>::from(in.shape(), in.vec());
    t.set_requires_grad(true);
    tracked.push_back(t);
  }
  {
    typename Graph<T>::Recording rec;
    Tensor<T> loss = f(tracked);
    check(loss.numel() == 1, "grad_check: closure must return a scalar");
    Graph<T>::active().backward(loss);
  }
  auto eval = [&](const std::vector<Tensor<T>>& probe) {
    typename Graph<T>::NoRecord nr;
    return f(probe).item();
  };
  T worst = T(0);
  for (size_t which = 0; which < tracked.size(); ++which) {
    const auto& t = tracked[which];
    std::vector<T> analytic =
        t.has_grad() ? t.grad() : std::vector<T>(size_t(t.numel()), T(0));
    for (int64_t i = 0; i < t.numel(); ++i) {
      std::vector<Tensor<T>> probe = tracked;
      auto bump = [&](T d) {
        std::vector<T> v = t.vec();
        v[size_t(i)] += d;
        probe[which] = Tensor<T>::from(t.shape(), std::move(v));
        return eval(probe);
      };
      const T numeric = (bump(delta) - bump(-delta)) / (T(2) * delta);
      const T a = analytic[size_t(i)];
      const T denom = std::max({std::abs(a), std::abs(numeric), T(1)});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

/// Verifies gradients of live leaf parameters in place. The closure reads
/// whatever model state the parameters belong to, so each numeric probe
/// mutates one payload coordinate, re-evaluates under NoRecord, and restores
/// it. `max_coords_per_tensor` > 0 checks a deterministic subsample instead
/// of every coordinate, which keeps whole-model sweeps fast.
template <typename T>
T grad_check_params(const std::function<Tensor<T>()>& loss_fn,
                    std::vector<std::pair<std::string, Tensor<T>>> params,
                    T delta = T(1e-5), int64_t max_coords_per_tensor = 0,
                    uint64_t subsample_seed = 7) {
  for (auto& [name, p] : params) p.zero_grad();
  {
    typename Graph<T>::Recording rec;
    Tensor<T> loss = loss_fn();
    check(loss.numel() == 1, "grad_check_params: loss must be a scalar");
    Graph<T>::active().backward(loss);
  }
  auto eval = [&]() {
    typename Graph<T>::NoRecord nr;
    return loss_fn().item();
  };
  Rng rng(subsample_seed);
  T worst = T(0);
  for (auto& [name, p] : params) {
    std::vector<T> analytic =
        p.has_grad() ? p.grad() : std::vector<T>(size_t(p.numel()), T(0));
    std::vector<int64_t> coords;
    if (max_coords_per_tensor <= 0 || p.numel() <= max_coords_per_tensor) {
      coords.resize(size_t(p.numel()));
      for (int64_t i = 0; i < p.numel(); ++i) coords[size_t(i)] = i;
    } else {
      std::set<int64_t> picked;
      while (int64_t(picked.size()) < max_coords_per_tensor)
        picked.insert(rng.uniform_int(p.numel()));
      coords.assign(picked.begin(), picked.end());
    }
    T* data = p.mutable_data();
    for (int64_t i : coords) {
      const T saved = data[i];
      data[i] = saved + delta;
      const T plus = eval();
      data[i] = saved - delta;
      const T minus = eval();
      data[i] = saved;
      const T numeric = (plus - minus) / (T(2) * delta);
      const T a = analytic[size_t(i)];
      const T denom = std::max({std::abs(a), std::abs(numeric), T(1)});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  for (auto& [name, p] : params) p.zero_grad();
  return worst;
}

/// One named case for the op-by-op gradient sweep.
struct GradCheckCase {
  std::string name;
  double tol = 1e-4;
  std::function<double()> run;  // returns max relative error, 64-bit
};

}  // namespace daegan
