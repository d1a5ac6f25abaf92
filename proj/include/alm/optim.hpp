#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "alm/model.hpp"

namespace alm {

// Throws alm::Error naming the first tensor holding a NaN or infinity.
template <typename T>
void check_finite_gradients(const ParamLayout& layout, std::span<const T> grad);

// θ ← θ − lr·g
template <typename T>
void sgd_step(Transformer<T>& model, std::span<const T> grad, double lr);

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  std::vector<T> m;
  std::vector<T> v;
  std::uint64_t step = 0;
};

// Bias-corrected Adam. State buffers are sized on first use.
template <typename T>
void adam_step(Transformer<T>& model, std::span<const T> grad, AdamState<T>& state, double lr,
               const AdamOptions& options = {});

}  // namespace alm
