#include "alm/optim.hpp"

#include <cmath>

#include "alm/error.hpp"

namespace alm {
namespace {

void check_lr(double lr) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw Error("learning rate must be finite and non-negative");
}

template <typename T>
void check_sizes(const Transformer<T>& model, std::span<const T> grad) {
  if (grad.size() != model.values().size()) {
    throw Error("gradient has " + std::to_string(grad.size()) + " values, model has " +
                std::to_string(model.values().size()));
  }
}

}  // namespace

template <typename T>
void check_finite_gradients(const ParamLayout& layout, std::span<const T> grad) {
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!std::isfinite(grad[i])) {
      const TensorSpec& s = layout.owner(i);
      throw Error("non-finite gradient in tensor '" + s.name + "' at element " +
                  std::to_string(i - s.offset) + "; training aborted");
    }
  }
}

template <typename T>
void sgd_step(Transformer<T>& model, std::span<const T> grad, double lr) {
  check_lr(lr);
  check_sizes(model, grad);
  check_finite_gradients<T>(model.layout(), grad);
  auto p = model.values();
  const T step = static_cast<T>(lr);
  for (std::size_t i = 0; i < p.size(); ++i) p[i] -= step * grad[i];
}

template <typename T>
void adam_step(Transformer<T>& model, std::span<const T> grad, AdamState<T>& state, double lr,
               const AdamOptions& o) {
  check_lr(lr);
  check_sizes(model, grad);
  check_finite_gradients<T>(model.layout(), grad);
  auto p = model.values();
  if (state.m.size() != p.size()) {
    state.m.assign(p.size(), T{});
    state.v.assign(p.size(), T{});
    state.step = 0;
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(o.beta1), b2 = static_cast<T>(o.beta2);
  const T step = static_cast<T>(lr / bc1);
  const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
  const T eps = static_cast<T>(o.eps);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const T g = grad[i];
    state.m[i] = b1 * state.m[i] + (T(1) - b1) * g;
    state.v[i] = b2 * state.v[i] + (T(1) - b2) * g * g;
    p[i] -= step * state.m[i] / (std::sqrt(state.v[i]) * inv_sqrt_bc2 + eps);
  }
}

template void check_finite_gradients<float>(const ParamLayout&, std::span<const float>);
template void check_finite_gradients<double>(const ParamLayout&, std::span<const double>);
template void sgd_step<float>(Transformer<float>&, std::span<const float>, double);
template void sgd_step<double>(Transformer<double>&, std::span<const double>, double);
template void adam_step<float>(Transformer<float>&, std::span<const float>, AdamState<float>&, double,
                               const AdamOptions&);
template void adam_step<double>(Transformer<double>&, std::span<const double>, AdamState<double>&,
                                double, const AdamOptions&);

}  // namespace alm
