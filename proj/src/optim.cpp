#include "stainr/train.hpp"

#include <cmath>

namespace stainr {

template <typename T>
OptimState<T> OptimState<T>::create(const std::vector<Tensor<T>>& params, const AdamWHyper& hyper) {
  OptimState s;
  s.hyper = hyper;
  for (const auto& p : params) {
    s.m.push_back(Tensor<T>::zeros(p.shape()));
    s.v.push_back(Tensor<T>::zeros(p.shape()));
  }
  return s;
}

template <typename T>
void adamw_step(const std::vector<Tensor<T>>& params, OptimState<T>& state, double lr) {
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw std::invalid_argument("adamw_step: optimizer state holds " + std::to_string(state.m.size()) +
                                " moments for " + std::to_string(params.size()) + " parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad())
      throw GraphError("adamw_step: parameter " + std::to_string(i) + " " + shape_str(params[i].shape()) +
                       " has no gradient");
    if (state.m[i].shape() != params[i].shape())
      throw ShapeError("adamw_step: moment shape " + shape_str(state.m[i].shape()) + " vs parameter " +
                       shape_str(params[i].shape()));
  }
  const AdamWHyper& h = state.hyper;
  ++state.step;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T> p = params[i];
    auto& data = p.data();
    const auto& g = p.grad();
    auto& m = state.m[i].data();
    auto& v = state.v[i].data();
    for (Index k = 0; k < data.size(); ++k) {
      const double gk = g[k];
      const double mk = h.beta1 * m[k] + (1 - h.beta1) * gk;
      const double vk = h.beta2 * v[k] + (1 - h.beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double update = (mk / c1) / (std::sqrt(vk / c2) + h.eps) + h.weight_decay * data[k];
      data[k] = static_cast<T>(data[k] - lr * update);
    }
  }
}

double cosine_anneal_lr(int step, int total, double lr_max, double lr_min) {
  if (total <= 0) throw std::invalid_argument("cosine_anneal_lr: total steps must be positive");
  if (step < 0 || step > total)
    throw std::invalid_argument("cosine_anneal_lr: step " + std::to_string(step) + " outside [0, " +
                                std::to_string(total) + "]");
  // The three exact points of the cosine are returned without rounding.
  if (step == 0) return lr_max;
  if (step == total) return lr_min;
  if (2 * step == total) return lr_min + 0.5 * (lr_max - lr_min);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(M_PI * step / total));
}

template struct OptimState<float>;
template struct OptimState<double>;
template void adamw_step(const std::vector<Tensor<float>>&, OptimState<float>&, double);
template void adamw_step(const std::vector<Tensor<double>>&, OptimState<double>&, double);

}  // namespace stainr
