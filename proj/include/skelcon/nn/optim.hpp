#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "skelcon/error.hpp"

namespace skelcon::nn {

/// SGD with heavy-ball momentum and L2 weight decay:
///   g <- g + wd * theta;  v <- mu * v + g;  theta <- theta - lr * v
template <class T>
struct Sgd {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::vector<T> velocity;

  void step(std::span<T> params, std::span<const T> grad) {
    if (grad.size() != params.size()) throw ContractError("gradient size does not match parameters");
    if (velocity.size() != params.size()) velocity.assign(params.size(), T(0));
    const T mu = static_cast<T>(momentum), wd = static_cast<T>(weight_decay), eta = static_cast<T>(lr);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const T g = grad[i] + wd * params[i];
      velocity[i] = mu * velocity[i] + g;
      params[i] -= eta * velocity[i];
    }
  }
};

template <class T>
struct Adam {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  std::vector<T> m, v;
  long long t = 0;

  void step(std::span<T> params, std::span<const T> grad) {
    if (grad.size() != params.size()) throw ContractError("gradient size does not match parameters");
    if (m.size() != params.size()) {
      m.assign(params.size(), T(0));
      v.assign(params.size(), T(0));
    }
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    const T b1 = static_cast<T>(beta1), b2 = static_cast<T>(beta2);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const T g = grad[i] + static_cast<T>(weight_decay) * params[i];
      m[i] = b1 * m[i] + (T(1) - b1) * g;
      v[i] = b2 * v[i] + (T(1) - b2) * g * g;
      const double mh = m[i] / c1, vh = v[i] / c2;
      params[i] -= static_cast<T>(lr * mh / (std::sqrt(vh) + eps));
    }
  }
};

/// Step decay: lr * 0.1^(number of milestones <= epoch).
inline double step_decay(double base_lr, int epoch, std::span<const int> milestones, double factor = 0.1) {
  double lr = base_lr;
  for (int m : milestones)
    if (epoch >= m) lr *= factor;
  return lr;
}

}  // namespace skelcon::nn
