#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pgrad/data.hpp"
#include "pgrad/errors.hpp"
#include "pgrad/network.hpp"

namespace pgrad {

/// Signed per-class gap between predicted probability and the one-hot target:
/// eps_y = p_y - 1 and eps_j = p_j for j != y. Entries sum to 0.
struct BiasVector {
  std::vector<double> eps;
  std::size_t y = 0;
};

/// The sensitivity parameter k > 0. k = 1 reproduces the cross-entropy
/// gradient; k < 1 dampens and k > 1 amplifies the influence of examples
/// with a large prediction bias.
struct SensitivityFn {
  double k;
  explicit SensitivityFn(double k_) : k(k_) {
    if (!std::isfinite(k) || !(k > 0.0)) {
      throw InvalidConfigError("sensitivity parameter k must be positive and finite");
    }
  }
};

inline void prediction_bias_into(std::span<const double> p, std::size_t y, BiasVector& b) {
  if (y >= p.size()) {
    throw IndexError("prediction_bias: class index " + std::to_string(y) + " out of range for " +
                     std::to_string(p.size()) + " classes");
  }
  b.y = y;
  b.eps.assign(p.begin(), p.end());
  b.eps[y] -= 1.0;
}

inline BiasVector prediction_bias(std::span<const double> p, std::size_t y) {
  BiasVector b;
  prediction_bias_into(p, y, b);
  return b;
}

/// The tunable-sensitivity family:
///   f_y = -|eps_y|^k,   f_j = |eps_y|^k * eps_j^k / sum_{i!=y} eps_i^k  (j != y),
/// so that f_y = -sum_{j!=y} f_j always holds. Off-class powers are evaluated
/// on ratios eps_i / max_i eps_i, which keeps large-k evaluation away from
/// underflow. A perfect prediction (|eps_y| < 1e-12) maps to the zero vector,
/// the limit of the formula along every path.
inline void f_k_into(const BiasVector& bias, const SensitivityFn& fn, std::vector<double>& out) {
  const std::size_t n = bias.eps.size();
  if (bias.y >= n) throw IndexError("f_k: bias true-class index out of range");
  out.assign(n, 0.0);
  const double ay = std::fabs(bias.eps[bias.y]);
  if (ay < 1e-12) return;

  double m = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (i != bias.y) m = std::max(m, bias.eps[i]);
  }
  if (!(m > 0.0)) throw InvalidInputError("f_k: off-class prediction biases must be nonnegative");

  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (i == bias.y) continue;
    const double r = std::pow(bias.eps[i] / m, fn.k);
    out[i] = r;
    sum += r;
  }
  const double a = std::pow(ay, fn.k);
  const double scale = a / sum;
  for (std::size_t i = 0; i < n; ++i) {
    if (i != bias.y) out[i] *= scale;
  }
  out[bias.y] = -a;
}

inline std::vector<double> f_k(const BiasVector& bias, const SensitivityFn& fn) {
  std::vector<double> out;
  f_k_into(bias, fn, out);
  return out;
}

/// Scratch buffers for the per-example pseudo-gradient path; reuse across a
/// batch to keep the hot loop allocation-free.
struct GradientWorkspace {
  ForwardTrace trace;
  BiasVector bias;
  std::vector<double> f;
  BackpropWorkspace bp;
};

/// Adds the pseudo-gradient of one example to `acc`.
inline void accumulate_pseudo_gradient(const Network& net, std::span<const double> x, std::size_t y,
                                       const SensitivityFn& fn, ParamSet& acc, GradientWorkspace& ws) {
  forward_into(net, x, ws.trace);
  prediction_bias_into(ws.trace.p, y, ws.bias);
  f_k_into(ws.bias, fn, ws.f);
  backprop_accumulate(net, ws.trace, ws.f, acc, ws.bp);
}

/// g(theta) = sum_j (dz_j/dtheta) f_j(eps) for a single labeled example.
inline ParamSet pseudo_gradient(const Network& net, std::span<const double> x, std::size_t y,
                                const SensitivityFn& fn) {
  ParamSet acc = net.zeros_like();
  GradientWorkspace ws;
  accumulate_pseudo_gradient(net, x, y, fn, acc, ws);
  return acc;
}

inline ParamSet pseudo_gradient(const Network& net, const Example& ex, const SensitivityFn& fn) {
  return pseudo_gradient(net, ex.features, ex.label, fn);
}

/// Arithmetic mean of per-example pseudo-gradients over the given indices.
inline ParamSet minibatch_pseudo_gradient(const Network& net, const Dataset& ds,
                                          std::span<const std::size_t> idx, const SensitivityFn& fn,
                                          GradientWorkspace& ws) {
  if (idx.empty()) throw InvalidInputError("minibatch_pseudo_gradient: empty batch");
  ParamSet acc = net.zeros_like();
  for (std::size_t i : idx) {
    const Example& ex = ds.examples[i];
    accumulate_pseudo_gradient(net, ex.features, ex.label, fn, acc, ws);
  }
  acc.scale(1.0 / static_cast<double>(idx.size()));
  return acc;
}

inline ParamSet minibatch_pseudo_gradient(const Network& net, const Dataset& ds, const SensitivityFn& fn) {
  if (ds.size() == 0) throw InvalidInputError("minibatch_pseudo_gradient: empty batch");
  std::vector<std::size_t> idx(ds.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  GradientWorkspace ws;
  return minibatch_pseudo_gradient(net, ds, idx, fn, ws);
}

/// Points (eps_y, |f_y|) = (-e, e^k) for plotting the size of the true-class
/// component as a function of the prediction bias magnitude e in (0,1].
inline std::vector<std::pair<double, double>> f_curve(const SensitivityFn& fn,
                                                      std::span<const double> eps_grid) {
  std::vector<std::pair<double, double>> pts;
  pts.reserve(eps_grid.size());
  for (double e : eps_grid) {
    if (!(e > 0.0 && e <= 1.0)) throw InvalidInputError("f_curve: grid values must be in (0,1]");
    pts.emplace_back(-e, std::pow(e, fn.k));
  }
  return pts;
}

}  // namespace pgrad
