#pragma once

#include <cmath>
#include <optional>

#include "pgrad/errors.hpp"
#include "pgrad/network.hpp"

namespace pgrad {

inline double global_l2_norm(const ParamSet& g) {
  double s = 0.0;
  for (const auto& w : g.weights)
    for (double v : w) s += v * v;
  for (const auto& b : g.biases)
    for (double v : b) s += v * v;
  return std::sqrt(s);
}

/// Scale factor that caps the global L2 norm at `threshold`: 1 when already
/// within the threshold, threshold/norm otherwise.
inline double clip_scale(const ParamSet& g, double threshold) {
  if (!(threshold > 0.0)) throw InvalidConfigError("clip threshold must be positive");
  const double norm = global_l2_norm(g);
  if (!std::isfinite(norm)) throw InvalidInputError("clip_global_norm: non-finite gradient");
  return norm <= threshold ? 1.0 : threshold / norm;
}

/// Returns g unchanged when ||g||_2 <= threshold, else g * threshold/||g||_2.
/// The norm is taken over all parameters jointly.
inline ParamSet clip_global_norm(ParamSet g, double threshold) {
  const double s = clip_scale(g, threshold);
  if (s != 1.0) g.scale(s);
  return g;
}

struct OptimizerState {
  double learning_rate;
  double momentum;
  ParamSet velocity;
  std::optional<double> clip_threshold;

  OptimizerState(double eta, double mu, ParamSet vel, std::optional<double> clip = std::nullopt)
      : learning_rate(eta), momentum(mu), velocity(std::move(vel)), clip_threshold(clip) {
    if (!(eta > 0.0) || !std::isfinite(eta)) throw InvalidConfigError("learning rate must be positive");
    if (!(mu >= 0.0 && mu < 1.0)) throw InvalidConfigError("momentum must be in [0,1)");
    if (clip && !(*clip > 0.0)) throw InvalidConfigError("clip threshold must be positive");
  }
};

/// Classical momentum: v <- mu*v - eta*g, theta <- theta + v. When clipping
/// is configured it applies to g before the velocity update.
inline void momentum_step(Network& params, const ParamSet& g, OptimizerState& st) {
  if (!params.congruent_with(g) || !params.congruent_with(st.velocity)) {
    throw ShapeError("momentum_step: gradient/velocity not shape-congruent with parameters");
  }
  const double s = st.clip_threshold ? clip_scale(g, *st.clip_threshold) : 1.0;
  const double mu = st.momentum, eta = st.learning_rate;
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    double* w = params.weights[l].data();
    double* v = st.velocity.weights[l].data();
    const double* gw = g.weights[l].data();
    const std::size_t nw = params.weights[l].size();
    for (std::size_t i = 0; i < nw; ++i) {
      const double gc = s * gw[i];
      v[i] = mu * v[i] - eta * gc;
      w[i] += v[i];
    }
    double* b = params.biases[l].data();
    double* vb = st.velocity.biases[l].data();
    const double* gb = g.biases[l].data();
    const std::size_t nb = params.biases[l].size();
    for (std::size_t i = 0; i < nb; ++i) {
      const double gc = s * gb[i];
      vb[i] = mu * vb[i] - eta * gc;
      b[i] += vb[i];
    }
  }
}

/// Plain full-batch step: theta <- theta - eta*g.
inline void batch_gd_step(Network& params, const ParamSet& g, double eta) {
  if (!params.congruent_with(g)) throw ShapeError("batch_gd_step: gradient not shape-congruent");
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    double* w = params.weights[l].data();
    const double* gw = g.weights[l].data();
    const std::size_t nw = params.weights[l].size();
    for (std::size_t i = 0; i < nw; ++i) w[i] -= eta * gw[i];
    double* b = params.biases[l].data();
    const double* gb = g.biases[l].data();
    const std::size_t nb = params.biases[l].size();
    for (std::size_t i = 0; i < nb; ++i) b[i] -= eta * gb[i];
  }
}

}  // namespace pgrad
