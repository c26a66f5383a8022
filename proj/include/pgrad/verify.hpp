#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "pgrad/data.hpp"
#include "pgrad/errors.hpp"
#include "pgrad/experiment.hpp"
#include "pgrad/network.hpp"
#include "pgrad/pseudograd.hpp"

namespace pgrad {

namespace detail {

/// Visits every parameter of the network as (layer, is_bias, flat_index).
template <class Fn>
void for_each_param(const Network& net, Fn&& fn) {
  for (std::size_t l = 0; l < net.n_layers(); ++l) {
    for (std::size_t i = 0; i < net.weights[l].size(); ++i) fn(l, false, i);
    for (std::size_t i = 0; i < net.biases[l].size(); ++i) fn(l, true, i);
  }
}

inline std::string param_name(const Network& net, std::size_t l, bool is_bias, std::size_t i) {
  if (is_bias) return "layer" + std::to_string(l) + ".b[" + std::to_string(i) + "]";
  const std::size_t c = net.cols(l);
  return "layer" + std::to_string(l) + ".W[" + std::to_string(i / c) + "][" + std::to_string(i % c) + "]";
}

inline double& param_ref(Network& net, std::size_t l, bool is_bias, std::size_t i) {
  return is_bias ? net.biases[l][i] : net.weights[l][i];
}

inline double param_of(const ParamSet& g, std::size_t l, bool is_bias, std::size_t i) {
  return is_bias ? g.biases[l][i] : g.weights[l][i];
}

inline double cross_entropy_loss(const Network& net, const Example& ex) {
  const ForwardTrace t = forward(net, ex.features);
  return -std::log(std::max(t.p[ex.label], 1e-300));
}

inline double stable_sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

/// log(sigmoid(v)) without overflow for large |v|.
inline double log_sigmoid(double v) {
  if (v >= 0.0) return -std::log1p(std::exp(-v));
  return v - std::log1p(std::exp(v));
}

/// Composite Simpson rule over [a,b] with n points (n made odd).
inline double simpson(double a, double b, std::size_t n, const std::function<double(double)>& f) {
  if (n % 2 == 0) ++n;
  if (n < 3) n = 3;
  const double h = (b - a) / static_cast<double>(n - 1);
  double s = f(a) + f(b);
  for (std::size_t i = 1; i + 1 < n; ++i) {
    s += f(a + h * static_cast<double>(i)) * (i % 2 == 1 ? 4.0 : 2.0);
  }
  return s * h / 3.0;
}

}  // namespace detail

// ---- gradient equivalence at k = 1 -----------------------------------------

struct FDReport {
  double max_rel_error = 0.0;  // |g-fd| / max(|g|,|fd|,tolerance)
  double max_abs_error = 0.0;
  std::string worst_param;
  double step = 1e-5;
  double tolerance = 1e-4;
  bool pass = false;
};

/// Compares the k=1 pseudo-gradient against central finite differences of the
/// cross-entropy loss -log p_y over every parameter. `inject_mutant` scales
/// the pseudo-gradient by 1.001 first, as a sensitivity self-test of the
/// checker.
inline FDReport check_k1_gradient(const Network& net, const Example& ex, bool inject_mutant = false) {
  FDReport rep;
  ParamSet g = pseudo_gradient(net, ex.features, ex.label, SensitivityFn(1.0));
  if (inject_mutant) g.scale(1.001);
  Network work = net;
  const double h = rep.step;
  detail::for_each_param(net, [&](std::size_t l, bool is_bias, std::size_t i) {
    double& theta = detail::param_ref(work, l, is_bias, i);
    const double saved = theta;
    theta = saved + h;
    const double lp = detail::cross_entropy_loss(work, ex);
    theta = saved - h;
    const double lm = detail::cross_entropy_loss(work, ex);
    theta = saved;
    const double fd = (lp - lm) / (2.0 * h);
    const double gv = detail::param_of(g, l, is_bias, i);
    const double abs_err = std::fabs(gv - fd);
    const double rel = abs_err / std::max({std::fabs(gv), std::fabs(fd), rep.tolerance});
    if (rel > rep.max_rel_error) {
      rep.max_rel_error = rel;
      rep.worst_param = detail::param_name(net, l, is_bias, i);
    }
    rep.max_abs_error = std::max(rep.max_abs_error, abs_err);
  });
  rep.pass = rep.max_rel_error <= rep.tolerance;
  return rep;
}

// ---- constraint f_y = -sum_{j != y} f_j -------------------------------------

struct ConstraintReport {
  std::size_t samples = 0;
  double worst_ratio = 0.0;  // |sum f| / max|f_j|
  double tolerance = 1e-12;
  double worst_identity_gap = 0.0;  // max |f - eps| over k = 1 samples
  bool pass = false;
};

/// Samples random valid bias vectors (2..10 classes, probabilities from
/// normalized exponentials, random true class) and k log-uniform in
/// [k_lo, k_hi]; asserts |sum_j f_j| <= 1e-12 * max_j |f_j| on every sample.
/// Samples with k = 1 are additionally compared against the identity f = eps.
inline ConstraintReport check_constraint_suite(std::size_t n_samples, double k_lo, double k_hi, Rng& rng) {
  if (n_samples < 1) throw InvalidInputError("check_constraint_suite: need at least one sample");
  if (!(k_lo > 0.0) || !(k_hi >= k_lo)) throw InvalidConfigError("check_constraint_suite: bad k range");
  ConstraintReport rep;
  rep.samples = n_samples;
  std::vector<double> p, f;
  const double log_lo = std::log(k_lo), log_hi = std::log(k_hi);
  for (std::size_t s = 0; s < n_samples; ++s) {
    const std::size_t n = 2 + rng.below(9);
    p.resize(n);
    double sum = 0.0;
    for (double& v : p) {
      v = -std::log(rng.uniform01());
      sum += v;
    }
    for (double& v : p) v /= sum;
    const std::size_t y = rng.below(n);
    const double k = (k_lo == k_hi) ? k_lo : std::exp(rng.uniform(log_lo, log_hi));

    const BiasVector bias = prediction_bias(p, y);
    f_k_into(bias, SensitivityFn(k), f);

    double total = 0.0, scale = 0.0;
    for (double v : f) {
      total += v;
      scale = std::max(scale, std::fabs(v));
    }
    const double ratio = scale > 0.0 ? std::fabs(total) / scale : 0.0;
    rep.worst_ratio = std::max(rep.worst_ratio, ratio);

    if (k == 1.0) {
      for (std::size_t j = 0; j < n; ++j) {
        rep.worst_identity_gap = std::max(rep.worst_identity_gap, std::fabs(f[j] - bias.eps[j]));
      }
    }
  }
  rep.pass = rep.worst_ratio <= rep.tolerance && rep.worst_identity_gap <= 1e-12;
  return rep;
}

// ---- non-integrability witness (mixed partials) -----------------------------

struct MixedPartialOptions {
  double fd_step = 1e-5;
  double min_hidden = 0.3;         // required |h(1)| at the test point
  double min_predicted_gap = -1.0; // -1: default rule (1.5e-3 when |k-1| >= 0.25, else 0)
  double min_residual = -1.0;      // -1: default rule (0.05 when |k-1| >= 0.25, else 0)
  std::size_t max_attempts = 1000;
};

struct MixedPartialReport {
  double k = 1.0;
  double d_g1_d2 = 0.0;  // d g(w_1(1)) / d w_2(1)
  double d_g2_d1 = 0.0;  // d g(w_2(1)) / d w_1(1)
  double gap = 0.0;
  std::array<double, 3> p{};
  double hidden_h1 = 0.0;
  double condition_lhs = 0.0;  // p2^{k-1} (1 - p1)
  double condition_rhs = 0.0;  // p2^k + p3^k
  double condition_residual = 0.0;  // |1 - lhs/rhs|
  std::size_t attempts = 0;
};

/// Estimates both cross partials of the pseudo-gradient field at the softmax
/// weights w_1(1), w_2(1) of a random 3-class one-hidden-layer network, by
/// central differences on g itself. A symmetric field is what a gradient of
/// some cost would require; at k != 1 the checker resamples until the
/// closed-form condition p2^{k-1}(1-p1) = p2^k + p3^k is violated robustly
/// enough for the asymmetry to be measurable.
inline MixedPartialReport check_mixed_partials(double k, std::uint64_t seed,
                                               MixedPartialOptions opts = {}) {
  if (!(k > 0.0)) throw InvalidConfigError("check_mixed_partials: k must be positive");
  double min_gap = opts.min_predicted_gap;
  if (min_gap < 0.0) min_gap = (std::fabs(k - 1.0) >= 0.25) ? 1.5e-3 : 0.0;
  double min_residual = opts.min_residual;
  if (min_residual < 0.0) min_residual = (std::fabs(k - 1.0) >= 0.25) ? 0.05 : 0.0;

  const std::vector<std::size_t> sizes{4, 5, 3};
  const std::size_t y = 0;  // true class: output unit 1

  MixedPartialReport rep;
  rep.k = k;
  Network net;
  std::vector<double> x(sizes.front());
  std::size_t p_bound_failures = 0;
  bool found = false;
  for (std::size_t attempt = 0; attempt < opts.max_attempts && !found; ++attempt) {
    rep.attempts = attempt + 1;
    Rng rng(derive_seed(seed, {attempt}));
    net = init_network(sizes, Activation::Tanh, InitScheme::uniform(-0.9, 0.9), rng);
    for (double& v : x) v = rng.uniform(-1.0, 1.0);
    const ForwardTrace t = forward(net, x);
    const double p1 = t.p[0], p2 = t.p[1], p3 = t.p[2];
    if (p1 < 0.05 || p2 < 0.05 || p3 < 0.05 || p1 > 0.9 || p2 > 0.9 || p3 > 0.9) {
      if (++p_bound_failures >= 100 && !found) {
        throw SetupError("check_mixed_partials: no generic probabilities after 100 reseeds");
      }
      continue;
    }
    const double h1 = t.act[0][0];
    if (std::fabs(h1) < opts.min_hidden) continue;

    rep.p = {p1, p2, p3};
    rep.hidden_h1 = h1;
    rep.condition_lhs = std::pow(p2, k - 1.0) * (1.0 - p1);
    rep.condition_rhs = std::pow(p2, k) + std::pow(p3, k);
    rep.condition_residual = std::fabs(1.0 - rep.condition_lhs / rep.condition_rhs);
    if (rep.condition_residual < min_residual) continue;
    const double predicted =
        k * h1 * h1 * p1 * p2 * std::pow(1.0 - p1, k - 1.0) * rep.condition_residual;
    if (predicted < min_gap) continue;
    found = true;
  }
  if (!found) {
    throw SetupError("check_mixed_partials: no usable witness network within attempt budget");
  }

  const std::size_t nh = sizes[1];
  const std::size_t idx1 = 0 * nh + 0;  // w_1(1): softmax unit 1, hidden unit 1
  const std::size_t idx2 = 1 * nh + 0;  // w_2(1): softmax unit 2, hidden unit 1
  const SensitivityFn fn(k);
  const double h = opts.fd_step;

  auto g_component = [&](std::size_t perturbed, double delta, std::size_t read) {
    Network work = net;
    work.weights[1][perturbed] += delta;
    const ParamSet g = pseudo_gradient(work, x, y, fn);
    return g.weights[1][read];
  };
  rep.d_g1_d2 = (g_component(idx2, h, idx1) - g_component(idx2, -h, idx1)) / (2.0 * h);
  rep.d_g2_d1 = (g_component(idx1, h, idx2) - g_component(idx1, -h, idx2)) / (2.0 * h);
  rep.gap = std::fabs(rep.d_g1_d2 - rep.d_g2_d1);
  return rep;
}

// ---- expected cross-entropy on the toy distribution -------------------------

struct ToyCeReport {
  double w = 0.0;  // class-1 minus class-0 weight
  double b = 0.0;  // class-1 minus class-0 bias
  double threshold = 0.0;
  double ce = 0.0;
  std::size_t quad_points = 0;
  std::size_t restarts_converged = 0;
};

/// Expected cross-entropy of the toy distribution under the two-unit softmax
/// net, reduced to the logit difference d(x) = w*x + b. Composite Simpson over
/// the three label segments.
inline double toy_expected_ce(double alpha, double w, double b, std::size_t quad_points = 2001) {
  if (!(alpha > 0.5 && alpha < 1.0)) throw InvalidConfigError("toy_expected_ce: alpha must be in (0.5,1)");
  const std::size_t n = std::max<std::size_t>(quad_points, 2001);
  auto log_p0 = [&](double x) { return detail::log_sigmoid(-(w * x + b)); };
  auto log_p1 = [&](double x) { return detail::log_sigmoid(w * x + b); };
  const double i0 = detail::simpson(-1.0, 0.0, n, log_p0);
  const double i1 = detail::simpson(0.0, alpha, n, log_p1);
  const double i2 = detail::simpson(alpha, 1.0, n, log_p0);
  return -0.5 * (i0 + i1 + i2);
}

namespace detail {

inline std::array<double, 2> toy_ce_grad(double alpha, double w, double b, std::size_t n) {
  // d/dw log sigmoid(s(wx+b)) = s*x*sigmoid(-s(wx+b)); same for b without x.
  auto gw0 = [&](double x) { return -x * stable_sigmoid(w * x + b); };
  auto gw1 = [&](double x) { return x * stable_sigmoid(-(w * x + b)); };
  auto gb0 = [&](double x) { return -stable_sigmoid(w * x + b); };
  auto gb1 = [&](double x) { return stable_sigmoid(-(w * x + b)); };
  const double dw = simpson(-1.0, 0.0, n, gw0) + simpson(0.0, alpha, n, gw1) + simpson(alpha, 1.0, n, gw0);
  const double db = simpson(-1.0, 0.0, n, gb0) + simpson(0.0, alpha, n, gb1) + simpson(alpha, 1.0, n, gb0);
  return {-0.5 * dw, -0.5 * db};
}

/// Hessian of the quadrature CE. The curvature integrand sigma(v)sigma(-v) is
/// the same on every segment regardless of the label, so
/// H = 0.5 * [int x^2 q, int x q; int x q, int q] with q = sigma(v)sigma(-v).
inline std::array<double, 3> toy_ce_hessian(double alpha, double w, double b, std::size_t n) {
  auto q = [&](double x) {
    const double s = stable_sigmoid(w * x + b);
    return s * (1.0 - s);
  };
  auto qx = [&](double x) { return x * q(x); };
  auto qxx = [&](double x) { return x * x * q(x); };
  auto over_segments = [&](const std::function<double(double)>& f) {
    return simpson(-1.0, 0.0, n, f) + simpson(0.0, alpha, n, f) + simpson(alpha, 1.0, n, f);
  };
  return {0.5 * over_segments(qxx), 0.5 * over_segments(qx), 0.5 * over_segments(q)};
}

}  // namespace detail

/// Minimizes the quadrature cross-entropy over (w,b) from several starting
/// points and returns the minimizer with its decision threshold -b/w. The
/// objective is strictly convex, so each restart uses damped Newton steps
/// (first-order descent needs tens of thousands of iterations here because
/// the minimum sits in a long flat valley). The threshold is strictly
/// positive for every alpha in (0.5,1).
inline ToyCeReport toy_ce_threshold(double alpha, std::size_t quad_points = 2001) {
  if (!(alpha > 0.5 && alpha < 1.0)) throw InvalidConfigError("toy_ce_threshold: alpha must be in (0.5,1)");
  const std::size_t n = std::max<std::size_t>(quad_points, 2001);

  const std::array<std::array<double, 2>, 5> starts{{{0.0, 0.0}, {2.0, -0.1}, {8.0, -0.4}, {20.0, -1.0}, {45.0, -2.0}}};
  ToyCeReport rep;
  rep.quad_points = n;
  double best_ce = std::numeric_limits<double>::infinity();
  bool have_best = false;

  for (const auto& start : starts) {
    double w = start[0], b = start[1];
    double ce = toy_expected_ce(alpha, w, b, n);
    bool converged = false;
    for (std::size_t it = 0; it < 200; ++it) {
      const std::array<double, 2> g = detail::toy_ce_grad(alpha, w, b, n);
      if (std::max(std::fabs(g[0]), std::fabs(g[1])) <= 1e-12) {
        converged = true;
        break;
      }
      const std::array<double, 3> h = detail::toy_ce_hessian(alpha, w, b, n);
      const double det = h[0] * h[2] - h[1] * h[1];
      double dw, db;
      if (det > 1e-300) {
        dw = (h[2] * g[0] - h[1] * g[1]) / det;
        db = (h[0] * g[1] - h[1] * g[0]) / det;
      } else {
        dw = g[0];
        db = g[1];
      }
      double t = 1.0;
      double nw, nb, nce;
      for (;;) {
        nw = w - t * dw;
        nb = b - t * db;
        nce = toy_expected_ce(alpha, nw, nb, n);
        if (nce <= ce || t < 1e-14) break;
        t *= 0.5;
      }
      if (nce > ce) break;  // cannot improve further at this start
      w = nw;
      b = nb;
      ce = nce;
    }
    if (converged && (!have_best || ce < best_ce)) {
      best_ce = ce;
      rep.w = w;
      rep.b = b;
      rep.ce = ce;
      have_best = true;
    }
    if (converged) ++rep.restarts_converged;
  }
  if (!have_best) throw ConvergenceError("toy_ce_threshold: no restart converged");
  if (rep.w == 0.0) throw ConvergenceError("toy_ce_threshold: degenerate minimizer with w = 0");
  rep.threshold = -rep.b / rep.w;
  if (!(rep.threshold > 0.0)) {
    throw ConvergenceError("toy_ce_threshold: expected a strictly positive threshold");
  }
  return rep;
}

// ---- equal-weight stationarity ----------------------------------------------

struct StationarityReport {
  double k = 1.0;
  Activation activation = Activation::Tanh;
  double max_component = 0.0;  // largest |g| over hidden unit 1's input weights
  double tolerance = 1e-12;
  std::size_t n_examples = 0;
  bool pass = false;
};

/// Overwrites all softmax weights out of hidden unit 1 with one shared value
/// and checks that the pseudo-gradient of every input weight (and the bias)
/// of that unit vanishes, over random examples and labels.
inline StationarityReport check_equal_weight_stationarity(double k, Activation act, std::uint64_t seed,
                                                          std::size_t n_examples = 20) {
  StationarityReport rep;
  rep.k = k;
  rep.activation = act;
  rep.n_examples = n_examples;

  Rng rng(derive_seed(seed, {0}));
  const std::vector<std::size_t> sizes{5, 7, 4};
  Network net = init_network(sizes, act, InitScheme::uniform(-0.7, 0.7), rng);
  const std::size_t nh = sizes[1], nc = sizes[2];
  for (std::size_t j = 0; j < nc; ++j) net.weights[1][j * nh + 0] = 0.7;  // shared outgoing weight

  const SensitivityFn fn(k);
  std::vector<double> x(sizes[0]);
  for (std::size_t e = 0; e < n_examples; ++e) {
    for (double& v : x) v = rng.uniform(-1.0, 1.0);
    const std::size_t y = rng.below(nc);
    const ParamSet g = pseudo_gradient(net, x, y, fn);
    for (std::size_t i = 0; i < sizes[0]; ++i) {
      rep.max_component = std::max(rep.max_component, std::fabs(g.weights[0][0 * sizes[0] + i]));
    }
    rep.max_component = std::max(rep.max_component, std::fabs(g.biases[0][0]));
  }
  rep.pass = rep.max_component <= rep.tolerance;
  return rep;
}

// ---- JSON verdicts -----------------------------------------------------------

inline nlohmann::ordered_json verdict_json(const std::string& check, double k, const std::string& key,
                                           double value, double tolerance, bool pass) {
  nlohmann::ordered_json j;
  j["check"] = check;
  j["k"] = k;
  j[key] = value;
  j["tolerance"] = tolerance;
  j["pass"] = pass;
  return j;
}

inline nlohmann::ordered_json to_verdict(const FDReport& r) {
  auto j = verdict_json("k1_gradient_fd", 1.0, "error", r.max_rel_error, r.tolerance, r.pass);
  j["worst_param"] = r.worst_param;
  j["step"] = r.step;
  return j;
}

inline nlohmann::ordered_json to_verdict(const ConstraintReport& r) {
  auto j = verdict_json("constraint_sum_zero", 0.0, "error", r.worst_ratio, r.tolerance, r.pass);
  j.erase("k");
  j["samples"] = r.samples;
  j["worst_identity_gap"] = r.worst_identity_gap;
  return j;
}

inline nlohmann::ordered_json to_verdict(const MixedPartialReport& r, double tolerance, bool pass) {
  auto j = verdict_json("mixed_partials", r.k, "gap", r.gap, tolerance, pass);
  j["p"] = r.p;
  j["condition_residual"] = r.condition_residual;
  return j;
}

inline nlohmann::ordered_json to_verdict(const ToyCeReport& r, double lo, double hi, bool pass) {
  nlohmann::ordered_json j;
  j["check"] = "toy_ce_threshold";
  j["threshold"] = r.threshold;
  j["w"] = r.w;
  j["b"] = r.b;
  j["ce"] = r.ce;
  j["expected_range"] = {lo, hi};
  j["pass"] = pass;
  return j;
}

inline nlohmann::ordered_json to_verdict(const StationarityReport& r) {
  auto j = verdict_json("equal_weight_stationarity", r.k, "gap", r.max_component, r.tolerance, r.pass);
  j["activation"] = to_string(r.activation);
  return j;
}

}  // namespace pgrad
