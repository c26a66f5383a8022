#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "pgrad/errors.hpp"
#include "pgrad/rng.hpp"

namespace pgrad {

enum class Activation { Tanh, Relu, Sigmoid };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::Tanh: return "tanh";
    case Activation::Relu: return "relu";
    case Activation::Sigmoid: return "sigmoid";
  }
  return "tanh";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::Relu;
  if (s == "sigmoid") return Activation::Sigmoid;
  throw InvalidConfigError("unknown activation: " + s);
}

inline double apply_activation(Activation a, double s) {
  switch (a) {
    case Activation::Tanh: return std::tanh(s);
    case Activation::Relu: return s > 0.0 ? s : 0.0;
    case Activation::Sigmoid: return 1.0 / (1.0 + std::exp(-s));
  }
  return s;
}

/// Derivative of the activation with respect to its pre-activation input.
/// `h` is the already-computed activation value, reused where the derivative
/// is cheaper in terms of the output. relu'(0) is defined as 0.
inline double activation_derivative(Activation a, double s, double h) {
  switch (a) {
    case Activation::Tanh: return 1.0 - h * h;
    case Activation::Relu: return s > 0.0 ? 1.0 : 0.0;
    case Activation::Sigmoid: return h * (1.0 - h);
  }
  return 1.0;
}

/// Softmax with max-subtraction. Invariant under adding a constant to all
/// entries; the result sums to 1 within 1e-12 and every entry is in (0,1].
inline void stable_softmax_into(std::span<const double> z, std::vector<double>& p) {
  if (z.size() < 2) throw InvalidInputError("softmax input must have length >= 2");
  double m = z[0];
  for (double v : z) {
    if (!std::isfinite(v)) throw InvalidInputError("softmax input must be finite");
    m = std::max(m, v);
  }
  p.resize(z.size());
  double sum = 0.0;
  for (std::size_t j = 0; j < z.size(); ++j) {
    p[j] = std::exp(z[j] - m);
    sum += p[j];
  }
  for (double& v : p) v /= sum;
}

inline std::vector<double> stable_softmax(std::span<const double> z) {
  std::vector<double> p;
  stable_softmax_into(z, p);
  return p;
}

/// Gradient-shaped container: one buffer per layer for weights and biases,
/// congruent with the Network that produced it.
struct ParamSet {
  std::vector<std::vector<double>> weights;  // row-major, out x in per layer
  std::vector<std::vector<double>> biases;   // out per layer

  void zero() {
    for (auto& w : weights) std::fill(w.begin(), w.end(), 0.0);
    for (auto& b : biases) std::fill(b.begin(), b.end(), 0.0);
  }

  void scale(double s) {
    for (auto& w : weights)
      for (double& v : w) v *= s;
    for (auto& b : biases)
      for (double& v : b) v *= s;
  }

  /// this += s * other
  void add_scaled(const ParamSet& other, double s) {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      for (std::size_t i = 0; i < weights[l].size(); ++i) weights[l][i] += s * other.weights[l][i];
      for (std::size_t i = 0; i < biases[l].size(); ++i) biases[l][i] += s * other.biases[l][i];
    }
  }

  bool congruent_with(const ParamSet& other) const {
    if (weights.size() != other.weights.size() || biases.size() != other.biases.size()) return false;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      if (weights[l].size() != other.weights[l].size()) return false;
      if (biases[l].size() != other.biases[l].size()) return false;
    }
    return true;
  }

  bool all_finite() const {
    for (const auto& w : weights)
      for (double v : w)
        if (!std::isfinite(v)) return false;
    for (const auto& b : biases)
      for (double v : b)
        if (!std::isfinite(v)) return false;
    return true;
  }
};

/// Dense feed-forward network with a softmax output layer. layer_sizes is
/// [input_dim, hidden..., n_classes]; the activation applies to hidden layers
/// only. Parameters are stored row-major per layer.
struct Network {
  std::vector<std::size_t> layer_sizes;
  Activation activation = Activation::Tanh;
  std::vector<std::vector<double>> weights;  // layer l: rows(l) x cols(l), row-major
  std::vector<std::vector<double>> biases;   // layer l: rows(l)

  Network() = default;

  Network(std::vector<std::size_t> sizes, Activation act) : layer_sizes(std::move(sizes)), activation(act) {
    if (layer_sizes.size() < 2) throw InvalidConfigError("network needs at least input and output widths");
    for (std::size_t s : layer_sizes) {
      if (s == 0) throw InvalidConfigError("layer widths must be positive");
    }
    if (layer_sizes.back() < 2) throw InvalidConfigError("softmax width must be at least 2");
    const std::size_t L = n_layers();
    weights.resize(L);
    biases.resize(L);
    for (std::size_t l = 0; l < L; ++l) {
      weights[l].assign(rows(l) * cols(l), 0.0);
      biases[l].assign(rows(l), 0.0);
    }
  }

  std::size_t n_layers() const { return layer_sizes.size() - 1; }
  std::size_t input_dim() const { return layer_sizes.front(); }
  std::size_t n_classes() const { return layer_sizes.back(); }
  std::size_t rows(std::size_t l) const { return layer_sizes[l + 1]; }
  std::size_t cols(std::size_t l) const { return layer_sizes[l]; }

  ParamSet zeros_like() const {
    ParamSet p;
    p.weights.resize(n_layers());
    p.biases.resize(n_layers());
    for (std::size_t l = 0; l < n_layers(); ++l) {
      p.weights[l].assign(rows(l) * cols(l), 0.0);
      p.biases[l].assign(rows(l), 0.0);
    }
    return p;
  }

  bool congruent_with(const ParamSet& g) const {
    if (g.weights.size() != n_layers() || g.biases.size() != n_layers()) return false;
    for (std::size_t l = 0; l < n_layers(); ++l) {
      if (g.weights[l].size() != rows(l) * cols(l)) return false;
      if (g.biases[l].size() != rows(l)) return false;
    }
    return true;
  }

  bool all_finite() const {
    for (const auto& w : weights)
      for (double v : w)
        if (!std::isfinite(v)) return false;
    for (const auto& b : biases)
      for (double v : b)
        if (!std::isfinite(v)) return false;
    return true;
  }
};

struct InitScheme {
  enum class Kind { GlorotUniform, Uniform, Zeros };
  Kind kind = Kind::GlorotUniform;
  double lo = 0.0;
  double hi = 0.0;

  static InitScheme glorot() { return {Kind::GlorotUniform, 0.0, 0.0}; }
  static InitScheme uniform(double a, double b) {
    if (!(a < b)) throw InvalidConfigError("uniform init needs a < b");
    return {Kind::Uniform, a, b};
  }
  static InitScheme zeros() { return {Kind::Zeros, 0.0, 0.0}; }
};

/// Initializes a network. Biases are always 0. Weight schemes:
///   glorot_uniform: hidden weights uniform in +-sqrt(6/(fan_in+fan_out)),
///                   softmax-layer weights 0;
///   uniform(a,b):   every layer's weights uniform in (a,b);
///   zeros:          everything 0.
inline Network init_network(const std::vector<std::size_t>& layer_sizes, Activation act,
                            const InitScheme& scheme, Rng& rng) {
  Network net(layer_sizes, act);
  const std::size_t L = net.n_layers();
  for (std::size_t l = 0; l < L; ++l) {
    const bool softmax_layer = (l == L - 1);
    switch (scheme.kind) {
      case InitScheme::Kind::Zeros:
        break;
      case InitScheme::Kind::Uniform:
        for (double& w : net.weights[l]) w = rng.uniform(scheme.lo, scheme.hi);
        break;
      case InitScheme::Kind::GlorotUniform:
        if (!softmax_layer) {
          const double fan_in = static_cast<double>(net.cols(l));
          const double fan_out = static_cast<double>(net.rows(l));
          const double limit = std::sqrt(6.0 / (fan_in + fan_out));
          for (double& w : net.weights[l]) w = rng.uniform(-limit, limit);
        }
        break;
    }
  }
  return net;
}

/// Everything forward() computes, kept for backpropagation. pre[l] holds the
/// pre-activation of layer l (pre.back() is the logit vector z), act[l] the
/// hidden activation of layer l, and p the softmax probabilities.
struct ForwardTrace {
  std::vector<double> input;
  std::vector<std::vector<double>> pre;
  std::vector<std::vector<double>> act;  // hidden layers only (n_layers-1 entries)
  std::vector<double> p;

  const std::vector<double>& logits() const { return pre.back(); }
};

inline void forward_into(const Network& net, std::span<const double> x, ForwardTrace& t) {
  if (x.size() != net.input_dim()) {
    throw ShapeError("forward: input size " + std::to_string(x.size()) + " != network input width " +
                     std::to_string(net.input_dim()));
  }
  const std::size_t L = net.n_layers();
  t.input.assign(x.begin(), x.end());
  t.pre.resize(L);
  t.act.resize(L - 1);
  const std::vector<double>* in = &t.input;
  for (std::size_t l = 0; l < L; ++l) {
    const std::size_t r = net.rows(l), c = net.cols(l);
    t.pre[l].resize(r);
    const double* W = net.weights[l].data();
    for (std::size_t j = 0; j < r; ++j) {
      double s = net.biases[l][j];
      const double* row = W + j * c;
      for (std::size_t i = 0; i < c; ++i) s += row[i] * (*in)[i];
      t.pre[l][j] = s;
    }
    if (l + 1 < L) {
      t.act[l].resize(r);
      for (std::size_t j = 0; j < r; ++j) t.act[l][j] = apply_activation(net.activation, t.pre[l][j]);
      in = &t.act[l];
    }
  }
  stable_softmax_into(t.pre[L - 1], t.p);
}

inline ForwardTrace forward(const Network& net, std::span<const double> x) {
  ForwardTrace t;
  forward_into(net, x, t);
  return t;
}

/// Predicted class: argmax of p, ties broken by lowest index.
inline std::size_t predict(const Network& net, std::span<const double> x) {
  ForwardTrace t = forward(net, x);
  return static_cast<std::size_t>(std::max_element(t.p.begin(), t.p.end()) - t.p.begin());
}

struct BackpropWorkspace {
  std::vector<double> cur, nxt;
};

/// Reverse accumulation seeded with an arbitrary output-layer delta:
/// adds g(theta) = sum_j (dz_j/dtheta) * delta_j to `acc` for every parameter.
inline void backprop_accumulate(const Network& net, const ForwardTrace& t, std::span<const double> delta,
                                ParamSet& acc, BackpropWorkspace& ws) {
  const std::size_t L = net.n_layers();
  if (delta.size() != net.n_classes()) {
    throw ShapeError("backprop: delta size " + std::to_string(delta.size()) + " != n_classes " +
                     std::to_string(net.n_classes()));
  }
  if (t.pre.size() != L || t.input.size() != net.input_dim()) {
    throw ShapeError("backprop: trace does not match network topology");
  }
  if (!net.congruent_with(acc)) throw ShapeError("backprop: accumulator not shape-congruent");

  ws.cur.assign(delta.begin(), delta.end());
  for (std::size_t l = L; l-- > 0;) {
    const std::size_t r = net.rows(l), c = net.cols(l);
    const std::vector<double>& in = (l == 0) ? t.input : t.act[l - 1];
    double* gW = acc.weights[l].data();
    for (std::size_t j = 0; j < r; ++j) {
      const double d = ws.cur[j];
      acc.biases[l][j] += d;
      double* grow = gW + j * c;
      for (std::size_t i = 0; i < c; ++i) grow[i] += d * in[i];
    }
    if (l == 0) break;
    // delta for the layer below: (W^T cur) * act'(pre)
    ws.nxt.assign(c, 0.0);
    const double* W = net.weights[l].data();
    for (std::size_t j = 0; j < r; ++j) {
      const double d = ws.cur[j];
      const double* row = W + j * c;
      for (std::size_t i = 0; i < c; ++i) ws.nxt[i] += row[i] * d;
    }
    for (std::size_t i = 0; i < c; ++i) {
      ws.nxt[i] *= activation_derivative(net.activation, t.pre[l - 1][i], t.act[l - 1][i]);
    }
    std::swap(ws.cur, ws.nxt);
  }
}

inline ParamSet backprop_from_delta(const Network& net, const ForwardTrace& t, std::span<const double> delta) {
  for (double d : delta) {
    if (!std::isfinite(d)) throw InvalidInputError("backprop: delta must be finite");
  }
  ParamSet acc = net.zeros_like();
  BackpropWorkspace ws;
  backprop_accumulate(net, t, delta, acc, ws);
  return acc;
}

// ---- checkpoint format ----------------------------------------------------
//
// Single JSON document: {format_version, layer_sizes, activation, seed,
// weights (row-major per layer), biases}. Doubles survive a save/load round
// trip bit-exactly (shortest round-trip decimal serialization).

inline nlohmann::ordered_json checkpoint_to_json(const Network& net, std::uint64_t seed) {
  nlohmann::ordered_json j;
  j["format_version"] = 1;
  j["layer_sizes"] = net.layer_sizes;
  j["activation"] = to_string(net.activation);
  j["seed"] = seed;
  j["weights"] = net.weights;
  j["biases"] = net.biases;
  return j;
}

inline Network checkpoint_from_json(const nlohmann::json& j, std::uint64_t* seed_out = nullptr) {
  if (!j.contains("format_version") || j["format_version"].get<int>() != 1) {
    throw FormatError("checkpoint: missing or unsupported format_version");
  }
  Network net(j.at("layer_sizes").get<std::vector<std::size_t>>(),
              activation_from_string(j.at("activation").get<std::string>()));
  auto w = j.at("weights").get<std::vector<std::vector<double>>>();
  auto b = j.at("biases").get<std::vector<std::vector<double>>>();
  if (w.size() != net.n_layers() || b.size() != net.n_layers()) {
    throw FormatError("checkpoint: wrong number of layers in weights/biases");
  }
  for (std::size_t l = 0; l < net.n_layers(); ++l) {
    if (w[l].size() != net.rows(l) * net.cols(l) || b[l].size() != net.rows(l)) {
      throw FormatError("checkpoint: layer " + std::to_string(l) + " has wrong parameter count");
    }
  }
  net.weights = std::move(w);
  net.biases = std::move(b);
  if (!net.all_finite()) throw FormatError("checkpoint: non-finite parameter value");
  if (seed_out) *seed_out = j.value("seed", std::uint64_t{0});
  return net;
}

inline void save_checkpoint(const Network& net, const std::string& path, std::uint64_t seed = 0) {
  std::ofstream f(path);
  if (!f) throw InvalidInputError("cannot open checkpoint file for writing: " + path);
  f << checkpoint_to_json(net, seed).dump(2) << '\n';
}

inline Network load_checkpoint(const std::string& path, std::uint64_t* seed_out = nullptr) {
  std::ifstream f(path);
  if (!f) throw InvalidInputError("cannot open checkpoint file: " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: invalid JSON: ") + e.what());
  }
  return checkpoint_from_json(j, seed_out);
}

}  // namespace pgrad
