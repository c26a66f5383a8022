#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "pgrad/network.hpp"
#include "pgrad/optim.hpp"

using namespace pgrad;

namespace {

Network scalar_net(double theta) {
  // smallest legal topology; we drive a single weight
  Network net({1, 2}, Activation::Tanh);
  net.weights[0] = {theta, 0.0};
  return net;
}

ParamSet scalar_grad(const Network& net, double g) {
  ParamSet p = net.zeros_like();
  p.weights[0][0] = g;
  return p;
}

Network random_net(std::uint64_t seed) {
  Rng rng(seed);
  Network net = init_network({3, 4, 2}, Activation::Tanh, InitScheme::uniform(-0.6, 0.6), rng);
  for (auto& b : net.biases)
    for (double& v : b) v = rng.uniform(-0.2, 0.2);
  return net;
}

ParamSet random_grad(const Network& net, std::uint64_t seed) {
  Rng rng(seed);
  ParamSet g = net.zeros_like();
  for (auto& w : g.weights)
    for (double& v : w) v = rng.uniform(-1.0, 1.0);
  for (auto& b : g.biases)
    for (double& v : b) v = rng.uniform(-1.0, 1.0);
  return g;
}

}  // namespace

TEST_CASE("clip_global_norm") {
  const Network net = random_net(1);

  SECTION("within threshold is returned unchanged") {
    ParamSet g = net.zeros_like();
    g.weights[0][0] = 30.0;
    g.biases[1][0] = 40.0;  // norm 50
    CHECK(global_l2_norm(g) == Catch::Approx(50.0));
    const auto c = clip_global_norm(g, 100.0);
    CHECK(c.weights == g.weights);
    CHECK(c.biases == g.biases);
  }
  SECTION("over threshold scales by threshold/norm") {
    ParamSet g = net.zeros_like();
    g.weights[0][0] = 120.0;
    g.biases[1][0] = 160.0;  // norm 200
    const auto c = clip_global_norm(g, 100.0);
    CHECK(c.weights[0][0] == 60.0);  // factor exactly 0.5
    CHECK(c.biases[1][0] == 80.0);
    CHECK(global_l2_norm(c) == Catch::Approx(100.0).epsilon(1e-12));
  }
  SECTION("zero gradient stays zero") {
    const auto c = clip_global_norm(net.zeros_like(), 100.0);
    CHECK(global_l2_norm(c) == 0.0);
  }
  SECTION("never increases the norm and preserves direction") {
    for (std::uint64_t s = 0; s < 20; ++s) {
      const ParamSet g = random_grad(net, 100 + s);
      const double norm = global_l2_norm(g);
      const double thr = 0.3 + 0.2 * static_cast<double>(s);
      const auto c = clip_global_norm(g, thr);
      CHECK(global_l2_norm(c) <= norm * (1.0 + 1e-12));
      const double expected = norm <= thr ? 1.0 : thr / norm;
      for (std::size_t l = 0; l < g.weights.size(); ++l) {
        for (std::size_t i = 0; i < g.weights[l].size(); ++i) {
          CHECK(c.weights[l][i] == (expected == 1.0 ? g.weights[l][i] : g.weights[l][i] * expected));
        }
      }
    }
  }
  SECTION("config error") {
    CHECK_THROWS_AS(clip_global_norm(net.zeros_like(), 0.0), InvalidConfigError);
    CHECK_THROWS_AS(clip_global_norm(net.zeros_like(), -5.0), InvalidConfigError);
  }
}

TEST_CASE("momentum_step") {
  SECTION("one step of the recurrence") {
    Network net = scalar_net(1.0);
    OptimizerState st(0.1, 0.9, net.zeros_like());
    momentum_step(net, scalar_grad(net, 1.0), st);
    CHECK(st.velocity.weights[0][0] == -0.1);
    CHECK(net.weights[0][0] == 0.9);
  }
  SECTION("zero gradient and zero velocity leave parameters unchanged") {
    Network net = random_net(2);
    const Network before = net;
    OptimizerState st(0.5, 0.9, net.zeros_like());
    momentum_step(net, net.zeros_like(), st);
    CHECK(net.weights == before.weights);
    CHECK(net.biases == before.biases);
  }
  SECTION("mu = 0 is bit-identical to batch_gd_step") {
    for (std::uint64_t s = 0; s < 10; ++s) {
      Network a = random_net(50 + s);
      Network b = a;
      const ParamSet g = random_grad(a, 200 + s);
      OptimizerState st(0.37, 0.0, a.zeros_like());
      momentum_step(a, g, st);
      batch_gd_step(b, g, 0.37);
      CHECK(a.weights == b.weights);
      CHECK(a.biases == b.biases);
    }
  }
  SECTION("clipping composes exactly with the separate clip call") {
    Network a = random_net(3);
    Network b = a;
    ParamSet g = random_grad(a, 4);
    g.scale(300.0);  // force clipping
    OptimizerState sa(0.05, 0.8, a.zeros_like(), 10.0);
    momentum_step(a, g, sa);
    OptimizerState sb(0.05, 0.8, b.zeros_like());
    momentum_step(b, clip_global_norm(g, 10.0), sb);
    CHECK(a.weights == b.weights);
    CHECK(a.biases == b.biases);
  }
  SECTION("deterministic trajectories") {
    Network a = random_net(7);
    Network b = a;
    OptimizerState sa(0.1, 0.9, a.zeros_like(), 5.0);
    OptimizerState sb(0.1, 0.9, b.zeros_like(), 5.0);
    for (std::uint64_t step = 0; step < 10; ++step) {
      const ParamSet g = random_grad(a, 300 + step);
      momentum_step(a, g, sa);
      momentum_step(b, g, sb);
    }
    CHECK(a.weights == b.weights);
    CHECK(sa.velocity.weights == sb.velocity.weights);
  }
  SECTION("shape mismatch") {
    Network net = random_net(8);
    Network other({2, 2}, Activation::Tanh);
    OptimizerState st(0.1, 0.0, net.zeros_like());
    CHECK_THROWS_AS(momentum_step(net, other.zeros_like(), st), ShapeError);
  }
  SECTION("state validation") {
    Network net = random_net(9);
    CHECK_THROWS_AS(OptimizerState(0.0, 0.5, net.zeros_like()), InvalidConfigError);
    CHECK_THROWS_AS(OptimizerState(0.1, 1.0, net.zeros_like()), InvalidConfigError);
    CHECK_THROWS_AS(OptimizerState(0.1, -0.1, net.zeros_like()), InvalidConfigError);
    CHECK_THROWS_AS(OptimizerState(0.1, 0.5, net.zeros_like(), -1.0), InvalidConfigError);
  }
}

TEST_CASE("batch_gd_step") {
  SECTION("zero learning rate is the identity") {
    Network net = scalar_net(1.0);
    batch_gd_step(net, scalar_grad(net, 3.0), 0.0);
    CHECK(net.weights[0][0] == 1.0);
  }
  SECTION("zero gradient is the identity") {
    Network net = scalar_net(1.0);
    batch_gd_step(net, scalar_grad(net, 0.0), 0.5);
    CHECK(net.weights[0][0] == 1.0);
  }
  SECTION("arithmetic") {
    Network net = scalar_net(1.0);
    batch_gd_step(net, scalar_grad(net, 2.0), 0.01);
    CHECK(net.weights[0][0] == 0.98);
  }
  SECTION("shape mismatch") {
    Network net = scalar_net(1.0);
    Network other({3, 2}, Activation::Tanh);
    CHECK_THROWS_AS(batch_gd_step(net, other.zeros_like(), 0.1), ShapeError);
  }
}
