#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "pgrad/verify.hpp"

using namespace pgrad;

namespace {

Network random_net(const std::vector<std::size_t>& sizes, std::uint64_t seed) {
  Rng rng(seed);
  Network net = init_network(sizes, Activation::Tanh, InitScheme::uniform(-0.8, 0.8), rng);
  for (auto& b : net.biases)
    for (double& v : b) v = rng.uniform(-0.3, 0.3);
  return net;
}

Example random_example(std::size_t dim, std::size_t n_classes, std::uint64_t seed) {
  Rng rng(seed);
  Example ex;
  ex.features.resize(dim);
  for (double& v : ex.features) v = rng.uniform(-1.0, 1.0);
  ex.label = rng.below(n_classes);
  return ex;
}

}  // namespace

TEST_CASE("check_k1_gradient") {
  SECTION("random small networks pass at 1e-4") {
    for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
      const Network net = random_net({3, 5, 4}, seed);
      const Example ex = random_example(3, 4, 100 + seed);
      const FDReport rep = check_k1_gradient(net, ex);
      INFO("seed " << seed << " worst " << rep.worst_param);
      CHECK(rep.pass);
      CHECK(rep.max_rel_error <= 1e-4);
    }
  }
  SECTION("near-one-hot prediction keeps absolute error tiny") {
    Network net({2, 2}, Activation::Tanh);
    net.biases[0] = {40.0, -40.0};  // p ~ (1, 4e-35)
    Example ex{{0.1, -0.2}, 0};
    const FDReport rep = check_k1_gradient(net, ex);
    CHECK(rep.pass);
    CHECK(rep.max_abs_error <= 1e-8);
  }
  SECTION("a perturbed gradient is detected") {
    const Network net = random_net({3, 5, 4}, 9);
    const Example ex = random_example(3, 4, 109);
    const FDReport rep = check_k1_gradient(net, ex, /*inject_mutant=*/true);
    CHECK_FALSE(rep.pass);
    CHECK(rep.max_rel_error > 1e-4);
  }
}

TEST_CASE("check_constraint_suite") {
  SECTION("random samples satisfy the sum-zero constraint") {
    Rng rng(17);
    const ConstraintReport rep = check_constraint_suite(10000, 1.0 / 16.0, 4.0, rng);
    CHECK(rep.pass);
    CHECK(rep.worst_ratio <= 1e-12);
    CHECK(rep.samples == 10000);
  }
  SECTION("k = 1 samples also satisfy the identity") {
    Rng rng(18);
    const ConstraintReport rep = check_constraint_suite(2000, 1.0, 1.0, rng);
    CHECK(rep.pass);
    CHECK(rep.worst_identity_gap <= 1e-12);
  }
  SECTION("validation") {
    Rng rng(1);
    CHECK_THROWS_AS(check_constraint_suite(0, 1.0, 2.0, rng), InvalidInputError);
    CHECK_THROWS_AS(check_constraint_suite(10, -1.0, 2.0, rng), InvalidConfigError);
  }
}

TEST_CASE("check_mixed_partials") {
  SECTION("k = 1: the field is symmetric to finite-difference noise") {
    for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
      const MixedPartialReport rep = check_mixed_partials(1.0, seed);
      INFO("seed " << seed);
      CHECK(rep.gap <= 1e-6);
      CHECK(rep.condition_residual <= 1e-12);  // p2^0 (1-p1) = p2 + p3 identically
    }
  }
  SECTION("k = 2 and k = 0.5: asymmetry is measurable on every witness") {
    for (double k : {2.0, 0.5}) {
      for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const MixedPartialReport rep = check_mixed_partials(k, seed);
        INFO("k " << k << " seed " << seed);
        CHECK(rep.gap >= 1e-3);
        CHECK(rep.condition_residual > 0.05);
        for (double p : rep.p) {
          CHECK(p >= 0.05);
          CHECK(p <= 0.9);
        }
      }
    }
  }
  SECTION("gap is continuous in k near 1 and vanishes at 1") {
    // same seed and no witness floor: the same network serves every k
    MixedPartialOptions opts;
    opts.min_predicted_gap = 0.0;
    double gap_at_1 = 0.0;
    std::map<double, double> gaps;
    for (double k : {0.5, 0.9, 1.0, 1.1, 2.0}) {
      const MixedPartialReport rep = check_mixed_partials(k, 33, opts);
      gaps[k] = rep.gap;
      if (k == 1.0) gap_at_1 = rep.gap;
    }
    CHECK(gap_at_1 <= 1e-6);
    CHECK(gaps[0.9] < gaps[0.5]);
    CHECK(gaps[1.1] < gaps[2.0]);
    CHECK(gaps[0.9] > gap_at_1);
    CHECK(gaps[1.1] > gap_at_1);
  }
  SECTION("the two finite-difference estimates match the closed form's sign structure") {
    const MixedPartialReport rep = check_mixed_partials(2.0, 7);
    // both cross partials are nonzero; the asymmetry is not a cancellation artifact
    CHECK(std::fabs(rep.d_g1_d2) > 1e-6);
    CHECK(std::fabs(rep.d_g2_d1) > 1e-6);
  }
  SECTION("validation") {
    CHECK_THROWS_AS(check_mixed_partials(0.0, 1), InvalidConfigError);
  }
}

TEST_CASE("toy_expected_ce") {
  SECTION("uniform predictor scores ln 2") {
    CHECK(toy_expected_ce(0.95, 0.0, 0.0) == Catch::Approx(0.6931471805599453).margin(1e-10));
    CHECK(toy_expected_ce(0.7, 0.0, 0.0) == Catch::Approx(0.6931471805599453).margin(1e-10));
  }
  SECTION("rejects alpha outside (0.5,1)") {
    CHECK_THROWS_AS(toy_expected_ce(0.5, 1.0, 0.0), InvalidConfigError);
    CHECK_THROWS_AS(toy_expected_ce(1.0, 1.0, 0.0), InvalidConfigError);
  }
}

TEST_CASE("toy_ce_threshold") {
  SECTION("alpha = 0.95 minimizer") {
    const ToyCeReport rep = toy_ce_threshold(0.95);
    CHECK(rep.threshold > 0.0);
    CHECK(rep.threshold >= 0.03);
    CHECK(rep.threshold <= 0.07);
    CHECK(rep.threshold == Catch::Approx(0.0503).margin(0.003));
    CHECK(rep.w > 0.0);
    CHECK(rep.ce < 0.6931471805599453);  // better than the uniform predictor
    CHECK(rep.restarts_converged >= 1);
  }
  SECTION("alpha closer to 1 pushes the threshold toward 0") {
    const ToyCeReport near = toy_ce_threshold(0.999);
    const ToyCeReport far = toy_ce_threshold(0.95);
    CHECK(near.threshold > 0.0);
    CHECK(near.threshold < far.threshold);
  }
  SECTION("rejects alpha at or below 0.5") {
    CHECK_THROWS_AS(toy_ce_threshold(0.5), InvalidConfigError);
    CHECK_THROWS_AS(toy_ce_threshold(0.2), InvalidConfigError);
  }
}

TEST_CASE("check_equal_weight_stationarity") {
  SECTION("passes for the whole k grid and every activation") {
    for (double k : {0.0625, 0.125, 0.25, 0.5, 1.0, 2.0, 4.0}) {
      for (Activation act : {Activation::Tanh, Activation::Relu, Activation::Sigmoid}) {
        const StationarityReport rep = check_equal_weight_stationarity(k, act, 55);
        INFO("k " << k << " act " << to_string(act));
        CHECK(rep.pass);
        CHECK(rep.max_component <= 1e-12);
      }
    }
  }
  SECTION("control: unequal outgoing weights move the hidden unit") {
    Rng rng(3);
    Network net = init_network({5, 7, 4}, Activation::Tanh, InitScheme::uniform(-0.7, 0.7), rng);
    std::vector<double> x(5);
    for (double& v : x) v = rng.uniform(-1.0, 1.0);
    const ParamSet g = pseudo_gradient(net, x, 1, SensitivityFn(2.0));
    double max_comp = 0.0;
    for (std::size_t i = 0; i < 5; ++i) max_comp = std::max(max_comp, std::fabs(g.weights[0][i]));
    CHECK(max_comp > 1e-8);
  }
}

TEST_CASE("verdict json shape") {
  Rng rng(2);
  const ConstraintReport rep = check_constraint_suite(100, 0.5, 2.0, rng);
  const auto j = to_verdict(rep);
  CHECK(j.contains("check"));
  CHECK(j.contains("error"));
  CHECK(j.contains("tolerance"));
  CHECK(j.contains("pass"));
  CHECK(j["check"] == "constraint_sum_zero");

  const StationarityReport st = check_equal_weight_stationarity(2.0, Activation::Tanh, 1);
  const auto js = to_verdict(st);
  CHECK(js["check"] == "equal_weight_stationarity");
  CHECK(js.contains("k"));
  CHECK(js.contains("gap"));
}
