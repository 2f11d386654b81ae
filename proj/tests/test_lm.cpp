#include "doctest.h"

#include <cmath>

#include "ptycho/forward.hpp"
#include "ptycho/lm.hpp"
#include "support/oracle.hpp"

using namespace ptycho;

namespace {

oracle::Problem small(std::uint64_t seed) {
  return oracle::random_problem(seed, {6, 6}, {3, 3}, {{0, 0}, {0, 2}, {0, 3}, {2, 0}, {2, 2}, {3, 3}, {3, 1}, {1, 3}});
}

RIVector vec(std::initializer_list<float> v) { return RIVector(std::vector<float>(v)); }

}  // namespace

TEST_SUITE("lm") {
  TEST_CASE("magnitude projection scales only entries above the bound") {
    ComplexGrid g(1, 3);
    g[0] = {3.0f, 4.0f};
    g[1] = {0.6f, 0.0f};
    g[2] = {0.0f, -2.0f};
    const ComplexGrid p = project_magnitude(g, 1.0f);
    CHECK(p[0].real() == doctest::Approx(0.6));
    CHECK(p[0].imag() == doctest::Approx(0.8));
    CHECK(p[1] == g[1]);
    CHECK(p[2].imag() == doctest::Approx(-1.0));
    CHECK(project_magnitude(p, 1.0f) == p);
    CHECK_THROWS_AS(project_magnitude(g, 0.0f), std::invalid_argument);
  }

  TEST_CASE("damping follows the gradient norm unless the scaling is the GGN diagonal") {
    CHECK(lm_lambda(1e-5, 4.0, 1.0, Scaling::Identity) == doctest::Approx(4e-5));
    CHECK(lm_lambda(1e-5, 4.0, 2.0, Scaling::Identity) == doctest::Approx(1.6e-4));
    CHECK(lm_lambda(1e-5, 4.0, 1.0, Scaling::GGNDiag) == doctest::Approx(1e-5));
    CHECK_THROWS(lm_lambda(0.0, 1.0, 1.0, Scaling::Identity));
  }

  TEST_CASE("configuration invariants") {
    LMConfig c = LMConfig::defaults(MetricKind::Poisson);
    CHECK(c.beta == 0.9);
    CHECK(LMConfig::defaults(MetricKind::Gaussian).beta == 0.1);
    CHECK_NOTHROW(c.validate());
    c.kappa = 1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = LMConfig::defaults(MetricKind::Gaussian);
    c.nu = 3.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = LMConfig::defaults(MetricKind::Gaussian);
    c.mu0 = c.mu_min;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }

  TEST_CASE("projected step branches") {
    // f(x) = |x - t|^2 with the box |x_i| <= 1 (one complex entry stored as [re, im]).
    const RIVector target = vec({2.0f, 0.0f});
    const PointObjective f = [&](const RIVector& x) {
      const double a = x[0] - target[0], b = x[1] - target[1];
      return a * a + b * b;
    };
    const Projector proj = [](RIVector& x) {
      const double m = std::hypot(x[0], x[1]);
      if (m > 1.0) {
        x[0] = static_cast<float>(x[0] / m);
        x[1] = static_cast<float>(x[1] / m);
      }
    };
    const LMConfig config = LMConfig::defaults(MetricKind::Gaussian);
    const RIVector z = vec({0.0f, 0.0f});
    const RIVector grad = vec({-4.0f, 0.0f});

    SUBCASE("a descent step along the projected direction is taken") {
      const auto r = projected_step(z, vec({2.0f, 0.0f}), grad, f(z), f, proj, config);
      CHECK_FALSE(r.failed);
      CHECK(r.branch == 2);
      CHECK(r.point[0] == doctest::Approx(1.0));
      CHECK(r.f == doctest::Approx(1.0));
    }
    SUBCASE("a non-descent step falls back to the projected gradient") {
      const auto r = projected_step(z, vec({-2.0f, 0.0f}), grad, f(z), f, proj, config);
      CHECK_FALSE(r.failed);
      CHECK(r.branch == 3);
      CHECK(r.point[0] > 0.0f);
      CHECK(r.f < f(z));
    }
    SUBCASE("a nearly optimal trial point is accepted directly") {
      const PointObjective g = [](const RIVector& x) { return (x[0] - 1.0) * (x[0] - 1.0) + x[1] * x[1]; };
      const auto r = projected_step(z, vec({3.0f, 0.0f}), vec({-2.0f, 0.0f}), g(z), g, proj, config);
      CHECK(r.branch == 1);
      CHECK(r.ls_iters == 0);
      CHECK(r.point[0] == doctest::Approx(1.0));
    }
  }

  TEST_CASE("SPR objective decreases monotonically and reaches the data") {
    const auto p = small(3);
    const auto geom = oracle::geometry(p);
    const auto data = oracle::data(p);
    const auto truth = oracle::state(p);
    ComplexGrid init(truth.object.shape(), cfloat(0.7f, 0.1f));
    for (MetricKind kind : {MetricKind::Gaussian, MetricKind::Poisson}) {
      LMConfig config = LMConfig::defaults(kind);
      config.max_outer = 50;
      const SolverResult r = lm_run_spr(init, truth.probe, geom, data, config, kind);
      REQUIRE(r.trace.rows.size() >= 2);
      CHECK(r.trace.rows.front().iteration == 0);
      for (std::size_t i = 1; i < r.trace.rows.size(); ++i) {
        CHECK(r.trace.rows[i].f <= r.trace.rows[i - 1].f + 1e-6 * std::abs(r.trace.rows[i - 1].f));
        CHECK(r.trace.rows[i].cumulative_flops >= r.trace.rows[i - 1].cumulative_flops);
      }
      CHECK(r.trace.rows.back().f < r.trace.rows.front().f);
      // The final gradient is small relative to the initial one.
      const RIVector g0 = gradient({init, truth.probe}, geom, data, 0.0f, kind, VariableSelector::ObjectOnly);
      const RIVector g1 = gradient(r.state, geom, data, 0.0f, kind, VariableSelector::ObjectOnly);
      CHECK(norm2(g1.values()) < 1e-2 * norm2(g0.values()));
    }
  }

  TEST_CASE("zero iterations return the initial guess") {
    const auto p = small(4);
    const auto s = oracle::state(p);
    LMConfig config = LMConfig::defaults(MetricKind::Gaussian);
    config.max_outer = 0;
    const auto r = lm_run_spr(s.object, s.probe, oracle::geometry(p), oracle::data(p), config, MetricKind::Gaussian);
    CHECK(r.state.object == s.object);
    CHECK(r.trace.rows.size() == 1);
  }

  TEST_CASE("exact data stops immediately") {
    auto p = small(5);
    const auto s = oracle::state(p);
    const auto geom = oracle::geometry(p);
    RealStack exact = forward_magnitudes(s, geom, oracle::data(p).background(), 0.0f);
    for (float& v : exact.values()) v *= v;
    const DiffractionStack data(exact, oracle::data(p).background());
    LMConfig config = LMConfig::defaults(MetricKind::Gaussian);
    const auto r = lm_run_spr(s.object, s.probe, geom, data, config, MetricKind::Gaussian);
    CHECK(r.stop != StopReason::IterationLimit);
    CHECK(r.trace.rows.size() <= 3);
  }

  TEST_CASE("runs are deterministic") {
    const auto p = small(6);
    const auto s = oracle::state(p);
    ComplexGrid init(s.object.shape(), cfloat(0.5f, 0.0f));
    LMConfig config = LMConfig::preconditioned_defaults(MetricKind::Poisson);
    config.max_outer = 10;
    const auto a = lm_run_spr(init, s.probe, oracle::geometry(p), oracle::data(p), config, MetricKind::Poisson);
    const auto b = lm_run_spr(init, s.probe, oracle::geometry(p), oracle::data(p), config, MetricKind::Poisson);
    CHECK(a.state.object == b.state.object);
    REQUIRE(a.trace.rows.size() == b.trace.rows.size());
    for (std::size_t i = 0; i < a.trace.rows.size(); ++i) {
      CHECK(a.trace.rows[i].f == b.trace.rows[i].f);
      CHECK(a.trace.rows[i].cumulative_flops == b.trace.rows[i].cumulative_flops);
    }
  }

  TEST_CASE("joint LM without preconditioned scaling is rejected") {
    const auto p = small(7);
    const auto s = oracle::state(p);
    CHECK_THROWS_AS(lm_run_bpr_joint(s, oracle::geometry(p), oracle::data(p), LMConfig::defaults(MetricKind::Gaussian),
                                     ConstraintSet::standard(), MetricKind::Gaussian),
                    ConfigError);
  }

  TEST_CASE("constrained blind runs stay feasible and decrease the objective") {
    const auto p = small(8);
    const auto truth = oracle::state(p);
    ModelState init{ComplexGrid(truth.object.shape(), cfloat(0.9f, 0.0f)), truth.probe};
    for (auto& z : init.probe.values()) z *= 0.8f;
    const ConstraintSet bounds{0.95f, 3.0f};
    for (MetricKind kind : {MetricKind::Gaussian, MetricKind::Poisson}) {
      LMConfig config = LMConfig::preconditioned_defaults(kind);
      config.max_outer = 15;
      for (bool joint : {false, true}) {
        const auto r = joint ? lm_run_bpr_joint(init, oracle::geometry(p), oracle::data(p), config, bounds, kind)
                             : lm_run_bpr_alternating(init, oracle::geometry(p), oracle::data(p), config, bounds, kind);
        CHECK(is_feasible(r.state, bounds));
        CHECK(r.trace.rows.back().f < r.trace.rows.front().f);
        for (std::size_t i = 1; i < r.trace.rows.size(); ++i) {
          CHECK(r.trace.rows[i].f <= r.trace.rows[i].f_before + 1e-6 * std::abs(r.trace.rows[i].f_before));
        }
      }
    }
  }

  TEST_CASE("surrogate offsets follow the schedule and vanish afterwards") {
    const auto p = small(9);
    const auto s = oracle::state(p);
    LMConfig config = LMConfig::defaults(MetricKind::Poisson);
    config.surrogate = SurrogateSchedule{5, 1.0, 1e-4};
    config.max_outer = 8;
    config.reduction_tol = 0.0;
    std::vector<float> seen;
    const Observer obs = [&](const ModelState& st, TraceRow&) { seen.push_back(st.surrogate_offset); };
    lm_run_spr(ComplexGrid(s.object.shape(), cfloat(0.6f, 0.0f)), s.probe, oracle::geometry(p), oracle::data(p),
               config, MetricKind::Poisson, obs);
    REQUIRE(seen.size() >= 7);
    CHECK(seen[0] == doctest::Approx(1.0));
    CHECK(seen[1] == doctest::Approx(1.0));
    CHECK(seen[5] == doctest::Approx(1e-4));
    CHECK(seen[6] == 0.0f);
  }
}
