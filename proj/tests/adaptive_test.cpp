#include "ellset/adaptive.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include <gtest/gtest.h>

#include "test_util.hpp"

namespace ellset {
namespace {

// Same two-state plant as the filter and controller tests; theta =
// (a11 offset, a21, a22 offset, b1 offset, b2, c1 offset).
UncertainSystem make_two_state_system() {
  UncertainSystem sys;
  sys.state_dim = 2;
  sys.input_dim = 1;
  sys.output_dim = 1;
  sys.A = [](int k, const Eigen::VectorXd& th) {
    Eigen::MatrixXd a(2, 2);
    a << 0.6 + th[0], 0.7, th[1], 0.5 + th[2];
    return Eigen::MatrixXd((1.0 + 0.2 * std::sin(double(k))) * a);
  };
  sys.B = [](int, const Eigen::VectorXd& th) {
    Eigen::MatrixXd b(2, 1);
    b << 1.0 + th[3], th[4];
    return b;
  };
  sys.C = [](int, const Eigen::VectorXd& th) {
    Eigen::MatrixXd c(1, 2);
    c << 0.2 + th[5], 1.0;
    return c;
  };
  sys.Pw = [](int k) {
    const double s = 0.1 * std::atan(double(k));
    return Eigen::MatrixXd(s * s * Eigen::MatrixXd::Identity(2, 2));
  };
  sys.Pv = [](int k) {
    const double s = 0.15 * std::atan(double(k));
    Eigen::MatrixXd pv(1, 1);
    pv << s * s;
    return pv;
  };
  return sys;
}

Eigen::VectorXd true_theta() {
  Eigen::VectorXd th(6);
  th << 0.0, 0.25, 0.0, 0.0, 0.3, 0.0;
  return th;
}

std::vector<Eigen::VectorXd> three_candidate_bank() {
  Eigen::VectorXd th2(6), th3(6);
  th2 << 0.4, -0.25, 0.0, -2.0, 0.5, 0.0;
  th3 << 0.0, 0.25, 0.0, 0.2, 0.3, -0.35;
  return {true_theta(), th2, th3};
}

Ellipsoid initial_set() {
  Eigen::MatrixXd p0(2, 2);
  p0 << 10.0, 8.0, 8.0, 10.0;
  return Ellipsoid(Eigen::Vector2d(5.0, -5.0), p0);
}

CostSpec regulation_cost(int horizon) {
  CostSpec cost;
  cost.state_weight = [](int) {
    return Eigen::MatrixXd(Eigen::MatrixXd::Identity(2, 2));
  };
  cost.input_weight = [](int) {
    return Eigen::MatrixXd(Eigen::MatrixXd::Identity(1, 1));
  };
  cost.horizon = horizon;
  return cost;
}

Eigen::VectorXd draw_in(const Eigen::MatrixXd& shape, Rng& rng) {
  const Ellipsoid set(Eigen::VectorXd::Zero(shape.rows()), shape);
  return sample(set, 1, rng).col(0);
}

// One plant transition under the given parameters: x(k+1) from x(k) and
// u(k), then the observation y(k+1).
struct PlantStep {
  Eigen::VectorXd x;
  Eigen::VectorXd y;
};

PlantStep plant_step(const UncertainSystem& sys, const Eigen::VectorXd& theta,
                     const Eigen::VectorXd& x, const Eigen::VectorXd& u, int k,
                     Rng& rng) {
  PlantStep out;
  out.x = sys.A(k, theta) * x + sys.B(k, theta) * u + draw_in(sys.Pw(k), rng);
  out.y = sys.C(k + 1, theta) * out.x + draw_in(sys.Pv(k + 1), rng);
  return out;
}

TEST(DiscretizeInterval, MatchesWorkedExamples) {
  const std::vector<double> two = discretize_interval(0.0, 1.0, 0.25);
  ASSERT_EQ(two.size(), 2u);
  EXPECT_DOUBLE_EQ(two[0], 0.25);
  EXPECT_DOUBLE_EQ(two[1], 0.75);

  const std::vector<double> sym2 = discretize_interval(-1.0, 1.0, 0.5);
  ASSERT_EQ(sym2.size(), 2u);
  EXPECT_DOUBLE_EQ(sym2[0], -0.5);
  EXPECT_DOUBLE_EQ(sym2[1], 0.5);

  const std::vector<double> four = discretize_interval(-1.0, 1.0, 0.25);
  ASSERT_EQ(four.size(), 4u);
  EXPECT_DOUBLE_EQ(four[0], -0.75);
  EXPECT_DOUBLE_EQ(four[1], -0.25);
  EXPECT_DOUBLE_EQ(four[2], 0.25);
  EXPECT_DOUBLE_EQ(four[3], 0.75);
}

TEST(DiscretizeInterval, CoversTheInterval) {
  Rng rng(20240812);
  for (int trial = 0; trial < 50; ++trial) {
    const double lo = 4.0 * rng.uniform() - 2.0;
    const double hi = lo + 0.1 + 3.0 * rng.uniform();
    const double eps = 0.01 + 0.5 * rng.uniform();
    const std::vector<double> centers = discretize_interval(lo, hi, eps);
    EXPECT_EQ(centers.size(),
              static_cast<std::size_t>(std::ceil((hi - lo) / (2.0 * eps))));
    for (int p = 0; p < 20; ++p) {
      const double x = lo + (hi - lo) * rng.uniform();
      double best = std::numeric_limits<double>::infinity();
      for (double c : centers) best = std::min(best, std::abs(x - c));
      EXPECT_LE(best, eps + 1e-12);
    }
  }
}

TEST(DiscretizeInterval, RejectsBadArguments) {
  EXPECT_THROW(discretize_interval(1.0, 1.0, 0.1), std::invalid_argument);
  EXPECT_THROW(discretize_interval(0.0, 1.0, 0.0), std::invalid_argument);
}

TEST(ObservationLikelihood, VolumeReciprocalInsideZeroOutside) {
  Eigen::MatrixXd py(2, 2);
  py << 10.0, 8.0, 8.0, 10.0;  // det 36
  const Ellipsoid set(Eigen::Vector2d(1.0, -1.0), py);

  EXPECT_NEAR(observation_likelihood(set, set.center()), 1.0 / 6.0, 1e-12);
  EXPECT_EQ(observation_likelihood(set, Eigen::Vector2d(50.0, 50.0)), 0.0);

  const Ellipsoid twin(Eigen::Vector2d(1.0, -1.0), py);
  const Eigen::Vector2d inside(2.0, 0.0);
  EXPECT_EQ(observation_likelihood(set, inside),
            observation_likelihood(twin, inside));
}

TEST(ObservationLikelihood, DegenerateShapeIsRegularized) {
  const Ellipsoid point(Eigen::Vector2d(3.0, 4.0), Eigen::MatrixXd::Zero(2, 2));
  const double value =
      observation_likelihood(point, Eigen::Vector2d(3.0, 4.0));
  EXPECT_TRUE(std::isfinite(value));
  EXPECT_GT(value, 0.0);
}

TEST(UpdateWeights, BayesArithmetic) {
  std::vector<double> w{0.5, 0.5};
  ASSERT_TRUE(update_weights(w, {2.0, 1.0}));
  EXPECT_NEAR(w[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(w[1], 1.0 / 3.0, 1e-15);

  std::vector<double> equal{0.3, 0.7};
  ASSERT_TRUE(update_weights(equal, {5.0, 5.0}));
  EXPECT_NEAR(equal[0], 0.3, 1e-15);
  EXPECT_NEAR(equal[1], 0.7, 1e-15);

  std::vector<double> kept{0.25, 0.75};
  EXPECT_FALSE(update_weights(kept, {0.0, 0.0}));
  EXPECT_DOUBLE_EQ(kept[0], 0.25);
  EXPECT_DOUBLE_EQ(kept[1], 0.75);
}

TEST(UpdateWeights, SimplexInvariantUnderRandomSequences) {
  Rng rng(77001);
  std::vector<double> w{0.2, 0.3, 0.5};
  for (int step = 0; step < 300; ++step) {
    std::vector<double> likes(3);
    for (double& l : likes) {
      l = rng.uniform() < 0.1 ? 0.0 : rng.uniform() * 10.0;
    }
    update_weights(w, likes);
    double total = 0.0;
    for (double v : w) {
      EXPECT_GE(v, 0.0);
      total += v;
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(AdaptiveController, StepAndAdvanceInterleave) {
  AdaptiveController ctrl(make_two_state_system(), regulation_cost(2),
                          {true_theta()}, initial_set());
  const StepRecord rec = ctrl.step(0);
  EXPECT_THROW(ctrl.step(0), std::invalid_argument);
  EXPECT_THROW(ctrl.advance(1, rec.u), std::invalid_argument);
  ctrl.advance(0, rec.u);
  EXPECT_THROW(ctrl.advance(0, rec.u), std::invalid_argument);
  EXPECT_THROW(ctrl.step(2, Eigen::VectorXd::Zero(1)), std::invalid_argument);
}

// A bank of one candidate must be the plain filter + controller loop with no
// numerical residue from the weight machinery; the held set must also keep
// containing the true state.
TEST(AdaptiveController, SingleCandidateMatchesManualLoop) {
  const UncertainSystem sys = make_two_state_system();
  const CostSpec cost = regulation_cost(2);
  const Eigen::VectorXd theta = true_theta();

  AdaptiveController bank(sys, cost, {theta}, initial_set());

  FilterState manual{0, initial_set()};
  std::optional<Prediction> manual_pred;
  Rng rng(555);
  Eigen::VectorXd x = sample(initial_set(), 1, rng).col(0);
  Eigen::VectorXd y;

  for (int k = 0; k < 6; ++k) {
    const StepRecord rec = k == 0 ? bank.step(0) : bank.step(k, y);

    if (k > 0) {
      const MeasurementUpdate mu =
          measurement_update(*manual_pred, sys, theta, y);
      ASSERT_EQ(mu.status, UpdateStatus::kOk);
      manual = *mu.state;
    }
    const PredictionMatrices pm =
        build_prediction(sys, theta, cost, k, manual.set.center());
    std::vector<Eigen::MatrixXd> shapes;
    for (int s = 0; s < cost.horizon; ++s) shapes.push_back(sys.Pw(k + s));
    const SdpSolution sol =
        solve_and_recover(assemble_sdp(pm, manual.set, shapes), pm);
    ASSERT_EQ(sol.status, SdpStatus::kOptimal);

    ASSERT_EQ(rec.u.size(), sol.u0.size());
    for (Eigen::Index j = 0; j < rec.u.size(); ++j) {
      EXPECT_EQ(rec.u[j], sol.u0[j]) << "k=" << k;
    }
    EXPECT_EQ(bank.weights()[0], 1.0);
    EXPECT_TRUE(bank.candidates()[0].state.set.contains(x, 1e-6))
        << "containment lost at k=" << k;

    const PlantStep next = plant_step(sys, theta, x, rec.u, k, rng);
    x = next.x;
    y = next.y;
    bank.advance(k, rec.u);
    manual_pred = time_update(manual, sys, theta, rec.u);
  }
}

TEST(AdaptiveController, WrongCandidateLosesWeightAbsorbingly) {
  const UncertainSystem sys = make_two_state_system();
  AdaptiveController bank(sys, regulation_cost(2), three_candidate_bank(),
                          initial_set());

  Rng rng(901);
  Eigen::VectorXd x = sample(initial_set(), 1, rng).col(0);
  Eigen::VectorXd y;
  bool w2_hit_zero = false;

  for (int k = 0; k < 12; ++k) {
    const StepRecord rec = k == 0 ? bank.step(0) : bank.step(k, y);
    const std::vector<double> w = bank.weights();
    double total = 0.0;
    for (double v : w) {
      EXPECT_GE(v, 0.0);
      total += v;
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
    if (w[1] == 0.0) w2_hit_zero = true;
    if (w2_hit_zero) {
      EXPECT_EQ(w[1], 0.0) << "zero weight must be absorbing, k=" << k;
    }
    const PlantStep next = plant_step(sys, true_theta(), x, rec.u, k, rng);
    x = next.x;
    y = next.y;
    bank.advance(k, rec.u);
  }
  // The grossly wrong input gain (flipped B) must be ruled out quickly.
  EXPECT_TRUE(w2_hit_zero);
}

TEST(AdaptiveController, WeightsConvergeToTheTrueCandidate) {
  const UncertainSystem sys = make_two_state_system();
  AdaptiveController bank(sys, regulation_cost(2), three_candidate_bank(),
                          initial_set());

  Rng rng(2024);
  Eigen::VectorXd x = sample(initial_set(), 1, rng).col(0);
  Eigen::VectorXd y;
  for (int k = 0; k <= 10; ++k) {
    const StepRecord rec = k == 0 ? bank.step(0) : bank.step(k, y);
    const PlantStep next = plant_step(sys, true_theta(), x, rec.u, k, rng);
    x = next.x;
    y = next.y;
    bank.advance(k, rec.u);
  }
  const std::vector<double> w = bank.weights();
  EXPECT_GE(w[0], 0.9);
  EXPECT_GE(w[0], w[1]);
  EXPECT_GE(w[0], w[2]);
}

TEST(AdaptiveController, RatioUpdateMatchesLikelihoodRatios) {
  const UncertainSystem sys = make_two_state_system();
  AdaptiveController bank(sys, regulation_cost(2), three_candidate_bank(),
                          initial_set());

  Rng rng(31007);
  Eigen::VectorXd x = sample(initial_set(), 1, rng).col(0);
  Eigen::VectorXd y;
  std::vector<double> before = bank.weights();
  for (int k = 0; k <= 6; ++k) {
    const StepRecord rec = k == 0 ? bank.step(0) : bank.step(k, y);
    bool any_freeze = false;
    for (const auto& crec : rec.candidates) {
      if (crec.beta <= 0.0) any_freeze = true;
    }
    if (k > 0 && !rec.weights_kept && !any_freeze) {
      const std::vector<double> after = bank.weights();
      for (std::size_t i = 0; i < after.size(); ++i) {
        if (after[i] <= 0.0 || before[i] <= 0.0) continue;
        const double li = rec.candidates[i].likelihood;
        if (li <= 0.0) continue;
        for (std::size_t j = 0; j < after.size(); ++j) {
          const double lj = rec.candidates[j].likelihood;
          const double got = after[j] / after[i];
          const double want = (before[j] * lj) / (before[i] * li);
          EXPECT_NEAR(got, want, 1e-12 * (1.0 + std::abs(want)))
              << "k=" << k << " i=" << i << " j=" << j;
        }
      }
    }
    before = bank.weights();
    const PlantStep next = plant_step(sys, true_theta(), x, rec.u, k, rng);
    x = next.x;
    y = next.y;
    bank.advance(k, rec.u);
  }
}

TEST(AdaptiveController, AllZeroLikelihoodKeepsWeightsThenEvidenceFreezes) {
  const UncertainSystem sys = make_two_state_system();
  AdaptiveController bank(sys, regulation_cost(2), three_candidate_bank(),
                          initial_set());

  const StepRecord first = bank.step(0);
  bank.advance(0, first.u);

  // An absurd observation sits outside every candidate's predicted output
  // set: the weight recursion is undefined (weights kept), and every
  // measurement intersection certifies emptiness, freezing the whole bank.
  Eigen::VectorXd absurd(1);
  absurd << 1e6;
  const StepRecord rec = bank.step(1, absurd);
  EXPECT_TRUE(rec.weights_kept);
  EXPECT_TRUE(rec.all_frozen);
  for (const auto& cand : bank.candidates()) {
    EXPECT_TRUE(cand.frozen);
    EXPECT_EQ(cand.weight, 0.0);
  }
  for (const auto& crec : rec.candidates) {
    EXPECT_EQ(crec.likelihood, 0.0);
    EXPECT_LE(crec.beta, 0.0);
  }
  // The falsified bank holds the previous input instead of inventing one.
  ASSERT_EQ(rec.u.size(), first.u.size());
  for (Eigen::Index j = 0; j < rec.u.size(); ++j) {
    EXPECT_EQ(rec.u[j], first.u[j]);
  }
}

TEST(AdaptiveController, TimeUpdateOnlyModeNeverIntersects) {
  const UncertainSystem sys = make_two_state_system();
  AdaptiveOptions options;
  options.measurement_updates = false;
  AdaptiveController bank(sys, regulation_cost(2), {true_theta()},
                          initial_set(), options);

  FilterState manual{0, initial_set()};
  Rng rng(424242);
  Eigen::VectorXd x = sample(initial_set(), 1, rng).col(0);
  Eigen::VectorXd y;
  Eigen::VectorXd prev_u;
  double prev_det = initial_set().shape().determinant();

  for (int k = 0; k < 6; ++k) {
    const StepRecord rec = k == 0 ? bank.step(0) : bank.step(k, y);
    if (k > 0) {
      // The held set is exactly the time-update chain: observations are
      // ignored, so no intersection ever cuts it down.
      const Prediction pred = time_update(manual, sys, true_theta(), prev_u);
      manual = FilterState{k, pred.set};
      const Ellipsoid& held = bank.candidates()[0].state.set;
      EXPECT_TRUE(held.center().isApprox(manual.set.center(), 0.0));
      EXPECT_TRUE(held.shape().isApprox(manual.set.shape(), 0.0));

      // Sum-only propagation never loses volume beyond the linear image:
      // det P(k+1) >= det(A)^2 det P(k), with equality at zero noise.
      const double det = held.shape().determinant();
      const double image = std::pow(sys.A(k - 1, true_theta()).determinant(), 2);
      EXPECT_GE(det, image * prev_det * (1.0 - 1e-12));
      prev_det = det;
    }
    const PlantStep next = plant_step(sys, true_theta(), x, rec.u, k, rng);
    x = next.x;
    y = next.y;
    bank.advance(k, rec.u);
    prev_u = rec.u;
  }
}

TEST(AdaptiveController, CertificatesHoldAlongAClosedLoopRun) {
  const UncertainSystem sys = make_two_state_system();
  AdaptiveOptions options;
  options.certificate_draws = 200;
  AdaptiveController bank(sys, regulation_cost(2), three_candidate_bank(),
                          initial_set(), options);

  Rng rng(606060);
  Eigen::VectorXd x = sample(initial_set(), 1, rng).col(0);
  Eigen::VectorXd y;
  int solved = 0;
  for (int k = 0; k <= 8; ++k) {
    const StepRecord rec = k == 0 ? bank.step(0) : bank.step(k, y);
    for (const auto& crec : rec.candidates) {
      if (!crec.solved || crec.status != SdpStatus::kOptimal) continue;
      ++solved;
      EXPECT_GE(crec.lmi.min_eigenvalue, -1e-7);
      EXPECT_LE(crec.lmi.sign_violation, 1e-9);
      EXPECT_LE(crec.sampled_worst,
                crec.rho + 1e-6 * (1.0 + std::abs(crec.rho)));
    }
    const PlantStep next = plant_step(sys, true_theta(), x, rec.u, k, rng);
    x = next.x;
    y = next.y;
    bank.advance(k, rec.u);
  }
  EXPECT_GE(solved, 9);
}

}  // namespace
}  // namespace ellset
