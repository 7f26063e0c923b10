#pragma once

// Multi-model adaptation. A bank of candidate parameter vectors shares the
// plant model and the cost; each candidate carries its own set-membership
// filter and a Bayesian weight. Every step folds the newest observation into
// the weights through a volume-reciprocal likelihood, refreshes each live
// candidate's state set, solves one min-max program per weighted candidate,
// and blends the candidate inputs by weight. A candidate whose set certifies
// inconsistency with an observation freezes: its weight drops to zero and
// never returns.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ellset/ellipsoid.hpp"
#include "ellset/filter.hpp"
#include "ellset/lmi.hpp"
#include "ellset/mpc.hpp"
#include "ellset/random.hpp"
#include "ellset/sdp.hpp"
#include "ellset/system.hpp"

namespace ellset {

// s midpoints of the uniform split of [lo, hi] into s = ceil((hi-lo)/(2 eps))
// cells, so every point of the interval lies within eps of some candidate.
inline std::vector<double> discretize_interval(double lo, double hi,
                                               double eps) {
  detail::require(hi > lo, "discretize_interval: empty interval");
  detail::require(eps > 0.0, "discretize_interval: eps must be positive");
  const int s = static_cast<int>(std::ceil((hi - lo) / (2.0 * eps)));
  std::vector<double> centers(s);
  const double width = (hi - lo) / s;
  for (int i = 0; i < s; ++i) centers[i] = lo + (0.5 + i) * width;
  return centers;
}

// Volume-reciprocal observation likelihood: 1/sqrt(det P_y) inside the
// predicted output set, zero outside. The dimension constant is dropped; it
// cancels in the weight normalization. Degenerate output shapes are
// regularized the same way the filter regularizes them before inversion.
inline double observation_likelihood(const Ellipsoid& predicted_output,
                                     const Eigen::VectorXd& y) {
  if (!predicted_output.contains(y)) return 0.0;
  const Eigen::MatrixXd py = regularize_shape(predicted_output.shape());
  return 1.0 / std::sqrt(py.determinant());
}

// pi'(i) proportional to likelihood(i) * pi(i). When every product vanishes
// the recursion is undefined; the weights are left untouched and false is
// returned so the caller can log the event.
inline bool update_weights(std::vector<double>& weights,
                           const std::vector<double>& likelihoods) {
  detail::require(weights.size() == likelihoods.size(),
                  "update_weights: one likelihood per weight required");
  double total = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    total += weights[i] * likelihoods[i];
  }
  if (!(total > 0.0)) return false;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    weights[i] = weights[i] * likelihoods[i] / total;
  }
  return true;
}

struct Candidate {
  Eigen::VectorXd theta;
  double weight = 0.0;
  bool frozen = false;  // certified inconsistent; weight stays zero
  FilterState state;    // X(k|k)
  std::optional<Prediction> prediction;       // X(k+1|k), set by advance()
  std::optional<Ellipsoid> predicted_output;  // Y(k+1|k), set by advance()
  Eigen::VectorXd last_u0;  // reused when the solver fails
};

struct CandidateStepRecord {
  double likelihood = 0.0;
  double weight = 0.0;  // after the update, at control time
  double beta = 1.0;    // intersection consistency; <= 0 froze the candidate
  bool frozen = false;
  bool solved = false;
  bool solver_fallback = false;
  SdpStatus status = SdpStatus::kNumericalFailure;
  double rho = std::numeric_limits<double>::quiet_NaN();
  LmiCertificate lmi;
  double det_shape = 0.0;  // det P(k|k)
  double sampled_worst = std::numeric_limits<double>::quiet_NaN();
  Eigen::VectorXd u;  // this candidate's first input (or its fallback)
};

struct StepRecord {
  int k = 0;
  bool weights_kept = false;  // every likelihood product vanished
  bool all_frozen = false;    // bank falsified; previous input reused
  Eigen::VectorXd u;          // aggregated applied input
  std::vector<CandidateStepRecord> candidates;
};

struct AdaptiveOptions {
  bool measurement_updates = true;  // false: sets evolve by time update only
  SdpOptions sdp;
  int certificate_draws = 0;  // adversary samples per solve, 0 disables
  std::uint64_t certificate_seed = 0x633b6b0a90b61492ull;
};

// Orchestrates the per-step cycle. step(k, y) consumes the observation of
// step k (none exists at k = 0) and returns the input to apply; advance(k, u)
// then propagates every live candidate one step with the input the plant
// actually received and caches the output predictions the next step's
// likelihoods need.
class AdaptiveController {
 public:
  AdaptiveController(UncertainSystem sys, CostSpec cost,
                     std::vector<Eigen::VectorXd> thetas,
                     const Ellipsoid& initial_set, AdaptiveOptions options = {})
      : sys_(std::move(sys)),
        cost_(std::move(cost)),
        options_(std::move(options)),
        last_u_(Eigen::VectorXd::Zero(sys_.input_dim)) {
    detail::require(!thetas.empty(), "AdaptiveController: empty bank");
    detail::require(initial_set.dim() == sys_.state_dim,
                    "AdaptiveController: initial set dimension");
    const double w0 = 1.0 / static_cast<double>(thetas.size());
    candidates_.reserve(thetas.size());
    for (auto& theta : thetas) {
      validate(sys_, theta);
      candidates_.push_back(Candidate{std::move(theta), w0, false,
                                      FilterState{0, initial_set}, std::nullopt,
                                      std::nullopt,
                                      Eigen::VectorXd::Zero(sys_.input_dim)});
    }
  }

  const std::vector<Candidate>& candidates() const { return candidates_; }

  std::vector<double> weights() const {
    std::vector<double> w(candidates_.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = candidates_[i].weight;
    return w;
  }

  StepRecord step(int k, const Eigen::VectorXd& y = Eigen::VectorXd()) {
    detail::require(k == clock_ && !awaiting_advance_,
                    "AdaptiveController: step out of order");
    StepRecord rec;
    rec.k = k;
    rec.candidates.resize(candidates_.size());

    if (k > 0) {
      detail::require(y.size() == sys_.output_dim,
                      "AdaptiveController: observation size");
      ingest_observation(k, y, rec);
    }

    // One min-max program per candidate still carrying weight.
    Eigen::VectorXd u = Eigen::VectorXd::Zero(sys_.input_dim);
    double total_weight = 0.0;
    for (std::size_t i = 0; i < candidates_.size(); ++i) {
      Candidate& cand = candidates_[i];
      CandidateStepRecord& crec = rec.candidates[i];
      crec.frozen = cand.frozen;
      crec.weight = cand.weight;
      crec.det_shape = cand.state.set.shape().determinant();
      if (cand.weight <= 0.0) continue;
      solve_candidate(k, i, cand, crec);
      u += cand.weight * cand.last_u0;
      total_weight += cand.weight;
    }
    if (total_weight > 0.0) {
      rec.u = u;
    } else {
      // Bank falsified: no candidate left to trust; hold the previous input.
      rec.all_frozen = true;
      rec.u = last_u_;
    }
    last_u_ = rec.u;
    awaiting_advance_ = true;
    return rec;
  }

  void advance(int k, const Eigen::VectorXd& u) {
    detail::require(k == clock_ && awaiting_advance_,
                    "AdaptiveController: advance out of order");
    detail::require(u.size() == sys_.input_dim,
                    "AdaptiveController: input size");
    for (Candidate& cand : candidates_) {
      if (cand.frozen) continue;
      cand.prediction = time_update(cand.state, sys_, cand.theta, u);
      cand.predicted_output =
          predicted_output_set(*cand.prediction, sys_, cand.theta);
    }
    clock_ = k + 1;
    awaiting_advance_ = false;
  }

 private:
  // Weight update with y(k), then the measurement update of every live
  // candidate's set. The weights see y first: the likelihood compares y with
  // the prediction, while the intersection may additionally certify an empty
  // set and freeze the candidate afterwards.
  void ingest_observation(int k, const Eigen::VectorXd& y, StepRecord& rec) {
    std::vector<double> weights(candidates_.size());
    std::vector<double> likes(candidates_.size(), 0.0);
    for (std::size_t i = 0; i < candidates_.size(); ++i) {
      const Candidate& cand = candidates_[i];
      weights[i] = cand.weight;
      if (!cand.frozen) {
        likes[i] = observation_likelihood(*cand.predicted_output, y);
      }
      rec.candidates[i].likelihood = likes[i];
    }
    rec.weights_kept = !update_weights(weights, likes);
    for (std::size_t i = 0; i < candidates_.size(); ++i) {
      candidates_[i].weight = weights[i];
    }

    for (std::size_t i = 0; i < candidates_.size(); ++i) {
      Candidate& cand = candidates_[i];
      if (cand.frozen) continue;
      if (!options_.measurement_updates) {
        cand.state = FilterState{k, cand.prediction->set};
        continue;
      }
      const MeasurementUpdate mu =
          measurement_update(*cand.prediction, sys_, cand.theta, y);
      rec.candidates[i].beta = mu.beta;
      if (mu.status == UpdateStatus::kEmptyIntersection) {
        freeze(i);
      } else {
        cand.state = *mu.state;
      }
    }
  }

  void freeze(std::size_t i) {
    candidates_[i].frozen = true;
    candidates_[i].weight = 0.0;
    double total = 0.0;
    for (const Candidate& c : candidates_) total += c.weight;
    if (total > 0.0) {
      for (Candidate& c : candidates_) c.weight /= total;
    }
  }

  void solve_candidate(int k, std::size_t i, Candidate& cand,
                       CandidateStepRecord& crec) {
    const PredictionMatrices pm =
        build_prediction(sys_, cand.theta, cost_, k, cand.state.set.center());
    std::vector<Eigen::MatrixXd> noise_shapes;
    noise_shapes.reserve(cost_.horizon);
    for (int s = 0; s < cost_.horizon; ++s) {
      noise_shapes.push_back(sys_.Pw(k + s));
    }
    const LmiProblem problem =
        assemble_sdp(pm, cand.state.set, noise_shapes);
    const SdpSolution sol = solve_and_recover(problem, pm, options_.sdp);
    crec.solved = true;
    crec.status = sol.status;
    if (sol.status == SdpStatus::kOptimal) {
      cand.last_u0 = sol.u0;
      crec.rho = sol.rho;
      crec.lmi = sol.lmi;
      if (options_.certificate_draws > 0) {
        Rng rng = Rng::derive(options_.certificate_seed,
                              {static_cast<std::uint64_t>(k), i});
        crec.sampled_worst =
            sampled_worst_cost(pm, sol.u_seq, cand.state.set, noise_shapes,
                               options_.certificate_draws, rng);
      }
    } else {
      crec.solver_fallback = true;  // reuse the previous input
    }
    crec.u = cand.last_u0;
  }

  UncertainSystem sys_;
  CostSpec cost_;
  AdaptiveOptions options_;
  Eigen::VectorXd last_u_;
  std::vector<Candidate> candidates_;
  int clock_ = 0;
  bool awaiting_advance_ = false;
};

}  // namespace ellset
