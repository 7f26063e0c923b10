#pragma once

// Receding-horizon min-max control for one candidate parameter vector.
//
// The horizon cost is condensed into a quadratic form in the stacked input
// U and the disturbance vector xi = [eta; W] (estimation error followed by
// the process noises). The worst case of that form over the bounding
// ellipsoids is minimized through a semidefinite program whose optimal value
// rho dominates the completed-square cost
//
//   q(xi) = z'z + 2 h'xi + 2 z'F xi + xi'Chat xi
//         = J(U, xi) - constant + bhat' Binv bhat,
//
// so certificates below probe q(xi) <= rho, not the raw cost J.

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ellset/ellipsoid.hpp"
#include "ellset/lmi.hpp"
#include "ellset/random.hpp"
#include "ellset/sdp.hpp"
#include "ellset/system.hpp"

namespace ellset {

// Stage weights and horizon. An empty combination matrix selects plain state
// regulation; otherwise the stage cost penalizes T x(t) - reference(t) under
// tracking_weight and state_weight is ignored.
struct CostSpec {
  ShapeGenerator state_weight;                     // Q(k), n x n
  ShapeGenerator input_weight;                     // R(k), r x r
  int horizon = 1;                                 // steps ahead, >= 1
  Eigen::MatrixXd combination;                     // T, p x n or empty
  ShapeGenerator tracking_weight;                  // p x p
  std::function<Eigen::VectorXd(int)> reference;   // p

  bool tracking() const { return combination.size() > 0; }
};

// Condensed horizon cost
//   J(U, xi) = U'.quad_input.U + 2 lin_input'U + xi'.quad_xi.xi
//            + 2 lin_xi'xi + 2 U'.cross_input_xi.xi + constant
// with xi = [eta; w(k); ...; w(k+horizon-1)].
struct PredictionMatrices {
  int k = 0;
  int horizon = 0;
  Eigen::Index state_dim = 0;
  Eigen::Index input_dim = 0;

  // Maps from the stacked input/noise to x(k+s), s = 0..horizon-1.
  std::vector<Eigen::MatrixXd> state_transition;  // n x n products of A
  std::vector<Eigen::MatrixXd> input_map;         // n x horizon*r
  std::vector<Eigen::MatrixXd> noise_map;         // n x horizon*n

  Eigen::MatrixXd quad_state;         // n x n
  Eigen::MatrixXd quad_input;         // Nr x Nr, positive definite
  Eigen::MatrixXd quad_noise;         // Nn x Nn
  Eigen::MatrixXd cross_input_state;  // Nr x n
  Eigen::MatrixXd cross_noise_state;  // Nn x n
  Eigen::MatrixXd cross_input_noise;  // Nr x Nn

  Eigen::VectorXd lin_input;          // Nr
  Eigen::MatrixXd quad_xi;            // (N+1)n square
  Eigen::VectorXd lin_xi;             // (N+1)n
  Eigen::MatrixXd cross_input_xi;     // Nr x (N+1)n
  double constant = 0.0;              // decision-independent stage cost
};

inline PredictionMatrices build_prediction(const UncertainSystem& sys,
                                           const Eigen::VectorXd& theta,
                                           const CostSpec& cost, int k,
                                           const Eigen::VectorXd& x_center) {
  validate(sys, theta, k);
  detail::require(cost.horizon >= 1, "build_prediction: horizon must be >= 1");
  detail::require(x_center.size() == sys.state_dim,
                  "build_prediction: estimate center has wrong dimension");
  if (cost.tracking()) {
    detail::require(cost.combination.cols() == sys.state_dim,
                    "build_prediction: combination matrix has wrong width");
    detail::require(static_cast<bool>(cost.tracking_weight) &&
                        static_cast<bool>(cost.reference),
                    "build_prediction: tracking needs weight and reference");
  } else {
    detail::require(static_cast<bool>(cost.state_weight),
                    "build_prediction: regulation needs a state weight");
  }

  const Eigen::Index n = sys.state_dim;
  const Eigen::Index r = sys.input_dim;
  const int np = cost.horizon;

  PredictionMatrices pm;
  pm.k = k;
  pm.horizon = np;
  pm.state_dim = n;
  pm.input_dim = r;
  pm.state_transition.assign(np, Eigen::MatrixXd::Identity(n, n));
  pm.input_map.assign(np, Eigen::MatrixXd::Zero(n, np * r));
  pm.noise_map.assign(np, Eigen::MatrixXd::Zero(n, np * n));
  for (int s = 1; s < np; ++s) {
    const Eigen::MatrixXd a = sys.A(k + s - 1, theta);
    pm.state_transition[s] = a * pm.state_transition[s - 1];
    pm.input_map[s] = a * pm.input_map[s - 1];
    pm.input_map[s].middleCols((s - 1) * r, r) = sys.B(k + s - 1, theta);
    pm.noise_map[s] = a * pm.noise_map[s - 1];
    pm.noise_map[s].middleCols((s - 1) * n, n) =
        Eigen::MatrixXd::Identity(n, n);
  }

  pm.quad_state = Eigen::MatrixXd::Zero(n, n);
  pm.quad_input = Eigen::MatrixXd::Zero(np * r, np * r);
  pm.quad_noise = Eigen::MatrixXd::Zero(np * n, np * n);
  pm.cross_input_state = Eigen::MatrixXd::Zero(np * r, n);
  pm.cross_noise_state = Eigen::MatrixXd::Zero(np * n, n);
  pm.cross_input_noise = Eigen::MatrixXd::Zero(np * r, np * n);
  pm.lin_input = Eigen::VectorXd::Zero(np * r);
  Eigen::VectorXd lin_state = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd lin_noise = Eigen::VectorXd::Zero(np * n);
  pm.constant = 0.0;

  for (int s = 0; s < np; ++s) {
    const int t = k + s;
    // Effective state weight; under tracking Q(t) = T' Qt(t) T.
    Eigen::MatrixXd qe;
    Eigen::MatrixXd qt;
    if (cost.tracking()) {
      qt = sym(cost.tracking_weight(t));
      detail::require(qt.rows() == cost.combination.rows() &&
                          qt.cols() == cost.combination.rows(),
                      "build_prediction: tracking weight has wrong dimension");
      qe = sym(cost.combination.transpose() * qt * cost.combination);
    } else {
      qe = sym(cost.state_weight(t));
      detail::require(qe.rows() == n && qe.cols() == n,
                      "build_prediction: state weight has wrong dimension");
    }
    const Eigen::MatrixXd rw = sym(cost.input_weight(t));
    detail::require(rw.rows() == r && rw.cols() == r,
                    "build_prediction: input weight has wrong dimension");

    const Eigen::MatrixXd& phi = pm.state_transition[s];
    const Eigen::MatrixXd& bt = pm.input_map[s];
    const Eigen::MatrixXd& ct = pm.noise_map[s];
    pm.quad_state += phi.transpose() * qe * phi;
    pm.quad_input += bt.transpose() * qe * bt;
    pm.quad_input.block(s * r, s * r, r, r) += rw;
    pm.quad_noise += ct.transpose() * qe * ct;
    pm.cross_input_state += bt.transpose() * qe * phi;
    pm.cross_noise_state += ct.transpose() * qe * phi;
    pm.cross_input_noise += bt.transpose() * qe * ct;

    if (cost.tracking()) {
      // Linear terms against the reference residual at the estimate center.
      const Eigen::VectorXd ref = cost.reference(t);
      detail::require(ref.size() == cost.combination.rows(),
                      "build_prediction: reference has wrong dimension");
      const Eigen::VectorXd delta = cost.combination * (phi * x_center) - ref;
      pm.lin_input +=
          (cost.combination * bt).transpose() * (qt * delta);
      lin_state += (cost.combination * phi).transpose() * (qt * delta);
      lin_noise += (cost.combination * ct).transpose() * (qt * delta);
      pm.constant += delta.dot(qt * delta);
    }
  }
  if (!cost.tracking()) {
    pm.lin_input = pm.cross_input_state * x_center;
    lin_state = pm.quad_state * x_center;
    lin_noise = pm.cross_noise_state * x_center;
    pm.constant = x_center.dot(pm.quad_state * x_center);
  }

  pm.quad_state = sym(pm.quad_state);
  pm.quad_input = sym(pm.quad_input);
  pm.quad_noise = sym(pm.quad_noise);
  detail::require(min_eigenvalue(pm.quad_input) > 0.0,
                  "build_prediction: input cost block not positive definite");

  pm.quad_xi = Eigen::MatrixXd::Zero((np + 1) * n, (np + 1) * n);
  pm.quad_xi.topLeftCorner(n, n) = pm.quad_state;
  pm.quad_xi.topRightCorner(n, np * n) = pm.cross_noise_state.transpose();
  pm.quad_xi.bottomLeftCorner(np * n, n) = pm.cross_noise_state;
  pm.quad_xi.bottomRightCorner(np * n, np * n) = pm.quad_noise;
  pm.lin_xi.resize((np + 1) * n);
  pm.lin_xi << lin_state, lin_noise;
  pm.cross_input_xi.resize(np * r, (np + 1) * n);
  pm.cross_input_xi << pm.cross_input_state, pm.cross_input_noise;
  return pm;
}

// Condensed horizon cost at a concrete input sequence and disturbance.
inline double quadratic_cost(const PredictionMatrices& pm,
                             const Eigen::VectorXd& u_seq,
                             const Eigen::VectorXd& xi) {
  detail::require(u_seq.size() == pm.lin_input.size() &&
                      xi.size() == pm.lin_xi.size(),
                  "quadratic_cost: dimension mismatch");
  return u_seq.dot(pm.quad_input * u_seq) + 2.0 * pm.lin_input.dot(u_seq) +
         xi.dot(pm.quad_xi * xi) + 2.0 * pm.lin_xi.dot(xi) +
         2.0 * u_seq.dot(pm.cross_input_xi * xi) + pm.constant;
}

// Minimum eigenvalue floor below which a noise shape is treated as degenerate
// and regularized before inversion (an unbounded penalty approximating w = 0).
inline constexpr double kNoiseShapeFloor = 1e-12;

// Worst-case program: minimize rho over (rho, tau1, tau2, z) subject to
//   [ I            z              F      ]
//   [ z'   rho - tau1 - tau2*N   -h'     ]  >= 0,  tau1, tau2 >= 0,
//   [ F'           -h             G      ]
// with h = lin_xi - cross' Binv lin_input, F = Binvsqrt cross,
// G = -quad_xi + tau1 Meta + tau2 MW + F'F.
inline LmiProblem assemble_sdp(const PredictionMatrices& pm,
                               const Ellipsoid& state_set,
                               const std::vector<Eigen::MatrixXd>& noise_shapes) {
  const Eigen::Index n = pm.state_dim;
  const int np = pm.horizon;
  const Eigen::Index nu = pm.lin_input.size();
  const Eigen::Index nxi = pm.lin_xi.size();
  detail::require(state_set.dim() == n,
                  "assemble_sdp: state set has wrong dimension");
  detail::require(static_cast<int>(noise_shapes.size()) == np,
                  "assemble_sdp: one noise shape per horizon step required");

  const Eigen::MatrixXd binv_sqrt = symmetric_inverse_sqrt(pm.quad_input);
  const Eigen::MatrixXd binv = binv_sqrt * binv_sqrt;
  const Eigen::VectorXd h =
      pm.lin_xi - pm.cross_input_xi.transpose() * (binv * pm.lin_input);
  const Eigen::MatrixXd f = binv_sqrt * pm.cross_input_xi;

  // A learned state set can be arbitrarily thin (even a point); floor it the
  // same way the noise shapes are floored so the inverse exists. The floored
  // set contains the true one, so the worst-case bound stays valid.
  Eigen::MatrixXd m_eta = Eigen::MatrixXd::Zero(nxi, nxi);
  m_eta.topLeftCorner(n, n) =
      Eigen::LLT<Eigen::MatrixXd>(
          regularize_shape(state_set.shape(), kNoiseShapeFloor))
          .solve(Eigen::MatrixXd::Identity(n, n));
  Eigen::MatrixXd m_w = Eigen::MatrixXd::Zero(nxi, nxi);
  for (int s = 0; s < np; ++s) {
    detail::require(noise_shapes[s].rows() == n && noise_shapes[s].cols() == n,
                    "assemble_sdp: noise shape " + std::to_string(s) +
                        " has wrong dimension");
    const Eigen::MatrixXd pw = regularize_shape(noise_shapes[s], kNoiseShapeFloor);
    m_w.block((1 + s) * n, (1 + s) * n, n, n) =
        Eigen::LLT<Eigen::MatrixXd>(pw).solve(Eigen::MatrixXd::Identity(n, n));
  }
  m_eta = sym(m_eta);
  m_w = sym(m_w);

  const Eigen::Index dim = nu + 1 + nxi;
  const Eigen::Index scal = nu;  // index of the scalar diagonal entry
  LmiProblem p;
  p.objective = Eigen::VectorXd::Zero(3 + nu);
  p.objective[0] = 1.0;
  p.nonneg = {1, 2};
  p.names = {"rho", "tau1", "tau2"};
  for (Eigen::Index i = 0; i < nu; ++i) {
    p.names.push_back("z" + std::to_string(i));
  }

  p.constant = Eigen::MatrixXd::Zero(dim, dim);
  p.constant.topLeftCorner(nu, nu) = Eigen::MatrixXd::Identity(nu, nu);
  p.constant.topRightCorner(nu, nxi) = f;
  p.constant.bottomLeftCorner(nxi, nu) = f.transpose();
  p.constant.block(scal, scal + 1, 1, nxi) = -h.transpose();
  p.constant.block(scal + 1, scal, nxi, 1) = -h;
  p.constant.bottomRightCorner(nxi, nxi) =
      sym(-pm.quad_xi + f.transpose() * f);

  p.coeff.assign(3 + nu, Eigen::MatrixXd::Zero(dim, dim));
  p.coeff[0](scal, scal) = 1.0;
  p.coeff[1](scal, scal) = -1.0;
  p.coeff[1].bottomRightCorner(nxi, nxi) = m_eta;
  p.coeff[2](scal, scal) = -double(np);
  p.coeff[2].bottomRightCorner(nxi, nxi) = m_w;
  for (Eigen::Index i = 0; i < nu; ++i) {
    p.coeff[3 + i](i, scal) = 1.0;
    p.coeff[3 + i](scal, i) = 1.0;
  }

  // Analytic interior point: with z = 0 and tau1 = tau2 = t0 the Schur
  // complement of the block is [[rho - t0(1 + np), -h'], [-h, G - F'F]] with
  // G - F'F = -quad_xi + t0 (m_eta + m_w). m_eta + m_w is positive definite,
  // so the generalized eigenvalue below gives the smallest t with
  // t (m_eta + m_w) >= quad_xi + F'F + I; the margins keep the point well
  // interior at a cost close to the optimum. It serves both as the solver
  // start (skipping the cold crawl that the 1e12 noise regularization
  // entries cause) and as a polishing anchor for the returned solution.
  const Eigen::MatrixXd mm = sym(m_eta + m_w);
  const Eigen::MatrixXd need = sym(pm.quad_xi + f.transpose() * f) +
                               Eigen::MatrixXd::Identity(nxi, nxi);
  const Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> pencil(need,
                                                                         mm);
  const double t0 = 1.25 * std::max(pencil.eigenvalues().maxCoeff(), 0.0);
  const Eigen::MatrixXd slack = sym(-pm.quad_xi + t0 * mm);
  const Eigen::VectorXd hs = Eigen::LLT<Eigen::MatrixXd>(slack).solve(h);
  p.initial_guess = Eigen::VectorXd::Zero(3 + nu);
  p.initial_guess[0] = (1.0 + np) * t0 + h.dot(hs) + 1.0;
  p.initial_guess[1] = t0;
  p.initial_guess[2] = t0;

  p.validate();
  return p;
}

struct SdpSolution {
  SdpStatus status = SdpStatus::kNumericalFailure;
  double rho = std::numeric_limits<double>::quiet_NaN();
  double tau1 = std::numeric_limits<double>::quiet_NaN();
  double tau2 = std::numeric_limits<double>::quiet_NaN();
  Eigen::VectorXd z;
  Eigen::VectorXd u_seq;  // whole horizon input
  Eigen::VectorXd u0;     // first input, the one applied
  LmiCertificate lmi;
  int iterations = 0;
  std::string message;
};

inline SdpSolution solve_and_recover(const LmiProblem& problem,
                                     const PredictionMatrices& pm,
                                     const SdpOptions& options = {}) {
  const SdpResult r = solve_sdp(problem, options);
  SdpSolution sol;
  sol.status = r.status;
  sol.iterations = r.iterations;
  sol.message = r.message;
  if (r.status != SdpStatus::kOptimal) return sol;

  // Interior polish: the block is affine in the variables, so blending
  // toward the strictly feasible anchor lifts its smallest eigenvalue at a
  // cost increase linear in the blend weight. Iterates sitting right on the
  // boundary of a badly scaled block (1e12 regularized noise entries) would
  // otherwise certify below zero purely through evaluation roundoff.
  Eigen::VectorXd x = r.x;
  sol.lmi = certify(problem, x);
  if (problem.initial_guess.size() == problem.num_vars()) {
    for (double blend = 1e-8;
         sol.lmi.min_eigenvalue < -5e-8 && blend <= 1e-2; blend *= 10.0) {
      x = (1.0 - blend) * r.x + blend * problem.initial_guess;
      sol.lmi = certify(problem, x);
    }
  }

  sol.rho = x[0];
  sol.tau1 = x[1];
  sol.tau2 = x[2];
  sol.z = x.segment(3, pm.lin_input.size());
  const Eigen::MatrixXd binv_sqrt = symmetric_inverse_sqrt(pm.quad_input);
  sol.u_seq = binv_sqrt * sol.z - binv_sqrt * (binv_sqrt * pm.lin_input);
  sol.u0 = sol.u_seq.head(pm.input_dim);
  return sol;
}

// Largest completed-square cost q(xi) found over random disturbances drawn
// from the bounding sets; a sound bound rho must dominate the returned value.
inline double sampled_worst_cost(const PredictionMatrices& pm,
                                 const Eigen::VectorXd& u_seq,
                                 const Ellipsoid& state_set,
                                 const std::vector<Eigen::MatrixXd>& noise_shapes,
                                 int draws, Rng& rng,
                                 SampleMode mode = SampleMode::kBoundary) {
  const Eigen::Index n = pm.state_dim;
  const Eigen::MatrixXd binv_sqrt = symmetric_inverse_sqrt(pm.quad_input);
  const Eigen::VectorXd bb = binv_sqrt * pm.lin_input;
  const double offset = bb.squaredNorm() - pm.constant;

  const Ellipsoid eta_set(Eigen::VectorXd::Zero(n), state_set.shape());
  std::vector<Ellipsoid> noise_sets;
  noise_sets.reserve(noise_shapes.size());
  for (const auto& pw : noise_shapes) {
    noise_sets.emplace_back(Eigen::VectorXd::Zero(n), pw);
  }

  double worst = -std::numeric_limits<double>::infinity();
  Eigen::VectorXd xi(pm.lin_xi.size());
  for (int d = 0; d < draws; ++d) {
    xi.head(n) = sample(eta_set, 1, rng, mode).col(0);
    for (std::size_t s = 0; s < noise_sets.size(); ++s) {
      xi.segment((1 + s) * n, n) = sample(noise_sets[s], 1, rng, mode).col(0);
    }
    worst = std::max(worst, quadratic_cost(pm, u_seq, xi) + offset);
  }
  return worst;
}

}  // namespace ellset
