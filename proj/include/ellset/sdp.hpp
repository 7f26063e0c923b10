#pragma once

// Dense primal-dual interior-point solver for the LmiProblem schema.
//
// The program  min c.x  s.t.  S = F0 + sum x_i Fi >= 0  is paired with its
// dual  max -<F0, X>  s.t.  <Fi, X> = c_i, X >= 0. Iterates keep S and X
// positive definite; directions follow the dual-scaled Newton system with a
// Mehrotra predictor-corrector and fraction-to-boundary damping. Sign
// constraints are folded into the block as extra 1x1 diagonal slots, and the
// data is equilibrated per variable so widely scaled coefficient blocks (the
// regularized noise inverses reach 1e12) do not poison the Schur system.
// Problems may carry a strictly feasible initial_guess, which skips the
// infeasible cold-start phase entirely.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ellset/lmi.hpp"

namespace ellset {

namespace detail {

// Largest step alpha with P + alpha * dP still positive definite (capped at 1).
inline double max_psd_step(const Eigen::LLT<Eigen::MatrixXd>& p_llt,
                           const Eigen::MatrixXd& dp) {
  const Eigen::MatrixXd l = p_llt.matrixL();
  const Eigen::MatrixXd w = l.triangularView<Eigen::Lower>().solve(
      l.triangularView<Eigen::Lower>().solve(dp).transpose());
  const double lambda = min_eigenvalue(w);
  if (lambda >= 0.0) return 1.0;
  return std::min(1.0, -1.0 / lambda);
}

}  // namespace detail

inline SdpResult solve_sdp(const LmiProblem& problem,
                           const SdpOptions& options = {}) {
  problem.validate();
  const Eigen::Index nv = problem.num_vars();
  const Eigen::Index base_dim = problem.block_dim();
  const Eigen::Index dim = base_dim + static_cast<Eigen::Index>(problem.nonneg.size());

  // Folded data: sign-constrained variables gain a 1x1 diagonal slot.
  Eigen::MatrixXd f0 = Eigen::MatrixXd::Zero(dim, dim);
  f0.topLeftCorner(base_dim, base_dim) = problem.constant;
  std::vector<Eigen::MatrixXd> fi(nv, Eigen::MatrixXd::Zero(dim, dim));
  for (Eigen::Index i = 0; i < nv; ++i) {
    fi[i].topLeftCorner(base_dim, base_dim) = problem.coeff[i];
  }
  for (std::size_t j = 0; j < problem.nonneg.size(); ++j) {
    fi[problem.nonneg[j]](base_dim + j, base_dim + j) = 1.0;
  }

  // Equilibration: scale the block to unit size, then each variable so its
  // coefficient block has unit size, then the objective to unit size.
  const double block_scale = 1.0 / std::max(1.0, f0.cwiseAbs().maxCoeff());
  f0 *= block_scale;
  Eigen::VectorXd var_scale(nv);
  for (Eigen::Index i = 0; i < nv; ++i) {
    fi[i] *= block_scale;
    var_scale[i] = 1.0 / std::clamp(fi[i].cwiseAbs().maxCoeff(), 1e-14, 1e14);
    fi[i] *= var_scale[i];
  }
  Eigen::VectorXd c = problem.objective.cwiseProduct(var_scale);
  const double obj_scale = 1.0 / std::max(1.0, c.cwiseAbs().maxCoeff());
  c *= obj_scale;

  const auto unscale = [&](const Eigen::VectorXd& x) {
    return Eigen::VectorXd(x.cwiseProduct(var_scale));
  };
  const auto finish = [&](SdpStatus status, const Eigen::VectorXd& x, int it,
                          double gap, double rp, double rd, std::string msg) {
    SdpResult out;
    out.status = status;
    out.x = unscale(x);
    out.objective = problem.objective.dot(out.x);
    out.iterations = it;
    out.gap = gap;
    out.primal_residual = rp;
    out.dual_residual = rd;
    out.message = std::move(msg);
    return out;
  };

  Eigen::VectorXd x = Eigen::VectorXd::Zero(nv);
  const double init = std::max(1.0, f0.cwiseAbs().maxCoeff());
  Eigen::MatrixXd s = init * Eigen::MatrixXd::Identity(dim, dim);
  Eigen::MatrixXd big_x = init * Eigen::MatrixXd::Identity(dim, dim);

  const auto block_at = [&](const Eigen::VectorXd& v) {
    Eigen::MatrixXd b = f0;
    for (Eigen::Index i = 0; i < nv; ++i) b += v[i] * fi[i];
    return b;
  };

  // A caller-supplied strictly feasible point replaces the cold start; the
  // primal residual is then zero from the first iteration on.
  if (problem.initial_guess.size() == nv) {
    const Eigen::VectorXd x0 = problem.initial_guess.cwiseQuotient(var_scale);
    if (x0.allFinite()) {
      const Eigen::MatrixXd s0 = block_at(x0);
      if (Eigen::LLT<Eigen::MatrixXd>(s0).info() == Eigen::Success) {
        x = x0;
        s = s0;
      }
    }
  }

  double mu = big_x.cwiseProduct(s).sum() / double(dim);
  for (int iter = 0; iter < options.max_iterations; ++iter) {
    const Eigen::MatrixXd rp = block_at(x) - s;  // primal residual block
    Eigen::VectorXd rd(nv);                      // dual residual
    for (Eigen::Index i = 0; i < nv; ++i) {
      rd[i] = c[i] - fi[i].cwiseProduct(big_x).sum();
    }
    mu = big_x.cwiseProduct(s).sum() / double(dim);
    const double rp_norm = rp.cwiseAbs().maxCoeff();
    const double rd_norm = rd.cwiseAbs().maxCoeff();
    const double x_norm = x.cwiseAbs().maxCoeff();
    const double s_norm = s.cwiseAbs().maxCoeff();
    const double big_x_norm = big_x.cwiseAbs().maxCoeff();
    const double primal_obj = c.dot(x);
    const double dual_obj = -f0.cwiseProduct(big_x).sum();
    const double gap_rel =
        mu / (1.0 + std::max(std::abs(primal_obj), std::abs(dual_obj)));

    // Residual targets sit above the roundoff floor of their own evaluation,
    // which grows with the iterate magnitude when the solution genuinely
    // needs a huge multiplier (degenerate noise directions reach 1e12).
    const double rp_tol = options.feasibility_tol + 1e-13 * s_norm;
    const double rd_tol = options.feasibility_tol + 1e-13 * big_x_norm;
    if (rp_norm <= rp_tol && rd_norm <= rd_tol && gap_rel <= options.gap_tol) {
      return finish(SdpStatus::kOptimal, x, iter, gap_rel, rp_norm, rd_norm,
                    "converged");
    }

    // Divergence-based status tests. Genuine divergence rides the feasible
    // manifold of its own side, so the matching residual must be small in
    // absolute terms (stalled feasible runs keep it stuck at O(1)).
    if (big_x_norm > 1e8 && dual_obj > 1e4 * (1.0 + std::abs(primal_obj)) &&
        rd_norm <= 1e-6) {
      return finish(SdpStatus::kInfeasible, x, iter, gap_rel, rp_norm,
                    rd_norm, "dual objective diverges: primal infeasible");
    }
    if (x_norm > 1e8 && -primal_obj > 1e4 * (1.0 + std::abs(dual_obj)) &&
        rp_norm <= 1e-6) {
      const Eigen::VectorXd ray = x / x_norm;
      Eigen::MatrixXd dir = Eigen::MatrixXd::Zero(dim, dim);
      for (Eigen::Index i = 0; i < nv; ++i) dir += ray[i] * fi[i];
      if (min_eigenvalue(dir) >= -1e-6 && c.dot(ray) < 0.0) {
        return finish(SdpStatus::kUnbounded, x, iter, gap_rel, rp_norm,
                      rd_norm, "improving ray certifies unboundedness");
      }
    }
    if (!std::isfinite(mu) || big_x_norm > 1e16 || x_norm > 1e16) {
      return finish(SdpStatus::kNumericalFailure, x, iter, gap_rel, rp_norm,
                    rd_norm, "iterates diverged");
    }

    const Eigen::LLT<Eigen::MatrixXd> s_llt(s);
    if (s_llt.info() != Eigen::Success) {
      return finish(SdpStatus::kNumericalFailure, x, iter, gap_rel, rp_norm,
                    rd_norm, "slack block lost positive definiteness");
    }
    const Eigen::MatrixXd s_inv =
        s_llt.solve(Eigen::MatrixXd::Identity(dim, dim));

    // Schur system M dx = rhs with M_ij = <Fi, X Fj S^{-1}> symmetrized.
    Eigen::MatrixXd m(nv, nv);
    std::vector<Eigen::MatrixXd> xfs(nv);
    for (Eigen::Index j = 0; j < nv; ++j) xfs[j] = big_x * fi[j] * s_inv;
    for (Eigen::Index i = 0; i < nv; ++i) {
      for (Eigen::Index j = 0; j < nv; ++j) {
        m(i, j) = fi[i].cwiseProduct(xfs[j]).sum();
      }
    }
    m = sym(m);
    Eigen::LDLT<Eigen::MatrixXd> m_ldlt(m);
    if (m_ldlt.info() != Eigen::Success) {
      m_ldlt.compute(m + 1e-12 * std::max(1.0, m.diagonal().maxCoeff()) *
                             Eigen::MatrixXd::Identity(nv, nv));
    }

    Eigen::VectorXd trace_fs(nv);
    for (Eigen::Index i = 0; i < nv; ++i) {
      trace_fs[i] = fi[i].cwiseProduct(s_inv).sum();
    }
    const Eigen::MatrixXd x_rp_sinv = sym(big_x * rp * s_inv);
    const auto solve_direction = [&](double sigma_mu,
                                     const Eigen::MatrixXd& correction,
                                     Eigen::VectorXd& dx, Eigen::MatrixXd& ds,
                                     Eigen::MatrixXd& dx_big) {
      Eigen::VectorXd rhs(nv);
      for (Eigen::Index i = 0; i < nv; ++i) {
        rhs[i] = sigma_mu * trace_fs[i] - c[i] -
                 fi[i].cwiseProduct(x_rp_sinv).sum() -
                 fi[i].cwiseProduct(correction).sum();
      }
      dx = m_ldlt.solve(rhs);
      if (!dx.allFinite()) {
        m_ldlt.compute(m + 1e-10 * std::max(1.0, m.diagonal().maxCoeff()) *
                               Eigen::MatrixXd::Identity(nv, nv));
        dx = m_ldlt.solve(rhs);
      }
      ds = rp;
      for (Eigen::Index i = 0; i < nv; ++i) ds += dx[i] * fi[i];
      dx_big = sigma_mu * s_inv - big_x - sym(big_x * ds * s_inv) - correction;
    };

    // Predictor.
    Eigen::VectorXd dx_aff;
    Eigen::MatrixXd ds_aff, dbx_aff;
    solve_direction(0.0, Eigen::MatrixXd::Zero(dim, dim), dx_aff, ds_aff,
                    dbx_aff);
    const Eigen::LLT<Eigen::MatrixXd> x_llt(big_x);
    if (x_llt.info() != Eigen::Success) {
      return finish(SdpStatus::kNumericalFailure, x, iter, gap_rel, rp_norm,
                    rd_norm, "multiplier block lost positive definiteness");
    }
    const double ap_aff = detail::max_psd_step(x_llt, dbx_aff);
    const double ad_aff = detail::max_psd_step(s_llt, ds_aff);
    const double mu_aff = (big_x + ap_aff * dbx_aff)
                              .cwiseProduct(s + ad_aff * ds_aff)
                              .sum() /
                          double(dim);
    const double sigma =
        std::clamp(std::pow(std::max(mu_aff, 0.0) / mu, 3.0), 1e-8, 1.0);

    // Corrector.
    Eigen::VectorXd dx;
    Eigen::MatrixXd ds, dbx;
    solve_direction(sigma * mu, sym(dbx_aff * ds_aff * s_inv), dx, ds, dbx);

    double ap = 0.98 * detail::max_psd_step(x_llt, dbx);
    double ad = 0.98 * detail::max_psd_step(s_llt, ds);
    // Equal steps while still infeasible: desynchronized step lengths let
    // the complementarity measure grow without bound on stalled iterates.
    if (std::max(rp_norm, rd_norm) > 100.0 * options.feasibility_tol) {
      ap = ad = std::min(ap, ad);
    }
    x += ad * dx;
    s = sym(s + ad * ds);
    big_x = sym(big_x + ap * dbx);
  }

  return finish(SdpStatus::kNumericalFailure, x, options.max_iterations,
                mu, std::numeric_limits<double>::quiet_NaN(),
                std::numeric_limits<double>::quiet_NaN(),
                "iteration limit reached");
}

}  // namespace ellset
