#pragma once

// Canonical linear-matrix-inequality program:
//
//   minimize    objective . x
//   subject to  constant + sum_i x_i coeff[i]  >= 0   (positive semidefinite)
//               x_i >= 0 for i in nonneg
//
// This is the single exchange schema between controller assembly and the
// solver, so solver substitutions only have to honor this file.

#include <cmath>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ellset/linalg.hpp"

namespace ellset {

struct LmiProblem {
  Eigen::VectorXd objective;
  Eigen::MatrixXd constant;
  std::vector<Eigen::MatrixXd> coeff;
  std::vector<int> nonneg;
  std::vector<std::string> names;  // optional, one per variable

  // Optional strictly feasible point; solvers may start from it and must
  // ignore it when it is empty or not actually interior.
  Eigen::VectorXd initial_guess;

  Eigen::Index num_vars() const { return objective.size(); }
  Eigen::Index block_dim() const { return constant.rows(); }

  void validate() const {
    detail::require(num_vars() > 0, "LmiProblem: no variables");
    detail::require(constant.rows() == constant.cols() && block_dim() > 0,
                    "LmiProblem: constant block must be square");
    detail::require(is_symmetric(constant),
                    "LmiProblem: constant block not symmetric");
    detail::require(static_cast<Eigen::Index>(coeff.size()) == num_vars(),
                    "LmiProblem: one coefficient block per variable required");
    for (const auto& f : coeff) {
      detail::require(f.rows() == block_dim() && f.cols() == block_dim(),
                      "LmiProblem: coefficient block dimension mismatch");
      detail::require(is_symmetric(f),
                      "LmiProblem: coefficient block not symmetric");
    }
    for (int i : nonneg) {
      detail::require(i >= 0 && i < num_vars(),
                      "LmiProblem: sign constraint on unknown variable");
    }
    detail::require(names.empty() ||
                        static_cast<Eigen::Index>(names.size()) == num_vars(),
                    "LmiProblem: names must match variable count");
    detail::require(initial_guess.size() == 0 ||
                        initial_guess.size() == num_vars(),
                    "LmiProblem: initial guess must match variable count");
  }

  // Constraint block evaluated at a point.
  Eigen::MatrixXd block_at(const Eigen::VectorXd& x) const {
    Eigen::MatrixXd s = constant;
    for (Eigen::Index i = 0; i < num_vars(); ++i) s += x[i] * coeff[i];
    return s;
  }
};

enum class SdpStatus { kOptimal, kInfeasible, kUnbounded, kNumericalFailure };

inline const char* to_string(SdpStatus s) {
  switch (s) {
    case SdpStatus::kOptimal: return "optimal";
    case SdpStatus::kInfeasible: return "infeasible";
    case SdpStatus::kUnbounded: return "unbounded";
    case SdpStatus::kNumericalFailure: return "numerical-failure";
  }
  return "unknown";
}

struct SdpOptions {
  double feasibility_tol = 1e-8;
  double gap_tol = 1e-8;
  int max_iterations = 120;
};

struct SdpResult {
  SdpStatus status = SdpStatus::kNumericalFailure;
  Eigen::VectorXd x;
  double objective = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;
  double gap = std::numeric_limits<double>::quiet_NaN();
  double primal_residual = std::numeric_limits<double>::quiet_NaN();
  double dual_residual = std::numeric_limits<double>::quiet_NaN();
  std::string message;
};

// Solution quality evidence, recomputed from the problem data.
struct LmiCertificate {
  double min_eigenvalue = 0.0;  // of the constraint block at x
  double sign_violation = 0.0;  // worst violation among nonneg variables
};

inline LmiCertificate certify(const LmiProblem& problem,
                              const Eigen::VectorXd& x) {
  LmiCertificate cert;
  cert.min_eigenvalue = min_eigenvalue(problem.block_at(x));
  for (int i : problem.nonneg) {
    cert.sign_violation = std::max(cert.sign_violation, -x[i]);
  }
  return cert;
}

// Human-readable listing for solver triage.
inline void dump_problem(const LmiProblem& problem, std::ostream& os) {
  const auto name = [&](Eigen::Index i) {
    return problem.names.empty() ? "x" + std::to_string(i) : problem.names[i];
  };
  os << "lmi problem: " << problem.num_vars() << " variables, block "
     << problem.block_dim() << "x" << problem.block_dim() << "\n";
  os << "objective:";
  for (Eigen::Index i = 0; i < problem.num_vars(); ++i) {
    os << " " << problem.objective[i] << "*" << name(i);
  }
  os << "\nnonneg:";
  for (int i : problem.nonneg) os << " " << name(i);
  os << "\nconstant block:\n" << problem.constant << "\n";
  for (Eigen::Index i = 0; i < problem.num_vars(); ++i) {
    os << "coefficient of " << name(i) << ":\n" << problem.coeff[i] << "\n";
  }
}

}  // namespace ellset
