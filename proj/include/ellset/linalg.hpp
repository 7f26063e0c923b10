#pragma once

// Small dense linear-algebra helpers shared across the library. Everything
// here works on symmetric matrices through eigenvalue decompositions; inputs
// are expected to be modest in size (state dimensions, not data matrices).

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace ellset {

namespace detail {

inline void require(bool condition, const std::string& what) {
  if (!condition) throw std::invalid_argument(what);
}

}  // namespace detail

// Symmetric part of a square matrix; removes floating-point drift after
// congruence products.
inline Eigen::MatrixXd sym(const Eigen::MatrixXd& m) {
  return 0.5 * (m + m.transpose());
}

inline bool is_symmetric(const Eigen::MatrixXd& m, double tol = 1e-10) {
  if (m.rows() != m.cols()) return false;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= tol * scale;
}

inline double min_eigenvalue(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym(m),
                                                    Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

// Symmetrizes and clamps eigenvalues from below. The default floor of zero
// projects onto the positive semidefinite cone; a positive floor additionally
// guards later inversions.
inline Eigen::MatrixXd repair_shape(const Eigen::MatrixXd& m,
                                    double floor = 0.0) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym(m));
  Eigen::VectorXd lambda = es.eigenvalues().cwiseMax(floor);
  return sym(es.eigenvectors() * lambda.asDiagonal() *
             es.eigenvectors().transpose());
}

// Spectral square root of a symmetric positive semidefinite matrix; negative
// rounding noise in the spectrum is clamped to zero.
inline Eigen::MatrixXd symmetric_sqrt(const Eigen::MatrixXd& m) {
  detail::require(is_symmetric(m), "symmetric_sqrt: matrix not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym(m));
  Eigen::VectorXd lambda = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return sym(es.eigenvectors() * lambda.asDiagonal() *
             es.eigenvectors().transpose());
}

// Spectral inverse square root; requires a positive definite input.
inline Eigen::MatrixXd symmetric_inverse_sqrt(const Eigen::MatrixXd& m) {
  detail::require(is_symmetric(m),
                  "symmetric_inverse_sqrt: matrix not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym(m));
  detail::require(es.eigenvalues().minCoeff() > 0.0,
                  "symmetric_inverse_sqrt: matrix not positive definite");
  Eigen::VectorXd lambda = es.eigenvalues().cwiseSqrt().cwiseInverse();
  return sym(es.eigenvectors() * lambda.asDiagonal() *
             es.eigenvectors().transpose());
}

// Adds sigma_min * I when the smallest eigenvalue falls at or below the
// threshold; keeps well-conditioned inputs untouched.
inline Eigen::MatrixXd regularize_shape(const Eigen::MatrixXd& m,
                                        double sigma_min = 1e-12) {
  if (min_eigenvalue(m) <= sigma_min) {
    return sym(m) + sigma_min * Eigen::MatrixXd::Identity(m.rows(), m.cols());
  }
  return sym(m);
}

}  // namespace ellset
