#pragma once

// Ellipsoidal set calculus. A set is E(c, P) = { x : (x-c)^T P^{-1} (x-c) <= 1 }
// with P symmetric positive semidefinite. Zero eigenvalues of P flatten the set
// along the corresponding eigendirections; P = 0 is the single point {c}.
//
// The two binding operations are the outer bound of a Minkowski sum (vector
// sum of two sets) and the outer bound of an intersection. Both come with a
// free mixing scalar; the helpers below pick the scalar that minimizes the
// trace of the resulting shape matrix.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ellset/linalg.hpp"
#include "ellset/random.hpp"

namespace ellset {

inline constexpr double kMembershipTol = 1e-9;

class Ellipsoid {
 public:
  // Validates symmetry and near-positive-semidefiniteness; the stored shape is
  // symmetrized but otherwise kept as given (tiny negative eigenvalues from
  // rounding are tolerated and treated as zero by the queries below).
  Ellipsoid(Eigen::VectorXd center, const Eigen::MatrixXd& shape)
      : center_(std::move(center)), shape_(sym(shape)) {
    detail::require(shape.rows() == shape.cols() &&
                        shape.rows() == center_.size(),
                    "Ellipsoid: center/shape dimensions disagree");
    detail::require(is_symmetric(shape), "Ellipsoid: shape not symmetric");
    const double scale = std::max(1.0, shape_.cwiseAbs().maxCoeff());
    detail::require(min_eigenvalue(shape_) >= -1e-10 * scale,
                    "Ellipsoid: shape has a negative eigenvalue");
  }

  const Eigen::VectorXd& center() const { return center_; }
  const Eigen::MatrixXd& shape() const { return shape_; }
  Eigen::Index dim() const { return center_.size(); }

  // (x-c)^T P^+ (x-c) using the pseudo-inverse; components along null
  // directions are accepted only within a tight slack, otherwise +infinity.
  double quadratic_form(const Eigen::VectorXd& x) const {
    detail::require(x.size() == dim(), "quadratic_form: dimension mismatch");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(shape_);
    const Eigen::VectorXd y = es.eigenvectors().transpose() * (x - center_);
    const double lambda_max = std::max(es.eigenvalues().maxCoeff(), 0.0);
    const double cut = 1e-14 * lambda_max;
    const double null_slack = 1e-7 * std::sqrt(lambda_max);
    double value = 0.0;
    for (Eigen::Index j = 0; j < y.size(); ++j) {
      const double lambda = es.eigenvalues()[j];
      if (lambda > cut) {
        value += y[j] * y[j] / lambda;
      } else if (std::abs(y[j]) > null_slack) {
        return std::numeric_limits<double>::infinity();
      }
    }
    return value;
  }

  bool contains(const Eigen::VectorXd& x, double tol = kMembershipTol) const {
    return quadratic_form(x) <= 1.0 + tol;
  }

 private:
  Eigen::VectorXd center_;
  Eigen::MatrixXd shape_;
};

// sqrt(det P); proportional to the set volume in a fixed dimension, zero for
// degenerate sets.
inline double volume_factor(const Ellipsoid& e) {
  return std::sqrt(std::max(e.shape().determinant(), 0.0));
}

// Exact image under x -> M x + b: E(M c + b, M P M^T).
inline Ellipsoid affine_image(const Ellipsoid& e, const Eigen::MatrixXd& m,
                              const Eigen::VectorXd& b) {
  detail::require(m.cols() == e.dim() && m.rows() == b.size(),
                  "affine_image: dimension mismatch");
  return Ellipsoid(m * e.center() + b, sym(m * e.shape() * m.transpose()));
}

enum class SampleMode { kSolid, kBoundary };

// Draws columns from the uniform distribution over the solid set (or its
// boundary). Degenerate sets are sampled inside the range space of P, so a
// point set yields its center exactly.
inline Eigen::MatrixXd sample(const Ellipsoid& e, int count, Rng& rng,
                              SampleMode mode = SampleMode::kSolid) {
  detail::require(count >= 0, "sample: negative count");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(e.shape());
  const double cut = 1e-14 * std::max(es.eigenvalues().maxCoeff(), 0.0);
  std::vector<Eigen::Index> live;
  for (Eigen::Index j = 0; j < e.dim(); ++j) {
    if (es.eigenvalues()[j] > cut) live.push_back(j);
  }
  Eigen::MatrixXd out(e.dim(), count);
  const int rank = static_cast<int>(live.size());
  for (int s = 0; s < count; ++s) {
    Eigen::VectorXd x = e.center();
    if (rank > 0) {
      Eigen::VectorXd g(rank);
      for (int j = 0; j < rank; ++j) g[j] = rng.normal();
      const double norm = g.norm();
      double radius = 1.0;
      if (mode == SampleMode::kSolid) {
        radius = std::pow(rng.uniform(), 1.0 / rank);
      }
      if (norm > 0.0) {
        g *= radius / norm;
        for (int j = 0; j < rank; ++j) {
          x += std::sqrt(es.eigenvalues()[live[j]]) * g[j] *
               es.eigenvectors().col(live[j]);
        }
      }
    }
    out.col(s) = x;
  }
  return out;
}

inline Eigen::MatrixXd sample_uniform(const Ellipsoid& e, int count,
                                      std::uint64_t seed) {
  Rng rng(seed);
  return sample(e, count, rng, SampleMode::kSolid);
}

// Outer bound of the Minkowski sum with an explicit mixing scalar p > 0:
// E(c1 + c2, (1 + 1/p) P1 + (1 + p) P2). Contains the exact sum for every p.
inline Ellipsoid outer_minkowski_sum(const Ellipsoid& e1, const Ellipsoid& e2,
                                     double p) {
  detail::require(e1.dim() == e2.dim(), "outer_minkowski_sum: dim mismatch");
  detail::require(p > 0.0, "outer_minkowski_sum: mixing scalar must be > 0");
  return Ellipsoid(e1.center() + e2.center(),
                   (1.0 + 1.0 / p) * e1.shape() + (1.0 + p) * e2.shape());
}

// Trace-optimal mixing scalar sqrt(tr P1 / tr P2). Disengaged when either
// trace vanishes; the sum is then exact without mixing (one set is a point).
inline std::optional<double> optimal_sum_scalar(const Ellipsoid& e1,
                                                const Ellipsoid& e2) {
  const double t1 = e1.shape().trace();
  const double t2 = e2.shape().trace();
  if (t1 <= 0.0 || t2 <= 0.0) return std::nullopt;
  return std::sqrt(t1 / t2);
}

// Minkowski sum outer bound with the trace-optimal scalar, falling back to
// the exact point-set path when one summand is degenerate to a point.
inline Ellipsoid outer_minkowski_sum(const Ellipsoid& e1,
                                     const Ellipsoid& e2) {
  detail::require(e1.dim() == e2.dim(), "outer_minkowski_sum: dim mismatch");
  const std::optional<double> p = optimal_sum_scalar(e1, e2);
  if (!p) {
    const bool e2_point = e2.shape().trace() <= 0.0;
    return Ellipsoid(e1.center() + e2.center(),
                     e2_point ? e1.shape() : e2.shape());
  }
  return outer_minkowski_sum(e1, e2, *p);
}

// Fusion of two ellipsoids into an outer bound of their intersection.
// beta <= 0 certifies that the intersection is empty at this blend weight
// (hence empty outright); the bound is then not representable and the set is
// disengaged. Policy on emptiness is the caller's.
struct Fusion {
  double beta = 1.0;
  std::optional<Ellipsoid> set;
};

// Blend with explicit weight q >= 0. q = 0 returns the first set unchanged;
// larger q trusts the second set more.
inline Fusion outer_intersection(const Ellipsoid& e1, const Ellipsoid& e2,
                                 double q) {
  detail::require(e1.dim() == e2.dim(), "outer_intersection: dim mismatch");
  detail::require(q >= 0.0, "outer_intersection: q must be >= 0");
  if (q == 0.0) return Fusion{1.0, e1};

  const Eigen::VectorXd delta = e2.center() - e1.center();
  const Eigen::MatrixXd mix = q * e1.shape() + e2.shape();
  Eigen::LDLT<Eigen::MatrixXd> mix_ldlt(mix);
  detail::require(mix_ldlt.info() == Eigen::Success && mix_ldlt.isPositive(),
                  "outer_intersection: blended shape is degenerate");

  const double beta = 1.0 + q - q * delta.dot(mix_ldlt.solve(delta));
  if (beta <= 0.0) return Fusion{beta, std::nullopt};

  // L = P1 (P1 + P2/q)^{-1} written without dividing by q.
  const Eigen::MatrixXd gain = q * e1.shape() * mix_ldlt.solve(
                                       Eigen::MatrixXd::Identity(e1.dim(), e1.dim()));
  const Eigen::VectorXd center = e1.center() + gain * delta;
  const Eigen::MatrixXd shape = repair_shape(
      beta * (Eigen::MatrixXd::Identity(e1.dim(), e1.dim()) - gain) * e1.shape());
  return Fusion{beta, Ellipsoid(center, shape)};
}

// Trace-optimal blend weight for fusing the prior E(c, P) with the set of
// states consistent with an observation, { x : (y - C x)^T Pv^{-1} (y - C x)
// <= 1 }, where innovation = y - C c. Minimizes q -> trace of the fused shape
// including its consistency scaling. Requires Pv positive definite. Returns 0
// when fusing cannot tighten the trace (the no-gain condition holds at q = 0)
// and nullopt when no stationary point exists on (0, 1e6]; callers typically
// fall back to q = 0.
inline std::optional<double> optimal_fusion_scalar(
    const Eigen::MatrixXd& p_prior, const Eigen::MatrixXd& c_map,
    const Eigen::MatrixXd& p_noise, const Eigen::VectorXd& innovation) {
  const Eigen::Index n = p_prior.rows();
  const Eigen::Index m = c_map.rows();
  detail::require(c_map.cols() == n && p_noise.rows() == m &&
                      p_noise.cols() == m && innovation.size() == m,
                  "optimal_fusion_scalar: dimension mismatch");
  Eigen::LLT<Eigen::MatrixXd> noise_llt(sym(p_noise));
  detail::require(noise_llt.info() == Eigen::Success,
                  "optimal_fusion_scalar: noise shape not positive definite");

  // Gain condition at q = 0: fusing can only help when the innovation is
  // large against the noise or the prior is wide against the output map.
  const Eigen::MatrixXd cp = c_map * p_prior;
  const double trace_php = (cp.transpose() * noise_llt.solve(cp)).trace();
  const double eps_weight = innovation.dot(noise_llt.solve(innovation));
  const double f0 = (1.0 - eps_weight) * p_prior.trace() - trace_php;
  if (f0 > 0.0) return 0.0;

  // Spectrum of P C^T Pv^{-1} C through the symmetric congruence
  // sqrt(P) C^T Pv^{-1} C sqrt(P); d_j are the matched trace weights.
  const Eigen::MatrixXd sqrt_p = symmetric_sqrt(p_prior);
  const Eigen::MatrixXd csp = c_map * sqrt_p;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(
      sym(csp.transpose() * noise_llt.solve(csp)));
  const Eigen::VectorXd lambda = es.eigenvalues().cwiseMax(0.0);
  const Eigen::VectorXd d =
      (sqrt_p * es.eigenvectors()).colwise().squaredNorm();

  const Eigen::MatrixXd cpc = sym(cp * c_map.transpose());
  const auto objective_slope = [&](double q) {
    const Eigen::MatrixXd blend = sym(p_noise + q * cpc);
    Eigen::LLT<Eigen::MatrixXd> blend_llt(blend);
    const Eigen::VectorXd w = blend_llt.solve(innovation);
    const double beta = 1.0 + q * (1.0 - innovation.dot(w));
    const double beta_slope = 1.0 - w.dot(p_noise * w);
    double trace_term = 0.0;
    double trace_slope = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      const double g = 1.0 + q * lambda[j];
      trace_term += d[j] / g;
      trace_slope += d[j] * lambda[j] / (g * g);
    }
    return beta_slope * trace_term - beta * trace_slope;
  };

  // The slope is nonpositive at 0; expand geometrically until it turns
  // nonnegative, then bisect.
  double lo = 0.0;
  double hi = 1e-6;
  bool bracketed = false;
  while (hi <= 1e6) {
    const double f_hi = objective_slope(hi);
    if (f_hi == 0.0) return hi;
    if (f_hi > 0.0) {
      bracketed = true;
      break;
    }
    lo = hi;
    hi *= 2.0;
  }
  if (!bracketed) return std::nullopt;
  while (hi - lo > 1e-10) {
    const double mid = 0.5 * (lo + hi);
    if (objective_slope(mid) > 0.0) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return 0.5 * (lo + hi);
}

// Trace-optimal blend weight between two ellipsoids in the same space; the
// second shape must be positive definite.
inline std::optional<double> optimal_intersection_scalar(const Ellipsoid& e1,
                                                         const Ellipsoid& e2) {
  detail::require(e1.dim() == e2.dim(),
                  "optimal_intersection_scalar: dim mismatch");
  return optimal_fusion_scalar(
      e1.shape(), Eigen::MatrixXd::Identity(e1.dim(), e1.dim()), e2.shape(),
      e2.center() - e1.center());
}

}  // namespace ellset
