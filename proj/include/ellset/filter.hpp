#pragma once

// Set-membership state estimation. The filter carries an ellipsoid X(k|k)
// guaranteed to contain the true state whenever the model matches and the
// noises respect their bounds. A time update maps the set through the
// dynamics and inflates it by the process-noise bound; a measurement update
// intersects the predicted set with the states consistent with the latest
// observation.

#include <cmath>
#include <optional>

#include <Eigen/Dense>

#include "ellset/ellipsoid.hpp"
#include "ellset/system.hpp"

namespace ellset {

struct FilterState {
  int k = 0;       // time index of the estimate
  Ellipsoid set;   // X(k|k)
};

struct Prediction {
  int k = 0;       // time index being predicted
  Ellipsoid set;   // X(k|k-1)
};

// Propagates X(k|k) one step: center through the model, shape by the
// trace-optimal sum of A P A^T and Pw(k). A vanishing Pw (the first step of
// the worked systems) takes the exact point path.
inline Prediction time_update(const FilterState& fs, const UncertainSystem& sys,
                              const Eigen::VectorXd& theta,
                              const Eigen::VectorXd& u) {
  detail::require(u.size() == sys.input_dim, "time_update: input size");
  const Eigen::MatrixXd a = sys.A(fs.k, theta);
  const Eigen::MatrixXd b = sys.B(fs.k, theta);
  const Ellipsoid mapped = affine_image(fs.set, a, b * u);
  const Ellipsoid noise(Eigen::VectorXd::Zero(sys.state_dim), sys.Pw(fs.k));
  return Prediction{fs.k + 1, outer_minkowski_sum(mapped, noise)};
}

// States consistent with the observation y(k), mapped into state space with
// the right inverse of C. Exact for square C; an outer flat for wide C whose
// rank-deficient shape spans only the observed directions.
inline Ellipsoid observation_set(const UncertainSystem& sys,
                                 const Eigen::VectorXd& theta, int k,
                                 const Eigen::VectorXd& y) {
  detail::require(y.size() == sys.output_dim, "observation_set: output size");
  const Eigen::MatrixXd c = sys.C(k, theta);
  const Eigen::MatrixXd gram = c * c.transpose();
  detail::require(min_eigenvalue(gram) >
                      1e-12 * std::max(1.0, gram.cwiseAbs().maxCoeff()),
                  "observation_set: C must have full row rank");
  const Eigen::MatrixXd pv = regularize_shape(sys.Pv(k));
  const Eigen::MatrixXd right_inv = c.transpose() * gram.inverse();
  return Ellipsoid(right_inv * y, sym(right_inv * pv * right_inv.transpose()));
}

enum class UpdateStatus {
  kOk,
  kEmptyIntersection,  // observation inconsistent with the predicted set
};

struct MeasurementUpdate {
  UpdateStatus status = UpdateStatus::kOk;
  std::optional<FilterState> state;  // engaged iff status == kOk
  double q = 0.0;                    // blend weight used
  double beta = 1.0;                 // consistency factor; <= 0 when empty
  bool q_fallback = false;           // no stationary blend weight was found
  Eigen::VectorXd innovation;
};

// Fuses X(k|k-1) with the observation y(k) in gain form. The blend weight is
// the trace-optimal scalar; q = 0 keeps the prediction bitwise unchanged.
// The fused shape uses the symmetric (Joseph-like) product and is repaired
// with a 1e-14 eigenvalue floor to stay invertible downstream.
inline MeasurementUpdate measurement_update(const Prediction& pred,
                                            const UncertainSystem& sys,
                                            const Eigen::VectorXd& theta,
                                            const Eigen::VectorXd& y) {
  detail::require(y.size() == sys.output_dim, "measurement_update: output size");
  const Eigen::MatrixXd c = sys.C(pred.k, theta);
  const Eigen::MatrixXd pv = regularize_shape(sys.Pv(pred.k));
  const Eigen::MatrixXd& p = pred.set.shape();
  const Eigen::VectorXd innovation = y - c * pred.set.center();

  MeasurementUpdate out;
  out.innovation = innovation;
  const std::optional<double> q_opt =
      optimal_fusion_scalar(p, c, pv, innovation);
  out.q_fallback = !q_opt.has_value();
  out.q = q_opt.value_or(0.0);
  if (out.q == 0.0) {
    out.beta = 1.0;
    out.state = FilterState{pred.k, pred.set};
    return out;
  }

  // blend = Pv + q C P C^T; every q-scaled quantity is written against it so
  // no term divides by q.
  const Eigen::MatrixXd cp = c * p;
  const Eigen::MatrixXd blend = sym(pv + out.q * cp * c.transpose());
  const Eigen::LLT<Eigen::MatrixXd> blend_llt(blend);
  detail::require(blend_llt.info() == Eigen::Success,
                  "measurement_update: blended output shape not PD");

  out.beta = 1.0 + out.q * (1.0 - innovation.dot(blend_llt.solve(innovation)));
  if (out.beta <= 0.0) {
    out.status = UpdateStatus::kEmptyIntersection;
    return out;
  }

  const Eigen::MatrixXd gain0 = cp.transpose() * blend_llt.solve(
      Eigen::MatrixXd::Identity(sys.output_dim, sys.output_dim));
  const Eigen::MatrixXd gain = out.q * gain0;  // K = q P C^T blend^{-1}
  const Eigen::VectorXd center = pred.set.center() + gain * innovation;
  const Eigen::MatrixXd closed =
      Eigen::MatrixXd::Identity(sys.state_dim, sys.state_dim) - gain * c;
  const Eigen::MatrixXd shape =
      out.beta * (closed * p * closed.transpose() +
                  out.q * gain0 * pv * gain0.transpose());
  out.state = FilterState{pred.k, Ellipsoid(center, repair_shape(shape, 1e-14))};
  return out;
}

// Outer bound for the reachable observations at the predicted step:
// C X(k|k-1) C^T combined with the observation-noise bound by the
// trace-optimal sum.
inline Ellipsoid predicted_output_set(const Prediction& pred,
                                      const UncertainSystem& sys,
                                      const Eigen::VectorXd& theta) {
  const Eigen::MatrixXd c = sys.C(pred.k, theta);
  const Ellipsoid mapped = affine_image(pred.set, c,
                                        Eigen::VectorXd::Zero(sys.output_dim));
  const Ellipsoid noise(Eigen::VectorXd::Zero(sys.output_dim),
                        sys.Pv(pred.k));
  return outer_minkowski_sum(mapped, noise);
}

}  // namespace ellset
