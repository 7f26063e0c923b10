#pragma once

// Description of an uncertain linear time-varying plant
//
//   x(k+1) = A(k, theta) x(k) + B(k, theta) u(k) + w(k)
//   y(k)   = C(k, theta) x(k) + v(k)
//
// where theta is an unknown constant parameter vector drawn from a finite
// candidate set, and the noises are unknown-but-bounded: w(k) in E(0, Pw(k)),
// v(k) in E(0, Pv(k)). Matrix generators are callables so that presets,
// config-file expressions and test lambdas share one representation.

#include <functional>

#include <Eigen/Dense>

#include "ellset/linalg.hpp"

namespace ellset {

using MatrixGenerator =
    std::function<Eigen::MatrixXd(int k, const Eigen::VectorXd& theta)>;
using ShapeGenerator = std::function<Eigen::MatrixXd(int k)>;

struct UncertainSystem {
  Eigen::Index state_dim = 0;
  Eigen::Index input_dim = 0;
  Eigen::Index output_dim = 0;
  MatrixGenerator A;  // state_dim x state_dim
  MatrixGenerator B;  // state_dim x input_dim
  MatrixGenerator C;  // output_dim x state_dim
  ShapeGenerator Pw;  // process noise shape, state_dim square
  ShapeGenerator Pv;  // observation noise shape, output_dim square
};

// Evaluates every generator once and checks the advertised dimensions.
inline void validate(const UncertainSystem& sys, const Eigen::VectorXd& theta,
                     int k = 0) {
  detail::require(sys.state_dim > 0 && sys.input_dim > 0 && sys.output_dim > 0,
                  "UncertainSystem: dimensions must be positive");
  detail::require(sys.A && sys.B && sys.C && sys.Pw && sys.Pv,
                  "UncertainSystem: all generators must be set");
  const auto a = sys.A(k, theta);
  const auto b = sys.B(k, theta);
  const auto c = sys.C(k, theta);
  const auto pw = sys.Pw(k);
  const auto pv = sys.Pv(k);
  detail::require(a.rows() == sys.state_dim && a.cols() == sys.state_dim,
                  "UncertainSystem: A has wrong dimensions");
  detail::require(b.rows() == sys.state_dim && b.cols() == sys.input_dim,
                  "UncertainSystem: B has wrong dimensions");
  detail::require(c.rows() == sys.output_dim && c.cols() == sys.state_dim,
                  "UncertainSystem: C has wrong dimensions");
  detail::require(pw.rows() == sys.state_dim && pw.cols() == sys.state_dim &&
                      is_symmetric(pw),
                  "UncertainSystem: Pw must be symmetric state_dim square");
  detail::require(pv.rows() == sys.output_dim && pv.cols() == sys.output_dim &&
                      is_symmetric(pv),
                  "UncertainSystem: Pv must be symmetric output_dim square");
}

}  // namespace ellset
