#pragma once

// Experiment configuration. A JSON document describes the plant (matrix
// entries as whitelisted expressions of k and theta), the candidate
// parameter bank, the cost, and the simulation batch; the two built-in
// benchmark presets flow through the same parser as user files, so the CLI
// presets and --config runs exercise identical code.

#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "ellset/ellipsoid.hpp"
#include "ellset/expr.hpp"
#include "ellset/lmi.hpp"
#include "ellset/mpc.hpp"
#include "ellset/system.hpp"

namespace ellset {

// A matrix of expressions with an optional shared scale factor, so
// (1 + 0.2 sin k) * M reads in the config the way it is written by hand.
struct MatrixExpr {
  Expression scale;  // empty means 1
  std::vector<std::vector<Expression>> entries;

  Eigen::Index rows() const { return static_cast<Eigen::Index>(entries.size()); }
  Eigen::Index cols() const {
    return entries.empty() ? 0
                           : static_cast<Eigen::Index>(entries[0].size());
  }

  Eigen::MatrixXd operator()(int k, const Eigen::VectorXd& theta =
                                        Eigen::VectorXd()) const {
    Eigen::MatrixXd m(rows(), cols());
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        m(i, j) = entries[i][j].evaluate(k, theta);
      }
    }
    if (!scale.empty()) m *= scale.evaluate(k, theta);
    return m;
  }

  int max_theta() const {
    int top = scale.empty() ? 0 : scale.max_theta();
    for (const auto& row : entries) {
      for (const Expression& e : row) top = std::max(top, e.max_theta());
    }
    return top;
  }
};

// One piece of a piecewise reference: applies while k <= until; an absent
// bound means the piece extends forever (the last piece must be open).
struct ReferenceSegment {
  std::optional<int> until;
  std::vector<Expression> values;
};

struct ExperimentConfig {
  std::string name = "experiment";
  int state_dim = 0;
  int input_dim = 0;
  int output_dim = 0;

  MatrixExpr A, B, C;    // may reference theta
  MatrixExpr Pw, Pv;     // k only
  Eigen::VectorXd initial_center;
  Eigen::MatrixXd initial_shape;

  std::vector<Eigen::VectorXd> thetas;
  int true_index = 0;

  bool tracking = false;
  MatrixExpr Q, R;       // regulation weights (Q unused when tracking)
  MatrixExpr T, QT;      // tracking combination and weight
  std::vector<ReferenceSegment> reference;
  int prediction_horizon = 1;

  int steps = 1;  // simulated instants k = 0..steps-1
  int runs = 1;
  std::uint64_t seed = 1;
  std::vector<std::string> controllers{"arc", "orc", "rc"};
  bool boundary_noise = false;  // sample noises on the ellipsoid boundary
  int certificate_draws = 0;    // adversarial cost samples per solve
  std::vector<int> checkpoints;
  SdpOptions sdp;
  std::string out_dir = "out";
  nlohmann::json echo;  // the parsed document, replayed into the summary

  Ellipsoid initial_set() const {
    return Ellipsoid(initial_center, initial_shape);
  }
  const Eigen::VectorXd& true_theta() const {
    return thetas[static_cast<std::size_t>(true_index)];
  }
};

namespace detail {

inline Expression parse_entry(const nlohmann::json& e,
                              const std::string& where) {
  if (e.is_number()) return Expression::constant(e.get<double>());
  if (e.is_string()) return Expression::parse(e.get<std::string>());
  require(false, where + ": entries must be numbers or expression strings");
  return Expression();
}

inline MatrixExpr parse_matrix(const nlohmann::json& spec,
                               const std::string& where) {
  MatrixExpr m;
  const nlohmann::json* grid = &spec;
  if (spec.is_object()) {
    if (spec.contains("scale")) {
      m.scale = parse_entry(spec.at("scale"), where + ".scale");
    }
    require(spec.contains("entries"), where + ": missing entries");
    grid = &spec.at("entries");
  }
  if (grid->is_number() || grid->is_string()) {
    m.entries = {{parse_entry(*grid, where)}};
    return m;
  }
  require(grid->is_array() && !grid->empty(), where + ": expected a matrix");
  for (std::size_t i = 0; i < grid->size(); ++i) {
    const nlohmann::json& row = (*grid)[i];
    require(row.is_array() && !row.empty(),
            where + ": rows must be non-empty arrays");
    require(i == 0 || row.size() == m.entries[0].size(),
            where + ": ragged rows");
    std::vector<Expression> out;
    out.reserve(row.size());
    for (const auto& e : row) out.push_back(parse_entry(e, where));
    m.entries.push_back(std::move(out));
  }
  return m;
}

inline Eigen::VectorXd parse_vector(const nlohmann::json& spec,
                                    const std::string& where) {
  require(spec.is_array() && !spec.empty(), where + ": expected a vector");
  Eigen::VectorXd v(spec.size());
  for (std::size_t i = 0; i < spec.size(); ++i) {
    require(spec[i].is_number(), where + ": expected numbers");
    v[static_cast<Eigen::Index>(i)] = spec[i].get<double>();
  }
  return v;
}

inline void require_shape(const MatrixExpr& m, Eigen::Index rows,
                          Eigen::Index cols, const std::string& where) {
  require(m.rows() == rows && m.cols() == cols,
          where + ": expected " + std::to_string(rows) + "x" +
              std::to_string(cols) + ", got " + std::to_string(m.rows()) +
              "x" + std::to_string(m.cols()));
}

inline void require_pure_k(const MatrixExpr& m, const std::string& where) {
  require(m.max_theta() == 0, where + ": theta is not allowed here");
}

}  // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& j) {
  using detail::require;
  ExperimentConfig cfg;
  cfg.echo = j;
  cfg.name = j.value("name", std::string("experiment"));

  require(j.contains("system"), "config: missing system section");
  const nlohmann::json& sys = j.at("system");
  cfg.A = detail::parse_matrix(sys.at("A"), "system.A");
  cfg.B = detail::parse_matrix(sys.at("B"), "system.B");
  cfg.C = detail::parse_matrix(sys.at("C"), "system.C");
  cfg.Pw = detail::parse_matrix(sys.at("Pw"), "system.Pw");
  cfg.Pv = detail::parse_matrix(sys.at("Pv"), "system.Pv");

  require(cfg.A.rows() == cfg.A.cols() && cfg.A.rows() > 0,
          "system.A: must be square");
  cfg.state_dim = static_cast<int>(cfg.A.rows());
  require(cfg.B.rows() == cfg.state_dim && cfg.B.cols() > 0,
          "system.B: row count must match the state dimension");
  cfg.input_dim = static_cast<int>(cfg.B.cols());
  require(cfg.C.cols() == cfg.state_dim && cfg.C.rows() > 0,
          "system.C: column count must match the state dimension");
  cfg.output_dim = static_cast<int>(cfg.C.rows());
  detail::require_shape(cfg.Pw, cfg.state_dim, cfg.state_dim, "system.Pw");
  detail::require_shape(cfg.Pv, cfg.output_dim, cfg.output_dim, "system.Pv");
  detail::require_pure_k(cfg.Pw, "system.Pw");
  detail::require_pure_k(cfg.Pv, "system.Pv");

  require(j.contains("initial_set"), "config: missing initial_set section");
  cfg.initial_center =
      detail::parse_vector(j.at("initial_set").at("center"),
                           "initial_set.center");
  require(cfg.initial_center.size() == cfg.state_dim,
          "initial_set.center: wrong dimension");
  const MatrixExpr shape =
      detail::parse_matrix(j.at("initial_set").at("shape"),
                           "initial_set.shape");
  detail::require_shape(shape, cfg.state_dim, cfg.state_dim,
                        "initial_set.shape");
  detail::require_pure_k(shape, "initial_set.shape");
  cfg.initial_shape = shape(0);

  require(j.contains("candidates"), "config: missing candidates section");
  const nlohmann::json& cand = j.at("candidates");
  require(cand.contains("thetas") && cand.at("thetas").is_array() &&
              !cand.at("thetas").empty(),
          "candidates.thetas: expected a non-empty list");
  for (const auto& t : cand.at("thetas")) {
    cfg.thetas.push_back(detail::parse_vector(t, "candidates.thetas"));
    require(cfg.thetas.back().size() == cfg.thetas.front().size(),
            "candidates.thetas: mixed parameter dimensions");
  }
  cfg.true_index = cand.value("true_index", 0);
  require(cfg.true_index >= 0 &&
              cfg.true_index < static_cast<int>(cfg.thetas.size()),
          "candidates.true_index: out of range");
  const int needed = std::max({cfg.A.max_theta(), cfg.B.max_theta(),
                               cfg.C.max_theta()});
  require(cfg.thetas.front().size() >= needed,
          "candidates.thetas: the system references theta(" +
              std::to_string(needed) + ") but the candidates have only " +
              std::to_string(cfg.thetas.front().size()) + " entries");

  require(j.contains("cost"), "config: missing cost section");
  const nlohmann::json& cost = j.at("cost");
  const std::string type = cost.value("type", std::string("regulation"));
  require(type == "regulation" || type == "tracking",
          "cost.type: expected regulation or tracking");
  cfg.tracking = type == "tracking";
  cfg.R = detail::parse_matrix(cost.at("R"), "cost.R");
  detail::require_shape(cfg.R, cfg.input_dim, cfg.input_dim, "cost.R");
  detail::require_pure_k(cfg.R, "cost.R");
  if (cfg.tracking) {
    cfg.T = detail::parse_matrix(cost.at("T"), "cost.T");
    require(cfg.T.cols() == cfg.state_dim && cfg.T.rows() > 0,
            "cost.T: column count must match the state dimension");
    detail::require_pure_k(cfg.T, "cost.T");
    cfg.QT = detail::parse_matrix(cost.at("QT"), "cost.QT");
    detail::require_shape(cfg.QT, cfg.T.rows(), cfg.T.rows(), "cost.QT");
    detail::require_pure_k(cfg.QT, "cost.QT");
    require(cost.contains("reference") && cost.at("reference").is_array() &&
                !cost.at("reference").empty(),
            "cost.reference: expected a non-empty segment list");
    for (const auto& seg : cost.at("reference")) {
      ReferenceSegment out;
      if (seg.contains("until")) out.until = seg.at("until").get<int>();
      const nlohmann::json& expr = seg.at("expr");
      if (expr.is_array()) {
        for (const auto& e : expr) {
          out.values.push_back(detail::parse_entry(e, "cost.reference"));
        }
      } else {
        out.values.push_back(detail::parse_entry(expr, "cost.reference"));
      }
      require(static_cast<Eigen::Index>(out.values.size()) == cfg.T.rows(),
              "cost.reference: segment dimension must match rows of T");
      for (const Expression& e : out.values) {
        require(e.max_theta() == 0, "cost.reference: theta is not allowed");
      }
      cfg.reference.push_back(std::move(out));
    }
    for (std::size_t i = 0; i + 1 < cfg.reference.size(); ++i) {
      require(cfg.reference[i].until.has_value(),
              "cost.reference: only the last segment may be open-ended");
    }
    require(!cfg.reference.back().until.has_value(),
            "cost.reference: the last segment must be open-ended");
  } else {
    cfg.Q = detail::parse_matrix(cost.at("Q"), "cost.Q");
    detail::require_shape(cfg.Q, cfg.state_dim, cfg.state_dim, "cost.Q");
    detail::require_pure_k(cfg.Q, "cost.Q");
  }
  cfg.prediction_horizon = cost.value("prediction_horizon", 1);
  require(cfg.prediction_horizon >= 1, "cost.prediction_horizon: must be >= 1");

  const nlohmann::json sim = j.value("simulation", nlohmann::json::object());
  cfg.steps = sim.value("steps", 1);
  cfg.runs = sim.value("runs", 1);
  cfg.seed = sim.value("seed", std::uint64_t(1));
  cfg.boundary_noise = sim.value("boundary_noise", false);
  cfg.certificate_draws = sim.value("certificate_draws", 0);
  cfg.out_dir = sim.value("out_dir", cfg.out_dir);
  require(cfg.steps >= 1, "simulation.steps: must be >= 1");
  require(cfg.runs >= 1, "simulation.runs: must be >= 1");
  require(cfg.certificate_draws >= 0,
          "simulation.certificate_draws: must be >= 0");
  if (sim.contains("controllers")) {
    cfg.controllers.clear();
    for (const auto& c : sim.at("controllers")) {
      cfg.controllers.push_back(c.get<std::string>());
    }
  }
  require(!cfg.controllers.empty(), "simulation.controllers: empty list");
  for (const std::string& c : cfg.controllers) {
    require(c == "arc" || c == "orc" || c == "rc",
            "simulation.controllers: unknown controller '" + c + "'");
  }
  if (sim.contains("checkpoints")) {
    for (const auto& c : sim.at("checkpoints")) {
      cfg.checkpoints.push_back(c.get<int>());
    }
  } else {
    for (int t = 5; t < cfg.steps; t += 5) cfg.checkpoints.push_back(t);
    if (cfg.checkpoints.empty() || cfg.checkpoints.back() != cfg.steps - 1) {
      cfg.checkpoints.push_back(cfg.steps - 1);
    }
  }
  for (std::size_t i = 0; i < cfg.checkpoints.size(); ++i) {
    require(cfg.checkpoints[i] >= 1 && cfg.checkpoints[i] <= cfg.steps - 1,
            "simulation.checkpoints: out of range");
    require(i == 0 || cfg.checkpoints[i] > cfg.checkpoints[i - 1],
            "simulation.checkpoints: must increase");
  }

  if (j.contains("solver")) {
    const nlohmann::json& solver = j.at("solver");
    cfg.sdp.feasibility_tol =
        solver.value("feasibility_tol", cfg.sdp.feasibility_tol);
    cfg.sdp.gap_tol = solver.value("gap_tol", cfg.sdp.gap_tol);
    cfg.sdp.max_iterations =
        solver.value("max_iterations", cfg.sdp.max_iterations);
  }
  return cfg;
}

inline ExperimentConfig parse_config_text(const std::string& text,
                                          const std::string& origin) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    detail::require(false, origin + ": " + e.what());
  }
  return parse_config(j);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  detail::require(static_cast<bool>(in), "config: cannot open " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str(), path);
}

inline UncertainSystem make_system(const ExperimentConfig& cfg) {
  UncertainSystem sys;
  sys.state_dim = cfg.state_dim;
  sys.input_dim = cfg.input_dim;
  sys.output_dim = cfg.output_dim;
  sys.A = [m = cfg.A](int k, const Eigen::VectorXd& th) { return m(k, th); };
  sys.B = [m = cfg.B](int k, const Eigen::VectorXd& th) { return m(k, th); };
  sys.C = [m = cfg.C](int k, const Eigen::VectorXd& th) { return m(k, th); };
  sys.Pw = [m = cfg.Pw](int k) { return m(k); };
  sys.Pv = [m = cfg.Pv](int k) { return m(k); };
  return sys;
}

inline CostSpec make_cost(const ExperimentConfig& cfg) {
  CostSpec cost;
  cost.horizon = cfg.prediction_horizon;
  cost.input_weight = [m = cfg.R](int k) { return m(k); };
  if (cfg.tracking) {
    cost.combination = cfg.T(0);
    cost.tracking_weight = [m = cfg.QT](int k) { return m(k); };
    cost.reference = [segments = cfg.reference](int k) {
      for (const ReferenceSegment& seg : segments) {
        if (seg.until.has_value() && k > *seg.until) continue;
        Eigen::VectorXd r(static_cast<Eigen::Index>(seg.values.size()));
        for (std::size_t i = 0; i < seg.values.size(); ++i) {
          r[static_cast<Eigen::Index>(i)] = seg.values[i].evaluate(k);
        }
        return r;
      }
      return Eigen::VectorXd();  // unreachable, last segment is open
    };
  } else {
    cost.state_weight = [m = cfg.Q](int k) { return m(k); };
  }
  return cost;
}

// Benchmark presets. Two-state regulation with a three-candidate bank, and
// three-state tracking with a two-candidate bank; both flow through
// parse_config so a --config file can reproduce them verbatim.
inline const std::string& example1_text() {
  static const std::string text = R"json({
  "name": "example1",
  "system": {
    "A": {"scale": "1 + 0.2*sin(k)",
          "entries": [["0.6 + theta(1)", "0.7"],
                      ["theta(2)", "0.5 + theta(3)"]]},
    "B": [["1 + theta(4)"], ["theta(5)"]],
    "C": [["0.2 + theta(6)", "1"]],
    "Pw": {"scale": "(0.1*arctan(k))^2", "entries": [[1, 0], [0, 1]]},
    "Pv": [["(0.15*arctan(k))^2"]]
  },
  "initial_set": {"center": [5, -5], "shape": [[10, 8], [8, 10]]},
  "candidates": {
    "thetas": [[0, 0.25, 0, 0, 0.3, 0],
               [0.4, -0.25, 0, -2, 0.5, 0],
               [0, 0.25, 0, 0.2, 0.3, -0.35]],
    "true_index": 0
  },
  "cost": {"type": "regulation", "Q": [[1, 0], [0, 1]], "R": [[1]],
           "prediction_horizon": 2},
  "simulation": {"steps": 31, "runs": 100, "seed": 1,
                 "controllers": ["arc", "orc", "rc"]}
})json";
  return text;
}

inline const std::string& example2_text() {
  static const std::string text = R"json({
  "name": "example2",
  "system": {
    "A": {"scale": "1 + 0.5*sin(k)",
          "entries": [["0", "1 + theta(1)", "0"],
                      ["0", "0", "1"],
                      ["-0.3", "0.4", "theta(2)"]]},
    "B": [["-0.8"], ["0.7"], ["-0.5"]],
    "C": [["0.5", "0.8", "1 + theta(3)"]],
    "Pw": {"scale": "(0.25*arctan(k))^2",
           "entries": [[1, 0, 0], [0, 1, 0], [0, 0, 1]]},
    "Pv": [["(0.5*arctan(k))^2"]]
  },
  "initial_set": {"center": [10, -5, 1],
                  "shape": [[35, 20, 0], [20, 35, 0], [0, 0, 25]]},
  "candidates": {
    "thetas": [[0, 0.2, 0], [0.2, 0.1, -0.5]],
    "true_index": 0
  },
  "cost": {"type": "tracking", "T": [[1, 0, -0.5]], "QT": [[10]],
           "R": [[1]], "prediction_horizon": 2,
           "reference": [
             {"until": 7, "expr": "-4"},
             {"until": 9, "expr": "-4 + 3.5*(k - 7)"},
             {"until": 13, "expr": "3"},
             {"until": 16, "expr": "3 - 11/6*(k - 13)"},
             {"expr": "-2.5"}
           ]},
  "simulation": {"steps": 21, "runs": 100, "seed": 1,
                 "controllers": ["arc", "orc", "rc"]}
})json";
  return text;
}

inline ExperimentConfig example_config(int which) {
  detail::require(which == 1 || which == 2, "example_config: 1 or 2");
  return parse_config_text(which == 1 ? example1_text() : example2_text(),
                           "example" + std::to_string(which));
}

}  // namespace ellset
