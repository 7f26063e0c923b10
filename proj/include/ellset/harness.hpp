#pragma once

// Monte Carlo harness. Simulates the true plant with noises drawn inside
// their bounding ellipsoids, closes the loop around a candidate bank (the
// full bank, the known-parameter single bank, and the known-parameter
// no-intersection bank all share the same controller code), accumulates the
// cumulative error metrics, and writes plot-ready CSV/JSON artifacts. Runs
// with the same configuration and seed produce byte-identical files; the
// noise stream of run j depends only on (seed, j), so every controller
// variant faces the same disturbances.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "ellset/adaptive.hpp"
#include "ellset/config.hpp"
#include "ellset/ellipsoid.hpp"
#include "ellset/random.hpp"
#include "ellset/system.hpp"

namespace ellset {

struct PlantStep {
  Eigen::VectorXd x;  // x(k+1)
  Eigen::VectorXd y;  // y(k+1)
};

// One true-plant transition: x(k+1) = A x + B u + w with w in E(0, Pw(k)),
// then y(k+1) = C x(k+1) + v with v in E(0, Pv(k+1)).
inline PlantStep simulate_plant_step(const UncertainSystem& sys,
                                     const Eigen::VectorXd& theta,
                                     const Eigen::VectorXd& x,
                                     const Eigen::VectorXd& u, int k, Rng& rng,
                                     SampleMode mode = SampleMode::kSolid) {
  const Ellipsoid process(Eigen::VectorXd::Zero(sys.state_dim), sys.Pw(k));
  const Eigen::VectorXd w = sample(process, 1, rng, mode).col(0);
  const Ellipsoid observation(Eigen::VectorXd::Zero(sys.output_dim),
                              sys.Pv(k + 1));
  const Eigen::VectorXd v = sample(observation, 1, rng, mode).col(0);
  PlantStep out;
  out.x = sys.A(k, theta) * x + sys.B(k, theta) * u + w;
  out.y = sys.C(k + 1, theta) * out.x + v;
  return out;
}

struct CandidateLog {
  Eigen::VectorXd center;   // filter set center at control time
  Eigen::MatrixXd shape;    // filter set shape at control time
  double det = 0.0;
  double weight = 0.0;
  double beta = std::numeric_limits<double>::quiet_NaN();
  double rho = std::numeric_limits<double>::quiet_NaN();
  double likelihood = std::numeric_limits<double>::quiet_NaN();
  double lmi_min = std::numeric_limits<double>::quiet_NaN();
  double sampled_worst = std::numeric_limits<double>::quiet_NaN();
  bool frozen = false;
  bool solved = false;
};

struct StepLog {
  int k = 0;
  Eigen::VectorXd x;         // true state x(k)
  Eigen::VectorXd y;         // observation consumed at k (empty at k = 0)
  Eigen::VectorXd u;         // applied input u(k)
  Eigen::VectorXd estimate;  // weight-mixed filter centers
  double estimate_error = 0.0;     // cumulative through k
  double performance_error = 0.0;  // cumulative control or tracking error
  std::vector<CandidateLog> candidates;
};

struct RunLog {
  int run = 0;
  bool failed = false;
  std::string error;
  std::vector<StepLog> steps;
};

struct ControllerBatch {
  std::string controller;
  std::vector<RunLog> runs;
};

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<ControllerBatch> batches;
};

namespace detail {

inline AdaptiveController make_bank(const ExperimentConfig& cfg,
                                    const UncertainSystem& sys,
                                    const CostSpec& cost,
                                    const std::string& controller) {
  AdaptiveOptions options;
  options.sdp = cfg.sdp;
  options.certificate_draws = cfg.certificate_draws;
  if (controller == "arc") {
    return AdaptiveController(sys, cost, cfg.thetas, cfg.initial_set(),
                              options);
  }
  if (controller == "rc") options.measurement_updates = false;
  detail::require(controller == "orc" || controller == "rc",
                  "make_bank: unknown controller '" + controller + "'");
  return AdaptiveController(sys, cost, {cfg.true_theta()}, cfg.initial_set(),
                            options);
}

}  // namespace detail

inline RunLog run_once(const ExperimentConfig& cfg,
                       const UncertainSystem& sys, const CostSpec& cost,
                       const std::string& controller, int run) {
  RunLog log;
  log.run = run;
  const SampleMode mode =
      cfg.boundary_noise ? SampleMode::kBoundary : SampleMode::kSolid;
  try {
    AdaptiveController bank = detail::make_bank(cfg, sys, cost, controller);
    Rng rng = Rng::derive(cfg.seed, {static_cast<std::uint64_t>(run)});
    Eigen::VectorXd x = sample(cfg.initial_set(), 1, rng, mode).col(0);
    Eigen::VectorXd y;
    Eigen::VectorXd estimate = cfg.initial_center;
    double estimate_error = 0.0;
    double performance_error = 0.0;

    for (int k = 0; k < cfg.steps; ++k) {
      const StepRecord rec = k == 0 ? bank.step(0) : bank.step(k, y);

      StepLog step;
      step.k = k;
      step.x = x;
      step.y = y;
      step.u = rec.u;
      double total_weight = 0.0;
      Eigen::VectorXd mixed = Eigen::VectorXd::Zero(cfg.state_dim);
      for (std::size_t i = 0; i < rec.candidates.size(); ++i) {
        const CandidateStepRecord& crec = rec.candidates[i];
        const Candidate& cand = bank.candidates()[i];
        CandidateLog cl;
        cl.center = cand.state.set.center();
        cl.shape = cand.state.set.shape();
        cl.det = crec.det_shape;
        cl.weight = crec.weight;
        cl.frozen = crec.frozen;
        cl.solved = crec.solved && crec.status == SdpStatus::kOptimal;
        if (k > 0) {
          cl.beta = crec.beta;
          cl.likelihood = crec.likelihood;
        }
        if (cl.solved) {
          cl.rho = crec.rho;
          cl.lmi_min = crec.lmi.min_eigenvalue;
          cl.sampled_worst = crec.sampled_worst;
        }
        mixed += crec.weight * cl.center;
        total_weight += crec.weight;
        step.candidates.push_back(std::move(cl));
      }
      // A falsified bank has no usable mixture; keep the last estimate the
      // same way the controller keeps the last input.
      if (total_weight > 0.0) estimate = mixed;
      step.estimate = estimate;

      if (k >= 1) {
        estimate_error += (x - estimate).squaredNorm();
        if (cfg.tracking) {
          performance_error +=
              (cost.combination * x - cost.reference(k)).squaredNorm();
        } else {
          performance_error += x.squaredNorm();
        }
      }
      step.estimate_error = estimate_error;
      step.performance_error = performance_error;
      log.steps.push_back(std::move(step));

      if (k + 1 < cfg.steps) {
        const PlantStep plant = simulate_plant_step(
            sys, cfg.true_theta(), x, rec.u, k, rng, mode);
        bank.advance(k, rec.u);
        x = plant.x;
        y = plant.y;
      }
    }
  } catch (const std::exception& e) {
    log.failed = true;
    log.error = e.what();
  }
  return log;
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                       int threads = 1) {
  detail::require(threads >= 1, "run_experiment: threads must be >= 1");
  ExperimentResult result;
  result.config = cfg;
  const UncertainSystem sys = make_system(cfg);
  const CostSpec cost = make_cost(cfg);

  for (const std::string& controller : cfg.controllers) {
    ControllerBatch batch;
    batch.controller = controller;
    batch.runs.resize(cfg.runs);
    const int workers = std::min(threads, cfg.runs);
    if (workers <= 1) {
      for (int j = 0; j < cfg.runs; ++j) {
        batch.runs[j] = run_once(cfg, sys, cost, controller, j);
      }
    } else {
      std::atomic<int> next{0};
      std::vector<std::thread> pool;
      pool.reserve(workers);
      for (int t = 0; t < workers; ++t) {
        pool.emplace_back([&] {
          for (int j = next.fetch_add(1); j < cfg.runs;
               j = next.fetch_add(1)) {
            batch.runs[j] = run_once(cfg, sys, cost, controller, j);
          }
        });
      }
      for (std::thread& t : pool) t.join();
    }
    result.batches.push_back(std::move(batch));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Metrics

struct MetricSeries {
  std::vector<int> failed_runs;
  int completed = 0;
  std::vector<double> estimate_error;     // one mean per checkpoint
  std::vector<double> performance_error;  // one mean per checkpoint
};

inline MetricSeries batch_metrics(const ControllerBatch& batch,
                                  const std::vector<int>& checkpoints) {
  MetricSeries out;
  out.estimate_error.assign(checkpoints.size(), 0.0);
  out.performance_error.assign(checkpoints.size(), 0.0);
  for (const RunLog& run : batch.runs) {
    if (run.failed) {
      out.failed_runs.push_back(run.run);
      continue;
    }
    ++out.completed;
    for (std::size_t c = 0; c < checkpoints.size(); ++c) {
      const std::size_t t = static_cast<std::size_t>(checkpoints[c]);
      detail::require(t < run.steps.size(),
                      "batch_metrics: checkpoint beyond the logged horizon");
      out.estimate_error[c] += run.steps[t].estimate_error;
      out.performance_error[c] += run.steps[t].performance_error;
    }
  }
  if (out.completed > 0) {
    for (double& v : out.estimate_error) v /= out.completed;
    for (double& v : out.performance_error) v /= out.completed;
  }
  return out;
}

// Improvement of A over B: what fraction of B's error A removes.
inline double improvement(double err_a, double err_b) {
  return err_b != 0.0 ? (err_b - err_a) / err_b
                      : std::numeric_limits<double>::quiet_NaN();
}

// ---------------------------------------------------------------------------
// Exports. All text artifacts format doubles with %.17g so identical runs
// serialize identically and values round-trip through parsing.

namespace detail {

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void put_vector(std::ostream& os, const Eigen::VectorXd& v,
                       Eigen::Index expected) {
  for (Eigen::Index i = 0; i < expected; ++i) {
    os << ',' << (i < v.size() ? fmt(v[i]) : "nan");
  }
}

}  // namespace detail

inline void write_trajectory_csv(std::ostream& os,
                                 const ControllerBatch& batch,
                                 const ExperimentConfig& cfg) {
  const int n = cfg.state_dim, p = cfg.output_dim, r = cfg.input_dim;
  const std::size_t cands =
      batch.runs.empty() || batch.runs[0].steps.empty()
          ? 0
          : batch.runs[0].steps[0].candidates.size();
  os << "controller,run,k";
  for (int i = 1; i <= n; ++i) os << ",x" << i;
  for (int i = 1; i <= p; ++i) os << ",y" << i;
  for (int i = 1; i <= r; ++i) os << ",u" << i;
  for (int i = 1; i <= n; ++i) os << ",xhat" << i;
  os << ",estimate_error,performance_error";
  for (std::size_t c = 1; c <= cands; ++c) {
    os << ",c" << c << "_pi,c" << c << "_det,c" << c << "_beta,c" << c
       << "_rho,c" << c << "_like,c" << c << "_lmi,c" << c << "_frozen";
    for (int i = 1; i <= n; ++i) os << ",c" << c << "_xhat" << i;
  }
  os << '\n';
  for (const RunLog& run : batch.runs) {
    for (const StepLog& step : run.steps) {
      os << batch.controller << ',' << run.run << ',' << step.k;
      detail::put_vector(os, step.x, n);
      detail::put_vector(os, step.y, p);
      detail::put_vector(os, step.u, r);
      detail::put_vector(os, step.estimate, n);
      os << ',' << detail::fmt(step.estimate_error) << ','
         << detail::fmt(step.performance_error);
      for (const CandidateLog& cl : step.candidates) {
        os << ',' << detail::fmt(cl.weight) << ',' << detail::fmt(cl.det)
           << ',' << detail::fmt(cl.beta) << ',' << detail::fmt(cl.rho) << ','
           << detail::fmt(cl.likelihood) << ',' << detail::fmt(cl.lmi_min)
           << ',' << (cl.frozen ? 1 : 0);
        detail::put_vector(os, cl.center, n);
      }
      os << '\n';
    }
  }
}

inline void write_weights_csv(std::ostream& os, const ControllerBatch& batch) {
  os << "controller,run,k,candidate,weight\n";
  for (const RunLog& run : batch.runs) {
    for (const StepLog& step : run.steps) {
      for (std::size_t c = 0; c < step.candidates.size(); ++c) {
        os << batch.controller << ',' << run.run << ',' << step.k << ','
           << c + 1 << ',' << detail::fmt(step.candidates[c].weight) << '\n';
      }
    }
  }
}

inline void write_ellipsoids_csv(std::ostream& os,
                                 const ControllerBatch& batch,
                                 const ExperimentConfig& cfg) {
  const int n = cfg.state_dim;
  os << "controller,run,k,candidate,frozen";
  for (int i = 1; i <= n; ++i) os << ",c" << i;
  for (int i = 1; i <= n; ++i) {
    for (int j = 1; j <= n; ++j) os << ",P" << i << j;
  }
  os << '\n';
  for (const RunLog& run : batch.runs) {
    for (const StepLog& step : run.steps) {
      for (std::size_t c = 0; c < step.candidates.size(); ++c) {
        const CandidateLog& cl = step.candidates[c];
        os << batch.controller << ',' << run.run << ',' << step.k << ','
           << c + 1 << ',' << (cl.frozen ? 1 : 0);
        detail::put_vector(os, cl.center, n);
        for (int i = 0; i < n; ++i) {
          for (int j = 0; j < n; ++j) os << ',' << detail::fmt(cl.shape(i, j));
        }
        os << '\n';
      }
    }
  }
}

// Per-step min/max across completed runs for each state, observation, input,
// and (when tracking) combined-output component.
inline void write_envelopes_csv(std::ostream& os,
                                const ExperimentResult& result) {
  const ExperimentConfig& cfg = result.config;
  os << "controller,k,series,min,max\n";
  std::vector<std::string> series;
  for (int i = 1; i <= cfg.state_dim; ++i) series.push_back("x" + std::to_string(i));
  for (int i = 1; i <= cfg.output_dim; ++i) series.push_back("y" + std::to_string(i));
  for (int i = 1; i <= cfg.input_dim; ++i) series.push_back("u" + std::to_string(i));
  Eigen::MatrixXd combination;
  if (cfg.tracking) {
    combination = cfg.T(0);
    for (Eigen::Index i = 1; i <= combination.rows(); ++i) {
      series.push_back("z" + std::to_string(i));
    }
  }
  const auto component = [&](const StepLog& step,
                             std::size_t s) -> std::pair<bool, double> {
    int idx = static_cast<int>(s);
    if (idx < cfg.state_dim) return {true, step.x[idx]};
    idx -= cfg.state_dim;
    if (idx < cfg.output_dim) {
      if (step.y.size() == 0) return {false, 0.0};
      return {true, step.y[idx]};
    }
    idx -= cfg.output_dim;
    if (idx < cfg.input_dim) return {true, step.u[idx]};
    idx -= cfg.input_dim;
    return {true, (combination * step.x)[idx]};
  };
  for (const ControllerBatch& batch : result.batches) {
    for (int k = 0; k < cfg.steps; ++k) {
      for (std::size_t s = 0; s < series.size(); ++s) {
        double lo = std::numeric_limits<double>::infinity();
        double hi = -lo;
        for (const RunLog& run : batch.runs) {
          if (run.failed || static_cast<std::size_t>(k) >= run.steps.size()) {
            continue;
          }
          const auto [ok, v] = component(run.steps[k], s);
          if (!ok) continue;
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
        if (lo > hi) continue;  // nothing logged (e.g. y at k = 0)
        os << batch.controller << ',' << k << ',' << series[s] << ','
           << detail::fmt(lo) << ',' << detail::fmt(hi) << '\n';
      }
    }
  }
}

inline nlohmann::ordered_json summary_json(const ExperimentResult& result) {
  const ExperimentConfig& cfg = result.config;
  nlohmann::ordered_json j;
  j["name"] = cfg.name;
  j["metric"] = cfg.tracking ? "tracking" : "control";
  j["steps"] = cfg.steps;
  j["runs"] = cfg.runs;
  j["seed"] = cfg.seed;
  j["checkpoints"] = cfg.checkpoints;

  nlohmann::ordered_json per;
  std::vector<std::pair<std::string, MetricSeries>> series;
  for (const ControllerBatch& batch : result.batches) {
    MetricSeries m = batch_metrics(batch, cfg.checkpoints);
    nlohmann::ordered_json entry;
    entry["completed_runs"] = m.completed;
    entry["failed_runs"] = m.failed_runs;
    entry["estimate_error"] = m.estimate_error;
    entry["performance_error"] = m.performance_error;
    per[batch.controller] = std::move(entry);
    series.emplace_back(batch.controller, std::move(m));
  }
  j["results"] = std::move(per);

  const auto find = [&](const std::string& name) -> const MetricSeries* {
    for (const auto& [n, m] : series) {
      if (n == name) return &m;
    }
    return nullptr;
  };
  const MetricSeries* arc = find("arc");
  const MetricSeries* orc = find("orc");
  const MetricSeries* rc = find("rc");
  nlohmann::ordered_json improvements;
  const auto ratio_series = [&](const MetricSeries& a, const MetricSeries& b,
                                bool estimate) {
    nlohmann::ordered_json values = nlohmann::ordered_json::array();
    for (std::size_t c = 0; c < cfg.checkpoints.size(); ++c) {
      const double ea = estimate ? a.estimate_error[c] : a.performance_error[c];
      const double eb = estimate ? b.estimate_error[c] : b.performance_error[c];
      values.push_back(improvement(ea, eb));
    }
    return values;
  };
  if (arc && rc) {
    improvements["performance_arc_over_rc"] = ratio_series(*arc, *rc, false);
  }
  if (orc && arc) {
    improvements["performance_orc_over_arc"] = ratio_series(*orc, *arc, false);
    improvements["estimate_orc_over_arc"] = ratio_series(*orc, *arc, true);
  }
  j["improvements"] = std::move(improvements);
  j["config"] = cfg.echo;
  return j;
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  detail::require(static_cast<bool>(out), "export: cannot open " + path);
  out << content;
  detail::require(static_cast<bool>(out), "export: write failed on " + path);
}

// Writes trajectory/weights/ellipsoids per controller plus the shared
// envelope and summary files; returns the summary path.
inline std::string export_result(const ExperimentResult& result,
                                 const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  detail::require(!ec, "export: cannot create directory " + out_dir);

  for (const ControllerBatch& batch : result.batches) {
    std::ostringstream trajectory, weights, ellipsoids;
    write_trajectory_csv(trajectory, batch, result.config);
    write_weights_csv(weights, batch);
    write_ellipsoids_csv(ellipsoids, batch, result.config);
    const std::string base = out_dir + "/";
    write_file(base + "trajectory_" + batch.controller + ".csv",
               trajectory.str());
    write_file(base + "weights_" + batch.controller + ".csv", weights.str());
    write_file(base + "ellipsoids_" + batch.controller + ".csv",
               ellipsoids.str());
  }
  std::ostringstream envelopes;
  write_envelopes_csv(envelopes, result);
  write_file(out_dir + "/envelopes.csv", envelopes.str());
  const std::string summary_path = out_dir + "/summary.json";
  write_file(summary_path, summary_json(result).dump(2) + "\n");
  return summary_path;
}

// Renders one summary document as the text table the report command prints.
inline std::string format_report(const nlohmann::json& summary) {
  std::ostringstream os;
  const std::string metric = summary.value("metric", std::string("control"));
  os << "experiment: " << summary.value("name", std::string("?")) << "  ("
     << metric << " error, " << summary.value("runs", 0) << " runs)\n";
  const std::vector<int> checkpoints =
      summary.value("checkpoints", std::vector<int>());
  const auto row = [&](const std::string& label, const nlohmann::json& values,
                       double scale) {
    os << "  " << label;
    for (std::size_t i = label.size(); i < 34; ++i) os << ' ';
    for (const auto& v : values) {
      char buf[32];
      if (v.is_number()) {
        std::snprintf(buf, sizeof buf, "%10.4g", v.get<double>() * scale);
      } else {
        std::snprintf(buf, sizeof buf, "%10s", "-");
      }
      os << buf;
    }
    os << '\n';
  };
  {
    os << "  T";
    for (std::size_t i = 1; i < 34; ++i) os << ' ';
    for (int t : checkpoints) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%10d", t);
      os << buf;
    }
    os << '\n';
  }
  if (summary.contains("results")) {
    for (const auto& [controller, entry] : summary.at("results").items()) {
      row(controller + " estimate error", entry.at("estimate_error"), 1.0);
      row(controller + " " + metric + " error",
          entry.at("performance_error"), 1.0);
      const auto failed = entry.at("failed_runs");
      if (!failed.empty()) {
        os << "  " << controller << " failed runs:";
        for (const auto& f : failed) os << ' ' << f.get<int>();
        os << '\n';
      }
    }
  }
  if (summary.contains("improvements")) {
    for (const auto& [name, values] : summary.at("improvements").items()) {
      row(name + " %", values, 100.0);
    }
  }
  return os.str();
}

}  // namespace ellset
