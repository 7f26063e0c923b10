#include "ellset/harness.hpp"

#include <cmath>
#include <cstdlib>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "ellset/filter.hpp"

namespace ellset {
namespace {

std::vector<std::string> split(const std::string& line, char sep = ',') {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, sep)) out.push_back(field);
  return out;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::string line;
  std::istringstream in(text);
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

// A fast preset: the two-state benchmark shrunk to a handful of steps/runs.
ExperimentConfig small_config(int steps, int runs,
                              std::vector<std::string> controllers) {
  nlohmann::json j = nlohmann::json::parse(example1_text());
  j["simulation"]["steps"] = steps;
  j["simulation"]["runs"] = runs;
  j["simulation"]["controllers"] = controllers;
  j["simulation"]["checkpoints"] = {steps - 1};
  return parse_config(j);
}

TEST(SimulatePlantStep, ZeroNoiseIsExactPropagation) {
  UncertainSystem sys = make_system(example_config(1));
  sys.Pw = [](int) { return Eigen::MatrixXd(Eigen::MatrixXd::Zero(2, 2)); };
  sys.Pv = [](int) { return Eigen::MatrixXd(Eigen::MatrixXd::Zero(1, 1)); };
  const Eigen::VectorXd theta = example_config(1).true_theta();
  const Eigen::Vector2d x(1.0, -2.0);
  Eigen::VectorXd u(1);
  u << 0.5;
  Rng rng(1);
  const PlantStep out = simulate_plant_step(sys, theta, x, u, 3, rng);
  const Eigen::VectorXd want_x = sys.A(3, theta) * x + sys.B(3, theta) * u;
  EXPECT_TRUE(out.x.isApprox(want_x, 0.0));
  EXPECT_TRUE(out.y.isApprox(sys.C(4, theta) * out.x, 0.0));
}

TEST(SimulatePlantStep, NoisesStayInsideTheirEllipsoids) {
  const ExperimentConfig cfg = example_config(1);
  const UncertainSystem sys = make_system(cfg);
  const Eigen::VectorXd theta = cfg.true_theta();
  Rng rng(99);
  Eigen::VectorXd u(1);
  u << -1.0;
  for (int k = 1; k < 40; ++k) {
    const Eigen::Vector2d x(0.3 * k, -0.1 * k);
    const PlantStep out = simulate_plant_step(sys, theta, x, u, k, rng);
    const Eigen::VectorXd w =
        out.x - sys.A(k, theta) * x - sys.B(k, theta) * u;
    const Eigen::VectorXd v = out.y - sys.C(k + 1, theta) * out.x;
    const Ellipsoid wset(Eigen::VectorXd::Zero(2), sys.Pw(k));
    const Ellipsoid vset(Eigen::VectorXd::Zero(1), sys.Pv(k + 1));
    EXPECT_TRUE(wset.contains(w, 1e-9));
    EXPECT_TRUE(vset.contains(v, 1e-9));
  }
}

TEST(SimulatePlantStep, BoundaryModeDrawsOnTheShell) {
  const ExperimentConfig cfg = example_config(1);
  const UncertainSystem sys = make_system(cfg);
  const Eigen::VectorXd theta = cfg.true_theta();
  Rng rng(7);
  Eigen::VectorXd u(1);
  u << 0.0;
  const Eigen::Vector2d x(1.0, 1.0);
  const int k = 5;
  const PlantStep out =
      simulate_plant_step(sys, theta, x, u, k, rng, SampleMode::kBoundary);
  const Eigen::VectorXd w = out.x - sys.A(k, theta) * x - sys.B(k, theta) * u;
  const Ellipsoid wset(Eigen::VectorXd::Zero(2), sys.Pw(k));
  EXPECT_NEAR(wset.quadratic_form(w), 1.0, 1e-9);
}

TEST(SimulatePlantStep, ReachableCloudStaysInThePredictedSet) {
  const ExperimentConfig cfg = example_config(1);
  const UncertainSystem sys = make_system(cfg);
  const Eigen::VectorXd theta = cfg.true_theta();
  const FilterState start{0, cfg.initial_set()};
  Eigen::VectorXd u(1);
  u << 0.8;
  const Prediction pred = time_update(start, sys, theta, u);
  Rng rng(2311);
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::VectorXd x0 = sample(cfg.initial_set(), 1, rng).col(0);
    const PlantStep out = simulate_plant_step(sys, theta, x0, u, 0, rng);
    EXPECT_TRUE(pred.set.contains(out.x, 1e-6));
  }
}

TEST(RunOnce, DeterministicRepeats) {
  const ExperimentConfig cfg = small_config(5, 1, {"arc"});
  const UncertainSystem sys = make_system(cfg);
  const CostSpec cost = make_cost(cfg);
  const RunLog a = run_once(cfg, sys, cost, "arc", 0);
  const RunLog b = run_once(cfg, sys, cost, "arc", 0);
  ASSERT_FALSE(a.failed);
  ASSERT_EQ(a.steps.size(), b.steps.size());
  for (std::size_t k = 0; k < a.steps.size(); ++k) {
    EXPECT_TRUE(a.steps[k].x.isApprox(b.steps[k].x, 0.0));
    EXPECT_TRUE(a.steps[k].u.isApprox(b.steps[k].u, 0.0));
    EXPECT_EQ(a.steps[k].estimate_error, b.steps[k].estimate_error);
  }
}

TEST(RunOnce, ControllersShareTheNoiseStream) {
  const ExperimentConfig cfg = small_config(5, 1, {"orc", "rc"});
  const UncertainSystem sys = make_system(cfg);
  const CostSpec cost = make_cost(cfg);
  const Eigen::VectorXd theta = cfg.true_theta();
  const RunLog orc = run_once(cfg, sys, cost, "orc", 0);
  const RunLog rc = run_once(cfg, sys, cost, "rc", 0);
  ASSERT_FALSE(orc.failed);
  ASSERT_FALSE(rc.failed);

  // Identical initial state, bitwise.
  EXPECT_TRUE(orc.steps[0].x.isApprox(rc.steps[0].x, 0.0));

  // The same process noise hits both closed loops even though the inputs
  // differ; recover w(k) = x(k+1) - A x(k) - B u(k) from each log.
  for (std::size_t k = 0; k + 1 < orc.steps.size(); ++k) {
    const int ik = static_cast<int>(k);
    const Eigen::VectorXd w_orc =
        orc.steps[k + 1].x - sys.A(ik, theta) * orc.steps[k].x -
        sys.B(ik, theta) * orc.steps[k].u;
    const Eigen::VectorXd w_rc =
        rc.steps[k + 1].x - sys.A(ik, theta) * rc.steps[k].x -
        sys.B(ik, theta) * rc.steps[k].u;
    EXPECT_LT((w_orc - w_rc).norm(), 1e-12);
  }
}

TEST(RunOnce, CumulativeMetricsMatchRecomputation) {
  const ExperimentConfig cfg = small_config(6, 1, {"arc"});
  const UncertainSystem sys = make_system(cfg);
  const CostSpec cost = make_cost(cfg);
  const RunLog log = run_once(cfg, sys, cost, "arc", 3);
  ASSERT_FALSE(log.failed);
  double est = 0.0, perf = 0.0;
  for (const StepLog& step : log.steps) {
    if (step.k >= 1) {
      est += (step.x - step.estimate).squaredNorm();
      perf += step.x.squaredNorm();
    }
    EXPECT_DOUBLE_EQ(step.estimate_error, est);
    EXPECT_DOUBLE_EQ(step.performance_error, perf);
  }
  EXPECT_GT(perf, 0.0);
}

TEST(RunOnce, TrackingMetricUsesTheReference) {
  nlohmann::json j = nlohmann::json::parse(example2_text());
  j["simulation"]["steps"] = 5;
  j["simulation"]["runs"] = 1;
  j["simulation"]["controllers"] = {"orc"};
  j["simulation"]["checkpoints"] = {4};
  const ExperimentConfig cfg = parse_config(j);
  const UncertainSystem sys = make_system(cfg);
  const CostSpec cost = make_cost(cfg);
  const RunLog log = run_once(cfg, sys, cost, "orc", 0);
  ASSERT_FALSE(log.failed);
  double perf = 0.0;
  for (const StepLog& step : log.steps) {
    if (step.k >= 1) {
      perf += (cost.combination * step.x - cost.reference(step.k))
                  .squaredNorm();
    }
    EXPECT_DOUBLE_EQ(step.performance_error, perf);
  }
}

TEST(RunOnce, ZeroNoiseKnownParameterTracksExactly) {
  // Point initial set and zero noises: the filter center is the true state
  // from the start, so the estimate error stays exactly zero.
  const std::string text = R"json({
    "name": "degenerate",
    "system": {
      "A": [["0.9", "0.1"], ["0", "0.8"]],
      "B": [["1"], ["0.5"]],
      "C": [["1", "0"]],
      "Pw": [[0, 0], [0, 0]],
      "Pv": [[0]]
    },
    "initial_set": {"center": [2, -1], "shape": [[0, 0], [0, 0]]},
    "candidates": {"thetas": [[0]], "true_index": 0},
    "cost": {"type": "regulation", "Q": [[1, 0], [0, 1]], "R": [[1]],
             "prediction_horizon": 2},
    "simulation": {"steps": 5, "runs": 1, "seed": 9,
                   "controllers": ["orc"], "checkpoints": [4]}
  })json";
  const ExperimentConfig cfg = parse_config_text(text, "inline");
  const UncertainSystem sys = make_system(cfg);
  const CostSpec cost = make_cost(cfg);
  const RunLog log = run_once(cfg, sys, cost, "orc", 0);
  ASSERT_FALSE(log.failed) << log.error;
  for (const StepLog& step : log.steps) {
    EXPECT_TRUE(step.estimate.isApprox(step.x, 0.0)) << "k=" << step.k;
    EXPECT_EQ(step.estimate_error, 0.0);
  }
}

TEST(RunExperiment, ThreadCountDoesNotChangeResults) {
  const ExperimentConfig cfg = small_config(4, 3, {"arc", "rc"});
  const ExperimentResult serial = run_experiment(cfg, 1);
  const ExperimentResult parallel = run_experiment(cfg, 3);
  ASSERT_EQ(serial.batches.size(), parallel.batches.size());
  for (std::size_t b = 0; b < serial.batches.size(); ++b) {
    std::ostringstream a, c;
    write_trajectory_csv(a, serial.batches[b], cfg);
    write_trajectory_csv(c, parallel.batches[b], cfg);
    EXPECT_EQ(a.str(), c.str());
  }
  EXPECT_EQ(summary_json(serial).dump(), summary_json(parallel).dump());
}

TEST(Metrics, MeansAndFailuresAcrossRuns) {
  const ExperimentConfig cfg = small_config(4, 2, {"orc"});
  ControllerBatch batch = run_experiment(cfg, 1).batches[0];
  ASSERT_EQ(batch.runs.size(), 2u);
  ASSERT_FALSE(batch.runs[0].failed);

  MetricSeries m = batch_metrics(batch, cfg.checkpoints);
  EXPECT_EQ(m.completed, 2);
  EXPECT_TRUE(m.failed_runs.empty());
  const double want = 0.5 * (batch.runs[0].steps[3].performance_error +
                             batch.runs[1].steps[3].performance_error);
  EXPECT_DOUBLE_EQ(m.performance_error[0], want);

  // A failed run is excluded from means and called out by index.
  batch.runs[1].failed = true;
  batch.runs[1].error = "synthetic";
  m = batch_metrics(batch, cfg.checkpoints);
  EXPECT_EQ(m.completed, 1);
  ASSERT_EQ(m.failed_runs.size(), 1u);
  EXPECT_EQ(m.failed_runs[0], 1);
  EXPECT_DOUBLE_EQ(m.performance_error[0],
                   batch.runs[0].steps[3].performance_error);
}

TEST(Metrics, ImprovementRatio) {
  EXPECT_DOUBLE_EQ(improvement(1.0, 2.0), 0.5);
  EXPECT_DOUBLE_EQ(improvement(2.0, 1.0), -1.0);
  EXPECT_DOUBLE_EQ(improvement(3.0, 3.0), 0.0);
  EXPECT_TRUE(std::isnan(improvement(1.0, 0.0)));
}

TEST(Export, TrajectoryColumnsAndRows) {
  const ExperimentConfig cfg = small_config(3, 2, {"arc"});
  const ExperimentResult result = run_experiment(cfg, 1);
  std::ostringstream os;
  write_trajectory_csv(os, result.batches[0], cfg);
  const std::vector<std::string> lines = lines_of(os.str());
  // Header plus runs x steps records.
  ASSERT_EQ(lines.size(), 1u + 2u * 3u);
  const std::size_t expected_columns =
      3 + 2 + 1 + 1 + 2 + 2 + 3 * (7 + 2);  // ids,x,y,u,xhat,errors,cands
  for (const std::string& line : lines) {
    EXPECT_EQ(split(line).size(), expected_columns) << line;
  }
  // y is not observed at k = 0.
  const std::vector<std::string> first = split(lines[1]);
  EXPECT_EQ(first[0], "arc");
  EXPECT_EQ(first[2], "0");
  EXPECT_EQ(first[5], "nan");
}

TEST(Export, WeightAndEllipsoidShapes) {
  const ExperimentConfig cfg = small_config(3, 1, {"arc"});
  const ExperimentResult result = run_experiment(cfg, 1);
  std::ostringstream weights, ellipsoids;
  write_weights_csv(weights, result.batches[0]);
  write_ellipsoids_csv(ellipsoids, result.batches[0], cfg);

  const std::vector<std::string> wlines = lines_of(weights.str());
  ASSERT_EQ(wlines.size(), 1u + 3u * 3u);  // header + steps x candidates
  EXPECT_EQ(split(wlines[0]).size(), 5u);

  const std::vector<std::string> elines = lines_of(ellipsoids.str());
  ASSERT_EQ(elines.size(), 1u + 3u * 3u);
  for (const std::string& line : elines) {
    EXPECT_EQ(split(line).size(), 5u + 2u + 4u);  // ids,frozen,center,shape
  }
  // k = 0 rows carry the configured initial set.
  const std::vector<std::string> row = split(elines[1]);
  EXPECT_DOUBLE_EQ(std::strtod(row[5].c_str(), nullptr), 5.0);
  EXPECT_DOUBLE_EQ(std::strtod(row[7].c_str(), nullptr), 10.0);
  EXPECT_DOUBLE_EQ(std::strtod(row[8].c_str(), nullptr), 8.0);
}

TEST(Export, ValuesRoundTripThroughText) {
  const ExperimentConfig cfg = small_config(3, 1, {"orc"});
  const ExperimentResult result = run_experiment(cfg, 1);
  std::ostringstream os;
  write_trajectory_csv(os, result.batches[0], cfg);
  const std::vector<std::string> lines = lines_of(os.str());
  const RunLog& run = result.batches[0].runs[0];
  for (std::size_t k = 0; k < run.steps.size(); ++k) {
    const std::vector<std::string> row = split(lines[1 + k]);
    EXPECT_EQ(std::strtod(row[3].c_str(), nullptr), run.steps[k].x[0]);
    EXPECT_EQ(std::strtod(row[4].c_str(), nullptr), run.steps[k].x[1]);
    EXPECT_EQ(std::strtod(row[6].c_str(), nullptr), run.steps[k].u[0]);
    EXPECT_EQ(std::strtod(row[9].c_str(), nullptr),
              run.steps[k].estimate_error);
  }
}

TEST(Export, EnvelopesBracketEveryRun) {
  const ExperimentConfig cfg = small_config(4, 3, {"rc"});
  const ExperimentResult result = run_experiment(cfg, 1);
  std::ostringstream os;
  write_envelopes_csv(os, result);
  const std::vector<std::string> lines = lines_of(os.str());
  ASSERT_GT(lines.size(), 1u);
  int x1_rows = 0;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::vector<std::string> row = split(lines[i]);
    ASSERT_EQ(row.size(), 5u);
    const double lo = std::strtod(row[3].c_str(), nullptr);
    const double hi = std::strtod(row[4].c_str(), nullptr);
    EXPECT_LE(lo, hi);
    if (row[2] == "x1") {
      ++x1_rows;
      const int k = std::atoi(row[1].c_str());
      for (const RunLog& run : result.batches[0].runs) {
        const double v = run.steps[static_cast<std::size_t>(k)].x[0];
        EXPECT_GE(v, lo);
        EXPECT_LE(v, hi);
      }
    }
  }
  EXPECT_EQ(x1_rows, 4);
}

TEST(Export, SummaryStructureAndReport) {
  const ExperimentConfig cfg = small_config(4, 2, {"arc", "orc", "rc"});
  const ExperimentResult result = run_experiment(cfg, 2);
  const nlohmann::ordered_json summary = summary_json(result);

  EXPECT_EQ(summary.at("name"), "example1");
  EXPECT_EQ(summary.at("metric"), "control");
  ASSERT_TRUE(summary.at("results").contains("arc"));
  ASSERT_TRUE(summary.at("results").contains("rc"));
  EXPECT_EQ(summary.at("results").at("arc").at("completed_runs"), 2);
  ASSERT_TRUE(summary.at("improvements").contains("performance_arc_over_rc"));
  ASSERT_TRUE(summary.at("improvements").contains("performance_orc_over_arc"));
  EXPECT_EQ(summary.at("config"), cfg.echo);

  const std::string report = format_report(summary);
  EXPECT_NE(report.find("experiment: example1"), std::string::npos);
  EXPECT_NE(report.find("arc estimate error"), std::string::npos);
  EXPECT_NE(report.find("performance_arc_over_rc %"), std::string::npos);
}

TEST(Export, FilesAreByteIdenticalAcrossReruns) {
  const ExperimentConfig cfg = small_config(3, 2, {"arc"});
  const std::string dir_a = ::testing::TempDir() + "/ellset_export_a";
  const std::string dir_b = ::testing::TempDir() + "/ellset_export_b";
  export_result(run_experiment(cfg, 2), dir_a);
  export_result(run_experiment(cfg, 1), dir_b);
  for (const char* name :
       {"trajectory_arc.csv", "weights_arc.csv", "ellipsoids_arc.csv",
        "envelopes.csv", "summary.json"}) {
    std::ifstream a(dir_a + "/" + name), b(dir_b + "/" + name);
    ASSERT_TRUE(a.good() && b.good()) << name;
    std::stringstream sa, sb;
    sa << a.rdbuf();
    sb << b.rdbuf();
    EXPECT_EQ(sa.str(), sb.str()) << name;
    EXPECT_FALSE(sa.str().empty()) << name;
  }
  std::filesystem::remove_all(dir_a);
  std::filesystem::remove_all(dir_b);
}

}  // namespace
}  // namespace ellset
