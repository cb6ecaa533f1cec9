#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cil/trainer.hpp"

namespace cil {

/// A full experiment: dataset recipe, curriculum, model shape, the methods
/// and seeds to sweep, and the training settings shared by every run.
struct ExperimentConfig {
  // dataset
  std::string dataset = "synthetic"; // synthetic | csv
  std::size_t classes = 10;
  std::size_t dim = 16;
  std::size_t per_class = 200;
  double spread = 1.0;
  double separation = 4.0;
  std::uint64_t data_seed = 42;
  std::string csv_train;
  std::string csv_test;
  bool csv_header = false;

  // curriculum
  std::size_t tasks = 5;
  std::size_t classes_per_task = 2;
  std::uint64_t order_seed = 1;
  std::size_t memory_capacity = 50;

  // model
  std::vector<std::size_t> hidden_dims{64, 32};

  // sweep
  std::vector<MethodSpec> methods{MethodSpec{Method::SSIL}};
  std::vector<std::uint64_t> seeds{1};

  TrainConfig train; // method and seed are overridden per run
  std::vector<int> eval_ks{1, 2};
  std::string out_dir = "runs";

  void validate() const; // throws ConfigError
};

/// Parses the key = value experiment grammar (one pair per line, '#'
/// comments, comma-separated lists). Unknown keys are errors. The exact key
/// set is documented in the README.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig parse_config_file(const std::string& path);

/// Builds the per-task train/test splits an experiment config describes.
std::vector<TaskData> build_task_data(const ExperimentConfig& config, const TaskLayout& layout);

/// Runs every (method, seed) pair and writes reports, metrics, confusion
/// matrices, the per-epoch training log and the final checkpoint under
/// out_dir/<method>/<seed>/. Throws on invalid configs (exit code 2 at the
/// CLI) and propagates NumericError (exit code 3).
void run_experiment(const ExperimentConfig& config);

/// Side-by-side comparison of completed run directories: average top-k per
/// run as CSV plus a JSON summary of the confusion-balance statistic (the
/// fraction of old-task test samples predicted into the latest task).
/// Writes compare.csv / compare.json into out_dir, or stdout when empty.
void compare_runs(const std::vector<std::string>& run_dirs, const std::string& out_dir);

/// Re-renders metrics.csv and the confusion CSVs of one run directory from
/// its JSON reports.
void rerender_run(const std::string& run_dir);

/// The finite-difference audit of every loss gradient and the model
/// backward pass. `inject_fault` perturbs the named loss's analytic
/// gradient, for exercising the failure path.
struct GradCheckResult {
  struct Entry {
    std::string name;
    double max_rel_err = 0.0;
    std::uint64_t worst_seed = 0;
  };
  std::vector<Entry> entries;
  double tolerance = 1e-5;

  bool ok() const {
    for (const auto& e : entries)
      if (!(e.max_rel_err < tolerance)) return false;
    return true;
  }
};

GradCheckResult run_gradcheck(std::size_t instances_per_loss = 1000,
                              const std::string& inject_fault = "");

} // namespace cil
