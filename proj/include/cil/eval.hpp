#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "cil/data.hpp"
#include "cil/layout.hpp"
#include "cil/model.hpp"

namespace cil {

/// Metrics and diagnostics for one checkpoint: top-k accuracies over all
/// classes seen so far, the task-level confusion matrix (rows = true task,
/// cols = predicted task, raw counts) and, from t = 2 on, the distribution
/// of the previous model's predictions on the incoming task's data.
struct EvalReport {
  std::size_t after_task = 0;
  std::size_t classes_seen = 0;
  std::vector<std::pair<int, double>> topk;                // (k, accuracy), ascending k
  std::vector<std::vector<std::size_t>> task_confusion;    // t x t counts
  std::vector<double> new_data_task_ratio;                 // length t-1; empty at t = 1

  double accuracy_at(int k) const;
};

/// Fraction of samples whose true label ranks within the k best logits, ties
/// resolved toward the lower class index (matching predict()).
double topk_accuracy(const IncrementalClassifier& model, const LabeledDataset& test_set,
                     std::size_t k);

/// Mean of the after-each-task accuracies.
double average_incremental_accuracy(const std::vector<double>& per_task);

std::vector<std::vector<std::size_t>> task_confusion(const IncrementalClassifier& model,
                                                     const LabeledDataset& test_set,
                                                     const TaskLayout& layout, std::size_t t);

/// Predicts the incoming task's data with the previous model (over old
/// classes only) and returns the normalized histogram of predicted tasks —
/// the diagnostic showing where the old model's scores lean.
std::vector<double> new_data_task_ratio(const ModelSnapshot& old_model,
                                        const LabeledDataset& new_task_data,
                                        const TaskLayout& layout, std::size_t t);

std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);

} // namespace cil
