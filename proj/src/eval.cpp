#include "cil/eval.hpp"

#include <stdexcept>
#include <string>

#include <json.hpp>

#include "cil/errors.hpp"

namespace cil {

double EvalReport::accuracy_at(int k) const {
  for (const auto& [kk, acc] : topk)
    if (kk == k) return acc;
  throw std::invalid_argument("EvalReport: no top-" + std::to_string(k) + " entry");
}

double topk_accuracy(const IncrementalClassifier& model, const LabeledDataset& test_set,
                     std::size_t k) {
  if (k < 1 || k > model.num_classes())
    throw std::invalid_argument("topk_accuracy: k must be in [1, C_t]");
  if (test_set.size() == 0) throw std::invalid_argument("topk_accuracy: empty test set");

  const Matrix logits = model.forward(test_set.inputs);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < test_set.size(); ++i) {
    const auto row = logits.row(i);
    const std::size_t y = static_cast<std::size_t>(test_set.labels[i]);
    if (y >= row.size())
      throw std::invalid_argument("topk_accuracy: label outside the classes seen so far");
    // rank of the true class under the tie-break-low ordering
    std::size_t rank = 0;
    for (std::size_t c = 0; c < row.size(); ++c)
      if (row[c] > row[y] || (row[c] == row[y] && c < y)) ++rank;
    if (rank < k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(test_set.size());
}

double average_incremental_accuracy(const std::vector<double>& per_task) {
  if (per_task.empty())
    throw std::invalid_argument("average_incremental_accuracy: need at least one report");
  double sum = 0.0;
  for (double a : per_task) sum += a;
  return sum / static_cast<double>(per_task.size());
}

std::vector<std::vector<std::size_t>> task_confusion(const IncrementalClassifier& model,
                                                     const LabeledDataset& test_set,
                                                     const TaskLayout& layout, std::size_t t) {
  const std::size_t classes_seen = layout.classes_through(t);
  std::vector<std::vector<std::size_t>> counts(t, std::vector<std::size_t>(t, 0));
  for (std::size_t i = 0; i < test_set.size(); ++i) {
    const std::size_t y = static_cast<std::size_t>(test_set.labels[i]);
    if (y >= classes_seen)
      throw std::invalid_argument("task_confusion: label outside the classes seen through task " +
                                  std::to_string(t));
    const Prediction pred = model.predict(test_set.inputs.row(i));
    counts[layout.task_of(y)][pred.task_index]++;
  }
  return counts;
}

std::vector<double> new_data_task_ratio(const ModelSnapshot& old_model,
                                        const LabeledDataset& new_task_data,
                                        const TaskLayout& layout, std::size_t t) {
  if (t < 2) throw std::invalid_argument("new_data_task_ratio: needs at least one old task");
  if (old_model.model().num_tasks() != t - 1)
    throw std::invalid_argument("new_data_task_ratio: snapshot must hold exactly t-1 head blocks");
  if (new_task_data.size() == 0)
    throw std::invalid_argument("new_data_task_ratio: empty task data");

  std::vector<double> ratio(t - 1, 0.0);
  for (std::size_t i = 0; i < new_task_data.size(); ++i) {
    const Prediction pred = old_model.model().predict(new_task_data.inputs.row(i));
    ratio[layout.task_of(pred.class_index)] += 1.0;
  }
  for (double& r : ratio) r /= static_cast<double>(new_task_data.size());
  return ratio;
}

std::string report_to_json(const EvalReport& report) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["after_task"] = report.after_task;
  j["classes_seen"] = report.classes_seen;
  nlohmann::json topk = nlohmann::json::object();
  for (const auto& [k, acc] : report.topk) topk[std::to_string(k)] = acc;
  j["topk"] = topk;
  j["task_confusion"] = report.task_confusion;
  if (report.new_data_task_ratio.empty())
    j["new_data_task_ratio"] = nullptr;
  else
    j["new_data_task_ratio"] = report.new_data_task_ratio;
  return j.dump(2) + "\n";
}

EvalReport report_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IngestError(std::string("report_from_json: ") + e.what());
  }
  if (!j.contains("schema_version") || j["schema_version"].get<int>() != 1)
    throw IngestError("report_from_json: unsupported schema version");

  EvalReport report;
  report.after_task = j.at("after_task").get<std::size_t>();
  report.classes_seen = j.at("classes_seen").get<std::size_t>();
  for (const auto& [key, value] : j.at("topk").items())
    report.topk.emplace_back(std::stoi(key), value.get<double>());
  std::sort(report.topk.begin(), report.topk.end());
  report.task_confusion = j.at("task_confusion").get<std::vector<std::vector<std::size_t>>>();
  if (!j.at("new_data_task_ratio").is_null())
    report.new_data_task_ratio = j.at("new_data_task_ratio").get<std::vector<double>>();
  return report;
}

} // namespace cil
