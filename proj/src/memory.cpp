#include "cil/memory.hpp"

#include <stdexcept>
#include <string>

#include "cil/errors.hpp"

namespace cil {

ExemplarMemory::ExemplarMemory(std::size_t capacity) : capacity_(capacity) {
  if (capacity < 1) throw std::invalid_argument("ExemplarMemory: capacity must be >= 1");
}

void ExemplarMemory::update(const LabeledDataset& task_data, const TaskLayout& layout,
                            std::size_t t) {
  const ClassRange task_range = layout.task_classes(t);
  const std::size_t classes_seen = layout.classes_through(t);
  const std::size_t quota = capacity_ / classes_seen;
  if (quota == 0)
    throw CapacityError("ExemplarMemory: capacity " + std::to_string(capacity_) +
                        " cannot hold one exemplar per class once " +
                        std::to_string(classes_seen) + " classes are seen");

  for (std::size_t r = 0; r < task_data.size(); ++r) {
    const int label = task_data.labels[r];
    if (label < 0 || !task_range.contains(static_cast<std::size_t>(label)))
      throw std::invalid_argument("ExemplarMemory::update: label " + std::to_string(label) +
                                  " is not a task-" + std::to_string(t) + " class");
  }

  // shrink old buckets, keeping the earliest-inserted samples
  for (auto& [label, bucket] : per_class_) {
    (void)label;
    if (bucket.size() > quota) bucket.resize(quota);
  }

  // (re)fill the task's classes from the stream
  for (std::size_t c = task_range.begin; c < task_range.end; ++c)
    per_class_[static_cast<int>(c)].clear();
  for (std::size_t r = 0; r < task_data.size(); ++r) {
    auto& bucket = per_class_[task_data.labels[r]];
    if (bucket.size() >= quota) continue;
    const auto row = task_data.inputs.row(r);
    bucket.push_back({{row.begin(), row.end()}, task_data.labels[r]});
  }
}

std::pair<Matrix, std::vector<int>> ExemplarMemory::sample_replay(std::size_t n, Rng& rng) const {
  if (n < 1) throw std::invalid_argument("sample_replay: n must be >= 1");
  const std::size_t total = total_size();
  if (total == 0) throw std::logic_error("sample_replay: memory is empty");

  // flat view in deterministic order: class ascending, insertion order within
  std::vector<const StoredSample*> flat;
  flat.reserve(total);
  for (const auto& [label, bucket] : per_class_) {
    (void)label;
    for (const auto& s : bucket) flat.push_back(&s);
  }

  const std::size_t dim = flat.front()->input.size();
  Matrix inputs(n, dim);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const StoredSample& s = *flat[rng.uniform_int(total)];
    auto dst = inputs.row(i);
    std::copy(s.input.begin(), s.input.end(), dst.begin());
    labels[i] = s.label;
  }
  return {std::move(inputs), std::move(labels)};
}

std::size_t ExemplarMemory::total_size() const {
  std::size_t n = 0;
  for (const auto& [label, bucket] : per_class_) {
    (void)label;
    n += bucket.size();
  }
  return n;
}

std::size_t ExemplarMemory::class_count(int label) const {
  const auto it = per_class_.find(label);
  return it == per_class_.end() ? 0 : it->second.size();
}

std::vector<int> ExemplarMemory::stored_classes() const {
  std::vector<int> out;
  for (const auto& [label, bucket] : per_class_)
    if (!bucket.empty()) out.push_back(label);
  return out;
}

void ExemplarMemory::restore_bucket(int label, std::vector<StoredSample> bucket) {
  for (const auto& s : bucket)
    if (s.label != label)
      throw std::invalid_argument("restore_bucket: sample label does not match its bucket");
  per_class_[label] = std::move(bucket);
}

LabeledDataset ExemplarMemory::as_dataset(int num_classes) const {
  const std::size_t total = total_size();
  if (total == 0) throw std::logic_error("ExemplarMemory::as_dataset: memory is empty");
  std::size_t dim = 0;
  for (const auto& [label, bucket] : per_class_) {
    (void)label;
    if (!bucket.empty()) {
      dim = bucket.front().input.size();
      break;
    }
  }
  LabeledDataset set;
  set.inputs = Matrix(total, dim);
  set.labels.reserve(total);
  set.num_classes = num_classes;
  std::size_t row = 0;
  for (const auto& [label, bucket] : per_class_) {
    (void)label;
    for (const auto& s : bucket) {
      auto dst = set.inputs.row(row++);
      std::copy(s.input.begin(), s.input.end(), dst.begin());
      set.labels.push_back(s.label);
    }
  }
  return set;
}

} // namespace cil
