#pragma once

#include <cstddef>
#include <map>
#include <vector>

#include "cil/data.hpp"
#include "cil/layout.hpp"
#include "cil/rng.hpp"

namespace cil {

/// Exemplar memory: capacity-bounded, class-balanced ring buffers. After the
/// update at the end of task t every class seen so far holds exactly
/// floor(capacity / C_t) samples, keeping the earliest-inserted ones as the
/// quota shrinks. Single writer; sampling is read-only between updates.
class ExemplarMemory {
public:
  struct StoredSample {
    std::vector<double> input;
    int label;
  };

  explicit ExemplarMemory(std::size_t capacity);

  /// End-of-task update: truncates every existing bucket to the new per-class
  /// quota and fills the task's classes with their first-quota samples from
  /// task_data in stream order. Idempotent for a fixed (task_data, t).
  /// Throws CapacityError once floor(capacity / C_t) hits zero.
  void update(const LabeledDataset& task_data, const TaskLayout& layout, std::size_t t);

  /// n samples drawn uniformly with replacement across everything stored.
  /// Throws std::logic_error on an empty memory.
  std::pair<Matrix, std::vector<int>> sample_replay(std::size_t n, Rng& rng) const;

  std::size_t capacity() const { return capacity_; }
  std::size_t total_size() const;
  bool empty() const { return total_size() == 0; }
  std::size_t class_count(int label) const;
  std::vector<int> stored_classes() const;

  /// Everything stored, as a dataset (classes ascending, insertion order
  /// within a class). This is the balanced set behind balanced fine-tuning.
  LabeledDataset as_dataset(int num_classes) const;

  const std::map<int, std::vector<StoredSample>>& buckets() const { return per_class_; }

  /// Checkpoint restore path: installs a bucket verbatim.
  void restore_bucket(int label, std::vector<StoredSample> bucket);

private:
  std::size_t capacity_;
  std::map<int, std::vector<StoredSample>> per_class_;
};

} // namespace cil
