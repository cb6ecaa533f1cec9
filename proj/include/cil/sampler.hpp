#pragma once

#include <cstdint>
#include <vector>

#include "cil/data.hpp"
#include "cil/memory.hpp"
#include "cil/rng.hpp"

namespace cil {

/// Batch sizes: N_D new-task samples per chunk, N_M replay samples appended
/// to each chunk.
struct BatchPlan {
  std::size_t new_batch_size = 32;
  std::size_t replay_batch_size = 8;
};

/// One mini-batch with per-sample origin tags.
struct Batch {
  Matrix inputs;
  std::vector<int> labels;
  std::vector<std::uint8_t> from_replay; // 1 = drawn from memory

  std::size_t size() const { return labels.size(); }
  std::size_t replay_count() const;
};

/// Ratio-preserving epoch: the task data is shuffled and cut into chunks of
/// N_D (final partial chunk kept), and every chunk gets a fresh draw of
/// exactly N_M replay samples appended. Every task sample appears exactly
/// once per epoch. With N_M = 0 this degrades to plain batching (first task).
std::vector<Batch> rp_batches(const LabeledDataset& task_data, const ExemplarMemory& memory,
                              const BatchPlan& plan, Rng& rng);

/// Joint epoch: the union of task data and everything in memory, shuffled
/// and chunked. The replay fraction is whatever the imbalance dictates.
std::vector<Batch> joint_batches(const LabeledDataset& task_data, const ExemplarMemory& memory,
                                 std::size_t batch_size, Rng& rng);

} // namespace cil
