#include "cil/sampler.hpp"

#include <numeric>
#include <stdexcept>

namespace cil {

std::size_t Batch::replay_count() const {
  std::size_t n = 0;
  for (std::uint8_t tag : from_replay) n += tag;
  return n;
}

std::vector<Batch> rp_batches(const LabeledDataset& task_data, const ExemplarMemory& memory,
                              const BatchPlan& plan, Rng& rng) {
  if (task_data.size() == 0) throw std::invalid_argument("rp_batches: task data is empty");
  if (plan.new_batch_size < 1) throw std::invalid_argument("rp_batches: N_D must be >= 1");
  if (plan.replay_batch_size > 0 && memory.empty())
    throw std::invalid_argument("rp_batches: replay requested but memory is empty");

  std::vector<std::size_t> order(task_data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);

  const std::size_t dim = task_data.dim();
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += plan.new_batch_size) {
    const std::size_t n_new = std::min(plan.new_batch_size, order.size() - start);
    Batch batch;
    batch.inputs = Matrix(n_new + plan.replay_batch_size, dim);
    batch.labels.resize(n_new + plan.replay_batch_size);
    batch.from_replay.assign(n_new + plan.replay_batch_size, 0);

    for (std::size_t i = 0; i < n_new; ++i) {
      const std::size_t r = order[start + i];
      const auto src = task_data.inputs.row(r);
      auto dst = batch.inputs.row(i);
      std::copy(src.begin(), src.end(), dst.begin());
      batch.labels[i] = task_data.labels[r];
    }
    if (plan.replay_batch_size > 0) {
      auto [replay_inputs, replay_labels] = memory.sample_replay(plan.replay_batch_size, rng);
      for (std::size_t i = 0; i < plan.replay_batch_size; ++i) {
        const auto src = replay_inputs.row(i);
        auto dst = batch.inputs.row(n_new + i);
        std::copy(src.begin(), src.end(), dst.begin());
        batch.labels[n_new + i] = replay_labels[i];
        batch.from_replay[n_new + i] = 1;
      }
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

std::vector<Batch> joint_batches(const LabeledDataset& task_data, const ExemplarMemory& memory,
                                 std::size_t batch_size, Rng& rng) {
  if (batch_size < 1) throw std::invalid_argument("joint_batches: batch_size must be >= 1");

  struct Ref {
    std::span<const double> input;
    int label;
    std::uint8_t replay;
  };
  std::vector<Ref> pool;
  pool.reserve(task_data.size() + memory.total_size());
  for (std::size_t r = 0; r < task_data.size(); ++r)
    pool.push_back({task_data.inputs.row(r), task_data.labels[r], 0});
  for (const auto& [label, bucket] : memory.buckets()) {
    (void)label;
    for (const auto& s : bucket) pool.push_back({{s.input.data(), s.input.size()}, s.label, 1});
  }
  if (pool.empty()) throw std::invalid_argument("joint_batches: nothing to sample");
  rng.shuffle(pool);

  const std::size_t dim = pool.front().input.size();
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < pool.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, pool.size() - start);
    Batch batch;
    batch.inputs = Matrix(n, dim);
    batch.labels.resize(n);
    batch.from_replay.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const Ref& ref = pool[start + i];
      auto dst = batch.inputs.row(i);
      std::copy(ref.input.begin(), ref.input.end(), dst.begin());
      batch.labels[i] = ref.label;
      batch.from_replay[i] = ref.replay;
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

} // namespace cil
