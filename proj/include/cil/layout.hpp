#pragma once

#include <cstdint>
#include <cstddef>
#include <utility>
#include <vector>

#include "cil/numerics.hpp"

namespace cil {

/// The incremental curriculum: T tasks of m classes each. Classes are
/// 0-based; task numbers `t` passed to the operations below are 1-based
/// (t = 1..T), while task_of() returns the 0-based task index used for
/// confusion matrices and reports.
class TaskLayout {
public:
  TaskLayout(std::size_t total_tasks, std::size_t classes_per_task);

  std::size_t total_tasks() const { return total_tasks_; }
  std::size_t classes_per_task() const { return classes_per_task_; }

  /// C_t = m * t. Accepts t = 0 (no classes yet) through T.
  std::size_t classes_through(std::size_t t) const;

  /// Class range of task t (1-based).
  ClassRange task_classes(std::size_t t) const;

  /// 0-based task index of class c.
  std::size_t task_of(std::size_t c) const;

  /// Old/new class partition at task t: P_t = [0, C_{t-1}), N_t = [C_{t-1}, C_t).
  /// P_t is empty at t = 1. Throws std::invalid_argument for t outside [1, T].
  std::pair<ClassRange, ClassRange> old_new_split(std::size_t t) const;

  std::size_t num_classes() const { return total_tasks_ * classes_per_task_; }

private:
  void check_task(std::size_t t) const;

  std::size_t total_tasks_ = 0;
  std::size_t classes_per_task_ = 0;
};

/// Deterministic permutation of [0, num_classes) — the fixed random class
/// order every run of an experiment shares. Same seed, same permutation.
std::vector<std::size_t> class_ordering(std::size_t num_classes, std::uint64_t seed);

} // namespace cil
