#include "cil/layout.hpp"

#include <numeric>
#include <stdexcept>
#include <string>

#include "cil/rng.hpp"

namespace cil {

TaskLayout::TaskLayout(std::size_t total_tasks, std::size_t classes_per_task)
    : total_tasks_(total_tasks), classes_per_task_(classes_per_task) {
  if (total_tasks < 1) throw std::invalid_argument("TaskLayout: need at least one task");
  if (classes_per_task < 1) throw std::invalid_argument("TaskLayout: need at least one class per task");
}

void TaskLayout::check_task(std::size_t t) const {
  if (t < 1 || t > total_tasks_)
    throw std::invalid_argument("TaskLayout: task " + std::to_string(t) + " outside [1, " +
                                std::to_string(total_tasks_) + "]");
}

std::size_t TaskLayout::classes_through(std::size_t t) const {
  if (t > total_tasks_) throw std::invalid_argument("TaskLayout: task count out of range");
  return classes_per_task_ * t;
}

ClassRange TaskLayout::task_classes(std::size_t t) const {
  check_task(t);
  return {classes_per_task_ * (t - 1), classes_per_task_ * t};
}

std::size_t TaskLayout::task_of(std::size_t c) const {
  if (c >= num_classes()) throw std::invalid_argument("TaskLayout: class out of range");
  return c / classes_per_task_;
}

std::pair<ClassRange, ClassRange> TaskLayout::old_new_split(std::size_t t) const {
  check_task(t);
  const std::size_t boundary = classes_per_task_ * (t - 1);
  return {ClassRange{0, boundary}, ClassRange{boundary, classes_per_task_ * t}};
}

std::vector<std::size_t> class_ordering(std::size_t num_classes, std::uint64_t seed) {
  if (num_classes < 1) throw std::invalid_argument("class_ordering: need at least one class");
  std::vector<std::size_t> perm(num_classes);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(derive_seed(seed, /*salt=*/0x0cde7));
  rng.shuffle(perm);
  return perm;
}

} // namespace cil
