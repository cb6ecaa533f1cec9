#include "cil/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace cil {

LossResult ce_loss(std::span<const double> logits, std::size_t label, ClassRange active_range) {
  if (!active_range.contains(label))
    throw std::invalid_argument("ce_loss: label " + std::to_string(label) + " outside active range");

  const ProbVector p = softmax_range(logits, active_range, /*tau=*/1.0);
  LossResult result;
  result.value = -std::log(p[label - active_range.begin]);
  result.logit_grads.assign(logits.size(), 0.0);
  for (std::size_t i = 0; i < p.size(); ++i) result.logit_grads[active_range.begin + i] = p[i];
  result.logit_grads[label] -= 1.0;
  return result;
}

LossResult gkd_loss(std::span<const double> logits, std::span<const double> teacher_logits,
                    ClassRange old_range, double tau) {
  if (old_range.empty())
    throw std::invalid_argument("gkd_loss: no old classes (distillation starts at t = 2)");
  if (teacher_logits.size() < old_range.end)
    throw std::invalid_argument("gkd_loss: teacher logits do not cover the old classes");

  const ProbVector p_teacher = softmax_range(teacher_logits, old_range, tau);
  const ProbVector p_student = softmax_range(logits, old_range, tau);

  LossResult result;
  result.value = kl_divergence(p_teacher, p_student);
  result.logit_grads.assign(logits.size(), 0.0);
  for (std::size_t i = 0; i < p_student.size(); ++i)
    result.logit_grads[old_range.begin + i] = (p_student[i] - p_teacher[i]) / tau;
  return result;
}

LossResult tkd_loss(std::span<const double> logits, std::span<const double> teacher_logits,
                    const TaskLayout& layout, std::size_t t, double tau) {
  if (t < 2) throw std::invalid_argument("tkd_loss: no old tasks (distillation starts at t = 2)");
  const std::size_t old_classes = layout.classes_through(t - 1);
  if (teacher_logits.size() < old_classes)
    throw std::invalid_argument("tkd_loss: teacher logits do not cover the old classes");

  LossResult result;
  result.logit_grads.assign(logits.size(), 0.0);
  for (std::size_t s = 1; s < t; ++s) {
    const ClassRange block = layout.task_classes(s);
    const ProbVector p_teacher = softmax_range(teacher_logits, block, tau);
    const ProbVector p_student = softmax_range(logits, block, tau);
    result.value += kl_divergence(p_teacher, p_student);
    for (std::size_t i = 0; i < p_student.size(); ++i)
      result.logit_grads[block.begin + i] = (p_student[i] - p_teacher[i]) / tau;
  }
  return result;
}

LossResult ce_ss_loss(std::span<const double> logits, std::size_t label, const TaskLayout& layout,
                      std::size_t t) {
  const auto [old_classes, new_classes] = layout.old_new_split(t);
  if (label >= new_classes.end)
    throw std::invalid_argument("ce_ss_loss: label " + std::to_string(label) +
                                " outside the classes seen through task " + std::to_string(t));
  // new-task samples never touch old-class logits, and vice versa
  return ce_loss(logits, label, new_classes.contains(label) ? new_classes : old_classes);
}

LossResult ssil_loss(std::span<const double> logits, std::span<const double> teacher_logits,
                     std::size_t label, const TaskLayout& layout, std::size_t t, double tau) {
  if (t >= 2 && teacher_logits.empty())
    throw std::invalid_argument("ssil_loss: teacher logits required for t >= 2");

  LossResult result = ce_ss_loss(logits, label, layout, t);
  if (t >= 2) {
    const LossResult kd = tkd_loss(logits, teacher_logits, layout, t, tau);
    result.value += kd.value;
    for (std::size_t i = 0; i < result.logit_grads.size(); ++i)
      result.logit_grads[i] += kd.logit_grads[i];
  }
  return result;
}

} // namespace cil
