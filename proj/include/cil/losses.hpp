#pragma once

#include <span>
#include <vector>

#include "cil/layout.hpp"
#include "cil/numerics.hpp"

namespace cil {

/// Loss value plus its exact gradient with respect to every logit. Entries
/// outside the loss's active range are exactly 0.0.
struct LossResult {
  double value = 0.0;
  std::vector<double> logit_grads; // length = logits.size() = C_t
};

/// Cross-entropy over `active_range` at temperature 1:
/// value = -ln p[label], grad = p - onehot inside the range, zero outside.
LossResult ce_loss(std::span<const double> logits, std::size_t label, ClassRange active_range);

/// Global knowledge distillation: KL between the teacher's and student's
/// temperature softmax over all old classes jointly. Grad over old_range is
/// (p_student - p_teacher) / tau. Throws on an empty old range (t = 1) —
/// callers skip distillation on the first task.
LossResult gkd_loss(std::span<const double> logits, std::span<const double> teacher_logits,
                    ClassRange old_range, double tau);

/// Task-wise knowledge distillation: one KL per old task, each softmax
/// restricted to that task's m-class block, summed. The gradient is
/// block-diagonal. Invariant to any per-task constant added to the teacher
/// logits, which global distillation is not.
LossResult tkd_loss(std::span<const double> logits, std::span<const double> teacher_logits,
                    const TaskLayout& layout, std::size_t t, double tau);

/// Separated-softmax cross-entropy: old-class samples use CE over all old
/// classes combined, new-class samples use CE over the new block only, so
/// the gradient never crosses the old/new boundary.
LossResult ce_ss_loss(std::span<const double> logits, std::size_t label, const TaskLayout& layout,
                      std::size_t t);

/// The combined objective: ce_ss_loss plus tkd_loss. The distillation term
/// applies to every sample and is absent at t = 1; teacher logits are
/// required (non-empty) exactly when t >= 2.
LossResult ssil_loss(std::span<const double> logits, std::span<const double> teacher_logits,
                     std::size_t label, const TaskLayout& layout, std::size_t t, double tau);

} // namespace cil
