#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cil/data.hpp"
#include "cil/eval.hpp"
#include "cil/layout.hpp"
#include "cil/losses.hpp"
#include "cil/memory.hpp"
#include "cil/model.hpp"
#include "cil/sampler.hpp"

namespace cil {

enum class Method { FT, CE_GKD, CE_TKD, SSIL, TKD_SS, TKD_RP };
enum class KdKind { None, Global, TaskWise };

/// The method matrix. Each variant is a point in the (classification loss,
/// batch scheme, distillation) cube:
///   FT      plain CE, joint batches, no distillation
///   CE_GKD  plain CE, joint batches, global distillation
///   CE_TKD  plain CE, joint batches, task-wise distillation
///   TKD_RP  plain CE, ratio-preserving batches, task-wise distillation
///   TKD_SS  separated softmax, joint batches, task-wise distillation
///   SSIL    separated softmax, ratio-preserving batches, task-wise distillation
struct MethodSpec {
  Method method = Method::SSIL;

  bool uses_ss_loss() const { return method == Method::SSIL || method == Method::TKD_SS; }
  bool uses_rp_batches() const { return method == Method::SSIL || method == Method::TKD_RP; }
  KdKind kd_kind() const {
    if (method == Method::FT) return KdKind::None;
    if (method == Method::CE_GKD) return KdKind::Global;
    return KdKind::TaskWise;
  }
  const char* name() const;

  /// Throws ConfigError on an unknown name. Case-insensitive.
  static MethodSpec parse(const std::string& name);
};

enum class PostProcess { None, Bft, ScoreCorrection };

struct TrainConfig {
  std::size_t epochs = 40;
  double base_lr = 0.1;
  std::vector<std::size_t> lr_drop_epochs{25, 35};
  double lr_drop_factor = 0.1;
  double momentum = 0.9;
  bool nesterov = true;
  double weight_decay = 1e-4;
  double tau = 2.0;
  BatchPlan plan{32, 8};
  MethodSpec method{Method::SSIL};
  std::uint64_t seed = 1;

  PostProcess post_process = PostProcess::None;
  std::size_t bft_epochs = 30;
  bool bft_head_only = false;
  std::size_t score_correction_iters = 200;
  double score_correction_lr = 0.001;
  double holdout_fraction = 0.1; // new-task share reserved when fitting score correction

  void validate() const; // throws ConfigError
};

/// base_lr times lr_drop_factor once per drop epoch already reached.
double learning_rate(const TrainConfig& config, std::size_t epoch);

/// Everything one SGD step saw; instrumentation for the method-matrix tests
/// and the per-epoch log.
struct StepInfo {
  std::size_t task = 0;  // 1-based
  std::size_t epoch = 0; // 0-based
  std::size_t batch_index = 0;
  std::size_t batch_size = 0;
  std::size_t replay_count = 0;
  double ce_value = 0.0; // mean per-sample classification part
  double kd_value = 0.0; // mean per-sample distillation part
  bool used_ss = false;
  KdKind kd = KdKind::None;
  double lr = 0.0;
};
using StepHook = std::function<void(const StepInfo&)>;

struct EpochLog {
  std::size_t task = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double mean_ce = 0.0;
  double mean_kd = 0.0;
};

/// Mutable state of one incremental run.
struct RunState {
  TaskLayout layout;
  IncrementalClassifier model;
  ExemplarMemory memory;
  std::vector<ModelSnapshot> snapshots; // one per completed task
  std::vector<EvalReport> reports;
  std::vector<EpochLog> epoch_logs;
  Rng train_rng;
  std::size_t completed_tasks = 0;

  RunState(TaskLayout layout_, IncrementalClassifier model_, std::size_t memory_capacity,
           std::uint64_t train_seed)
      : layout(layout_),
        model(std::move(model_)),
        memory(memory_capacity),
        train_rng(derive_seed(train_seed, /*salt=*/0x7a51)) {}
};

struct LossParts {
  double ce = 0.0;
  double kd = 0.0;
};

/// Parameter gradients of the mean combined loss over one batch, routing
/// each sample through the method's classification loss and (when enabled
/// and t >= 2) its distillation loss against the snapshot teacher. Exposed
/// so tests can probe single steps.
GradientSet batch_gradients(const IncrementalClassifier& model, const ModelSnapshot* teacher,
                            const Batch& batch, const MethodSpec& method, const TaskLayout& layout,
                            std::size_t t, double tau, bool kd_enabled = true,
                            LossParts* parts = nullptr);

/// One task of the incremental loop: expands the head, trains E epochs with
/// the method's batch scheme and loss (teacher = snapshot of the previous
/// task), then updates the exemplar memory and snapshots the result.
void train_task(RunState& state, const LabeledDataset& task_data, const TrainConfig& config,
                std::size_t t, const StepHook& hook = {});

struct TaskData {
  LabeledDataset train;
  LabeledDataset test;
};

struct RunOptions {
  TrainConfig train;
  std::vector<std::size_t> layer_dims{16, 64, 32};
  std::size_t memory_capacity = 50;
  std::vector<int> eval_ks{1, 2};
};

/// The full incremental run: trains every task in order, evaluating on all
/// classes seen so far after each one. Reports carry top-k accuracies, the
/// task confusion matrix, and (from t = 2) the previous model's prediction
/// ratio on the incoming data, measured before training the task.
RunState run_incremental(const std::vector<TaskData>& tasks, const RunOptions& options,
                         const TaskLayout& layout, const StepHook& hook = {});

/// Fine-tunes on the class-balanced exemplar memory with plain CE over all
/// classes at lr 0.001/t.
void balanced_fine_tune(RunState& state, const TrainConfig& config, std::size_t t);

/// The balanced fine-tuning rate: 0.001 / t.
double bft_learning_rate(std::size_t t);

struct ScoreCorrection {
  double alpha = 1.0;
  double beta = 0.0;
};

/// Fits (alpha, beta) so that alpha*z + beta on the new-class logits
/// minimizes CE over a class-balanced holdout; full-batch gradient descent,
/// summed over the holdout. Throws if the holdout misses any class.
ScoreCorrection fit_score_correction(const RunState& state, const LabeledDataset& holdout,
                                     std::size_t t, const TrainConfig& config,
                                     bool fit_alpha = true);

/// Logits-level fit, used directly by tests with synthetic score fixtures.
ScoreCorrection fit_score_correction_logits(const Matrix& logits, const std::vector<int>& labels,
                                            ClassRange new_range, std::size_t iters, double lr,
                                            bool fit_alpha);

/// Pure transform: z_c -> alpha*z_c + beta for c in new_range.
Matrix apply_score_correction(const Matrix& logits, const ScoreCorrection& correction,
                              ClassRange new_range);

/// Folds the correction into the final head block (W *= alpha, b = alpha*b +
/// beta), which realizes the same affine logit transform inside the model.
void fold_score_correction(IncrementalClassifier& model, const ScoreCorrection& correction);

struct BranchResult {
  RunState gkd_branch;
  RunState tkd_branch;
};

/// Trains task t twice from the identical frozen starting point — once with
/// global distillation, once with task-wise — sharing seeds, data and every
/// other setting, so the two distillation variants can be compared directly.
BranchResult branch_compare(const ModelSnapshot& base, const ExemplarMemory& memory,
                            const LabeledDataset& task_data, const TrainConfig& config,
                            const TaskLayout& layout, std::size_t t);

/// Concatenation helper for cumulative test sets.
LabeledDataset concat_datasets(const std::vector<const LabeledDataset*>& parts);

} // namespace cil
