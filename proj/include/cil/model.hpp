#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cil/matrix.hpp"
#include "cil/rng.hpp"

namespace cil {

/// One gradient tensor per parameter tensor, in params() order.
struct GradientSet {
  std::vector<Matrix> tensors;
};

/// Cached activations from one forward pass, consumed by backward().
struct ForwardTrace {
  std::vector<Matrix> activations; // activations[0] = input, then post-ReLU per extractor layer
  std::vector<Matrix> preacts;     // pre-ReLU per extractor layer
  Matrix logits;                   // n x C_t
};

struct Prediction {
  std::size_t class_index = 0;
  std::size_t task_index = 0;
};

/// MLP feature extractor plus a per-task fully-connected head that grows by
/// one m-row block per task. Weights are uniform in [-1/sqrt(fan_in),
/// 1/sqrt(fan_in)], drawn from the model's own seeded stream so head
/// expansion is reproducible. All hidden layers use ReLU; logits are linear.
/// Single writer; forward/predict on an unchanging model are safe to share.
class IncrementalClassifier {
public:
  /// layer_dims runs input -> hidden... -> feature_dim and needs at least
  /// two entries. classes_per_task is m. No head blocks exist until
  /// expand_head() is called.
  IncrementalClassifier(std::vector<std::size_t> layer_dims, std::size_t classes_per_task,
                        std::uint64_t seed);

  std::size_t input_dim() const { return layer_dims_.front(); }
  std::size_t feature_dim() const { return layer_dims_.back(); }
  std::size_t classes_per_task() const { return classes_per_task_; }
  std::size_t num_tasks() const { return head_weights_.size(); }
  std::size_t num_classes() const { return classes_per_task_ * num_tasks(); }
  const std::vector<std::size_t>& layer_dims() const { return layer_dims_; }

  /// Appends one freshly initialized m-row head block. Existing parameters
  /// are untouched, so logits of already-present classes are bit-identical
  /// before and after.
  void expand_head();

  Matrix forward(const Matrix& batch) const;
  ForwardTrace forward_trace(const Matrix& batch) const;

  /// Consolidated prediction: argmax over all C_t logits, ties to the lowest
  /// class index; the task is the block the winner falls in.
  Prediction predict(std::span<const double> input) const;

  /// Exact reverse-mode gradients of sum_n <logit_grads[n], logits[n]> with
  /// respect to every parameter.
  GradientSet backward(const ForwardTrace& trace, const Matrix& logit_grads) const;
  GradientSet backward(const Matrix& batch, const Matrix& logit_grads) const;

  /// Parameter tensors in a fixed order: extractor W0, b0, W1, b1, ...,
  /// then head blocks in task order (W, b each). GradientSet and SgdState
  /// follow the same order.
  std::vector<Matrix*> params();
  std::vector<const Matrix*> params() const;

  std::size_t num_params() const;
  std::vector<double> flat_params() const;
  void set_flat_params(std::span<const double> flat);

  std::string rng_state() const { return rng_.save_state(); }
  void set_rng_state(const std::string& s) { rng_.load_state(s); }

private:
  Matrix init_tensor(std::size_t rows, std::size_t cols, std::size_t fan_in);

  std::vector<std::size_t> layer_dims_;
  std::size_t classes_per_task_;
  std::vector<Matrix> weights_; // extractor, W_l is [dims[l+1] x dims[l]]
  std::vector<Matrix> biases_;  // extractor, 1 x dims[l+1]
  std::vector<Matrix> head_weights_; // per task, m x feature_dim
  std::vector<Matrix> head_biases_;  // per task, 1 x m
  Rng rng_;
};

/// Immutable deep copy of the model at the end of a task; the knowledge
/// distillation teacher.
class ModelSnapshot {
public:
  explicit ModelSnapshot(const IncrementalClassifier& model) : model_(model) {}

  const IncrementalClassifier& model() const { return model_; }
  IncrementalClassifier restore() const { return model_; }

private:
  IncrementalClassifier model_;
};

struct SgdConfig {
  double lr = 0.1;
  double momentum = 0.0;
  double weight_decay = 0.0;
  bool nesterov = true;
};

/// Velocity buffers, lazily sized to the model's parameter list.
struct SgdState {
  std::vector<Matrix> velocity;
};

/// One SGD step. Weight decay folds into the gradient as L2 (g += wd * w),
/// then either Nesterov (v = mu*v + g; w -= lr*(g + mu*v)) or plain momentum
/// (v = mu*v + g; w -= lr*v). Throws NumericError if any parameter goes
/// non-finite.
void sgd_step(IncrementalClassifier& model, const GradientSet& grads, const SgdConfig& config,
              SgdState& state);

} // namespace cil
