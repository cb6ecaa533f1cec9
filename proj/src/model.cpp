#include "cil/model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "cil/errors.hpp"
#include "cil/numerics.hpp"

namespace cil {

IncrementalClassifier::IncrementalClassifier(std::vector<std::size_t> layer_dims,
                                             std::size_t classes_per_task, std::uint64_t seed)
    : layer_dims_(std::move(layer_dims)),
      classes_per_task_(classes_per_task),
      rng_(derive_seed(seed, /*salt=*/0x30de1)) {
  if (layer_dims_.size() < 2)
    throw std::invalid_argument("IncrementalClassifier: layer_dims needs input and feature dims");
  for (std::size_t d : layer_dims_)
    if (d < 1) throw std::invalid_argument("IncrementalClassifier: zero layer width");
  if (classes_per_task_ < 1)
    throw std::invalid_argument("IncrementalClassifier: classes_per_task must be >= 1");

  for (std::size_t l = 0; l + 1 < layer_dims_.size(); ++l) {
    weights_.push_back(init_tensor(layer_dims_[l + 1], layer_dims_[l], layer_dims_[l]));
    biases_.push_back(init_tensor(1, layer_dims_[l + 1], layer_dims_[l]));
  }
}

Matrix IncrementalClassifier::init_tensor(std::size_t rows, std::size_t cols, std::size_t fan_in) {
  const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Matrix t(rows, cols);
  for (double& v : t.data()) v = rng_.uniform(-a, a);
  return t;
}

void IncrementalClassifier::expand_head() {
  head_weights_.push_back(init_tensor(classes_per_task_, feature_dim(), feature_dim()));
  head_biases_.push_back(init_tensor(1, classes_per_task_, feature_dim()));
}

namespace {

void affine_forward(const Matrix& input, const Matrix& w, const Matrix& b, Matrix& out) {
  out = matmul_transposed(input, w);
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += b(0, j);
}

} // namespace

ForwardTrace IncrementalClassifier::forward_trace(const Matrix& batch) const {
  if (batch.cols() != input_dim())
    throw std::invalid_argument("forward: batch has " + std::to_string(batch.cols()) +
                                " columns, model expects " + std::to_string(input_dim()));
  ForwardTrace trace;
  trace.activations.push_back(batch);
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    Matrix z;
    affine_forward(trace.activations.back(), weights_[l], biases_[l], z);
    Matrix a = z;
    for (double& v : a.data()) v = v > 0.0 ? v : 0.0;
    trace.preacts.push_back(std::move(z));
    trace.activations.push_back(std::move(a));
  }

  const Matrix& features = trace.activations.back();
  trace.logits = Matrix(batch.rows(), num_classes());
  for (std::size_t k = 0; k < head_weights_.size(); ++k) {
    Matrix block;
    affine_forward(features, head_weights_[k], head_biases_[k], block);
    const std::size_t offset = k * classes_per_task_;
    for (std::size_t i = 0; i < block.rows(); ++i)
      for (std::size_t j = 0; j < block.cols(); ++j) trace.logits(i, offset + j) = block(i, j);
  }
  return trace;
}

Matrix IncrementalClassifier::forward(const Matrix& batch) const {
  return forward_trace(batch).logits;
}

Prediction IncrementalClassifier::predict(std::span<const double> input) const {
  if (num_tasks() == 0) throw std::logic_error("predict: model has no head blocks");
  Matrix batch(1, input.size());
  std::copy(input.begin(), input.end(), batch.data().begin());
  const Matrix logits = forward(batch);
  std::size_t best = 0;
  for (std::size_t c = 1; c < logits.cols(); ++c)
    if (logits(0, c) > logits(0, best)) best = c;
  return {best, best / classes_per_task_};
}

GradientSet IncrementalClassifier::backward(const ForwardTrace& trace,
                                            const Matrix& logit_grads) const {
  if (logit_grads.rows() != trace.logits.rows() || logit_grads.cols() != trace.logits.cols())
    throw std::invalid_argument("backward: logit_grads shape does not match forward output");

  GradientSet grads;
  grads.tensors.resize(params().size());
  const std::size_t n_extractor = weights_.size();

  const Matrix& features = trace.activations.back();
  Matrix d_features(features.rows(), features.cols());

  // head blocks
  for (std::size_t k = 0; k < head_weights_.size(); ++k) {
    const std::size_t offset = k * classes_per_task_;
    Matrix d_block(logit_grads.rows(), classes_per_task_);
    for (std::size_t i = 0; i < logit_grads.rows(); ++i)
      for (std::size_t j = 0; j < classes_per_task_; ++j) d_block(i, j) = logit_grads(i, offset + j);

    Matrix dw = matmul(transpose(d_block), features); // m x feature_dim
    Matrix db(1, classes_per_task_);
    for (std::size_t i = 0; i < d_block.rows(); ++i)
      for (std::size_t j = 0; j < d_block.cols(); ++j) db(0, j) += d_block(i, j);

    axpy(1.0, matmul(d_block, head_weights_[k]), d_features);
    grads.tensors[2 * n_extractor + 2 * k] = std::move(dw);
    grads.tensors[2 * n_extractor + 2 * k + 1] = std::move(db);
  }

  // extractor, reversed
  Matrix d_act = std::move(d_features);
  for (std::size_t l = weights_.size(); l-- > 0;) {
    Matrix d_z = d_act;
    const Matrix& z = trace.preacts[l];
    for (std::size_t i = 0; i < d_z.size(); ++i)
      if (z.data()[i] <= 0.0) d_z.data()[i] = 0.0;

    Matrix dw = matmul(transpose(d_z), trace.activations[l]);
    Matrix db(1, d_z.cols());
    for (std::size_t i = 0; i < d_z.rows(); ++i)
      for (std::size_t j = 0; j < d_z.cols(); ++j) db(0, j) += d_z(i, j);

    d_act = matmul(d_z, weights_[l]);
    grads.tensors[2 * l] = std::move(dw);
    grads.tensors[2 * l + 1] = std::move(db);
  }
  return grads;
}

GradientSet IncrementalClassifier::backward(const Matrix& batch, const Matrix& logit_grads) const {
  return backward(forward_trace(batch), logit_grads);
}

std::vector<Matrix*> IncrementalClassifier::params() {
  std::vector<Matrix*> out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back(&weights_[l]);
    out.push_back(&biases_[l]);
  }
  for (std::size_t k = 0; k < head_weights_.size(); ++k) {
    out.push_back(&head_weights_[k]);
    out.push_back(&head_biases_[k]);
  }
  return out;
}

std::vector<const Matrix*> IncrementalClassifier::params() const {
  std::vector<const Matrix*> out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back(&weights_[l]);
    out.push_back(&biases_[l]);
  }
  for (std::size_t k = 0; k < head_weights_.size(); ++k) {
    out.push_back(&head_weights_[k]);
    out.push_back(&head_biases_[k]);
  }
  return out;
}

std::size_t IncrementalClassifier::num_params() const {
  std::size_t n = 0;
  for (const Matrix* p : params()) n += p->size();
  return n;
}

std::vector<double> IncrementalClassifier::flat_params() const {
  std::vector<double> flat;
  flat.reserve(num_params());
  for (const Matrix* p : params()) flat.insert(flat.end(), p->data().begin(), p->data().end());
  return flat;
}

void IncrementalClassifier::set_flat_params(std::span<const double> flat) {
  if (flat.size() != num_params())
    throw std::invalid_argument("set_flat_params: expected " + std::to_string(num_params()) +
                                " values, got " + std::to_string(flat.size()));
  std::size_t off = 0;
  for (Matrix* p : params()) {
    std::copy(flat.begin() + off, flat.begin() + off + p->size(), p->data().begin());
    off += p->size();
  }
}

void sgd_step(IncrementalClassifier& model, const GradientSet& grads, const SgdConfig& config,
              SgdState& state) {
  auto params = model.params();
  if (grads.tensors.size() != params.size())
    throw std::invalid_argument("sgd_step: gradient count does not match parameter count");

  if (state.velocity.size() != params.size()) {
    state.velocity.clear();
    for (const Matrix* p : params) state.velocity.emplace_back(p->rows(), p->cols());
  }

  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& w = *params[i];
    const Matrix& g_in = grads.tensors[i];
    Matrix& v = state.velocity[i];
    if (!g_in.same_shape(w) || !v.same_shape(w))
      throw std::invalid_argument("sgd_step: shape mismatch at tensor " + std::to_string(i));

    for (std::size_t j = 0; j < w.size(); ++j) {
      const double g = g_in.data()[j] + config.weight_decay * w.data()[j];
      v.data()[j] = config.momentum * v.data()[j] + g;
      const double step = config.nesterov ? g + config.momentum * v.data()[j] : v.data()[j];
      w.data()[j] -= config.lr * step;
    }
    if (!w.all_finite()) throw NumericError("sgd_step: non-finite parameter after update");
  }
}

} // namespace cil
