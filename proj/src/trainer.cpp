#include "cil/trainer.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <cmath>
#include <stdexcept>

#include "cil/errors.hpp"

namespace cil {

const char* MethodSpec::name() const {
  switch (method) {
    case Method::FT: return "FT";
    case Method::CE_GKD: return "CE_GKD";
    case Method::CE_TKD: return "CE_TKD";
    case Method::SSIL: return "SSIL";
    case Method::TKD_SS: return "TKD_SS";
    case Method::TKD_RP: return "TKD_RP";
  }
  return "?";
}

MethodSpec MethodSpec::parse(const std::string& name) {
  std::string up;
  for (char c : name) up.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  if (up == "FT") return {Method::FT};
  if (up == "CE_GKD") return {Method::CE_GKD};
  if (up == "CE_TKD") return {Method::CE_TKD};
  if (up == "SSIL" || up == "SS_IL" || up == "SS-IL") return {Method::SSIL};
  if (up == "TKD_SS") return {Method::TKD_SS};
  if (up == "TKD_RP") return {Method::TKD_RP};
  throw ConfigError("unknown method '" + name +
                    "' (expected FT, CE_GKD, CE_TKD, SSIL, TKD_SS or TKD_RP)");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(base_lr > 0.0)) throw ConfigError("base_lr must be positive");
  if (!(lr_drop_factor > 0.0)) throw ConfigError("lr_drop_factor must be positive");
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be nonnegative");
  if (plan.new_batch_size < 1) throw ConfigError("batch_new must be >= 1");
  for (std::size_t i = 0; i < lr_drop_epochs.size(); ++i) {
    if (lr_drop_epochs[i] >= epochs) throw ConfigError("lr drop epochs must be < epochs");
    if (i > 0 && lr_drop_epochs[i] <= lr_drop_epochs[i - 1])
      throw ConfigError("lr drop epochs must be strictly increasing");
  }
  if (!(holdout_fraction > 0.0) || holdout_fraction >= 1.0)
    throw ConfigError("holdout_fraction must be in (0, 1)");
}

double learning_rate(const TrainConfig& config, std::size_t epoch) {
  double lr = config.base_lr;
  for (std::size_t drop : config.lr_drop_epochs)
    if (drop <= epoch) lr *= config.lr_drop_factor;
  return lr;
}

GradientSet batch_gradients(const IncrementalClassifier& model, const ModelSnapshot* teacher,
                            const Batch& batch, const MethodSpec& method, const TaskLayout& layout,
                            std::size_t t, double tau, bool kd_enabled, LossParts* parts) {
  const ForwardTrace trace = model.forward_trace(batch.inputs);
  const std::size_t n = batch.size();
  const ClassRange full{0, model.num_classes()};

  const bool kd_active = kd_enabled && method.kd_kind() != KdKind::None && t >= 2;
  Matrix teacher_logits;
  if (kd_active) {
    if (teacher == nullptr)
      throw std::invalid_argument("batch_gradients: distillation requires a teacher snapshot");
    teacher_logits = teacher->model().forward(batch.inputs);
  }

  Matrix logit_grads(n, model.num_classes());
  double ce_sum = 0.0;
  double kd_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto logits = trace.logits.row(i);
    const auto label = static_cast<std::size_t>(batch.labels[i]);

    const LossResult ce = method.uses_ss_loss() ? ce_ss_loss(logits, label, layout, t)
                                                : ce_loss(logits, label, full);
    ce_sum += ce.value;
    auto out = logit_grads.row(i);
    std::copy(ce.logit_grads.begin(), ce.logit_grads.end(), out.begin());

    if (kd_active) {
      const LossResult kd =
          method.kd_kind() == KdKind::Global
              ? gkd_loss(logits, teacher_logits.row(i), layout.old_new_split(t).first, tau)
              : tkd_loss(logits, teacher_logits.row(i), layout, t, tau);
      kd_sum += kd.value;
      for (std::size_t c = 0; c < out.size(); ++c) out[c] += kd.logit_grads[c];
    }
  }

  // mean over the combined batch; equals /(N_D + N_M) for full RP batches
  const double scale = 1.0 / static_cast<double>(n);
  for (double& g : logit_grads.data()) g *= scale;
  if (parts) {
    parts->ce = ce_sum * scale;
    parts->kd = kd_sum * scale;
  }
  return model.backward(trace, logit_grads);
}

void train_task(RunState& state, const LabeledDataset& task_data, const TrainConfig& config,
                std::size_t t, const StepHook& hook) {
  if (t != state.completed_tasks + 1)
    throw std::invalid_argument("train_task: task " + std::to_string(t) + " but " +
                                std::to_string(state.completed_tasks) + " tasks completed");
  const ClassRange task_range = state.layout.task_classes(t);
  for (int label : task_data.labels)
    if (label < 0 || !task_range.contains(static_cast<std::size_t>(label)))
      throw std::invalid_argument("train_task: label " + std::to_string(label) +
                                  " is not a task-" + std::to_string(t) + " class");

  state.model.expand_head();
  const ModelSnapshot* teacher = t >= 2 ? &state.snapshots.back() : nullptr;

  // first task has nothing to replay
  BatchPlan plan = config.plan;
  if (t == 1) plan.replay_batch_size = 0;

  SgdState sgd_state;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = learning_rate(config, epoch);
    const SgdConfig sgd{lr, config.momentum, config.weight_decay, config.nesterov};

    // joint-batching methods use batch size N_D, matching the baselines'
    // batch sizing; RP methods append N_M replay samples on top
    const std::vector<Batch> batches =
        config.method.uses_rp_batches()
            ? rp_batches(task_data, state.memory, plan, state.train_rng)
            : joint_batches(task_data, state.memory, plan.new_batch_size, state.train_rng);

    double epoch_ce = 0.0;
    double epoch_kd = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      LossParts parts;
      const GradientSet grads = batch_gradients(state.model, teacher, batches[b], config.method,
                                                state.layout, t, config.tau, true, &parts);
      sgd_step(state.model, grads, sgd, sgd_state);
      epoch_ce += parts.ce;
      epoch_kd += parts.kd;
      if (hook)
        hook({t, epoch, b, batches[b].size(), batches[b].replay_count(), parts.ce, parts.kd,
              config.method.uses_ss_loss(), t >= 2 ? config.method.kd_kind() : KdKind::None, lr});
    }
    state.epoch_logs.push_back({t, epoch, lr, epoch_ce / static_cast<double>(batches.size()),
                                epoch_kd / static_cast<double>(batches.size())});
  }

  state.memory.update(task_data, state.layout, t);
  state.snapshots.emplace_back(state.model);
  state.completed_tasks = t;
}

LabeledDataset concat_datasets(const std::vector<const LabeledDataset*>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_datasets: nothing to concatenate");
  std::size_t total = 0;
  for (const auto* p : parts) total += p->size();
  LabeledDataset out;
  out.inputs = Matrix(total, parts.front()->dim());
  out.labels.reserve(total);
  out.num_classes = parts.front()->num_classes;
  std::size_t row = 0;
  for (const auto* p : parts) {
    if (p->dim() != out.dim()) throw std::invalid_argument("concat_datasets: dimension mismatch");
    for (std::size_t r = 0; r < p->size(); ++r) {
      const auto src = p->inputs.row(r);
      auto dst = out.inputs.row(row++);
      std::copy(src.begin(), src.end(), dst.begin());
      out.labels.push_back(p->labels[r]);
    }
  }
  return out;
}

namespace {

/// Splits off the tail share of every class's samples (stream order) as the
/// score-correction holdout, so each new class is covered.
std::pair<LabeledDataset, LabeledDataset> reserve_tail(const LabeledDataset& data,
                                                       double fraction) {
  std::map<int, std::size_t> totals;
  for (int label : data.labels) totals[label]++;
  std::map<int, std::size_t> keep;
  for (const auto& [label, count] : totals) {
    const auto reserve = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::floor(static_cast<double>(count) * fraction)));
    if (reserve >= count)
      throw ConfigError("holdout_fraction leaves no training data for class " +
                        std::to_string(label));
    keep[label] = count - reserve;
  }

  std::vector<std::size_t> train_rows, reserve_rows;
  std::map<int, std::size_t> seen;
  for (std::size_t r = 0; r < data.size(); ++r) {
    const int label = data.labels[r];
    if (seen[label]++ < keep[label])
      train_rows.push_back(r);
    else
      reserve_rows.push_back(r);
  }

  auto gather = [&](const std::vector<std::size_t>& rows) {
    LabeledDataset out;
    out.inputs = Matrix(rows.size(), data.dim());
    out.labels.reserve(rows.size());
    out.num_classes = data.num_classes;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto src = data.inputs.row(rows[i]);
      auto dst = out.inputs.row(i);
      std::copy(src.begin(), src.end(), dst.begin());
      out.labels.push_back(data.labels[rows[i]]);
    }
    return out;
  };
  return {gather(train_rows), gather(reserve_rows)};
}

/// Balanced holdout for the score-correction fit: old classes from the
/// exemplar memory, new classes from the reserved slice, equal counts.
LabeledDataset build_correction_holdout(const RunState& state, const LabeledDataset& reserve,
                                        std::size_t t) {
  const auto [old_classes, new_classes] = state.layout.old_new_split(t);
  std::size_t per_class = SIZE_MAX;
  for (std::size_t c = old_classes.begin; c < old_classes.end; ++c)
    per_class = std::min(per_class, state.memory.class_count(static_cast<int>(c)));
  std::vector<std::size_t> new_counts(new_classes.size(), 0);
  for (int label : reserve.labels) new_counts[static_cast<std::size_t>(label) - new_classes.begin]++;
  for (std::size_t c = 0; c < new_counts.size(); ++c) per_class = std::min(per_class, new_counts[c]);
  if (per_class == 0 || per_class == SIZE_MAX)
    throw std::invalid_argument("score correction holdout: a class has no samples");

  LabeledDataset holdout;
  holdout.inputs = Matrix(per_class * state.layout.classes_through(t), reserve.dim());
  holdout.num_classes = reserve.num_classes;
  std::size_t row = 0;
  auto push = [&](std::span<const double> input, int label) {
    auto dst = holdout.inputs.row(row++);
    std::copy(input.begin(), input.end(), dst.begin());
    holdout.labels.push_back(label);
  };
  for (std::size_t c = old_classes.begin; c < old_classes.end; ++c) {
    const auto& bucket = state.memory.buckets().at(static_cast<int>(c));
    for (std::size_t i = 0; i < per_class; ++i) push(bucket[i].input, static_cast<int>(c));
  }
  std::vector<std::size_t> taken(new_classes.size(), 0);
  for (std::size_t r = 0; r < reserve.size(); ++r) {
    const std::size_t slot = static_cast<std::size_t>(reserve.labels[r]) - new_classes.begin;
    if (taken[slot] >= per_class) continue;
    taken[slot]++;
    push(reserve.inputs.row(r), reserve.labels[r]);
  }
  return holdout;
}

} // namespace

RunState run_incremental(const std::vector<TaskData>& tasks, const RunOptions& options,
                         const TaskLayout& layout, const StepHook& hook) {
  if (tasks.size() != layout.total_tasks())
    throw std::invalid_argument("run_incremental: dataset count does not match the layout");
  options.train.validate();

  IncrementalClassifier model(options.layer_dims, layout.classes_per_task(),
                              derive_seed(options.train.seed, /*salt=*/0x5eed));
  RunState state(layout, std::move(model), options.memory_capacity, options.train.seed);

  auto run_one_task = [&](std::size_t t) {
    const LabeledDataset& full_task = tasks[t - 1].train;

    std::vector<double> ratio;
    if (t >= 2) ratio = new_data_task_ratio(state.snapshots.back(), full_task, layout, t);

    LabeledDataset train_part = full_task;
    LabeledDataset reserve;
    const bool corrects = options.train.post_process == PostProcess::ScoreCorrection && t >= 2;
    if (corrects)
      std::tie(train_part, reserve) = reserve_tail(full_task, options.train.holdout_fraction);

    train_task(state, train_part, options.train, t, hook);

    if (options.train.post_process == PostProcess::Bft && t >= 2)
      balanced_fine_tune(state, options.train, t);
    if (corrects) {
      const LabeledDataset holdout = build_correction_holdout(state, reserve, t);
      const ScoreCorrection correction =
          fit_score_correction(state, holdout, t, options.train, /*fit_alpha=*/true);
      fold_score_correction(state.model, correction);
      state.snapshots.back() = ModelSnapshot(state.model);
    }

    std::vector<const LabeledDataset*> seen;
    for (std::size_t s = 0; s < t; ++s) seen.push_back(&tasks[s].test);
    const LabeledDataset test_set = concat_datasets(seen);

    EvalReport report;
    report.after_task = t;
    report.classes_seen = layout.classes_through(t);
    for (int k : options.eval_ks)
      if (static_cast<std::size_t>(k) <= report.classes_seen)
        report.topk.emplace_back(k,
                                 topk_accuracy(state.model, test_set, static_cast<std::size_t>(k)));
    report.task_confusion = task_confusion(state.model, test_set, layout, t);
    report.new_data_task_ratio = std::move(ratio);
    state.reports.push_back(std::move(report));
  };

  for (std::size_t t = 1; t <= layout.total_tasks(); ++t) {
    try {
      run_one_task(t);
    } catch (const NumericError& e) {
      throw NumericError("task " + std::to_string(t) + " (after " +
                         std::to_string(state.completed_tasks) + " completed): " + e.what());
    }
  }
  return state;
}

double bft_learning_rate(std::size_t t) {
  if (t < 1) throw std::invalid_argument("bft_learning_rate: t must be >= 1");
  return 0.001 / static_cast<double>(t);
}

void balanced_fine_tune(RunState& state, const TrainConfig& config, std::size_t t) {
  if (t < 2) throw std::invalid_argument("balanced_fine_tune: needs at least two tasks");
  if (t != state.completed_tasks)
    throw std::invalid_argument("balanced_fine_tune: memory must be updated for task t first");

  const LabeledDataset balanced =
      state.memory.as_dataset(static_cast<int>(state.layout.classes_through(t)));
  const double lr = bft_learning_rate(t);
  const SgdConfig sgd{lr, config.momentum, config.weight_decay, config.nesterov};
  const ClassRange full{0, state.model.num_classes()};
  const std::size_t batch_size = config.plan.new_batch_size + config.plan.replay_batch_size;
  const std::size_t n_extractor_tensors = 2 * (state.model.layer_dims().size() - 1);

  SgdState sgd_state;
  ExemplarMemory unused(1);
  for (std::size_t epoch = 0; epoch < config.bft_epochs; ++epoch) {
    const std::vector<Batch> batches =
        rp_batches(balanced, unused, {batch_size, 0}, state.train_rng);
    for (const Batch& batch : batches) {
      const ForwardTrace trace = state.model.forward_trace(batch.inputs);
      Matrix logit_grads(batch.size(), state.model.num_classes());
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const LossResult ce =
            ce_loss(trace.logits.row(i), static_cast<std::size_t>(batch.labels[i]), full);
        auto out = logit_grads.row(i);
        std::copy(ce.logit_grads.begin(), ce.logit_grads.end(), out.begin());
      }
      const double scale = 1.0 / static_cast<double>(batch.size());
      for (double& g : logit_grads.data()) g *= scale;
      GradientSet grads = state.model.backward(trace, logit_grads);
      if (config.bft_head_only)
        for (std::size_t i = 0; i < n_extractor_tensors; ++i) grads.tensors[i].fill(0.0);
      sgd_step(state.model, grads, sgd, sgd_state);
    }
  }
  state.snapshots.back() = ModelSnapshot(state.model);
}

ScoreCorrection fit_score_correction_logits(const Matrix& logits, const std::vector<int>& labels,
                                            ClassRange new_range, std::size_t iters, double lr,
                                            bool fit_alpha) {
  if (logits.rows() != labels.size())
    throw std::invalid_argument("fit_score_correction: logits/labels length mismatch");
  if (new_range.empty() || new_range.end > logits.cols())
    throw std::invalid_argument("fit_score_correction: bad new-class range");

  const ClassRange full{0, logits.cols()};
  ScoreCorrection correction;
  std::vector<double> corrected(logits.cols());
  for (std::size_t iter = 0; iter < iters; ++iter) {
    double grad_alpha = 0.0;
    double grad_beta = 0.0;
    for (std::size_t i = 0; i < logits.rows(); ++i) {
      const auto row = logits.row(i);
      std::copy(row.begin(), row.end(), corrected.begin());
      for (std::size_t c = new_range.begin; c < new_range.end; ++c)
        corrected[c] = correction.alpha * row[c] + correction.beta;
      const ProbVector p = softmax_range(corrected, full, 1.0);
      const auto y = static_cast<std::size_t>(labels[i]);
      for (std::size_t c = new_range.begin; c < new_range.end; ++c) {
        const double g = p[c] - (c == y ? 1.0 : 0.0);
        grad_alpha += g * row[c];
        grad_beta += g;
      }
    }
    if (fit_alpha) correction.alpha -= lr * grad_alpha;
    correction.beta -= lr * grad_beta;
  }
  return correction;
}

ScoreCorrection fit_score_correction(const RunState& state, const LabeledDataset& holdout,
                                     std::size_t t, const TrainConfig& config, bool fit_alpha) {
  if (t < 2) throw std::invalid_argument("fit_score_correction: needs at least two tasks");
  const std::size_t classes_seen = state.layout.classes_through(t);
  std::vector<std::size_t> counts(classes_seen, 0);
  for (int label : holdout.labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= classes_seen)
      throw std::invalid_argument("fit_score_correction: holdout label out of range");
    counts[static_cast<std::size_t>(label)]++;
  }
  for (std::size_t c = 0; c < classes_seen; ++c)
    if (counts[c] == 0)
      throw std::invalid_argument("fit_score_correction: holdout misses class " +
                                  std::to_string(c));

  const Matrix logits = state.model.forward(holdout.inputs);
  return fit_score_correction_logits(logits, holdout.labels, state.layout.old_new_split(t).second,
                                     config.score_correction_iters, config.score_correction_lr,
                                     fit_alpha);
}

Matrix apply_score_correction(const Matrix& logits, const ScoreCorrection& correction,
                              ClassRange new_range) {
  Matrix out = logits;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t c = new_range.begin; c < new_range.end && c < out.cols(); ++c)
      out(i, c) = correction.alpha * logits(i, c) + correction.beta;
  return out;
}

void fold_score_correction(IncrementalClassifier& model, const ScoreCorrection& correction) {
  auto params = model.params();
  if (model.num_tasks() == 0)
    throw std::logic_error("fold_score_correction: model has no head blocks");
  Matrix& w = *params[params.size() - 2];
  Matrix& b = *params[params.size() - 1];
  for (double& v : w.data()) v *= correction.alpha;
  for (double& v : b.data()) v = correction.alpha * v + correction.beta;
}

BranchResult branch_compare(const ModelSnapshot& base, const ExemplarMemory& memory,
                            const LabeledDataset& task_data, const TrainConfig& config,
                            const TaskLayout& layout, std::size_t t) {
  if (t < 2) throw std::invalid_argument("branch_compare: needs an old model, so t >= 2");
  if (base.model().num_tasks() != t - 1)
    throw std::invalid_argument("branch_compare: snapshot must hold exactly t-1 head blocks");

  auto run_branch = [&](Method method) {
    RunState state(layout, base.restore(), memory.capacity(), config.seed);
    state.memory = memory;
    state.completed_tasks = t - 1;
    state.snapshots.emplace_back(base.model());
    // both branches re-derive the identical stream so data order matches
    state.train_rng = Rng(derive_seed(config.seed, /*salt=*/0xb4a2c0 + t));
    TrainConfig branch_config = config;
    branch_config.method = {method};
    train_task(state, task_data, branch_config, t);
    return state;
  };

  return {run_branch(Method::CE_GKD), run_branch(Method::CE_TKD)};
}

} // namespace cil
