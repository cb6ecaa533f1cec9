#include <doctest.h>

#include <cmath>
#include <map>

#include "cil/errors.hpp"
#include "cil/experiment.hpp"
#include "cil/trainer.hpp"
#include "test_support.hpp"

using namespace cil;
using cil::testsupport::make_logit_passthrough;

namespace {

/// Small 2-task fixture: 4 Gaussian classes, separation configurable.
struct TinyFixture {
  TaskLayout layout{2, 2};
  std::vector<TaskData> tasks;
  RunOptions options;

  explicit TinyFixture(double separation = 4.0) {
    ExperimentConfig config;
    config.classes = 4;
    config.dim = 8;
    config.per_class = 40;
    config.tasks = 2;
    config.classes_per_task = 2;
    config.data_seed = 42;
    config.memory_capacity = 12;
    config.separation = separation;
    tasks = build_task_data(config, layout);

    options.train.epochs = 10;
    options.train.lr_drop_epochs = {8};
    options.train.plan = {16, 4};
    options.train.seed = 1;
    options.layer_dims = {8, 16, 8};
    options.memory_capacity = 12;
    options.eval_ks = {1, 2};
  }
};

} // namespace

TEST_CASE("learning_rate: factor-10 drops at the configured epochs") {
  TrainConfig config;
  config.epochs = 100;
  config.base_lr = 0.1;
  config.lr_drop_epochs = {40, 80};
  config.lr_drop_factor = 0.1;
  CHECK(learning_rate(config, 39) == doctest::Approx(0.1));
  CHECK(learning_rate(config, 40) == doctest::Approx(0.01));
  CHECK(learning_rate(config, 79) == doctest::Approx(0.01));
  CHECK(learning_rate(config, 80) == doctest::Approx(0.001));

  config.lr_drop_epochs = {};
  CHECK(learning_rate(config, 99) == doctest::Approx(0.1));

  config.lr_drop_epochs = {40, 80};
  config.lr_drop_factor = 1.0;
  CHECK(learning_rate(config, 99) == doctest::Approx(0.1));
}

TEST_CASE("TrainConfig: validation rejects malformed schedules") {
  TrainConfig config;
  config.epochs = 0;
  CHECK_THROWS_AS(config.validate(), ConfigError);
  config = {};
  config.lr_drop_epochs = {30, 20};
  config.epochs = 40;
  CHECK_THROWS_AS(config.validate(), ConfigError);
  config = {};
  config.lr_drop_epochs = {50};
  config.epochs = 40;
  CHECK_THROWS_AS(config.validate(), ConfigError);
  config = {};
  config.base_lr = 0.0;
  CHECK_THROWS_AS(config.validate(), ConfigError);
  config = {};
  config.momentum = 1.0;
  CHECK_THROWS_AS(config.validate(), ConfigError);
}

TEST_CASE("MethodSpec: parsing and the routing matrix") {
  CHECK(MethodSpec::parse("ft").method == Method::FT);
  CHECK(MethodSpec::parse("SS-IL").method == Method::SSIL);
  CHECK_THROWS_AS(MethodSpec::parse("bogus"), ConfigError);

  const std::map<Method, std::tuple<bool, bool, KdKind>> expected{
      {Method::FT, {false, false, KdKind::None}},
      {Method::CE_GKD, {false, false, KdKind::Global}},
      {Method::CE_TKD, {false, false, KdKind::TaskWise}},
      {Method::TKD_RP, {false, true, KdKind::TaskWise}},
      {Method::TKD_SS, {true, false, KdKind::TaskWise}},
      {Method::SSIL, {true, true, KdKind::TaskWise}},
  };
  for (const auto& [method, flags] : expected) {
    const MethodSpec spec{method};
    CHECK(spec.uses_ss_loss() == std::get<0>(flags));
    CHECK(spec.uses_rp_batches() == std::get<1>(flags));
    CHECK(spec.kd_kind() == std::get<2>(flags));
  }
}

TEST_CASE("method matrix: each method routes to its loss and batch scheme") {
  TinyFixture fixture;
  for (Method method : {Method::FT, Method::CE_GKD, Method::CE_TKD, Method::SSIL, Method::TKD_SS,
                        Method::TKD_RP}) {
    const MethodSpec spec{method};
    fixture.options.train.method = spec;

    std::vector<StepInfo> steps;
    run_incremental(fixture.tasks, fixture.options, fixture.layout,
                    [&](const StepInfo& info) { steps.push_back(info); });
    REQUIRE(!steps.empty());

    std::size_t task2_epoch0_total = 0;
    for (const auto& step : steps) {
      CHECK(step.used_ss == spec.uses_ss_loss());
      if (step.task == 1) {
        CHECK(step.kd == KdKind::None);
        CHECK(step.replay_count == 0);
      } else {
        CHECK(step.kd == spec.kd_kind());
        if (spec.uses_rp_batches()) CHECK(step.replay_count == 4);
        if (step.epoch == 0) task2_epoch0_total += step.batch_size;
      }
    }
    // one epoch at t=2 visits |D_2| new samples, plus N_M per chunk under RP,
    // or exactly |D_2| + |M| under joint batching
    if (spec.uses_rp_batches())
      CHECK(task2_epoch0_total == 80 + 5 * 4);
    else
      CHECK(task2_epoch0_total == 80 + 12);
  }
}

TEST_CASE("train_task: first task is plain supervised training") {
  TinyFixture fixture;
  fixture.options.train.method = {Method::SSIL};
  IncrementalClassifier model(fixture.options.layer_dims, 2, 99);
  RunState state(fixture.layout, std::move(model), 12, 1);
  std::vector<StepInfo> steps;
  train_task(state, fixture.tasks[0].train, fixture.options.train, 1,
             [&](const StepInfo& info) { steps.push_back(info); });
  for (const auto& step : steps) {
    CHECK(step.kd == KdKind::None);
    CHECK(step.kd_value == 0.0);
    CHECK(step.replay_count == 0);
  }
  CHECK(state.completed_tasks == 1);
  CHECK(state.snapshots.size() == 1);
  CHECK(state.memory.total_size() == 12);
}

TEST_CASE("train_task: wrong task order and foreign labels are rejected") {
  TinyFixture fixture;
  IncrementalClassifier model(fixture.options.layer_dims, 2, 99);
  RunState state(fixture.layout, std::move(model), 12, 1);
  CHECK_THROWS_AS(train_task(state, fixture.tasks[1].train, fixture.options.train, 2),
                  std::invalid_argument);
  CHECK_THROWS_AS(train_task(state, fixture.tasks[1].train, fixture.options.train, 1),
                  std::invalid_argument);
}

TEST_CASE("determinism: identical configs give bitwise-identical runs") {
  TinyFixture fixture;
  fixture.options.train.method = {Method::SSIL};
  const RunState a = run_incremental(fixture.tasks, fixture.options, fixture.layout);
  const RunState b = run_incremental(fixture.tasks, fixture.options, fixture.layout);
  CHECK(a.model.flat_params() == b.model.flat_params());
  REQUIRE(a.reports.size() == b.reports.size());
  for (std::size_t i = 0; i < a.reports.size(); ++i) {
    CHECK(a.reports[i].topk == b.reports[i].topk);
    CHECK(a.reports[i].task_confusion == b.reports[i].task_confusion);
    CHECK(a.reports[i].new_data_task_ratio == b.reports[i].new_data_task_ratio);
  }
}

TEST_CASE("separated softmax blocks the CE path into old heads, bitwise") {
  // one SS-IL step on purely new-task samples with distillation disabled
  TinyFixture fixture;
  fixture.options.train.method = {Method::SSIL};
  RunState state = run_incremental(fixture.tasks, fixture.options, fixture.layout);
  // build a fresh task-2-style batch from task-2 data only (no replay)
  const LabeledDataset& d2 = fixture.tasks[1].train;
  Batch batch;
  batch.inputs = Matrix(8, d2.dim());
  for (std::size_t r = 0; r < 8; ++r) {
    const auto src = d2.inputs.row(r);
    auto dst = batch.inputs.row(r);
    std::copy(src.begin(), src.end(), dst.begin());
    batch.labels.push_back(d2.labels[r]);
    batch.from_replay.push_back(0);
  }

  const ModelSnapshot teacher(state.snapshots.front().model());
  const GradientSet grads = batch_gradients(state.model, &teacher, batch, {Method::SSIL},
                                            fixture.layout, 2, 2.0, /*kd_enabled=*/false);
  // parameter order: extractor tensors, then head blocks; old head is block 0
  const std::size_t n_extractor = 2 * (fixture.options.layer_dims.size() - 1);
  for (double v : grads.tensors[n_extractor].data()) CHECK(v == 0.0);
  for (double v : grads.tensors[n_extractor + 1].data()) CHECK(v == 0.0);

  // with weight decay and momentum off, one step leaves the old head bitwise intact
  IncrementalClassifier model = state.model;
  const std::vector<double> before = model.flat_params();
  SgdState sgd_state;
  sgd_step(model, grads, {0.1, 0.0, 0.0, true}, sgd_state);
  const std::vector<double> after = model.flat_params();
  std::size_t old_head_begin = 0;
  auto params = model.params();
  for (std::size_t i = 0; i < n_extractor; ++i) old_head_begin += params[i]->size();
  const std::size_t old_head_size = params[n_extractor]->size() + params[n_extractor + 1]->size();
  for (std::size_t i = old_head_begin; i < old_head_begin + old_head_size; ++i)
    CHECK(after[i] == before[i]);
}

TEST_CASE("batch_gradients: mean over the batch equals the mean of per-sample gradients") {
  TinyFixture fixture;
  fixture.options.train.method = {Method::SSIL};
  RunState state = run_incremental(fixture.tasks, fixture.options, fixture.layout);
  const ModelSnapshot teacher(state.snapshots.front().model());

  const LabeledDataset& d2 = fixture.tasks[1].train;
  Batch batch;
  const std::size_t n = 6;
  batch.inputs = Matrix(n, d2.dim());
  for (std::size_t r = 0; r < n; ++r) {
    const auto src = d2.inputs.row(r);
    auto dst = batch.inputs.row(r);
    std::copy(src.begin(), src.end(), dst.begin());
    batch.labels.push_back(d2.labels[r]);
    batch.from_replay.push_back(0);
  }

  const GradientSet whole = batch_gradients(state.model, &teacher, batch, {Method::SSIL},
                                            fixture.layout, 2, 2.0);
  std::vector<Matrix> accum;
  for (std::size_t r = 0; r < n; ++r) {
    Batch single;
    single.inputs = Matrix(1, d2.dim());
    auto dst = single.inputs.row(0);
    const auto src = batch.inputs.row(r);
    std::copy(src.begin(), src.end(), dst.begin());
    single.labels = {batch.labels[r]};
    single.from_replay = {0};
    const GradientSet g = batch_gradients(state.model, &teacher, single, {Method::SSIL},
                                          fixture.layout, 2, 2.0);
    if (accum.empty()) {
      accum = g.tensors;
    } else {
      for (std::size_t i = 0; i < accum.size(); ++i) axpy(1.0, g.tensors[i], accum[i]);
    }
  }
  for (std::size_t i = 0; i < accum.size(); ++i)
    for (std::size_t j = 0; j < accum[i].size(); ++j)
      CHECK(whole.tensors[i].data()[j] ==
            doctest::Approx(accum[i].data()[j] / static_cast<double>(n)).epsilon(1e-9));
}

TEST_CASE("batch_gradients: distillation without a teacher is rejected") {
  TinyFixture fixture;
  IncrementalClassifier model(fixture.options.layer_dims, 2, 3);
  model.expand_head();
  model.expand_head();
  Batch batch;
  batch.inputs = Matrix(1, 8);
  batch.labels = {2};
  batch.from_replay = {0};
  CHECK_THROWS_AS(
      batch_gradients(model, nullptr, batch, {Method::SSIL}, fixture.layout, 2, 2.0),
      std::invalid_argument);
}

TEST_CASE("run_incremental: report structure and the T = 1 degenerate case") {
  ExperimentConfig config;
  config.classes = 4;
  config.dim = 6;
  config.per_class = 20;
  config.tasks = 1;
  config.classes_per_task = 4;
  config.memory_capacity = 8;
  const TaskLayout layout(1, 4);
  const auto tasks = build_task_data(config, layout);

  RunOptions options;
  options.train.epochs = 8;
  options.train.lr_drop_epochs = {};
  options.train.plan = {16, 4};
  options.layer_dims = {6, 12, 8};
  options.memory_capacity = 8;
  options.eval_ks = {1, 2};

  const RunState state = run_incremental(tasks, options, layout);
  REQUIRE(state.reports.size() == 1);
  const EvalReport& report = state.reports.front();
  CHECK(report.after_task == 1);
  CHECK(report.classes_seen == 4);
  CHECK(report.new_data_task_ratio.empty());
  CHECK(report.task_confusion.size() == 1);
  CHECK(average_incremental_accuracy({report.accuracy_at(1)}) ==
        doctest::Approx(report.accuracy_at(1)));
  CHECK(state.epoch_logs.size() == 8);
}

TEST_CASE("joint training on the golden fixture reaches the recorded upper bound") {
  // the non-incremental oracle: all ten classes at once
  ExperimentConfig config;
  config.classes = 10;
  config.dim = 16;
  config.per_class = 200;
  config.tasks = 1;
  config.classes_per_task = 10;
  config.data_seed = 42;
  config.memory_capacity = 50;
  const TaskLayout layout(1, 10);
  const auto tasks = build_task_data(config, layout);

  RunOptions options;
  options.train.epochs = 15;
  options.train.lr_drop_epochs = {10};
  options.train.plan = {32, 8};
  options.layer_dims = {16, 64, 32};
  options.memory_capacity = 50;
  options.eval_ks = {1};

  const RunState state = run_incremental(tasks, options, layout);
  CHECK(state.reports.front().accuracy_at(1) >= 0.95);
}

TEST_CASE("bft_learning_rate: 0.001 over the task number") {
  CHECK(bft_learning_rate(2) == doctest::Approx(0.0005).epsilon(1e-15));
  CHECK(bft_learning_rate(10) == doctest::Approx(0.0001).epsilon(1e-15));
  CHECK_THROWS_AS(bft_learning_rate(0), std::invalid_argument);
}

TEST_CASE("balanced_fine_tune: balanced set, preconditions, and bounded effect") {
  // overlapping classes, so the toy model ends balanced rather than saturated
  TinyFixture fixture(0.55);
  fixture.options.train.method = {Method::SSIL};
  RunState state = run_incremental(fixture.tasks, fixture.options, fixture.layout);

  // the BFT set is the post-update memory: exactly equal class counts
  const LabeledDataset balanced = state.memory.as_dataset(4);
  std::map<int, int> counts;
  for (int l : balanced.labels) counts[l]++;
  for (const auto& [label, count] : counts) CHECK(count == 3); // floor(12/4)

  const LabeledDataset test_all = concat_datasets({&fixture.tasks[0].test, &fixture.tasks[1].test});
  const double before = topk_accuracy(state.model, test_all, 1);
  balanced_fine_tune(state, fixture.options.train, 2);
  const double after = topk_accuracy(state.model, test_all, 1);
  // golden regression bound: measured +0.019 on this frozen fixture
  CHECK(std::abs(after - before) < 0.05);

  CHECK_THROWS_AS(balanced_fine_tune(state, fixture.options.train, 1), std::invalid_argument);
  CHECK_THROWS_AS(balanced_fine_tune(state, fixture.options.train, 3), std::invalid_argument);
}

TEST_CASE("score correction: identity, calibrated and biased fixtures") {
  // calibrated fixture: labels drawn from softmax(z) itself, which makes the
  // identity correction a stationary point of the CE fit
  Rng rng(1);
  const std::size_t n_classes = 6;
  const ClassRange new_range{4, 6};
  const std::size_t n_samples = 5000;
  Matrix logits(n_samples, n_classes);
  std::vector<int> labels;
  for (std::size_t r = 0; r < n_samples; ++r) {
    for (std::size_t j = 0; j < n_classes; ++j) logits(r, j) = rng.normal();
    const auto p = softmax_range(logits.row(r), {0, n_classes}, 1.0);
    double u = rng.uniform();
    std::size_t drawn = n_classes - 1;
    for (std::size_t j = 0; j < n_classes; ++j) {
      u -= p[j];
      if (u <= 0.0) {
        drawn = j;
        break;
      }
    }
    labels.push_back(static_cast<int>(drawn));
  }

  SUBCASE("alpha=1, beta=0 leaves logits unchanged") {
    const Matrix same = apply_score_correction(logits, {1.0, 0.0}, new_range);
    CHECK(same == logits);
  }

  SUBCASE("unbiased fixture fits near the identity") {
    const ScoreCorrection fit =
        fit_score_correction_logits(logits, labels, new_range, 200, 0.001, true);
    CHECK(std::abs(fit.alpha - 1.0) < 0.05);
    CHECK(std::abs(fit.beta) < 0.05);
  }

  SUBCASE("constant +5 bias on new classes is removed by beta") {
    Matrix biased = logits;
    for (std::size_t r = 0; r < biased.rows(); ++r)
      for (std::size_t c = new_range.begin; c < new_range.end; ++c) biased(r, c) += 5.0;
    const ScoreCorrection fit =
        fit_score_correction_logits(biased, labels, new_range, 200, 0.001, /*fit_alpha=*/false);
    CHECK(fit.alpha == 1.0);
    CHECK(std::abs(fit.beta - (-5.0)) < 0.2);
  }
}

TEST_CASE("score correction: folding into the head equals the logit transform") {
  TinyFixture fixture;
  fixture.options.train.method = {Method::FT};
  RunState state = run_incremental(fixture.tasks, fixture.options, fixture.layout);
  const ScoreCorrection correction{0.8, -1.5};

  const LabeledDataset& test = fixture.tasks[1].test;
  const Matrix raw = state.model.forward(test.inputs);
  const Matrix direct = apply_score_correction(raw, correction, {2, 4});

  IncrementalClassifier folded = state.model;
  fold_score_correction(folded, correction);
  const Matrix via_head = folded.forward(test.inputs);
  for (std::size_t i = 0; i < direct.size(); ++i)
    CHECK(via_head.data()[i] == doctest::Approx(direct.data()[i]).epsilon(1e-12));
}

TEST_CASE("fit_score_correction: holdout must cover every class") {
  TinyFixture fixture;
  fixture.options.train.method = {Method::FT};
  RunState state = run_incremental(fixture.tasks, fixture.options, fixture.layout);
  LabeledDataset holdout = fixture.tasks[1].test; // new classes only
  CHECK_THROWS_AS(fit_score_correction(state, holdout, 2, fixture.options.train),
                  std::invalid_argument);
}

TEST_CASE("branch_compare: shared start, divergent distillation from two old tasks") {
  // branching needs t >= 3: with a single old task the global and task-wise
  // distillation softmaxes coincide, so both branches would agree exactly
  ExperimentConfig config;
  config.classes = 6;
  config.dim = 8;
  config.per_class = 30;
  config.tasks = 3;
  config.classes_per_task = 2;
  config.data_seed = 42;
  config.memory_capacity = 12;
  const TaskLayout layout(3, 2);
  const auto tasks = build_task_data(config, layout);

  TrainConfig train;
  train.epochs = 6;
  train.lr_drop_epochs = {};
  train.plan = {16, 4};
  train.method = {Method::CE_GKD};
  train.seed = 1;

  IncrementalClassifier model({8, 16, 8}, 2, derive_seed(train.seed, 0x5eed));
  RunState state(layout, std::move(model), 12, train.seed);
  train_task(state, tasks[0].train, train, 1);
  train_task(state, tasks[1].train, train, 2);

  const BranchResult result =
      branch_compare(state.snapshots.back(), state.memory, tasks[2].train, train, layout, 3);
  CHECK(result.gkd_branch.model.num_classes() == 6);
  CHECK(result.tkd_branch.model.num_classes() == 6);
  // same start, different distillation: the branches end at different weights
  CHECK(result.gkd_branch.model.flat_params() != result.tkd_branch.model.flat_params());
  // and both share the identical frozen teacher
  CHECK(result.gkd_branch.snapshots.front().model().flat_params() ==
        result.tkd_branch.snapshots.front().model().flat_params());

  // branching at t = 2 is the degenerate case: both losses match exactly
  IncrementalClassifier model2({8, 16, 8}, 2, derive_seed(train.seed, 0x5eed));
  RunState state2(layout, std::move(model2), 12, train.seed);
  train_task(state2, tasks[0].train, train, 1);
  const BranchResult degenerate =
      branch_compare(state2.snapshots.back(), state2.memory, tasks[1].train, train, layout, 2);
  CHECK(degenerate.gkd_branch.model.flat_params() == degenerate.tkd_branch.model.flat_params());
}

TEST_CASE("per-task teacher shifts: task-wise distillation is blind, global is not") {
  // end-to-end version of the loss-level shift fixture: shift one old head's
  // bias by a constant and watch the distillation term through the trainer
  ExperimentConfig config;
  config.classes = 6;
  config.dim = 8;
  config.per_class = 30;
  config.tasks = 3;
  config.classes_per_task = 2;
  config.data_seed = 42;
  config.memory_capacity = 12;
  const TaskLayout layout(3, 2);
  const auto tasks = build_task_data(config, layout);

  RunOptions options;
  options.train.epochs = 6;
  options.train.lr_drop_epochs = {};
  options.train.plan = {16, 4};
  options.train.method = {Method::CE_GKD};
  options.layer_dims = {8, 16, 8};
  options.memory_capacity = 12;

  IncrementalClassifier model(options.layer_dims, 2, derive_seed(options.train.seed, 0x5eed));
  RunState state(layout, std::move(model), 12, options.train.seed);
  train_task(state, tasks[0].train, options.train, 1);
  train_task(state, tasks[1].train, options.train, 2);

  const ModelSnapshot teacher_plain(state.model);
  IncrementalClassifier shifted_model = state.model;
  {
    auto params = shifted_model.params();
    const std::size_t n_extractor = 2 * (options.layer_dims.size() - 1);
    Matrix& second_block_bias = *params[n_extractor + 2 * 1 + 1];
    for (double& v : second_block_bias.data()) v += 5.0;
  }
  const ModelSnapshot teacher_shifted(shifted_model);

  IncrementalClassifier student = state.model;
  student.expand_head();
  Batch batch;
  batch.inputs = Matrix(8, 8);
  for (std::size_t r = 0; r < 8; ++r) {
    const auto src = tasks[2].train.inputs.row(r);
    auto dst = batch.inputs.row(r);
    std::copy(src.begin(), src.end(), dst.begin());
    batch.labels.push_back(tasks[2].train.labels[r]);
    batch.from_replay.push_back(0);
  }

  LossParts tkd_plain, tkd_shifted, gkd_plain, gkd_shifted;
  batch_gradients(student, &teacher_plain, batch, {Method::CE_TKD}, layout, 3, 2.0, true,
                  &tkd_plain);
  batch_gradients(student, &teacher_shifted, batch, {Method::CE_TKD}, layout, 3, 2.0, true,
                  &tkd_shifted);
  batch_gradients(student, &teacher_plain, batch, {Method::CE_GKD}, layout, 3, 2.0, true,
                  &gkd_plain);
  batch_gradients(student, &teacher_shifted, batch, {Method::CE_GKD}, layout, 3, 2.0, true,
                  &gkd_shifted);

  CHECK(std::abs(tkd_plain.kd - tkd_shifted.kd) < 1e-12);
  CHECK(std::abs(gkd_plain.kd - gkd_shifted.kd) > 1e-3);
}
