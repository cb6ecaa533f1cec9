#include "cil/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "cil/checkpoint.hpp"
#include "cil/errors.hpp"

namespace fs = std::filesystem;

namespace cil {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(trim(cur));
  out.erase(std::remove(out.begin(), out.end(), std::string{}), out.end());
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const std::uint64_t r = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a nonnegative integer, got '" + v + "'");
  }
}

double parse_f64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double r = std::stod(v, &pos);
    if (pos != v.size() || !std::isfinite(r)) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a finite number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

} // namespace

void ExperimentConfig::validate() const {
  if (dataset != "synthetic" && dataset != "csv")
    throw ConfigError("dataset must be 'synthetic' or 'csv'");
  if (dataset == "csv" && (csv_train.empty() || csv_test.empty()))
    throw ConfigError("csv dataset needs csv_train and csv_test paths");
  if (tasks < 1 || classes_per_task < 1) throw ConfigError("tasks and classes_per_task must be >= 1");
  if (dataset == "synthetic") {
    if (classes != tasks * classes_per_task)
      throw ConfigError("classes (" + std::to_string(classes) + ") must equal tasks*classes_per_task (" +
                        std::to_string(tasks * classes_per_task) + ")");
    if (dim < 1 || per_class < 1) throw ConfigError("dim and per_class must be >= 1");
    if (!(spread > 0.0)) throw ConfigError("spread must be positive");
  }
  if (memory_capacity / (tasks * classes_per_task) < 1)
    throw ConfigError("memory_capacity " + std::to_string(memory_capacity) +
                      " cannot hold one exemplar per class for " +
                      std::to_string(tasks * classes_per_task) + " classes");
  if (hidden_dims.empty()) throw ConfigError("hidden_dims must name at least the feature width");
  for (std::size_t d : hidden_dims)
    if (d < 1) throw ConfigError("hidden_dims entries must be >= 1");
  if (methods.empty()) throw ConfigError("methods must name at least one method");
  if (seeds.empty()) throw ConfigError("seeds must name at least one seed");
  if (eval_ks.empty()) throw ConfigError("eval_topk must name at least one k");
  for (std::size_t i = 0; i < eval_ks.size(); ++i) {
    if (eval_ks[i] < 1) throw ConfigError("eval_topk entries must be >= 1");
    if (i > 0 && eval_ks[i] <= eval_ks[i - 1])
      throw ConfigError("eval_topk must be strictly increasing");
  }
  train.validate();
}

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig config;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (value.empty())
      throw ConfigError("config line " + std::to_string(line_no) + ": empty value for '" + key + "'");

    if (key == "dataset") config.dataset = value;
    else if (key == "classes") config.classes = parse_u64(key, value);
    else if (key == "dim") config.dim = parse_u64(key, value);
    else if (key == "per_class") config.per_class = parse_u64(key, value);
    else if (key == "spread") config.spread = parse_f64(key, value);
    else if (key == "separation") config.separation = parse_f64(key, value);
    else if (key == "data_seed") config.data_seed = parse_u64(key, value);
    else if (key == "csv_train") config.csv_train = value;
    else if (key == "csv_test") config.csv_test = value;
    else if (key == "csv_header") config.csv_header = parse_bool(key, value);
    else if (key == "tasks") config.tasks = parse_u64(key, value);
    else if (key == "classes_per_task") config.classes_per_task = parse_u64(key, value);
    else if (key == "order_seed") config.order_seed = parse_u64(key, value);
    else if (key == "memory_capacity") config.memory_capacity = parse_u64(key, value);
    else if (key == "hidden_dims") {
      config.hidden_dims.clear();
      for (const auto& v : split_list(value)) config.hidden_dims.push_back(parse_u64(key, v));
    } else if (key == "methods") {
      config.methods.clear();
      for (const auto& v : split_list(value)) config.methods.push_back(MethodSpec::parse(v));
    } else if (key == "seeds") {
      config.seeds.clear();
      for (const auto& v : split_list(value)) config.seeds.push_back(parse_u64(key, v));
    } else if (key == "epochs") config.train.epochs = parse_u64(key, value);
    else if (key == "base_lr") config.train.base_lr = parse_f64(key, value);
    else if (key == "lr_drops") {
      config.train.lr_drop_epochs.clear();
      for (const auto& v : split_list(value))
        config.train.lr_drop_epochs.push_back(parse_u64(key, v));
    } else if (key == "lr_drop_factor") config.train.lr_drop_factor = parse_f64(key, value);
    else if (key == "momentum") config.train.momentum = parse_f64(key, value);
    else if (key == "nesterov") config.train.nesterov = parse_bool(key, value);
    else if (key == "weight_decay") config.train.weight_decay = parse_f64(key, value);
    else if (key == "tau") config.train.tau = parse_f64(key, value);
    else if (key == "batch_new") config.train.plan.new_batch_size = parse_u64(key, value);
    else if (key == "batch_replay") config.train.plan.replay_batch_size = parse_u64(key, value);
    else if (key == "post_process") {
      if (value == "none") config.train.post_process = PostProcess::None;
      else if (value == "bft") config.train.post_process = PostProcess::Bft;
      else if (value == "score_correction") config.train.post_process = PostProcess::ScoreCorrection;
      else throw ConfigError("post_process must be none, bft or score_correction");
    } else if (key == "bft_epochs") config.train.bft_epochs = parse_u64(key, value);
    else if (key == "bft_head_only") config.train.bft_head_only = parse_bool(key, value);
    else if (key == "holdout_fraction") config.train.holdout_fraction = parse_f64(key, value);
    else if (key == "eval_topk") {
      config.eval_ks.clear();
      for (const auto& v : split_list(value))
        config.eval_ks.push_back(static_cast<int>(parse_u64(key, v)));
    } else if (key == "out_dir") config.out_dir = value;
    else throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
  }
  return config;
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

std::vector<TaskData> build_task_data(const ExperimentConfig& config, const TaskLayout& layout) {
  LabeledDataset train;
  LabeledDataset test;
  if (config.dataset == "synthetic") {
    TrainTestSplit split = synth_gaussian(config.classes, config.dim, config.per_class,
                                          config.spread, config.data_seed, config.separation);
    train = std::move(split.train);
    test = std::move(split.test);
  } else {
    train = load_csv(config.csv_train, config.csv_header);
    test = load_csv(config.csv_test, config.csv_header);
    if (static_cast<std::size_t>(train.num_classes) != layout.num_classes())
      throw ConfigError("csv_train has " + std::to_string(train.num_classes) +
                        " classes, layout expects " + std::to_string(layout.num_classes()));
    if (test.num_classes > train.num_classes)
      throw ConfigError("csv_test labels exceed the training classes");
    test.num_classes = train.num_classes;
    if (test.dim() != train.dim()) throw ConfigError("csv_train and csv_test dimensions differ");
  }

  const auto ordering = class_ordering(layout.num_classes(), config.order_seed);
  auto train_tasks = split_tasks(train, layout, ordering);
  auto test_tasks = split_tasks(test, layout, ordering);

  std::vector<TaskData> tasks;
  tasks.reserve(layout.total_tasks());
  for (std::size_t t = 0; t < layout.total_tasks(); ++t)
    tasks.push_back({std::move(train_tasks[t]), std::move(test_tasks[t])});
  return tasks;
}

namespace {

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestError("cannot write " + path.string());
  out << text;
}

std::string metrics_csv_rows(const std::string& method, std::uint64_t seed,
                             const std::vector<EvalReport>& reports) {
  std::ostringstream out;
  for (const auto& report : reports)
    for (const auto& [k, acc] : report.topk)
      out << method << "," << seed << "," << report.after_task << ",top" << k << ","
          << format_double(acc) << "\n";
  // aggregate rows: after_task 0 marks the whole-run average
  if (!reports.empty()) {
    for (const auto& [k, acc] : reports.front().topk) {
      std::vector<double> per_task;
      for (const auto& report : reports) per_task.push_back(report.accuracy_at(k));
      out << method << "," << seed << ",0,avg_top" << k << ","
          << format_double(average_incremental_accuracy(per_task)) << "\n";
    }
  }
  return out.str();
}

std::string confusion_csv(const std::vector<std::vector<std::size_t>>& counts) {
  std::ostringstream out;
  for (const auto& row : counts) {
    for (std::size_t j = 0; j < row.size(); ++j) out << (j ? "," : "") << row[j];
    out << "\n";
  }
  return out.str();
}

/// Fraction of old-task test samples the final model pushes into the latest
/// task's column. The headline balance statistic.
double latest_task_bias(const std::vector<std::vector<std::size_t>>& confusion) {
  if (confusion.size() < 2) return 0.0;
  std::size_t old_total = 0;
  std::size_t into_latest = 0;
  for (std::size_t r = 0; r + 1 < confusion.size(); ++r) {
    for (std::size_t c = 0; c < confusion[r].size(); ++c) old_total += confusion[r][c];
    into_latest += confusion[r].back();
  }
  return old_total == 0 ? 0.0 : static_cast<double>(into_latest) / static_cast<double>(old_total);
}

std::string summary_json(const std::string& method, std::uint64_t seed,
                         const std::vector<EvalReport>& reports) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["method"] = method;
  j["seed"] = seed;
  j["tasks"] = reports.size();
  nlohmann::json avg = nlohmann::json::object();
  for (const auto& [k, acc] : reports.front().topk) {
    (void)acc;
    std::vector<double> per_task;
    for (const auto& report : reports) per_task.push_back(report.accuracy_at(k));
    avg[std::to_string(k)] = average_incremental_accuracy(per_task);
  }
  j["average_topk"] = avg;
  j["final_latest_task_bias"] = latest_task_bias(reports.back().task_confusion);
  return j.dump(2) + "\n";
}

void write_run_outputs(const fs::path& run_dir, const std::string& method, std::uint64_t seed,
                       const RunState& state) {
  fs::create_directories(run_dir);
  for (const auto& report : state.reports) {
    write_text_file(run_dir / ("report_task_" + std::to_string(report.after_task) + ".json"),
                    report_to_json(report));
    write_text_file(run_dir / ("confusion_task_" + std::to_string(report.after_task) + ".csv"),
                    confusion_csv(report.task_confusion));
  }
  std::string metrics = "method,seed,after_task,metric,value\n";
  metrics += metrics_csv_rows(method, seed, state.reports);
  write_text_file(run_dir / "metrics.csv", metrics);

  std::ostringstream log;
  log << "task,epoch,lr,mean_ce,mean_kd\n";
  for (const auto& e : state.epoch_logs)
    log << e.task << "," << e.epoch << "," << format_double(e.lr) << ","
        << format_double(e.mean_ce) << "," << format_double(e.mean_kd) << "\n";
  write_text_file(run_dir / "train_log.csv", log.str());

  write_text_file(run_dir / "summary.json", summary_json(method, seed, state.reports));
  save_checkpoint((run_dir / "checkpoint_final.ckpt").string(), state.model, &state.memory);
}

} // namespace

void run_experiment(const ExperimentConfig& config) {
  config.validate();
  const TaskLayout layout(config.tasks, config.classes_per_task);
  const std::vector<TaskData> tasks = build_task_data(config, layout);

  RunOptions options;
  options.train = config.train;
  options.layer_dims.clear();
  options.layer_dims.push_back(tasks.front().train.dim());
  for (std::size_t d : config.hidden_dims) options.layer_dims.push_back(d);
  options.memory_capacity = config.memory_capacity;
  options.eval_ks = config.eval_ks;

  for (const MethodSpec& method : config.methods) {
    for (std::uint64_t seed : config.seeds) {
      options.train.method = method;
      options.train.seed = seed;
      try {
        const RunState state = run_incremental(tasks, options, layout);
        const fs::path run_dir = fs::path(config.out_dir) / method.name() / std::to_string(seed);
        write_run_outputs(run_dir, method.name(), seed, state);
      } catch (const NumericError& e) {
        // completed run directories stay on disk for debugging
        throw NumericError(std::string("method ") + method.name() + ", seed " +
                           std::to_string(seed) + ": " + e.what());
      }
    }
  }
}

namespace {

nlohmann::json load_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IngestError(path.string() + ": " + e.what());
  }
}

} // namespace

void compare_runs(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
  if (run_dirs.size() < 2) throw ConfigError("compare needs at least two run directories");

  struct Row {
    std::string method;
    std::uint64_t seed;
    std::vector<std::pair<int, double>> avg;
    double bias;
  };
  std::vector<Row> rows;
  for (const auto& dir : run_dirs) {
    const nlohmann::json j = load_json_file(fs::path(dir) / "summary.json");
    Row row;
    try {
      row.method = j.at("method").get<std::string>();
      row.seed = j.at("seed").get<std::uint64_t>();
      for (const auto& [k, v] : j.at("average_topk").items())
        row.avg.emplace_back(std::stoi(k), v.get<double>());
      std::sort(row.avg.begin(), row.avg.end());
      row.bias = j.at("final_latest_task_bias").get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw IngestError(dir + "/summary.json: " + e.what());
    }
    rows.push_back(std::move(row));
  }

  for (const auto& row : rows)
    if (row.avg.size() != rows.front().avg.size())
      throw IngestError("compare: run directories report different top-k sets");

  std::ostringstream csv;
  csv << "method,seed";
  for (const auto& [k, v] : rows.front().avg) {
    (void)v;
    csv << ",avg_top" << k;
  }
  csv << "\n";
  for (const auto& row : rows) {
    csv << row.method << "," << row.seed;
    for (const auto& [k, v] : row.avg) {
      (void)k;
      csv << "," << format_double(v);
    }
    csv << "\n";
  }

  nlohmann::json j;
  j["schema_version"] = 1;
  nlohmann::json items = nlohmann::json::array();
  for (const auto& row : rows)
    items.push_back({{"method", row.method},
                     {"seed", row.seed},
                     {"final_latest_task_bias", row.bias}});
  j["balance"] = items;

  if (out_dir.empty()) {
    std::cout << csv.str() << j.dump(2) << "\n";
  } else {
    fs::create_directories(out_dir);
    write_text_file(fs::path(out_dir) / "compare.csv", csv.str());
    write_text_file(fs::path(out_dir) / "compare.json", j.dump(2) + "\n");
  }
}

void rerender_run(const std::string& run_dir) {
  const nlohmann::json summary = load_json_file(fs::path(run_dir) / "summary.json");
  std::string method;
  std::uint64_t seed = 0;
  std::size_t task_count = 0;
  try {
    method = summary.at("method").get<std::string>();
    seed = summary.at("seed").get<std::uint64_t>();
    task_count = summary.at("tasks").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw IngestError(run_dir + "/summary.json: " + e.what());
  }

  std::vector<EvalReport> reports;
  for (std::size_t t = 1; t <= task_count; ++t) {
    const fs::path path = fs::path(run_dir) / ("report_task_" + std::to_string(t) + ".json");
    std::ifstream in(path);
    if (!in) throw IngestError("cannot open " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    reports.push_back(report_from_json(buf.str()));
  }

  std::string metrics = "method,seed,after_task,metric,value\n";
  metrics += metrics_csv_rows(method, seed, reports);
  write_text_file(fs::path(run_dir) / "metrics.csv", metrics);
  for (const auto& report : reports)
    write_text_file(fs::path(run_dir) / ("confusion_task_" + std::to_string(report.after_task) + ".csv"),
                    confusion_csv(report.task_confusion));
}

namespace {

struct GradCheckInstance {
  IncrementalClassifier model;
  IncrementalClassifier teacher;
  Matrix input;
  std::size_t label;
  std::size_t t;
  TaskLayout layout;
};

GradCheckInstance make_instance(std::uint64_t seed, bool needs_teacher) {
  Rng rng(derive_seed(seed, /*salt=*/0x9cad));
  const std::size_t t = needs_teacher ? 2 + rng.uniform_int(2) : 1 + rng.uniform_int(3);
  const TaskLayout layout(3, 2);

  IncrementalClassifier model({3, 4, 4}, 2, rng.next_u64());
  IncrementalClassifier teacher({3, 4, 4}, 2, rng.next_u64());
  for (std::size_t i = 0; i < t; ++i) model.expand_head();
  for (std::size_t i = 0; i + 1 < t; ++i) teacher.expand_head();

  Matrix input(1, 3);
  for (double& v : input.data()) v = rng.normal();
  const std::size_t label = rng.uniform_int(2 * t);
  return {std::move(model), std::move(teacher), std::move(input), label, t, layout};
}

} // namespace

GradCheckResult run_gradcheck(std::size_t instances_per_loss, const std::string& inject_fault) {
  GradCheckResult result;
  const double h = 1e-5;

  struct LossCase {
    std::string name;
    bool needs_teacher;
  };
  const std::vector<LossCase> cases = {
      {"ce", false}, {"gkd", true}, {"tkd", true}, {"ce_ss", false}, {"ssil", true},
  };

  auto loss_of = [](const std::string& name, std::span<const double> logits,
                    std::span<const double> teacher, std::size_t label, const TaskLayout& layout,
                    std::size_t t) -> LossResult {
    const double tau = 2.0;
    if (name == "ce") return ce_loss(logits, label, {0, layout.classes_through(t)});
    if (name == "gkd") return gkd_loss(logits, teacher, layout.old_new_split(t).first, tau);
    if (name == "tkd") return tkd_loss(logits, teacher, layout, t, tau);
    if (name == "ce_ss") return ce_ss_loss(logits, label, layout, t);
    return ssil_loss(logits, t >= 2 ? teacher : std::span<const double>{}, label, layout, t, tau);
  };

  for (const auto& loss_case : cases) {
    GradCheckResult::Entry entry{loss_case.name + "_loss", 0.0, 0};
    for (std::size_t i = 0; i < instances_per_loss; ++i) {
      const std::uint64_t seed = derive_seed(0x6c0de, i * cases.size() + (&loss_case - cases.data()));
      GradCheckInstance inst = make_instance(seed, loss_case.needs_teacher);
      const Matrix teacher_logits = inst.t >= 2 ? inst.teacher.forward(inst.input) : Matrix(1, 0);

      // analytic route: loss logit grads chained through backward()
      const ForwardTrace trace = inst.model.forward_trace(inst.input);
      const LossResult loss = loss_of(loss_case.name, trace.logits.row(0), teacher_logits.row(0),
                                      inst.label, inst.layout, inst.t);
      Matrix logit_grads(1, trace.logits.cols());
      std::copy(loss.logit_grads.begin(), loss.logit_grads.end(), logit_grads.data().begin());
      GradientSet grads = inst.model.backward(trace, logit_grads);
      std::vector<double> analytic;
      for (const Matrix& g : grads.tensors)
        analytic.insert(analytic.end(), g.data().begin(), g.data().end());
      if (!inject_fault.empty() && loss_case.name == inject_fault) analytic[0] += 1e-3;

      // independent route: central differences through the whole net
      IncrementalClassifier scratch = inst.model;
      const auto f = [&](std::span<const double> flat) {
        scratch.set_flat_params(flat);
        const Matrix logits = scratch.forward(inst.input);
        return loss_of(loss_case.name, logits.row(0), teacher_logits.row(0), inst.label,
                       inst.layout, inst.t)
            .value;
      };
      const std::vector<double> fd = finite_diff_grad(f, inst.model.flat_params(), h);

      double max_abs = 1e-6;
      for (std::size_t j = 0; j < fd.size(); ++j)
        max_abs = std::max({max_abs, std::abs(analytic[j]), std::abs(fd[j])});
      double err = 0.0;
      for (std::size_t j = 0; j < fd.size(); ++j)
        err = std::max(err, std::abs(analytic[j] - fd[j]) / max_abs);
      if (err > entry.max_rel_err) {
        entry.max_rel_err = err;
        entry.worst_seed = seed;
      }
    }
    result.entries.push_back(entry);
  }

  // raw backward(): gradient of sum <G, logits> for a random G
  {
    GradCheckResult::Entry entry{"model_backward", 0.0, 0};
    const std::size_t n_instances = std::max<std::size_t>(1, instances_per_loss / 10);
    for (std::size_t i = 0; i < n_instances; ++i) {
      const std::uint64_t seed = derive_seed(0xbac4, i);
      GradCheckInstance inst = make_instance(seed, false);
      Rng rng(derive_seed(seed, 0x6e4));
      Matrix g(1, inst.model.num_classes());
      for (double& v : g.data()) v = rng.normal();

      GradientSet grads = inst.model.backward(inst.input, g);
      std::vector<double> analytic;
      for (const Matrix& gt : grads.tensors)
        analytic.insert(analytic.end(), gt.data().begin(), gt.data().end());
      if (inject_fault == "model_backward") analytic[0] += 1e-3;

      IncrementalClassifier scratch = inst.model;
      const auto f = [&](std::span<const double> flat) {
        scratch.set_flat_params(flat);
        const Matrix logits = scratch.forward(inst.input);
        double s = 0.0;
        for (std::size_t j = 0; j < logits.size(); ++j) s += g.data()[j] * logits.data()[j];
        return s;
      };
      const std::vector<double> fd = finite_diff_grad(f, inst.model.flat_params(), h);

      double max_abs = 1e-6;
      for (std::size_t j = 0; j < fd.size(); ++j)
        max_abs = std::max({max_abs, std::abs(analytic[j]), std::abs(fd[j])});
      double err = 0.0;
      for (std::size_t j = 0; j < fd.size(); ++j)
        err = std::max(err, std::abs(analytic[j] - fd[j]) / max_abs);
      if (err > entry.max_rel_err) {
        entry.max_rel_err = err;
        entry.worst_seed = seed;
      }
    }
    result.entries.push_back(entry);
  }

  return result;
}

} // namespace cil
