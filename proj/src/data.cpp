#include "cil/data.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "cil/errors.hpp"
#include "cil/rng.hpp"

namespace cil {

TrainTestSplit synth_gaussian(std::size_t num_classes, std::size_t dim, std::size_t per_class,
                              double spread, std::uint64_t seed, double separation) {
  if (num_classes < 1 || dim < 1 || per_class < 1)
    throw std::invalid_argument("synth_gaussian: counts must be at least 1");
  if (!(spread > 0.0)) throw std::invalid_argument("synth_gaussian: spread must be positive");

  Rng rng(derive_seed(seed, /*salt=*/0xda7a));

  Matrix means(num_classes, dim);
  for (std::size_t c = 0; c < num_classes; ++c)
    for (std::size_t j = 0; j < dim; ++j) means(c, j) = separation * rng.normal();

  auto draw_split = [&](std::size_t n_per_class) {
    LabeledDataset set;
    set.inputs = Matrix(num_classes * n_per_class, dim);
    set.labels.resize(num_classes * n_per_class);
    set.num_classes = static_cast<int>(num_classes);
    std::size_t row = 0;
    for (std::size_t c = 0; c < num_classes; ++c)
      for (std::size_t i = 0; i < n_per_class; ++i, ++row) {
        for (std::size_t j = 0; j < dim; ++j) set.inputs(row, j) = means(c, j) + spread * rng.normal();
        set.labels[row] = static_cast<int>(c);
      }
    return set;
  };

  TrainTestSplit split;
  split.train = draw_split(per_class);
  split.test = draw_split(per_class);
  return split;
}

std::vector<LabeledDataset> split_tasks(const LabeledDataset& dataset, const TaskLayout& layout,
                                        const std::vector<std::size_t>& ordering) {
  if (static_cast<std::size_t>(dataset.num_classes) != layout.num_classes())
    throw std::invalid_argument("split_tasks: dataset classes do not match layout (m*T)");
  if (ordering.size() != layout.num_classes())
    throw std::invalid_argument("split_tasks: ordering is not a permutation of the classes");

  // ordering[i] = original class that becomes class i
  std::vector<std::size_t> new_label(ordering.size(), ordering.size());
  for (std::size_t i = 0; i < ordering.size(); ++i) {
    if (ordering[i] >= ordering.size() || new_label[ordering[i]] != ordering.size())
      throw std::invalid_argument("split_tasks: ordering is not a permutation of the classes");
    new_label[ordering[i]] = i;
  }

  const std::size_t m = layout.classes_per_task();
  std::vector<std::vector<std::size_t>> rows_per_task(layout.total_tasks());
  for (std::size_t r = 0; r < dataset.size(); ++r) {
    const std::size_t relabeled = new_label[static_cast<std::size_t>(dataset.labels[r])];
    rows_per_task[relabeled / m].push_back(r);
  }

  std::vector<LabeledDataset> tasks;
  tasks.reserve(layout.total_tasks());
  for (std::size_t t = 0; t < layout.total_tasks(); ++t) {
    LabeledDataset d;
    d.inputs = Matrix(rows_per_task[t].size(), dataset.dim());
    d.labels.resize(rows_per_task[t].size());
    d.num_classes = dataset.num_classes;
    for (std::size_t i = 0; i < rows_per_task[t].size(); ++i) {
      const std::size_t r = rows_per_task[t][i];
      const auto src = dataset.inputs.row(r);
      auto dst = d.inputs.row(i);
      std::copy(src.begin(), src.end(), dst.begin());
      d.labels[i] = static_cast<int>(new_label[static_cast<std::size_t>(dataset.labels[r])]);
    }
    tasks.push_back(std::move(d));
  }
  return tasks;
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

} // namespace

LabeledDataset load_csv(const std::string& path, bool has_header) {
  std::ifstream in(path);
  if (!in) throw IngestError("load_csv: cannot open " + path);

  LabeledDataset set;
  std::vector<double> values;
  std::size_t dim = 0;
  std::size_t line_no = 0;
  std::string line;
  int max_label = -1;

  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && has_header) continue;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_fields(line);
    if (fields.size() < 2)
      throw IngestError("load_csv: row " + std::to_string(line_no) + ": need at least one feature and a label");
    if (dim == 0) {
      dim = fields.size() - 1;
    } else if (fields.size() - 1 != dim) {
      throw IngestError("load_csv: row " + std::to_string(line_no) + ": expected " +
                        std::to_string(dim) + " features, found " + std::to_string(fields.size() - 1));
    }
    for (std::size_t j = 0; j < dim; ++j) {
      std::size_t pos = 0;
      double v = 0.0;
      try {
        v = std::stod(fields[j], &pos);
      } catch (const std::exception&) {
        throw IngestError("load_csv: row " + std::to_string(line_no) + ": bad feature '" + fields[j] + "'");
      }
      if (pos != fields[j].size() || !std::isfinite(v))
        throw IngestError("load_csv: row " + std::to_string(line_no) + ": non-finite or malformed feature '" +
                          fields[j] + "'");
      values.push_back(v);
    }
    const std::string& lab = fields[dim];
    std::size_t pos = 0;
    long parsed = 0;
    try {
      parsed = std::stol(lab, &pos);
    } catch (const std::exception&) {
      throw IngestError("load_csv: row " + std::to_string(line_no) + ": bad label '" + lab + "'");
    }
    if (pos != lab.size() || parsed < 0)
      throw IngestError("load_csv: row " + std::to_string(line_no) + ": label must be a nonnegative integer, got '" +
                        lab + "'");
    set.labels.push_back(static_cast<int>(parsed));
    max_label = std::max(max_label, static_cast<int>(parsed));
  }
  if (set.labels.empty()) throw IngestError("load_csv: " + path + " holds no data rows");

  set.num_classes = max_label + 1;
  std::vector<std::size_t> counts(static_cast<std::size_t>(set.num_classes), 0);
  for (int l : set.labels) counts[static_cast<std::size_t>(l)]++;
  for (std::size_t c = 0; c < counts.size(); ++c)
    if (counts[c] == 0)
      throw IngestError("load_csv: class " + std::to_string(c) + " has no samples");

  set.inputs = Matrix(set.labels.size(), dim);
  std::copy(values.begin(), values.end(), set.inputs.data().begin());
  return set;
}

void write_csv(const std::string& path, const LabeledDataset& dataset, bool with_header) {
  std::ofstream out(path);
  if (!out) throw IngestError("write_csv: cannot open " + path + " for writing");
  char buf[40];
  if (with_header) {
    for (std::size_t j = 0; j < dataset.dim(); ++j) out << "f" << j << ",";
    out << "label\n";
  }
  for (std::size_t r = 0; r < dataset.size(); ++r) {
    for (std::size_t j = 0; j < dataset.dim(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", dataset.inputs(r, j));
      out << buf << ",";
    }
    out << dataset.labels[r] << "\n";
  }
}

} // namespace cil
