#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cil/layout.hpp"
#include "cil/matrix.hpp"

namespace cil {

/// A labeled dataset: n inputs of dimension d plus integer labels in
/// [0, num_classes). Immutable by convention once built.
struct LabeledDataset {
  Matrix inputs;           // n x d
  std::vector<int> labels; // length n
  int num_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return inputs.cols(); }
};

struct TrainTestSplit {
  LabeledDataset train;
  LabeledDataset test;
};

/// Synthetic Gaussian-mixture dataset. Class c's mean is `separation` times a
/// seeded standard normal vector; samples are mean + spread * standard normal.
/// An equally sized held-out test split is generated alongside from the same
/// class means. Fully deterministic per seed.
TrainTestSplit synth_gaussian(std::size_t num_classes, std::size_t dim, std::size_t per_class,
                              double spread, std::uint64_t seed, double separation = 4.0);

/// Relabels classes by their position in `ordering` (ordering[i] is the
/// original class that becomes class i), then slices the dataset into one
/// LabeledDataset per task. The splits partition the input exactly.
std::vector<LabeledDataset> split_tasks(const LabeledDataset& dataset, const TaskLayout& layout,
                                        const std::vector<std::size_t>& ordering);

/// CSV ingestion: d float feature columns followed by one integer label
/// column; optional single header line; LF or CRLF. Throws IngestError with
/// the offending row number on parse failures, non-finite values or bad
/// labels (every class in [0, max_label] must appear at least once).
LabeledDataset load_csv(const std::string& path, bool has_header);

void write_csv(const std::string& path, const LabeledDataset& dataset, bool with_header);

} // namespace cil
