#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "cil/matrix.hpp"

namespace cil {

/// Half-open interval of class indices [begin, end).
struct ClassRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool empty() const { return end <= begin; }
  bool contains(std::size_t i) const { return i >= begin && i < end; }
  bool operator==(const ClassRange&) const = default;
};

/// Probability vector over a class range: entries in (0, 1], summing to 1.
using ProbVector = std::vector<double>;

/// Temperature softmax restricted to `range`. Entries outside the range are
/// never read. Uses max-subtraction so large logits cannot overflow.
/// Throws std::invalid_argument on an empty range, a range past the end of
/// `logits`, or tau <= 0.
ProbVector softmax_range(std::span<const double> logits, ClassRange range, double tau);

/// KL(q || p) = sum q_k ln(q_k / p_k), with the 0 ln 0 = 0 convention.
/// p entries below 1e-300 are clamped before the log so the result stays
/// finite. Throws std::invalid_argument on length mismatch.
double kl_divergence(const ProbVector& q, const ProbVector& p);

/// Central-difference gradient (f(x + h e_i) - f(x - h e_i)) / 2h. The
/// independent oracle behind every gradient test. Throws NumericError if f
/// evaluates to a non-finite value.
std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> x, double h);

} // namespace cil
