#include "cil/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "cil/errors.hpp"

namespace cil {

ProbVector softmax_range(std::span<const double> logits, ClassRange range, double tau) {
  if (range.empty()) throw std::invalid_argument("softmax_range: empty range");
  if (range.end > logits.size())
    throw std::invalid_argument("softmax_range: range [" + std::to_string(range.begin) + ", " +
                                std::to_string(range.end) + ") exceeds logit count " +
                                std::to_string(logits.size()));
  if (!(tau > 0.0)) throw std::invalid_argument("softmax_range: tau must be positive");

  double max_logit = logits[range.begin];
  for (std::size_t i = range.begin + 1; i < range.end; ++i)
    max_logit = std::max(max_logit, logits[i]);

  ProbVector p(range.size());
  double sum = 0.0;
  for (std::size_t i = range.begin; i < range.end; ++i) {
    const double e = std::exp((logits[i] - max_logit) / tau);
    p[i - range.begin] = e;
    sum += e;
  }
  for (double& v : p) v /= sum;
  return p;
}

double kl_divergence(const ProbVector& q, const ProbVector& p) {
  if (q.size() != p.size()) throw std::invalid_argument("kl_divergence: length mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (q[i] <= 0.0) continue; // 0 ln 0 = 0
    const double pi = std::max(p[i], 1e-300);
    kl += q[i] * std::log(q[i] / pi);
  }
  return std::max(kl, 0.0); // rounding can leave a tiny negative residue at q == p
}

std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> x, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_grad: h must be positive");
  std::vector<double> xt(x.begin(), x.end());
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = xt[i];
    xt[i] = orig + h;
    const double fp = f(xt);
    xt[i] = orig - h;
    const double fm = f(xt);
    xt[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("finite_diff_grad: non-finite evaluation at coordinate " +
                         std::to_string(i));
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimensions differ");
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
    }
  return c;
}

Matrix matmul_transposed(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("matmul_transposed: inner dimensions differ");
  Matrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto ai = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const auto bj = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += ai[k] * bj[k];
      c(i, j) = s;
    }
  }
  return c;
}

Matrix transpose(const Matrix& m) {
  Matrix t(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
  return t;
}

void axpy(double alpha, const Matrix& x, Matrix& y) {
  if (!x.same_shape(y)) throw std::invalid_argument("axpy: shape mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y.data()[i] += alpha * x.data()[i];
}

} // namespace cil
