#include "promptkd/kernels.hpp"

#include <algorithm>
#include <cstdint>
#include <vector>

namespace promptkd::kernels {

namespace {

inline void row_nn(const double* __restrict a, const double* __restrict b, double* __restrict c, std::size_t k,
                   std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c, c + n, 0.0);
  for (std::size_t p = 0; p < k; ++p) {
    const double av = a[p];
    const double* brow = b + p * n;
    for (std::size_t j = 0; j < n; ++j) c[j] += av * brow[j];
  }
}

// b is [n x k]; returns b^T as [k x n] so rows of a * b^T reuse row_nn.
std::vector<double> transposed(const double* b, std::size_t n, std::size_t k) {
  std::vector<double> t(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) t[p * n + j] = b[j * k + p];
  return t;
}

// Row i of a^T * b: sum over p of a[p][i] * b[p][:].
inline void row_tn(const double* __restrict a, const double* __restrict b, double* __restrict c, std::size_t i,
                   std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c, c + n, 0.0);
  for (std::size_t p = 0; p < k; ++p) {
    const double av = a[p * m + i];
    if (av == 0.0) continue;
    const double* brow = b + p * n;
    for (std::size_t j = 0; j < n; ++j) c[j] += av * brow[j];
  }
}

}  // namespace

namespace serial {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) row_nn(&a[i * k], b.data(), &c[i * n], k, n, accumulate);
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  const auto bt = transposed(b.data(), n, k);
  for (std::size_t i = 0; i < m; ++i) row_nn(&a[i * k], bt.data(), &c[i * n], k, n, accumulate);
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) row_tn(a.data(), b.data(), &c[i * n], i, m, k, n, accumulate);
}

}  // namespace serial

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  const bool par = m * k * n >= kParallelThreshold;
  const auto rows = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static) if (par)
  for (std::int64_t i = 0; i < rows; ++i) {
    const auto r = static_cast<std::size_t>(i);
    row_nn(&a[r * k], b.data(), &c[r * n], k, n, accumulate);
  }
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  const bool par = m * k * n >= kParallelThreshold;
  const auto rows = static_cast<std::int64_t>(m);
  const auto bt = transposed(b.data(), n, k);
#pragma omp parallel for schedule(static) if (par)
  for (std::int64_t i = 0; i < rows; ++i) {
    const auto r = static_cast<std::size_t>(i);
    row_nn(&a[r * k], bt.data(), &c[r * n], k, n, accumulate);
  }
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  const bool par = m * k * n >= kParallelThreshold;
  const auto rows = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static) if (par)
  for (std::int64_t i = 0; i < rows; ++i) {
    const auto r = static_cast<std::size_t>(i);
    row_tn(a.data(), b.data(), &c[r * n], r, m, k, n, accumulate);
  }
}

}  // namespace promptkd::kernels
