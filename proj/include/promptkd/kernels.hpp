#pragma once

#include <cstddef>
#include <span>

// Dense matrix kernels behind the autodiff ops. All matrices are row-major.
//
// The default entry points are OpenMP-parallel over output rows; each output
// row is reduced in the same order as the serial reference, so both paths
// produce bit-identical results for any thread count. The serial versions
// are kept as the reference for tests and benchmarks.
namespace promptkd::kernels {

// c[m x n] (+)= a[m x k] * b[k x n]
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate);
// c[m x n] (+)= a[m x k] * b[n x k]^T
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate);
// c[m x n] (+)= a[k x m]^T * b[k x n]
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate);

namespace serial {
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate);
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate);
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate);
}  // namespace serial

// Work (m*k*n) below which the parallel kernels stay on one thread.
inline constexpr std::size_t kParallelThreshold = 1 << 15;

}  // namespace promptkd::kernels
