#pragma once

#include <Eigen/Core>

#include "epcdepth/parallel.hpp"

namespace epc {
namespace detail {

// Row-major GEMM wrappers. Work is split into fixed-width column (or row)
// chunks that depend only on the problem shape, so results are
// bit-identical for any worker count.

template <class T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

constexpr int64_t kGemmChunk = 2048;
constexpr int64_t kGemmParallelFlops = 1 << 21;

// C[M,N] = (or +=) A[M,K] * B[K,N]
template <class T>
void gemm_nn(const T* A, const T* B, T* C, int64_t M, int64_t K, int64_t N, bool accum) {
  ConstMatMap<T> a(A, M, K);
  ConstMatMap<T> b(B, K, N);
  MatMap<T> c(C, M, N);
  auto run = [&](int64_t col0, int64_t cols) {
    if (accum)
      c.middleCols(col0, cols) += a * b.middleCols(col0, cols);
    else
      c.middleCols(col0, cols).noalias() = a * b.middleCols(col0, cols);
  };
  if (2 * M * K * N < kGemmParallelFlops || N < 2 * kGemmChunk) {
    for (int64_t col0 = 0; col0 < N; col0 += kGemmChunk)
      run(col0, std::min(kGemmChunk, N - col0));
  } else {
    parallel_chunks(N, kGemmChunk, [&](int64_t b0, int64_t e0) { run(b0, e0 - b0); });
  }
}

// C[M,N] = (or +=) A[M,K] * B'[N,K]^T   (B stored row-major [N,K])
template <class T>
void gemm_nt(const T* A, const T* B, T* C, int64_t M, int64_t K, int64_t N, bool accum) {
  ConstMatMap<T> a(A, M, K);
  ConstMatMap<T> b(B, N, K);
  MatMap<T> c(C, M, N);
  auto run = [&](int64_t row0, int64_t rows) {
    if (accum)
      c.middleRows(row0, rows) += a.middleRows(row0, rows) * b.transpose();
    else
      c.middleRows(row0, rows).noalias() = a.middleRows(row0, rows) * b.transpose();
  };
  if (2 * M * K * N < kGemmParallelFlops || M < 2 * kGemmChunk) {
    for (int64_t row0 = 0; row0 < M; row0 += kGemmChunk)
      run(row0, std::min(kGemmChunk, M - row0));
  } else {
    parallel_chunks(M, kGemmChunk, [&](int64_t b0, int64_t e0) { run(b0, e0 - b0); });
  }
}

// C[M,N] = (or +=) A'[K,M]^T * B[K,N]   (A stored row-major [K,M])
template <class T>
void gemm_tn(const T* A, const T* B, T* C, int64_t M, int64_t K, int64_t N, bool accum) {
  ConstMatMap<T> a(A, K, M);
  ConstMatMap<T> b(B, K, N);
  MatMap<T> c(C, M, N);
  auto run = [&](int64_t col0, int64_t cols) {
    if (accum)
      c.middleCols(col0, cols) += a.transpose() * b.middleCols(col0, cols);
    else
      c.middleCols(col0, cols).noalias() = a.transpose() * b.middleCols(col0, cols);
  };
  if (2 * M * K * N < kGemmParallelFlops || N < 2 * kGemmChunk) {
    for (int64_t col0 = 0; col0 < N; col0 += kGemmChunk)
      run(col0, std::min(kGemmChunk, N - col0));
  } else {
    parallel_chunks(N, kGemmChunk, [&](int64_t b0, int64_t e0) { run(b0, e0 - b0); });
  }
}

}  // namespace detail
}  // namespace epc
