// SPDX-License-Identifier: Apache-2.0
#include "vsd/detail/gemm.hpp"

#include <Eigen/Core>

namespace vsd::detail {

namespace {

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>, 0,
                          Eigen::OuterStride<>>;
template <typename T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>, 0,
               Eigen::OuterStride<>>;

template <typename T>
void gemm_impl(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha,
               const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c,
               std::size_t ldc) {
  using Index = Eigen::Index;
  ConstMatMap<T> ma(a, trans_a ? Index(k) : Index(m), trans_a ? Index(m) : Index(k),
                    Eigen::OuterStride<>(Index(lda)));
  ConstMatMap<T> mb(b, trans_b ? Index(n) : Index(k), trans_b ? Index(k) : Index(n),
                    Eigen::OuterStride<>(Index(ldb)));
  MatMap<T> mc(c, Index(m), Index(n), Eigen::OuterStride<>(Index(ldc)));

  auto run = [&](auto&& lhs, auto&& rhs) {
    if (beta == T{0}) {
      mc.noalias() = alpha * (lhs * rhs);
    } else {
      mc *= beta;
      mc.noalias() += alpha * (lhs * rhs);
    }
  };

  if (!trans_a && !trans_b) {
    run(ma, mb);
  } else if (trans_a && !trans_b) {
    run(ma.transpose(), mb);
  } else if (!trans_a && trans_b) {
    run(ma, mb.transpose());
  } else {
    run(ma.transpose(), mb.transpose());
  }
}

// Eigen's per-call setup dwarfs the arithmetic on the many tiny per-element
// products batched attention emits, so small problems take a direct loop.
constexpr std::size_t kSmallGemm = 1u << 17;

template <typename T>
void gemm_small(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha,
                const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c,
                std::size_t ldc) {
  const std::size_t ra = trans_a ? 1 : lda;  // op(A)[i,l] = a[i*ra + l*ca]
  const std::size_t ca = trans_a ? lda : 1;
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * ldc;
    if (beta == T{0}) {
      for (std::size_t j = 0; j < n; ++j) crow[j] = T{0};
    } else if (beta != T{1}) {
      for (std::size_t j = 0; j < n; ++j) crow[j] *= beta;
    }
    const T* arow = a + i * ra;
    if (!trans_b) {
      for (std::size_t l = 0; l < k; ++l) {
        const T av = alpha * arow[l * ca];
        const T* brow = b + l * ldb;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    } else {
      for (std::size_t j = 0; j < n; ++j) {
        const T* brow = b + j * ldb;
        T acc{};
        for (std::size_t l = 0; l < k; ++l) acc += arow[l * ca] * brow[l];
        crow[j] += alpha * acc;
      }
    }
  }
}

}  // namespace

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, float alpha,
          const float* a, std::size_t lda, const float* b, std::size_t ldb, float beta, float* c,
          std::size_t ldc) {
  if (m * n * k <= kSmallGemm) {
    gemm_small(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
  } else {
    gemm_impl(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
  }
}

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha,
          const double* a, std::size_t lda, const double* b, std::size_t ldb, double beta,
          double* c, std::size_t ldc) {
  if (m * n * k <= kSmallGemm) {
    gemm_small(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
  } else {
    gemm_impl(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
  }
}

}  // namespace vsd::detail
