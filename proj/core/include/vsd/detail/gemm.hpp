// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

namespace vsd::detail {

// C = alpha * op(A) * op(B) + beta * C, row-major, ld* = row stride.
// Backed by Eigen in gemm.cpp; kept out of public templates so the installed
// headers stay standard-library-only.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, float alpha,
          const float* a, std::size_t lda, const float* b, std::size_t ldb, float beta, float* c,
          std::size_t ldc);

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha,
          const double* a, std::size_t lda, const double* b, std::size_t ldb, double beta,
          double* c, std::size_t ldc);

}  // namespace vsd::detail
