#pragma once

#include <cstddef>

namespace lumenseg::detail {

// Row-major C[m,n] = alpha * op(A)[m,k] * op(B)[k,n] + beta * C. Single
// threaded, so results are reproducible run to run.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha, const T* a,
          const T* b, T beta, T* c);

}  // namespace lumenseg::detail
