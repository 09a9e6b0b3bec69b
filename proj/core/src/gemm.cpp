#include "gemm.hpp"

#include <Eigen/Core>

namespace lumenseg::detail {

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha, const T* a,
          const T* b, T beta, T* c) {
  using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using ConstMap = Eigen::Map<const Matrix>;
  const auto rows = static_cast<Eigen::Index>(m), cols = static_cast<Eigen::Index>(n),
             inner = static_cast<Eigen::Index>(k);
  Eigen::Map<Matrix> out(c, rows, cols);
  if (beta == T(0)) {
    out.setZero();
  } else if (beta != T(1)) {
    out *= beta;
  }
  if (m == 0 || n == 0 || k == 0) return;

  // A stored as [k, m] when transposed, B as [n, k].
  const ConstMap a_map(a, trans_a ? inner : rows, trans_a ? rows : inner);
  const ConstMap b_map(b, trans_b ? cols : inner, trans_b ? inner : cols);
  if (trans_a && trans_b) {
    out.noalias() += alpha * a_map.transpose() * b_map.transpose();
  } else if (trans_a) {
    out.noalias() += alpha * a_map.transpose() * b_map;
  } else if (trans_b) {
    out.noalias() += alpha * a_map * b_map.transpose();
  } else {
    out.noalias() += alpha * a_map * b_map;
  }
}

template void gemm<float>(bool, bool, std::size_t, std::size_t, std::size_t, float, const float*, const float*,
                          float, float*);
template void gemm<double>(bool, bool, std::size_t, std::size_t, std::size_t, double, const double*,
                           const double*, double, double*);

}  // namespace lumenseg::detail
