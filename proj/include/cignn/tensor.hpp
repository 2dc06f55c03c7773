#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <vector>

namespace cignn {

// Feature arrays are stored one item (node or edge) per row.
template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using MatrixD = Matrix<double>;
using MatrixF = Matrix<float>;

/// rows(out) = rows(x)[index]
template <class Derived>
Matrix<typename Derived::Scalar> gather_rows(const Eigen::MatrixBase<Derived>& x,
                                             std::span<const std::uint32_t> index) {
  Matrix<typename Derived::Scalar> out(static_cast<Eigen::Index>(index.size()), x.cols());
  for (std::size_t k = 0; k < index.size(); ++k) out.row(k) = x.row(index[k]);
  return out;
}

/// out[index[k]] += x[k], in fixed row order so results are reproducible.
template <class Derived, class OutDerived>
void scatter_add_rows(const Eigen::MatrixBase<Derived>& x, std::span<const std::uint32_t> index,
                      Eigen::MatrixBase<OutDerived>& out) {
  for (std::size_t k = 0; k < index.size(); ++k) out.row(index[k]) += x.row(k);
}

template <class T, class U>
Matrix<T> cast_matrix(const Matrix<U>& m) {
  return m.template cast<T>();
}

}  // namespace cignn
