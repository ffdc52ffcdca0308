#pragma once

#include <cstdint>

#include <Eigen/Dense>

namespace agvas {

template <typename Scalar>
using MatrixT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowVectorT = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Matrix = MatrixT<double>;
using RowVector = RowVectorT<double>;
using Index = Eigen::Index;

/// Grayscale image, values in [0, 1], row-major height x width.
using Image = MatrixT<double>;
/// Binary mask, values in {0, 1}.
using Mask = MatrixT<std::uint8_t>;

}  // namespace agvas
