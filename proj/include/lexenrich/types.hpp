#pragma once

#include <cstdint>

#include <Eigen/Core>

namespace lexenrich {

using TokenId = std::int32_t;

using RowMatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace lexenrich
