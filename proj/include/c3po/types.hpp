#pragma once

#include <Eigen/Dense>

namespace c3po {

template <typename Scalar>
using VecX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using ArrX = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

using Real = double;
using Vec = VecX<Real>;
using Mat = MatX<Real>;
using IndexVec = Eigen::VectorXi;

}  // namespace c3po
