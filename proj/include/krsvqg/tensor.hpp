#pragma once

#include <Eigen/Dense>

namespace krsvqg {

template <class Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <class Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

template <class Scalar>
bool all_finite(const Matrix<Scalar>& m) {
    return m.allFinite();
}

}  // namespace krsvqg
