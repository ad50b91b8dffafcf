#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace btts {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixXr = Matrix<double>;
using RowVectorXr = RowVector<double>;
using VectorXr = Vector<double>;

/// Fixed-width style vector produced by the extractor tower.
using StyleVector = VectorXr;

using TokenId = std::int32_t;
using TokenIds = std::vector<TokenId>;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kBosId = 1;
inline constexpr TokenId kEosId = 2;
inline constexpr TokenId kUnkId = 3;

}  // namespace btts
