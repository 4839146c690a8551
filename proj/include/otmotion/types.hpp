#ifndef OTMOTION_TYPES_HPP
#define OTMOTION_TYPES_HPP

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>

namespace otmotion {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Bin coordinates, one point per row (d x n).
using Coords = Eigen::MatrixXd;

using Seed = std::uint64_t;

} // namespace otmotion

#endif // OTMOTION_TYPES_HPP
