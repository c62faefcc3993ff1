#pragma once

#include <cstdint>
#include <vector>

#include "codealign/core.hpp"

namespace codealign::collab {

using core::FeatureMap;
using core::Pose;

/// Grid convention shared by every module: cell (r, c) of an H x W grid has
/// local coordinates x = (c - (W-1)/2) * cell_size (east along columns) and
/// y = ((H-1)/2 - r) * cell_size (north against rows); the grid is centered
/// on the frame origin.
struct GridGeometry {
    double cell_size = 1.0;
};

/// Local coordinates of a cell center under the convention above.
void cell_center(int r, int c, int height, int width, double cell_size, double& x, double& y);

/// Euclidean distance of a cell center from the frame origin.
double cell_range(int r, int c, int height, int width, double cell_size);

/// For each target cell in the `to` frame, the flat index of the nearest
/// source cell in the `from` frame, or -1 when the pre-image falls off the
/// grid. Identical poses short-circuit to the identity mapping so that
/// identity warps are bitwise exact.
std::vector<std::int32_t> warp_indices(int height, int width, const Pose& from, const Pose& to,
                                       double cell_size);

/// Rigid nearest-neighbor resampling of a feature map from the `from` frame
/// into the `to` frame; vacated cells are set to `fill`.
FeatureMap warp(const FeatureMap& f, const Pose& from, const Pose& to, double fill = 0.0,
                double cell_size = 1.0);

/// Same resampling applied to a per-cell scalar grid (occupancy, scores).
std::vector<double> warp_scalar(const std::vector<double>& values, int height, int width,
                                const Pose& from, const Pose& to, double fill, double cell_size);

/// Adds Gaussian noise to a pose; heading is renormalized to (-pi, pi].
Pose inject_pose_noise(const Pose& pose, double sigma_xy, double sigma_heading, core::RngSeed seed);

}  // namespace codealign::collab
