#include "codealign/warp.hpp"

#include <cmath>

namespace codealign::collab {

void cell_center(int r, int c, int height, int width, double cell_size, double& x, double& y) {
    x = (c - (width - 1) * 0.5) * cell_size;
    y = ((height - 1) * 0.5 - r) * cell_size;
}

double cell_range(int r, int c, int height, int width, double cell_size) {
    double x, y;
    cell_center(r, c, height, width, cell_size, x, y);
    return std::hypot(x, y);
}

std::vector<std::int32_t> warp_indices(int height, int width, const Pose& from, const Pose& to,
                                       double cell_size) {
    const std::size_t n = static_cast<std::size_t>(height) * width;
    std::vector<std::int32_t> out(n);

    if (from == to) {
        for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<std::int32_t>(i);
        return out;
    }

    const double ct = std::cos(to.heading), st = std::sin(to.heading);
    const double cf = std::cos(from.heading), sf = std::sin(from.heading);

    std::size_t i = 0;
    for (int r = 0; r < height; ++r) {
        for (int c = 0; c < width; ++c, ++i) {
            double lx, ly;
            cell_center(r, c, height, width, cell_size, lx, ly);
            // target local -> world
            const double wx = ct * lx - st * ly + to.x;
            const double wy = st * lx + ct * ly + to.y;
            // world -> source local (inverse rigid transform)
            const double dx = wx - from.x;
            const double dy = wy - from.y;
            const double sx = cf * dx + sf * dy;
            const double sy = -sf * dx + cf * dy;

            const long sc = std::lround(sx / cell_size + (width - 1) * 0.5);
            const long sr = std::lround((height - 1) * 0.5 - sy / cell_size);
            if (sr < 0 || sr >= height || sc < 0 || sc >= width) {
                out[i] = -1;
            } else {
                out[i] = static_cast<std::int32_t>(sr * width + sc);
            }
        }
    }
    return out;
}

FeatureMap warp(const FeatureMap& f, const Pose& from, const Pose& to, double fill,
                double cell_size) {
    const auto idx = warp_indices(f.height, f.width, from, to, cell_size);
    FeatureMap out(f.height, f.width, f.channels, fill);
    const int ch = f.channels;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0) continue;
        const double* src = f.data.data() + static_cast<std::size_t>(idx[i]) * ch;
        double* dst = out.data.data() + i * ch;
        for (int k = 0; k < ch; ++k) dst[k] = src[k];
    }
    return out;
}

std::vector<double> warp_scalar(const std::vector<double>& values, int height, int width,
                                const Pose& from, const Pose& to, double fill, double cell_size) {
    if (values.size() != static_cast<std::size_t>(height) * width) {
        throw core::ShapeError("warp_scalar: value count does not match dims");
    }
    const auto idx = warp_indices(height, width, from, to, cell_size);
    std::vector<double> out(values.size(), fill);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= 0) out[i] = values[static_cast<std::size_t>(idx[i])];
    }
    return out;
}

Pose inject_pose_noise(const Pose& pose, double sigma_xy, double sigma_heading,
                       core::RngSeed seed) {
    if (sigma_xy < 0.0 || sigma_heading < 0.0) {
        throw core::ConfigError("inject_pose_noise: sigmas must be >= 0");
    }
    if (sigma_xy == 0.0 && sigma_heading == 0.0) return pose;
    core::Rng rng(seed);
    Pose out = pose;
    out.x += sigma_xy * rng.normal();
    out.y += sigma_xy * rng.normal();
    out.heading = Pose::normalize_heading(out.heading + sigma_heading * rng.normal());
    return out;
}

}  // namespace codealign::collab
