#pragma once

#include <Eigen/Core>

#include "codiff/geometry.hpp"

namespace codiff {

struct GridConfig {
    int height = 64;
    int width = 64;
    int channels = 64;
    double resolution = 1.6; ///< meters per cell
};

/// H x W x C bird's-eye-view feature grid. Pixels are rows (index r * width + c), channels are columns.
struct FeatureMap {
    int height = 0;
    int width = 0;
    Eigen::MatrixXd data;
    double resolution = 1.0;
    /// Pose of the grid center in the owning agent's frame.
    Pose2 origin;

    FeatureMap() = default;
    FeatureMap(int h, int w, int c, double res, Pose2 org = {})
        : height(h), width(w), data(Eigen::MatrixXd::Zero(Eigen::Index(h) * w, c)), resolution(res), origin(org)
    {
    }

    int channels() const { return static_cast<int>(data.cols()); }
    Eigen::Index pixel(int row, int col) const { return Eigen::Index(row) * width + col; }
    double& at(int row, int col, int ch) { return data(pixel(row, col), ch); }
    double at(int row, int col, int ch) const { return data(pixel(row, col), ch); }

    /// Cell center in the owning agent's frame.
    Eigen::Vector2d cell_center(int row, int col) const
    {
        const Eigen::Vector2d local((col + 0.5 - 0.5 * width) * resolution, (row + 0.5 - 0.5 * height) * resolution);
        return origin.rotation() * local + origin.translation();
    }

    /// Throws std::invalid_argument on non-positive dims or non-finite entries.
    void validate() const;
};

/// Bilinearly resamples `source` onto the cell grid of `target_layout`; `target_to_source` maps
/// points in the target agent's frame into the source agent's frame. Out-of-grid samples read 0.
FeatureMap warp_feature(const FeatureMap& source, const FeatureMap& target_layout, const Pose2& target_to_source);

} // namespace codiff
