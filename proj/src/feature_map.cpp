#include "codiff/feature_map.hpp"

#include <cmath>
#include <stdexcept>

namespace codiff {

void FeatureMap::validate() const
{
    if (height <= 0 || width <= 0 || data.cols() <= 0)
        throw std::invalid_argument("FeatureMap: dimensions must be positive");
    if (data.rows() != Eigen::Index(height) * width)
        throw std::invalid_argument("FeatureMap: data rows do not match height * width");
    if (!data.allFinite())
        throw std::invalid_argument("FeatureMap: non-finite entry");
}

FeatureMap warp_feature(const FeatureMap& source, const FeatureMap& target_layout, const Pose2& target_to_source)
{
    FeatureMap out(target_layout.height, target_layout.width, source.channels(), target_layout.resolution,
                   target_layout.origin);
    const Pose2 src_origin_inv = inverse(source.origin);
    for (int r = 0; r < out.height; ++r) {
        for (int c = 0; c < out.width; ++c) {
            const Eigen::Vector2d p_target = out.cell_center(r, c);
            const Pose2 p_src = compose(src_origin_inv, compose(target_to_source, Pose2(p_target.x(), p_target.y(), 0.0)));
            // continuous cell coordinates in the source grid (cell centers at integer + 0.5)
            const double fc = p_src.x() / source.resolution + 0.5 * source.width - 0.5;
            const double fr = p_src.y() / source.resolution + 0.5 * source.height - 0.5;
            const int c0 = static_cast<int>(std::floor(fc));
            const int r0 = static_cast<int>(std::floor(fr));
            const double wc = fc - c0, wr = fr - r0;
            auto accumulate = [&](int rr, int cc, double w) {
                if (w == 0.0 || rr < 0 || cc < 0 || rr >= source.height || cc >= source.width)
                    return;
                out.data.row(out.pixel(r, c)) += w * source.data.row(source.pixel(rr, cc));
            };
            accumulate(r0, c0, (1 - wr) * (1 - wc));
            accumulate(r0, c0 + 1, (1 - wr) * wc);
            accumulate(r0 + 1, c0, wr * (1 - wc));
            accumulate(r0 + 1, c0 + 1, wr * wc);
        }
    }
    return out;
}

} // namespace codiff
