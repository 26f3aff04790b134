#include "codiff/geometry.hpp"

#include <algorithm>

namespace codiff {

void DetectedBox::validate() const
{
    if (!(half_length > 0.0) || !(half_width > 0.0))
        throw std::invalid_argument("DetectedBox: extents must be strictly positive");
    if (!(sigma.array() > 0.0).all() || !sigma.allFinite())
        throw std::invalid_argument("DetectedBox: sigma must be strictly positive and finite");
    if (!(confidence >= 0.0 && confidence <= 1.0))
        throw std::invalid_argument("DetectedBox: confidence must lie in [0, 1]");
}

Eigen::Matrix3d DetectedBox::information() const
{
    return sigma.array().square().inverse().matrix().asDiagonal();
}

std::array<Eigen::Vector2d, 4> DetectedBox::corners() const
{
    const Eigen::Matrix2d r = center.rotation();
    const Eigen::Vector2d t = center.translation();
    return {t + r * Eigen::Vector2d(half_length, -half_width), t + r * Eigen::Vector2d(half_length, half_width),
            t + r * Eigen::Vector2d(-half_length, half_width), t + r * Eigen::Vector2d(-half_length, -half_width)};
}

double polygon_area(const Polygon2& poly)
{
    double twice = 0.0;
    for (std::size_t i = 0; i < poly.size(); ++i) {
        const auto& p = poly[i];
        const auto& q = poly[(i + 1) % poly.size()];
        twice += p.x() * q.y() - q.x() * p.y();
    }
    return 0.5 * twice;
}

namespace {

// > 0 when p lies to the left of the directed edge a->b.
double side(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& p)
{
    return (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x());
}

Eigen::Vector2d intersect(const Eigen::Vector2d& p, const Eigen::Vector2d& q, double sp, double sq)
{
    const double t = sp / (sp - sq);
    return p + t * (q - p);
}

} // namespace

Polygon2 clip_convex(const Polygon2& subject, const Polygon2& clip)
{
    Polygon2 out = subject;
    for (std::size_t e = 0; e < clip.size() && !out.empty(); ++e) {
        const Eigen::Vector2d& a = clip[e];
        const Eigen::Vector2d& b = clip[(e + 1) % clip.size()];
        Polygon2 in;
        in.swap(out);
        for (std::size_t i = 0; i < in.size(); ++i) {
            const Eigen::Vector2d& p = in[i];
            const Eigen::Vector2d& q = in[(i + 1) % in.size()];
            const double sp = side(a, b, p);
            const double sq = side(a, b, q);
            if (sp >= 0.0) {
                out.push_back(p);
                if (sq < 0.0 && sp > 0.0)
                    out.push_back(intersect(p, q, sp, sq));
            } else if (sq > 0.0) {
                out.push_back(intersect(p, q, sp, sq));
            }
        }
    }
    return out;
}

double rotated_iou(const DetectedBox& a, const DetectedBox& b)
{
    const double reach = std::hypot(a.half_length, a.half_width) + std::hypot(b.half_length, b.half_width);
    if ((a.center.translation() - b.center.translation()).norm() > reach)
        return 0.0;
    const auto ca = a.corners();
    const auto cb = b.corners();
    const Polygon2 pa(ca.begin(), ca.end());
    const Polygon2 pb(cb.begin(), cb.end());
    const Polygon2 inter = clip_convex(pa, pb);
    if (inter.size() < 3)
        return 0.0;
    const double area_i = std::max(0.0, polygon_area(inter));
    const double area_u = a.area() + b.area() - area_i;
    if (area_u <= 0.0)
        return 0.0;
    return std::clamp(area_i / area_u, 0.0, 1.0);
}

DetectedBox transform_box(const DetectedBox& box, const Pose2& frame)
{
    DetectedBox out = box;
    out.center = compose(frame, box.center);
    return out;
}

} // namespace codiff
