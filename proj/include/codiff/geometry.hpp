#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>
#include <Eigen/LU>

namespace codiff {

template <typename Scalar>
using Transform2T = Eigen::Matrix<Scalar, 3, 3>;
using Transform2 = Transform2T<double>;

/// Wraps an angle into (-pi, pi]. Throws std::invalid_argument on non-finite input.
template <typename Scalar>
Scalar wrap_angle(Scalar a)
{
    if (!std::isfinite(a))
        throw std::invalid_argument("wrap_angle: non-finite angle");
    constexpr Scalar two_pi = Scalar(2) * std::numbers::pi_v<Scalar>;
    Scalar r = std::remainder(a, two_pi);
    if (r <= -std::numbers::pi_v<Scalar>)
        r += two_pi;
    return r;
}

/// Planar rigid pose (x, y, theta). theta is kept in (-pi, pi].
template <typename Scalar>
class Pose2T {
public:
    Pose2T() = default;
    Pose2T(Scalar x, Scalar y, Scalar theta) : x_(x), y_(y), theta_(wrap_angle(theta)) { }

    static Pose2T identity() { return {}; }

    Scalar x() const { return x_; }
    Scalar y() const { return y_; }
    Scalar theta() const { return theta_; }

    Eigen::Matrix<Scalar, 2, 1> translation() const { return {x_, y_}; }
    Eigen::Matrix<Scalar, 2, 2> rotation() const
    {
        const Scalar c = std::cos(theta_), s = std::sin(theta_);
        Eigen::Matrix<Scalar, 2, 2> r;
        r << c, -s, s, c;
        return r;
    }
    Eigen::Matrix<Scalar, 3, 1> vector() const { return {x_, y_, theta_}; }

    bool operator==(const Pose2T&) const = default;

private:
    Scalar x_ = 0;
    Scalar y_ = 0;
    Scalar theta_ = 0;
};

using Pose2 = Pose2T<double>;

template <typename Scalar>
Pose2T<Scalar> compose(const Pose2T<Scalar>& a, const Pose2T<Scalar>& b)
{
    const Scalar c = std::cos(a.theta()), s = std::sin(a.theta());
    return {a.x() + c * b.x() - s * b.y(), a.y() + s * b.x() + c * b.y(), a.theta() + b.theta()};
}

template <typename Scalar>
Pose2T<Scalar> inverse(const Pose2T<Scalar>& p)
{
    const Scalar c = std::cos(p.theta()), s = std::sin(p.theta());
    return {-c * p.x() - s * p.y(), s * p.x() - c * p.y(), -p.theta()};
}

/// Pose of b expressed in the frame of a, i.e. a^-1 * b.
template <typename Scalar>
Pose2T<Scalar> relative(const Pose2T<Scalar>& a, const Pose2T<Scalar>& b)
{
    const Scalar c = std::cos(a.theta()), s = std::sin(a.theta());
    const Scalar dx = b.x() - a.x(), dy = b.y() - a.y();
    return {c * dx + s * dy, -s * dx + c * dy, b.theta() - a.theta()};
}

template <typename Scalar>
Transform2T<Scalar> to_matrix(const Pose2T<Scalar>& p)
{
    Transform2T<Scalar> t = Transform2T<Scalar>::Identity();
    t.template topLeftCorner<2, 2>() = p.rotation();
    t.template topRightCorner<2, 1>() = p.translation();
    return t;
}

/// True when the rotation block is orthonormal with det +1 and the bottom row is [0 0 1].
template <typename Scalar>
bool is_rigid(const Transform2T<Scalar>& t, Scalar tol = Scalar(1e-9))
{
    if (!t.allFinite())
        return false;
    if (t(2, 0) != Scalar(0) || t(2, 1) != Scalar(0) || t(2, 2) != Scalar(1))
        return false;
    const Eigen::Matrix<Scalar, 2, 2> r = t.template topLeftCorner<2, 2>();
    const Scalar ortho = (r.transpose() * r - Eigen::Matrix<Scalar, 2, 2>::Identity()).cwiseAbs().maxCoeff();
    return ortho <= tol && std::abs(r.determinant() - Scalar(1)) <= tol;
}

template <typename Scalar>
Pose2T<Scalar> from_matrix(const Transform2T<Scalar>& t)
{
    if (!is_rigid(t))
        throw std::invalid_argument("from_matrix: matrix is not a rigid SE(2) transform");
    return {t(0, 2), t(1, 2), std::atan2(t(1, 0), t(0, 0))};
}

/// Closed-form inverse of a rigid transform.
template <typename Scalar>
Transform2T<Scalar> rigid_inverse(const Transform2T<Scalar>& t)
{
    Transform2T<Scalar> inv = Transform2T<Scalar>::Identity();
    const Eigen::Matrix<Scalar, 2, 2> rt = t.template topLeftCorner<2, 2>().transpose();
    inv.template topLeftCorner<2, 2>() = rt;
    inv.template topRightCorner<2, 1>() = -rt * t.template topRightCorner<2, 1>();
    return inv;
}

/// Oriented bird's-eye-view box with per-axis detection standard deviations.
struct DetectedBox {
    Pose2 center;
    double half_length = 1.0;
    double half_width = 1.0;
    Eigen::Vector3d sigma = Eigen::Vector3d::Ones();
    double confidence = 1.0;

    /// Throws std::invalid_argument when extents or sigmas are not strictly positive or confidence is outside [0, 1].
    void validate() const;

    /// Information matrix diag(sigma_x^-2, sigma_y^-2, sigma_theta^-2).
    Eigen::Matrix3d information() const;

    /// Footprint corners, counter-clockwise.
    std::array<Eigen::Vector2d, 4> corners() const;

    double area() const { return 4.0 * half_length * half_width; }
};

using Polygon2 = std::vector<Eigen::Vector2d>;

/// Signed shoelace area; positive for counter-clockwise polygons.
double polygon_area(const Polygon2& poly);

/// Clips a polygon against a convex counter-clockwise clip polygon (Sutherland-Hodgman).
Polygon2 clip_convex(const Polygon2& subject, const Polygon2& clip);

/// Intersection-over-union of two box footprints.
double rotated_iou(const DetectedBox& a, const DetectedBox& b);

/// Returns the box with its center composed onto `frame`.
DetectedBox transform_box(const DetectedBox& box, const Pose2& frame);

} // namespace codiff
