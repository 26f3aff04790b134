// Shared fixtures and independent oracles for the test binaries.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <vector>

#include <Eigen/Dense>

#include "codiff/evaluation.hpp"
#include "codiff/geometry.hpp"
#include "codiff/posegraph.hpp"
#include "codiff/scenario.hpp"

namespace testing {

inline codiff::DetectedBox make_box(double x, double y, double theta = 0.0, double half_length = 2.0,
                                    double half_width = 0.9, double confidence = 1.0)
{
    codiff::DetectedBox b;
    b.center = codiff::Pose2(x, y, theta);
    b.half_length = half_length;
    b.half_width = half_width;
    b.confidence = confidence;
    b.sigma = Eigen::Vector3d::Constant(0.1);
    return b;
}

/// Homogeneous matrix written out entry by entry rather than through the library.
inline Eigen::Matrix3d hand_matrix(double x, double y, double theta)
{
    Eigen::Matrix3d m;
    m << std::cos(theta), -std::sin(theta), x, std::sin(theta), std::cos(theta), y, 0, 0, 1;
    return m;
}

/// Largest raw total over every one-to-one pairing that covers the smaller side. Terms are added in
/// ascending row order so the sum is bit-comparable with Assignment::total_score.
inline double brute_force_assignment(const Eigen::MatrixXd& s)
{
    const bool wide = s.rows() <= s.cols();
    const Eigen::Index small = wide ? s.rows() : s.cols();
    std::vector<int> perm(static_cast<std::size_t>(wide ? s.cols() : s.rows()));
    std::iota(perm.begin(), perm.end(), 0);
    double best = -std::numeric_limits<double>::infinity();
    do {
        std::vector<std::pair<int, double>> terms; // (row, score)
        for (Eigen::Index k = 0; k < small; ++k) {
            const int other = perm[static_cast<std::size_t>(k)];
            terms.emplace_back(wide ? static_cast<int>(k) : other, wide ? s(k, other) : s(other, k));
        }
        std::sort(terms.begin(), terms.end());
        double total = 0.0;
        for (const auto& [row, v] : terms)
            total += v;
        best = std::max(best, total);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return small == 0 ? 0.0 : best;
}

/// AP by enumerating every confidence threshold, rebuilding the matching for each kept set, and
/// integrating the right-maximum precision envelope over the distinct recall levels.
inline double ap_by_threshold_enumeration(const std::vector<codiff::DetectedBox>& dets,
                                          const std::vector<codiff::DetectedBox>& gts, double iou_threshold)
{
    if (gts.empty())
        return dets.empty() ? 1.0 : 0.0;
    std::set<double, std::greater<>> thresholds;
    for (const auto& d : dets)
        thresholds.insert(d.confidence);

    struct Point {
        int tp;
        double precision;
    };
    std::vector<Point> points;
    for (const double c : thresholds) {
        std::vector<codiff::DetectedBox> kept;
        for (const auto& d : dets)
            if (d.confidence >= c)
                kept.push_back(d);
        std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.confidence > b.confidence; });
        std::vector<bool> used(gts.size(), false);
        int tp = 0;
        for (const auto& d : kept) {
            double best = -1.0;
            std::size_t arg = 0;
            for (std::size_t g = 0; g < gts.size(); ++g)
                if (!used[g] && codiff::rotated_iou(d, gts[g]) > best) {
                    best = codiff::rotated_iou(d, gts[g]);
                    arg = g;
                }
            if (best >= iou_threshold) {
                used[arg] = true;
                ++tp;
            }
        }
        points.push_back({tp, static_cast<double>(tp) / static_cast<double>(kept.size())});
    }

    double ap = 0.0;
    int prev_tp = 0;
    for (int level = 1; level <= static_cast<int>(gts.size()); ++level) {
        double envelope = -1.0;
        for (const auto& p : points)
            if (p.tp >= level)
                envelope = std::max(envelope, p.precision);
        if (envelope < 0.0)
            break;
        const double g = static_cast<double>(gts.size());
        ap += (static_cast<double>(level) / g - static_cast<double>(prev_tp) / g) * envelope;
        prev_tp = level;
    }
    return ap;
}

struct Moments {
    double mean = 0.0;
    double variance = 0.0;
};

inline Moments moments(const std::vector<double>& xs)
{
    Moments m;
    for (const double x : xs)
        m.mean += x;
    m.mean /= static_cast<double>(xs.size());
    for (const double x : xs)
        m.variance += (x - m.mean) * (x - m.mean);
    m.variance /= static_cast<double>(xs.size() - 1);
    return m;
}

/// Two-sided sign-test p-value for k successes out of n non-tied pairs.
inline double sign_test_p(int k, int n)
{
    const int tail = std::min(k, n - k);
    double p = 0.0;
    for (int i = 0; i <= tail; ++i)
        p += std::exp(std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0) - n * std::log(2.0));
    return std::min(1.0, 2.0 * p);
}

/// Pipeline with detection noise on, as used by the robustness experiments.
inline codiff::PipelineConfig noisy_pipeline(double sigma, double delay = 0.0)
{
    codiff::PipelineConfig cfg;
    cfg.noise.sigma_t = sigma;
    cfg.noise.sigma_r = sigma;
    cfg.noise.delay = delay;
    cfg.noise.detection_sigma = Eigen::Vector3d(0.05, 0.05, 0.01);
    return cfg;
}

/// Random graph: ground-truth agents and objects, each agent observing every object,
/// noisy measurements, perturbed initial guesses. The anchor is agent 0.
inline codiff::PoseGraphProblem random_problem(std::mt19937_64& rng, int n_agents, int n_objects, double noise)
{
    using namespace codiff;
    std::uniform_real_distribution<double> pos(-15, 15), ang(-3.0, 3.0);
    std::normal_distribution<double> n01(0.0, 1.0);
    auto jitter = [&](const Pose2& p, double st, double sr) {
        return Pose2(p.x() + st * n01(rng), p.y() + st * n01(rng), p.theta() + sr * n01(rng));
    };
    std::vector<Pose2> agents, objects;
    for (int i = 0; i < n_agents; ++i)
        agents.push_back(i == 0 ? Pose2::identity() : Pose2(pos(rng), pos(rng), ang(rng)));
    for (int k = 0; k < n_objects; ++k)
        objects.push_back(Pose2(pos(rng), pos(rng), ang(rng)));

    PoseGraphProblem prob;
    prob.anchor = 0;
    const Eigen::Matrix3d obs_info = Eigen::Vector3d(100.0, 100.0, 1000.0).asDiagonal();
    const Eigen::Matrix3d prior_info = Eigen::Vector3d(6.25, 6.25, 2e4).asDiagonal();
    for (int i = 0; i < n_agents; ++i)
        prob.agent_nodes[i] = i == 0 ? agents[0] : jitter(agents[static_cast<std::size_t>(i)], 4 * noise, noise);
    for (int k = 0; k < n_objects; ++k) {
        prob.object_nodes[k] = jitter(objects[static_cast<std::size_t>(k)], 4 * noise, noise);
        for (int i = 0; i < n_agents; ++i) {
            const Pose2 m = jitter(relative(agents[static_cast<std::size_t>(i)], objects[static_cast<std::size_t>(k)]),
                                   noise, noise / 10);
            prob.obs_edges.push_back({i, k, to_matrix(m), obs_info});
        }
    }
    for (int i = 1; i < n_agents; ++i)
        prob.agent_edges.push_back(
            {i, 0, to_matrix(jitter(relative(agents[static_cast<std::size_t>(i)], agents[0]), noise, noise / 10)),
             prior_info});
    return prob;
}

/// Central-difference Jacobians of edge_residual with respect to (x, y, theta) of a and of b.
inline std::pair<Eigen::Matrix3d, Eigen::Matrix3d> numeric_edge_jacobians(const codiff::Pose2& a,
                                                                         const codiff::Pose2& m,
                                                                         const codiff::Pose2& b, double h = 1e-6)
{
    using codiff::Pose2;
    Eigen::Matrix3d ja, jb;
    for (int d = 0; d < 3; ++d) {
        Eigen::Vector3d e = Eigen::Vector3d::Zero();
        e(d) = h;
        const Eigen::Vector3d av = a.vector(), bv = b.vector();
        const Pose2 ap(av.x() + e.x(), av.y() + e.y(), av.z() + e.z());
        const Pose2 am(av.x() - e.x(), av.y() - e.y(), av.z() - e.z());
        const Pose2 bp(bv.x() + e.x(), bv.y() + e.y(), bv.z() + e.z());
        const Pose2 bm(bv.x() - e.x(), bv.y() - e.y(), bv.z() - e.z());
        ja.col(d) = (codiff::edge_residual(ap, m, b) - codiff::edge_residual(am, m, b)) / (2 * h);
        jb.col(d) = (codiff::edge_residual(a, m, bp) - codiff::edge_residual(a, m, bm)) / (2 * h);
    }
    return {ja, jb};
}

} // namespace testing
