#include "codiff/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace codiff {

const StarLeaf* StarGraph::find_leaf(int index) const
{
    for (const auto& leaf : leaves)
        if (leaf.index == index)
            return &leaf;
    return nullptr;
}

double Assignment::total_score() const
{
    double total = 0.0;
    for (const auto& pr : pairs)
        total += pr.score;
    return total;
}

void Assignment::check_one_to_one() const
{
    std::vector<int> ps, qs;
    for (const auto& pr : pairs) {
        ps.push_back(pr.p);
        qs.push_back(pr.q);
    }
    std::sort(ps.begin(), ps.end());
    std::sort(qs.begin(), qs.end());
    if (std::adjacent_find(ps.begin(), ps.end()) != ps.end() || std::adjacent_find(qs.begin(), qs.end()) != qs.end())
        throw std::logic_error("Assignment: index used more than once");
}

std::vector<DetectedBox> transform_boxes(const std::vector<DetectedBox>& boxes, const Pose2& rel)
{
    if (!std::isfinite(rel.x()) || !std::isfinite(rel.y()))
        throw std::invalid_argument("transform_boxes: non-finite relative pose");
    std::vector<DetectedBox> out;
    out.reserve(boxes.size());
    for (const auto& b : boxes)
        out.push_back(transform_box(b, rel));
    return out;
}

namespace {

double center_distance(const DetectedBox& a, const DetectedBox& b)
{
    return (a.center.translation() - b.center.translation()).norm();
}

} // namespace

StarGraph build_star_graph(int center_idx, const std::vector<DetectedBox>& boxes, int k)
{
    if (center_idx < 0 || center_idx >= static_cast<int>(boxes.size()))
        throw std::out_of_range("build_star_graph: center index out of range");
    std::vector<int> others;
    for (int i = 0; i < static_cast<int>(boxes.size()); ++i)
        if (i != center_idx)
            others.push_back(i);
    const DetectedBox& center = boxes[center_idx];
    std::stable_sort(others.begin(), others.end(), [&](int a, int b) {
        return center_distance(center, boxes[a]) < center_distance(center, boxes[b]);
    });
    const std::size_t n_leaves = std::min<std::size_t>(others.size(), static_cast<std::size_t>(std::max(k, 0)));

    StarGraph g;
    g.center = center_idx;
    for (std::size_t i = 0; i < n_leaves; ++i)
        g.leaves.push_back({others[i], to_matrix(relative(center.center, boxes[others[i]].center))});
    return g;
}

CandidateMap initial_match(const std::vector<DetectedBox>& boxes_i, const std::vector<DetectedBox>& boxes_j_in_i,
                           double tau2)
{
    CandidateMap map(boxes_i.size());
    std::vector<double> best(boxes_i.size(), std::numeric_limits<double>::infinity());
    for (std::size_t p = 0; p < boxes_i.size(); ++p) {
        for (std::size_t q = 0; q < boxes_j_in_i.size(); ++q) {
            const double d = center_distance(boxes_i[p], boxes_j_in_i[q]);
            if (d <= tau2 && d < best[p]) {
                best[p] = d;
                map[p] = static_cast<int>(q);
            }
        }
    }
    // nearest-wins on shared q
    for (std::size_t p = 0; p < boxes_i.size(); ++p) {
        if (!map[p])
            continue;
        for (std::size_t other = 0; other < boxes_i.size(); ++other) {
            if (other == p || map[other] != map[p])
                continue;
            if (best[other] < best[p] || (best[other] == best[p] && other < p)) {
                map[p].reset();
                break;
            }
        }
    }
    return map;
}

double edge_consistency(const Transform2& t_pm, const Transform2& t_qn)
{
    // (A - B) B^-1 equals A B^-1 - I and is exactly zero for equal inputs
    return std::exp(-((t_pm - t_qn) * rigid_inverse(t_qn)).norm());
}

double edge_similarity(const StarGraph& gp, const StarGraph& gq, const CandidateMap& candidates)
{
    double sum = 0.0;
    int matched = 0;
    for (const auto& leaf : gp.leaves) {
        if (leaf.index >= static_cast<int>(candidates.size()) || !candidates[leaf.index])
            continue;
        const StarLeaf* counterpart = gq.find_leaf(*candidates[leaf.index]);
        if (counterpart == nullptr)
            continue;
        sum += edge_consistency(leaf.edge_transform, counterpart->edge_transform);
        ++matched;
    }
    return matched == 0 ? 0.0 : sum / matched;
}

double distance_similarity(const DetectedBox& p, const DetectedBox& q)
{
    return std::exp(-center_distance(p, q));
}

double graph_similarity(const DetectedBox& p, const DetectedBox& q, const StarGraph& gp, const StarGraph& gq,
                        const CandidateMap& candidates, double lambda)
{
    return edge_similarity(gp, gq, candidates) + lambda * distance_similarity(p, q);
}

Assignment optimal_assignment(const Eigen::MatrixXd& scores, double tau1)
{
    if (!scores.allFinite())
        throw std::invalid_argument("optimal_assignment: non-finite score");
    const int rows = static_cast<int>(scores.rows());
    const int cols = static_cast<int>(scores.cols());
    Assignment result;
    if (rows == 0 || cols == 0)
        return result;

    // Minimisation of the negated, zero-padded square matrix; 1-based potentials.
    const int n = std::max(rows, cols);
    auto cost = [&](int i, int j) { return (i < rows && j < cols) ? -scores(i, j) : 0.0; };
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> owner(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        owner[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = owner[j0];
            double delta = inf;
            int j1 = 0;
            for (int j = 1; j <= n; ++j) {
                if (used[j])
                    continue;
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (owner[j0] != 0);
        do {
            const int j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
        } while (j0 != 0);
    }

    for (int j = 1; j <= n; ++j) {
        const int i = owner[j] - 1;
        const int q = j - 1;
        if (i < rows && q < cols && scores(i, q) >= tau1)
            result.pairs.push_back({i, q, scores(i, q)});
    }
    std::sort(result.pairs.begin(), result.pairs.end(), [](const MatchPair& a, const MatchPair& b) { return a.p < b.p; });
    return result;
}

Eigen::MatrixXd similarity_matrix(const std::vector<DetectedBox>& boxes_i, const std::vector<DetectedBox>& boxes_j_in_i,
                                  const MatchingParams& params)
{
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(boxes_i.size()),
                                              static_cast<Eigen::Index>(boxes_j_in_i.size()));
    if (boxes_i.empty() || boxes_j_in_i.empty())
        return s;
    const CandidateMap candidates = initial_match(boxes_i, boxes_j_in_i, params.tau2);
    std::vector<StarGraph> gi, gj;
    for (int p = 0; p < static_cast<int>(boxes_i.size()); ++p)
        gi.push_back(build_star_graph(p, boxes_i, params.k_neighbors));
    for (int q = 0; q < static_cast<int>(boxes_j_in_i.size()); ++q)
        gj.push_back(build_star_graph(q, boxes_j_in_i, params.k_neighbors));
    for (int p = 0; p < s.rows(); ++p)
        for (int q = 0; q < s.cols(); ++q)
            if (center_distance(boxes_i[p], boxes_j_in_i[q]) <= params.tau2)
                s(p, q) = graph_similarity(boxes_i[p], boxes_j_in_i[q], gi[p], gj[q], candidates, params.lambda);
    return s;
}

Assignment match_agents(const std::vector<DetectedBox>& boxes_i, const CollabMessage& msg, const Pose2& rel_estimate,
                        const MatchingParams& params)
{
    const std::vector<DetectedBox> aligned = transform_boxes(msg.boxes, rel_estimate);
    return optimal_assignment(similarity_matrix(boxes_i, aligned, params), params.tau1);
}

} // namespace codiff
