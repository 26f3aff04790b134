#pragma once

#include <optional>
#include <vector>

#include <Eigen/Core>

#include "codiff/geometry.hpp"
#include "codiff/scenario.hpp"

namespace codiff {

struct MatchingParams {
    double tau1 = 0.5;   ///< similarity threshold applied after assignment
    double tau2 = 3.0;   ///< initial-match distance gate, meters
    double lambda = 1.0; ///< weight of the distance similarity
    int k_neighbors = 5; ///< star-graph leaves
};

struct StarLeaf {
    int index = 0;
    Transform2 edge_transform = Transform2::Identity(); ///< center box -> leaf box
};

struct StarGraph {
    int center = 0;
    std::vector<StarLeaf> leaves;

    const StarLeaf* find_leaf(int index) const;
};

struct MatchPair {
    int p = 0; ///< index into the ego boxes
    int q = 0; ///< index into the collaborator boxes
    double score = 0.0;

    bool operator==(const MatchPair&) const = default;
};

/// One-to-one correspondences, sorted by p.
struct Assignment {
    std::vector<MatchPair> pairs;

    double total_score() const;
    /// Throws std::logic_error if any p or q repeats.
    void check_one_to_one() const;
};

/// For each p, the matched q (if any).
using CandidateMap = std::vector<std::optional<int>>;

std::vector<DetectedBox> transform_boxes(const std::vector<DetectedBox>& boxes, const Pose2& rel);

StarGraph build_star_graph(int center_idx, const std::vector<DetectedBox>& boxes, int k);

/// Nearest q within tau2 for each p; a q claimed by several p stays with the nearest one.
CandidateMap initial_match(const std::vector<DetectedBox>& boxes_i, const std::vector<DetectedBox>& boxes_j_in_i,
                           double tau2);

/// exp(-||T_pm * T_qn^-1 - I||_F).
double edge_consistency(const Transform2& t_pm, const Transform2& t_qn);

/// Mean edge consistency over leaves of gp whose candidate is a leaf of gq; 0 when none match.
double edge_similarity(const StarGraph& gp, const StarGraph& gq, const CandidateMap& candidates);

double distance_similarity(const DetectedBox& p, const DetectedBox& q);

double graph_similarity(const DetectedBox& p, const DetectedBox& q, const StarGraph& gp, const StarGraph& gq,
                        const CandidateMap& candidates, double lambda);

/// Kuhn-Munkres maximum-score assignment on a rectangular matrix (zero-padded), then drops pairs below tau1.
Assignment optimal_assignment(const Eigen::MatrixXd& scores, double tau1);

/// Full first-stage pipeline: align, gate, build star graphs, score, assign.
Assignment match_agents(const std::vector<DetectedBox>& boxes_i, const CollabMessage& msg, const Pose2& rel_estimate,
                        const MatchingParams& params);

/// Similarity matrix used by match_agents; exposed for diagnostics.
Eigen::MatrixXd similarity_matrix(const std::vector<DetectedBox>& boxes_i, const std::vector<DetectedBox>& boxes_j_in_i,
                                  const MatchingParams& params);

} // namespace codiff
