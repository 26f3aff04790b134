#pragma once

#include <iosfwd>
#include <map>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "codiff/geometry.hpp"
#include "codiff/matching.hpp"
#include "codiff/scenario.hpp"

namespace codiff {

/// Agent -> object detection edge; measurement is the box pose in the agent frame.
struct ObservationEdge {
    int agent = 0;
    int object = 0;
    Transform2 measurement = Transform2::Identity();
    Eigen::Matrix3d information = Eigen::Matrix3d::Identity();
};

/// Relative pose prior between agents: measurement is agent `to` seen from agent `from`.
struct AgentEdge {
    int from = 0;
    int to = 0;
    Transform2 measurement = Transform2::Identity();
    Eigen::Matrix3d information = Eigen::Matrix3d::Identity();
};

struct PoseGraphState {
    std::map<int, Pose2> agents;
    std::map<int, Pose2> objects;
};

struct PoseGraphProblem {
    std::map<int, Pose2> agent_nodes;
    std::map<int, Pose2> object_nodes;
    std::vector<ObservationEdge> obs_edges;
    std::vector<AgentEdge> agent_edges;
    int anchor = 0;

    PoseGraphState initial_state() const { return {agent_nodes, object_nodes}; }
    /// Throws std::invalid_argument on dangling edges, non-positive information or a missing anchor.
    void validate() const;
};

struct SolverOptions {
    int max_iterations = 1000;
    double cost_tolerance = 1e-8;
    double gradient_tolerance = 1e-8;
    double initial_damping = 1e-3;
};

struct SolveReport {
    int iterations = 0;
    double initial_cost = 0.0;
    double final_cost = 0.0;
    bool converged = false;
    std::vector<double> cost_trace; ///< initial cost followed by every accepted cost
    std::string note;
};

class SolverError : public std::runtime_error {
public:
    SolverError(const std::string& what, SolveReport partial) : std::runtime_error(what), report(std::move(partial)) { }
    SolveReport report;
};

/// Per-agent input to graph construction: reported pose and boxes in its own frame.
struct AgentView {
    int id = 0;
    Pose2 reported_pose;
    std::vector<DetectedBox> boxes;
};

/// Assignment between two agents' box lists (p indexes agent_a's boxes, q agent_b's).
struct PairAssignment {
    int agent_a = 0;
    int agent_b = 0;
    Assignment assignment;
};

/// Standard deviations behind the inter-agent information matrix.
struct AgentPrior {
    double sigma_t = 0.4;                ///< meters
    double sigma_r = 0.4 * std::numbers::pi / 180.0; ///< radians
};

PoseGraphProblem build_pose_graph(const std::vector<AgentView>& views, const std::vector<PairAssignment>& pairs,
                                  int ego_id, const AgentPrior& prior);

/// Convenience overload for the ego/message layout: one assignment per message, ego boxes on the p side.
PoseGraphProblem build_pose_graph(const std::vector<Assignment>& assignments, const std::vector<CollabMessage>& messages,
                                  const std::vector<DetectedBox>& ego_boxes, int ego_id, const Pose2& ego_reported_pose,
                                  const AgentPrior& prior);

/// (tx, ty, wrapped angle) of an SE(2) error transform.
Eigen::Vector3d extract_residual(const Transform2& error);

/// T_meas^-1 * E_agent^-1 * X_obj.
Eigen::Vector3d residual_obs(const Transform2& agent, const Transform2& measurement, const Transform2& object);

/// T_ji^-1 * E_j^-1 * E_i.
Eigen::Vector3d residual_agent(const Transform2& agent_j, const Transform2& agent_i, const Transform2& t_ji);

/// Residual of relative(a * m, b) with analytic Jacobians with respect to a and b.
Eigen::Vector3d edge_residual(const Pose2& a, const Pose2& m, const Pose2& b, Eigen::Matrix3d* jac_a = nullptr,
                              Eigen::Matrix3d* jac_b = nullptr);

double total_cost(const PoseGraphProblem& problem, const PoseGraphState& state);

/// Levenberg-Marquardt over all non-anchor nodes. Throws SolverError when the damped system stays singular.
PoseGraphState solve_lm(const PoseGraphProblem& problem, const SolverOptions& options, SolveReport* report = nullptr);

/// xi_i^-1 * xi_j'.
Pose2 corrected_relative_pose(const Pose2& xi_i, const Pose2& xi_j_opt);

/// Line-oriented text dump: ANCHOR / AGENT / OBJECT / OBS / PRIOR records.
void write_pose_graph(std::ostream& os, const PoseGraphProblem& problem);
PoseGraphProblem read_pose_graph(std::istream& is);

} // namespace codiff
