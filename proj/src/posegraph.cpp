#include "codiff/posegraph.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <utility>

#include <Eigen/Cholesky>

namespace codiff {

void PoseGraphProblem::validate() const
{
    if (!agent_nodes.contains(anchor))
        throw std::invalid_argument("PoseGraphProblem: anchor agent " + std::to_string(anchor) + " missing");
    auto positive = [](const Eigen::Matrix3d& omega) {
        return omega.allFinite() && (omega.diagonal().array() > 0.0).all();
    };
    for (const auto& e : obs_edges) {
        if (!agent_nodes.contains(e.agent) || !object_nodes.contains(e.object))
            throw std::invalid_argument("PoseGraphProblem: observation edge references a missing node");
        if (!positive(e.information))
            throw std::invalid_argument("PoseGraphProblem: observation information must be positive");
    }
    for (const auto& e : agent_edges) {
        if (!agent_nodes.contains(e.from) || !agent_nodes.contains(e.to))
            throw std::invalid_argument("PoseGraphProblem: agent edge references a missing node");
        if (!positive(e.information))
            throw std::invalid_argument("PoseGraphProblem: agent information must be positive");
    }
}

namespace {

class DisjointSet {
public:
    explicit DisjointSet(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), std::size_t{0}); }
    std::size_t find(std::size_t x)
    {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }
    void unite(std::size_t a, std::size_t b)
    {
        a = find(a);
        b = find(b);
        if (a != b)
            parent_[std::max(a, b)] = std::min(a, b);
    }

private:
    std::vector<std::size_t> parent_;
};

Pose2 mean_pose(const std::vector<Pose2>& poses)
{
    double x = 0, y = 0, c = 0, s = 0;
    for (const auto& p : poses) {
        x += p.x();
        y += p.y();
        c += std::cos(p.theta());
        s += std::sin(p.theta());
    }
    const double n = static_cast<double>(poses.size());
    return {x / n, y / n, std::atan2(s, c)};
}

Eigen::Matrix3d prior_information(const AgentPrior& prior)
{
    const double st = std::max(prior.sigma_t, kMinReportedSigma);
    const double sr = std::max(prior.sigma_r, kMinReportedSigma);
    return Eigen::Vector3d(1.0 / (st * st), 1.0 / (st * st), 1.0 / (sr * sr)).asDiagonal();
}

} // namespace

PoseGraphProblem build_pose_graph(const std::vector<AgentView>& views, const std::vector<PairAssignment>& pairs,
                                  int ego_id, const AgentPrior& prior)
{
    PoseGraphProblem problem;
    problem.anchor = ego_id;

    // Detection nodes: (view index, box index) flattened.
    std::map<int, std::size_t> view_of;
    std::vector<std::size_t> offset;
    std::size_t total = 0;
    for (std::size_t v = 0; v < views.size(); ++v) {
        if (!view_of.emplace(views[v].id, v).second)
            throw std::invalid_argument("build_pose_graph: duplicate agent id");
        offset.push_back(total);
        total += views[v].boxes.size();
        problem.agent_nodes[views[v].id] = views[v].reported_pose;
    }
    if (!view_of.contains(ego_id))
        throw std::invalid_argument("build_pose_graph: ego agent missing from views");

    DisjointSet sets(total);
    std::vector<char> matched(total, 0);
    for (const auto& pa : pairs) {
        pa.assignment.check_one_to_one();
        const std::size_t va = view_of.at(pa.agent_a);
        const std::size_t vb = view_of.at(pa.agent_b);
        for (const auto& pr : pa.assignment.pairs) {
            if (pr.p < 0 || pr.p >= static_cast<int>(views[va].boxes.size()) || pr.q < 0 ||
                pr.q >= static_cast<int>(views[vb].boxes.size()))
                throw std::out_of_range("build_pose_graph: assignment index out of range");
            const std::size_t a = offset[va] + static_cast<std::size_t>(pr.p);
            const std::size_t b = offset[vb] + static_cast<std::size_t>(pr.q);
            sets.unite(a, b);
            matched[a] = matched[b] = 1;
        }
    }

    // Landmark ids in order of their smallest member.
    std::map<std::size_t, int> landmark_of_root;
    std::map<int, std::vector<Pose2>> estimates;
    for (std::size_t v = 0; v < views.size(); ++v) {
        for (std::size_t b = 0; b < views[v].boxes.size(); ++b) {
            const std::size_t node = offset[v] + b;
            if (!matched[node])
                continue;
            const std::size_t root = sets.find(node);
            auto [it, inserted] = landmark_of_root.emplace(root, static_cast<int>(landmark_of_root.size()));
            const int landmark = it->second;
            const DetectedBox& box = views[v].boxes[b];
            problem.obs_edges.push_back({views[v].id, landmark, to_matrix(box.center), box.information()});
            estimates[landmark].push_back(compose(views[v].reported_pose, box.center));
        }
    }
    for (const auto& [id, poses] : estimates)
        problem.object_nodes[id] = mean_pose(poses);

    const Pose2& ego_pose = views[view_of.at(ego_id)].reported_pose;
    const Eigen::Matrix3d omega = prior_information(prior);
    for (const auto& view : views) {
        if (view.id == ego_id)
            continue;
        problem.agent_edges.push_back({view.id, ego_id, to_matrix(relative(view.reported_pose, ego_pose)), omega});
    }
    return problem;
}

PoseGraphProblem build_pose_graph(const std::vector<Assignment>& assignments, const std::vector<CollabMessage>& messages,
                                  const std::vector<DetectedBox>& ego_boxes, int ego_id, const Pose2& ego_reported_pose,
                                  const AgentPrior& prior)
{
    if (assignments.size() != messages.size())
        throw std::invalid_argument("build_pose_graph: one assignment per message required");
    std::vector<AgentView> views{{ego_id, ego_reported_pose, ego_boxes}};
    std::vector<PairAssignment> pairs;
    for (std::size_t m = 0; m < messages.size(); ++m) {
        views.push_back({messages[m].sender_id, messages[m].reported_pose, messages[m].boxes});
        pairs.push_back({ego_id, messages[m].sender_id, assignments[m]});
    }
    return build_pose_graph(views, pairs, ego_id, prior);
}

Eigen::Vector3d extract_residual(const Transform2& error)
{
    return {error(0, 2), error(1, 2), wrap_angle(std::atan2(error(1, 0), error(0, 0)))};
}

Eigen::Vector3d residual_obs(const Transform2& agent, const Transform2& measurement, const Transform2& object)
{
    return extract_residual(rigid_inverse(measurement) * rigid_inverse(agent) * object);
}

Eigen::Vector3d residual_agent(const Transform2& agent_j, const Transform2& agent_i, const Transform2& t_ji)
{
    return extract_residual(rigid_inverse(t_ji) * rigid_inverse(agent_j) * agent_i);
}

Eigen::Vector3d edge_residual(const Pose2& a, const Pose2& m, const Pose2& b, Eigen::Matrix3d* jac_a,
                              Eigen::Matrix3d* jac_b)
{
    const Pose2 predicted = compose(a, m);
    const Pose2 err = relative(predicted, b);
    if (jac_a != nullptr || jac_b != nullptr) {
        const Eigen::Matrix2d rt = predicted.rotation().transpose();
        if (jac_b != nullptr) {
            jac_b->setZero();
            jac_b->topLeftCorner<2, 2>() = rt;
            (*jac_b)(2, 2) = 1.0;
        }
        if (jac_a != nullptr) {
            Eigen::Matrix2d skew;
            skew << 0.0, -1.0, 1.0, 0.0;
            const Eigen::Vector2d delta = b.translation() - predicted.translation();
            jac_a->setZero();
            jac_a->topLeftCorner<2, 2>() = -rt;
            jac_a->block<2, 1>(0, 2) = rt * skew.transpose() * delta - rt * skew * a.rotation() * m.translation();
            (*jac_a)(2, 2) = -1.0;
        }
    }
    return err.vector();
}

namespace {

struct Linearization {
    Eigen::MatrixXd hessian;
    Eigen::VectorXd gradient;
};

class Layout {
public:
    explicit Layout(const PoseGraphProblem& problem)
    {
        int next = 0;
        for (const auto& [id, pose] : problem.agent_nodes)
            if (id != problem.anchor)
                agent_index_[id] = next++;
        for (const auto& [id, pose] : problem.object_nodes)
            object_index_[id] = next++;
        size_ = 3 * next;
    }
    int agent(int id) const
    {
        const auto it = agent_index_.find(id);
        return it == agent_index_.end() ? -1 : 3 * it->second;
    }
    int object(int id) const { return 3 * object_index_.at(id); }
    int size() const { return size_; }

    PoseGraphState apply(const PoseGraphState& state, const Eigen::VectorXd& step) const
    {
        PoseGraphState out = state;
        auto shift = [&](Pose2& p, int col) {
            p = Pose2(p.x() + step(col), p.y() + step(col + 1), p.theta() + step(col + 2));
        };
        for (auto& [id, pose] : out.agents)
            if (const int col = agent(id); col >= 0)
                shift(pose, col);
        for (auto& [id, pose] : out.objects)
            shift(pose, object(id));
        return out;
    }

private:
    std::map<int, int> agent_index_;
    std::map<int, int> object_index_;
    int size_ = 0;
};

void accumulate(Linearization& lin, int col_a, int col_b, const Eigen::Matrix3d& ja, const Eigen::Matrix3d& jb,
                const Eigen::Matrix3d& omega, const Eigen::Vector3d& r)
{
    if (col_a >= 0) {
        lin.hessian.block<3, 3>(col_a, col_a) += ja.transpose() * omega * ja;
        lin.gradient.segment<3>(col_a) += ja.transpose() * omega * r;
    }
    if (col_b >= 0) {
        lin.hessian.block<3, 3>(col_b, col_b) += jb.transpose() * omega * jb;
        lin.gradient.segment<3>(col_b) += jb.transpose() * omega * r;
    }
    if (col_a >= 0 && col_b >= 0) {
        const Eigen::Matrix3d cross = ja.transpose() * omega * jb;
        lin.hessian.block<3, 3>(col_a, col_b) += cross;
        lin.hessian.block<3, 3>(col_b, col_a) += cross.transpose();
    }
}

Linearization linearize(const PoseGraphProblem& problem, const PoseGraphState& state, const Layout& layout)
{
    Linearization lin{Eigen::MatrixXd::Zero(layout.size(), layout.size()), Eigen::VectorXd::Zero(layout.size())};
    Eigen::Matrix3d ja, jb;
    for (const auto& e : problem.obs_edges) {
        const Eigen::Vector3d r = edge_residual(state.agents.at(e.agent), from_matrix(e.measurement),
                                                state.objects.at(e.object), &ja, &jb);
        accumulate(lin, layout.agent(e.agent), layout.object(e.object), ja, jb, e.information, r);
    }
    for (const auto& e : problem.agent_edges) {
        const Eigen::Vector3d r =
            edge_residual(state.agents.at(e.from), from_matrix(e.measurement), state.agents.at(e.to), &ja, &jb);
        accumulate(lin, layout.agent(e.from), layout.agent(e.to), ja, jb, e.information, r);
    }
    return lin;
}

} // namespace

double total_cost(const PoseGraphProblem& problem, const PoseGraphState& state)
{
    double cost = 0.0;
    for (const auto& e : problem.obs_edges) {
        const Eigen::Vector3d r =
            residual_obs(to_matrix(state.agents.at(e.agent)), e.measurement, to_matrix(state.objects.at(e.object)));
        cost += r.dot(e.information * r);
    }
    for (const auto& e : problem.agent_edges) {
        const Eigen::Vector3d r =
            residual_agent(to_matrix(state.agents.at(e.from)), to_matrix(state.agents.at(e.to)), e.measurement);
        cost += r.dot(e.information * r);
    }
    return cost;
}

PoseGraphState solve_lm(const PoseGraphProblem& problem, const SolverOptions& options, SolveReport* report)
{
    problem.validate();
    const Layout layout(problem);
    PoseGraphState state = problem.initial_state();

    SolveReport rep;
    double cost = total_cost(problem, state);
    rep.initial_cost = cost;
    rep.cost_trace.push_back(cost);

    auto finish = [&](bool converged, std::string note) {
        rep.final_cost = cost;
        rep.converged = converged;
        rep.note = std::move(note);
        if (report != nullptr)
            *report = rep;
    };

    if (layout.size() == 0) {
        finish(true, "no free variables");
        return state;
    }

    double damping = options.initial_damping;
    for (int iter = 0; iter < options.max_iterations; ++iter) {
        rep.iterations = iter + 1;
        if (cost <= std::numeric_limits<double>::min()) {
            finish(true, "zero cost");
            return state;
        }
        const Linearization lin = linearize(problem, state, layout);
        if (lin.gradient.lpNorm<Eigen::Infinity>() < options.gradient_tolerance) {
            finish(true, "gradient tolerance reached");
            return state;
        }
        const Eigen::VectorXd diag = lin.hessian.diagonal();
        for (;;) {
            Eigen::MatrixXd damped = lin.hessian;
            damped.diagonal() += damping * diag;
            const Eigen::LDLT<Eigen::MatrixXd> ldlt(damped);
            Eigen::VectorXd step;
            // LDLT accepts zero pivots silently; a zero pivot means an unconstrained direction
            bool solvable = ldlt.info() == Eigen::Success && (ldlt.vectorD().array() > 0.0).all();
            if (solvable) {
                step = ldlt.solve(-lin.gradient);
                solvable = step.allFinite();
            }
            if (solvable) {
                const PoseGraphState candidate = layout.apply(state, step);
                const double candidate_cost = total_cost(problem, candidate);
                if (std::isfinite(candidate_cost) && candidate_cost < cost) {
                    const double relative_change = (cost - candidate_cost) / cost;
                    state = candidate;
                    cost = candidate_cost;
                    rep.cost_trace.push_back(cost);
                    damping = std::max(damping / 10.0, 1e-15);
                    if (relative_change < options.cost_tolerance) {
                        finish(true, "cost tolerance reached");
                        return state;
                    }
                    break;
                }
            }
            damping *= 10.0;
            if (damping > 1e12) {
                if (solvable) {
                    // finite steps that no longer reduce the cost: numerical floor
                    finish(true, "stalled at numerical precision");
                    return state;
                }
                finish(false, "singular normal equations");
                std::ostringstream msg;
                msg << "solve_lm: normal equations singular after damping escalation (damping > 1e12) at iteration "
                    << rep.iterations << ", cost " << cost << ", " << layout.size() << " free variables";
                throw SolverError(msg.str(), rep);
            }
        }
    }
    finish(false, "iteration limit reached");
    return state;
}

Pose2 corrected_relative_pose(const Pose2& xi_i, const Pose2& xi_j_opt)
{
    return relative(xi_i, xi_j_opt);
}

namespace {

void write_information(std::ostream& os, const Eigen::Matrix3d& omega)
{
    os << ' ' << omega(0, 0) << ' ' << omega(1, 1) << ' ' << omega(2, 2);
}

void write_pose(std::ostream& os, const Pose2& p) { os << ' ' << p.x() << ' ' << p.y() << ' ' << p.theta(); }

} // namespace

void write_pose_graph(std::ostream& os, const PoseGraphProblem& problem)
{
    const auto old_precision = os.precision(17);
    os << "# codiff pose graph v1\n";
    os << "ANCHOR " << problem.anchor << '\n';
    for (const auto& [id, pose] : problem.agent_nodes) {
        os << "AGENT " << id;
        write_pose(os, pose);
        os << '\n';
    }
    for (const auto& [id, pose] : problem.object_nodes) {
        os << "OBJECT " << id;
        write_pose(os, pose);
        os << '\n';
    }
    for (const auto& e : problem.obs_edges) {
        os << "OBS " << e.agent << ' ' << e.object;
        write_pose(os, from_matrix(e.measurement));
        write_information(os, e.information);
        os << '\n';
    }
    for (const auto& e : problem.agent_edges) {
        os << "PRIOR " << e.from << ' ' << e.to;
        write_pose(os, from_matrix(e.measurement));
        write_information(os, e.information);
        os << '\n';
    }
    os.precision(old_precision);
}

PoseGraphProblem read_pose_graph(std::istream& is)
{
    PoseGraphProblem problem;
    std::string line;
    int line_no = 0;
    auto fail = [&](const std::string& why) {
        throw std::invalid_argument("pose graph line " + std::to_string(line_no) + ": " + why);
    };
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty() || line.front() == '#')
            continue;
        std::istringstream in(line);
        std::string tag;
        in >> tag;
        if (tag == "ANCHOR") {
            if (!(in >> problem.anchor))
                fail("bad ANCHOR record");
        } else if (tag == "AGENT" || tag == "OBJECT") {
            int id;
            double x, y, t;
            if (!(in >> id >> x >> y >> t))
                fail("bad node record");
            (tag == "AGENT" ? problem.agent_nodes : problem.object_nodes)[id] = Pose2(x, y, t);
        } else if (tag == "OBS" || tag == "PRIOR") {
            int a, b;
            double x, y, t, wx, wy, wt;
            if (!(in >> a >> b >> x >> y >> t >> wx >> wy >> wt))
                fail("bad edge record");
            const Transform2 meas = to_matrix(Pose2(x, y, t));
            const Eigen::Matrix3d omega = Eigen::Vector3d(wx, wy, wt).asDiagonal();
            if (tag == "OBS")
                problem.obs_edges.push_back({a, b, meas, omega});
            else
                problem.agent_edges.push_back({a, b, meas, omega});
        } else {
            fail("unknown record '" + tag + "'");
        }
    }
    problem.validate();
    return problem;
}

} // namespace codiff
