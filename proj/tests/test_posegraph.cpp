#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <numbers>
#include <random>
#include <sstream>

#include "codiff/evaluation.hpp"
#include "codiff/posegraph.hpp"
#include "support.hpp"

using namespace codiff;
using std::numbers::pi;

namespace {

Assignment pairs_of(std::initializer_list<std::pair<int, int>> list)
{
    Assignment a;
    for (const auto& [p, q] : list)
        a.pairs.push_back({p, q, 1.0});
    return a;
}

} // namespace

TEST_CASE("graph structure")
{
    const std::vector<AgentView> two{{0, Pose2::identity(), {testing::make_box(5, 0), testing::make_box(9, 9)}},
                                     {1, Pose2(10, 0, pi), {testing::make_box(5, 0)}}};
    const auto g = build_pose_graph(two, {{0, 1, pairs_of({{0, 0}})}}, 0, AgentPrior{});
    CHECK(g.agent_nodes.size() == 2);
    CHECK(g.object_nodes.size() == 1);
    CHECK(g.obs_edges.size() == 2);
    CHECK(g.agent_edges.size() == 1);
    CHECK(g.anchor == 0);
    g.validate();

    const auto none = build_pose_graph(two, {}, 0, AgentPrior{});
    CHECK(none.object_nodes.empty());
    CHECK(none.obs_edges.empty());
}

TEST_CASE("transitive matches merge into one landmark")
{
    const std::vector<AgentView> three{{0, Pose2::identity(), {testing::make_box(5, 0)}},
                                       {1, Pose2(10, 0, pi), {testing::make_box(5, 0)}},
                                       {2, Pose2(5, 10, -pi / 2), {testing::make_box(10, 0)}}};
    const auto g =
        build_pose_graph(three, {{0, 1, pairs_of({{0, 0}})}, {1, 2, pairs_of({{0, 0}})}}, 0, AgentPrior{});
    CHECK(g.object_nodes.size() == 1);
    CHECK(g.obs_edges.size() == 3);
    CHECK(g.agent_edges.size() == 2);
    // every view places the object at world (5, 0)
    CHECK(g.object_nodes.at(0).x() == doctest::Approx(5.0));
    CHECK(g.object_nodes.at(0).y() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("observation residual")
{
    const Transform2 e = to_matrix(Pose2(1, 2, 0.4));
    const Transform2 t = to_matrix(Pose2(3, -1, 0.2));
    CHECK(residual_obs(e, t, e * t).norm() < 1e-12);

    const Eigen::Vector3d shifted =
        residual_obs(Transform2::Identity(), Transform2::Identity(), to_matrix(Pose2(1, 0, 0)));
    CHECK(shifted.x() == doctest::Approx(1.0));
    CHECK(shifted.y() == doctest::Approx(0.0));
    CHECK(shifted.z() == doctest::Approx(0.0));

    const Eigen::Vector3d turned = residual_obs(e, t, e * t * to_matrix(Pose2(0, 0, 0.05)));
    CHECK(turned.head<2>().norm() < 1e-12);
    CHECK(turned.z() == doctest::Approx(0.05));
}

TEST_CASE("agent residual")
{
    const Transform2 ej = to_matrix(Pose2(1, 2, 0.4));
    const Transform2 ei = to_matrix(Pose2(-3, 5, -1.1));
    CHECK(residual_agent(ej, ei, rigid_inverse(ej) * ei).norm() < 1e-12);
    CHECK(residual_agent(Transform2::Identity(), Transform2::Identity(), Transform2::Identity()).norm() == 0.0);

    const Transform2 moved = ei * to_matrix(Pose2(0.5, 0, 0));
    const Eigen::Vector3d r = residual_agent(ej, moved, rigid_inverse(ej) * ei);
    CHECK(r.x() == doctest::Approx(0.5));
    CHECK(std::abs(r.y()) < 1e-12);
}

TEST_CASE("edge_residual agrees with the matrix form")
{
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-3, 3);
    for (int i = 0; i < 100; ++i) {
        const Pose2 a(u(rng), u(rng), u(rng)), m(u(rng), u(rng), u(rng)), b(u(rng), u(rng), u(rng));
        const Eigen::Vector3d r = edge_residual(a, m, b);
        const Eigen::Vector3d oracle = residual_obs(to_matrix(a), to_matrix(m), to_matrix(b));
        CHECK((r - oracle).norm() < 1e-9);
    }
}

TEST_CASE("analytic Jacobians match central differences")
{
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-10, 10), ang(-3, 3), small(-0.5, 0.5);
    for (int i = 0; i < 100; ++i) {
        const Pose2 a(u(rng), u(rng), ang(rng)), m(u(rng), u(rng), ang(rng));
        const Pose2 b = compose(compose(a, m), Pose2(small(rng), small(rng), small(rng)));
        Eigen::Matrix3d ja, jb;
        edge_residual(a, m, b, &ja, &jb);
        const auto [na, nb] = testing::numeric_edge_jacobians(a, m, b);
        CHECK((ja - na).norm() / na.norm() < 1e-5);
        CHECK((jb - nb).norm() / nb.norm() < 1e-5);
    }
}

TEST_CASE("total cost")
{
    PoseGraphProblem p;
    p.agent_nodes[0] = Pose2::identity();
    p.object_nodes[0] = Pose2(1, 0, 0);
    p.obs_edges.push_back({0, 0, Transform2::Identity(), Eigen::Matrix3d::Identity()});
    CHECK(total_cost(p, p.initial_state()) == doctest::Approx(1.0));

    p.object_nodes[0] = Pose2(1, 2, 0);
    p.obs_edges[0].information = Eigen::Vector3d(4, 1, 1).asDiagonal();
    CHECK(total_cost(p, p.initial_state()) == doctest::Approx(8.0));

    p.object_nodes[0] = Pose2::identity();
    CHECK(total_cost(p, p.initial_state()) == 0.0);
}

TEST_CASE("zero-noise problem is a fixed point")
{
    std::mt19937_64 rng(6);
    const PoseGraphProblem p = testing::random_problem(rng, 3, 6, 0.0);
    SolveReport rep;
    const PoseGraphState s = solve_lm(p, SolverOptions{}, &rep);
    CHECK(rep.converged);
    CHECK(rep.final_cost < 1e-20);
    for (const auto& [id, pose] : s.agents)
        CHECK((pose.vector() - p.agent_nodes.at(id).vector()).norm() < 1e-10);
    for (const auto& [id, pose] : s.objects)
        CHECK((pose.vector() - p.object_nodes.at(id).vector()).norm() < 1e-10);
}

TEST_CASE("single observation edge is solved exactly")
{
    PoseGraphProblem p;
    p.agent_nodes[0] = Pose2(1, -2, 0.3);
    p.object_nodes[0] = Pose2(0, 0, 0);
    const Pose2 m(4, 1, -0.7);
    p.obs_edges.push_back({0, 0, to_matrix(m), Eigen::Vector3d(3, 2, 5).asDiagonal()});
    const PoseGraphState s = solve_lm(p, SolverOptions{});
    const Pose2 expected = compose(p.agent_nodes.at(0), m);
    CHECK((s.objects.at(0).translation() - expected.translation()).norm() < 1e-8);
    CHECK(std::abs(wrap_angle(s.objects.at(0).theta() - expected.theta())) < 1e-8);
}

TEST_CASE("collinear three-edge problem matches weighted least squares")
{
    // everything on the x axis with zero headings: the problem reduces to a linear 1-D fit
    const double w0 = 4.0, w1 = 9.0, wa = 2.0;
    const double m0 = 7.0, m1 = -3.2, t = 9.5;
    PoseGraphProblem p;
    p.agent_nodes[0] = Pose2::identity();
    p.agent_nodes[1] = Pose2(9.0, 0, 0);
    p.object_nodes[0] = Pose2(6.0, 0, 0);
    p.obs_edges.push_back({0, 0, to_matrix(Pose2(m0, 0, 0)), Eigen::Vector3d(w0, w0, w0).asDiagonal()});
    p.obs_edges.push_back({1, 0, to_matrix(Pose2(m1, 0, 0)), Eigen::Vector3d(w1, w1, w1).asDiagonal()});
    p.agent_edges.push_back({1, 0, to_matrix(Pose2(-t, 0, 0)), Eigen::Vector3d(wa, wa, wa).asDiagonal()});

    // minimize w0 (o - m0)^2 + w1 (o - a - m1)^2 + wa (-a + t)^2 over (o, a)
    Eigen::Matrix2d normal;
    normal << w0 + w1, -w1, -w1, w1 + wa;
    const Eigen::Vector2d rhs(w0 * m0 + w1 * m1, -w1 * m1 + wa * t);
    const Eigen::Vector2d oa = normal.inverse() * rhs;

    const PoseGraphState s = solve_lm(p, SolverOptions{});
    CHECK(std::abs(s.objects.at(0).x() - oa(0)) < 1e-8);
    CHECK(std::abs(s.agents.at(1).x() - oa(1)) < 1e-8);
    CHECK(std::abs(s.agents.at(1).y()) < 1e-8);
    CHECK(std::abs(s.agents.at(1).theta()) < 1e-8);
}

TEST_CASE("accepted costs never increase")
{
    std::mt19937_64 rng(7);
    for (int i = 0; i < 50; ++i) {
        const PoseGraphProblem p = testing::random_problem(rng, 3, 8, 0.3);
        SolveReport rep;
        solve_lm(p, SolverOptions{}, &rep);
        for (std::size_t k = 1; k < rep.cost_trace.size(); ++k)
            CHECK(rep.cost_trace[k] <= rep.cost_trace[k - 1]);
        CHECK(rep.final_cost <= rep.initial_cost);
    }
}

TEST_CASE("invalid problems are rejected")
{
    PoseGraphProblem p;
    p.agent_nodes[1] = Pose2::identity();
    p.anchor = 0;
    CHECK_THROWS_AS(solve_lm(p, SolverOptions{}), std::invalid_argument);
    p.anchor = 1;
    p.obs_edges.push_back({1, 5, Transform2::Identity(), Eigen::Matrix3d::Identity()});
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);
}

TEST_CASE("unconstrained free variables raise SolverError")
{
    // agent 1 is free and touches nothing while the object still carries cost
    PoseGraphProblem p;
    p.agent_nodes[0] = Pose2::identity();
    p.agent_nodes[1] = Pose2(3, 0, 0);
    p.object_nodes[0] = Pose2(1, 0, 0);
    p.obs_edges.push_back({0, 0, Transform2::Identity(), Eigen::Matrix3d::Identity()});
    SolveReport rep;
    try {
        solve_lm(p, SolverOptions{}, &rep);
        FAIL("expected SolverError");
    } catch (const SolverError& e) {
        CHECK_FALSE(e.report.converged);
        CHECK(e.report.initial_cost == doctest::Approx(1.0));
    }
}

TEST_CASE("calibration reduces agent error on average")
{
    PipelineConfig cfg = testing::noisy_pipeline(0.4);
    cfg.scene.n_objects = 10;
    double before = 0.0, after = 0.0;
    for (std::uint64_t s = 0; s < 100; ++s) {
        const TrialResult r = run_trial(cfg, PipelineFlags{true, false}, derive_seed(77, s));
        before += r.pose_before.trans_rmse;
        after += r.pose_after.trans_rmse;
    }
    CHECK(after < before);
}

TEST_CASE("corrected_relative_pose")
{
    const Pose2 p(1.5, -2, 0.8);
    const Pose2 same = corrected_relative_pose(p, p);
    CHECK(same.vector().norm() < 1e-12);
    CHECK(corrected_relative_pose(Pose2::identity(), p).vector().isApprox(p.vector()));
    const Pose2 r = corrected_relative_pose(Pose2(1, 0, 0), Pose2(2, 0, 0));
    CHECK(r.x() == doctest::Approx(1.0));
    CHECK(r.y() == doctest::Approx(0.0));
}

TEST_CASE("pose graph text round trip")
{
    std::mt19937_64 rng(8);
    const PoseGraphProblem p = testing::random_problem(rng, 3, 4, 0.2);
    std::stringstream ss;
    write_pose_graph(ss, p);
    const PoseGraphProblem q = read_pose_graph(ss);
    CHECK(q.anchor == p.anchor);
    CHECK(q.obs_edges.size() == p.obs_edges.size());
    CHECK(q.agent_edges.size() == p.agent_edges.size());
    CHECK(total_cost(q, q.initial_state()) == doctest::Approx(total_cost(p, p.initial_state())).epsilon(1e-12));

    std::stringstream bad("AGENT 1 2\n");
    CHECK_THROWS_WITH(read_pose_graph(bad), doctest::Contains("line 1"));
}
