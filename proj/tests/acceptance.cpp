// Acceptance suite: one PASS/FAIL line per criterion. `acceptance --criterion N` runs a single one.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <fmt/format.h>

#include "codiff/diffusion.hpp"
#include "codiff/evaluation.hpp"
#include "codiff/matching.hpp"
#include "codiff/posegraph.hpp"
#include "support.hpp"

using namespace codiff;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass;
    std::string detail;
};

int jobs()
{
    return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

Latent random_latent(Rng& rng, int h, int w, int c)
{
    Latent z(h, w, c);
    for (Eigen::Index i = 0; i < z.data.size(); ++i)
        z.data.data()[i] = gaussian(rng, 1.0);
    return z;
}

Outcome assignment_optimality()
{
    std::mt19937_64 rng(1001);
    std::uniform_int_distribution<int> dim(1, 7);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int exact = 0;
    const int n = 1000;
    for (int it = 0; it < n; ++it) {
        Eigen::MatrixXd s(dim(rng), dim(rng));
        for (Eigen::Index i = 0; i < s.size(); ++i)
            s.data()[i] = u(rng);
        exact += optimal_assignment(s, 0.0).total_score() == testing::brute_force_assignment(s);
    }
    return {exact == n, fmt::format("{}/{} matrices exactly optimal", exact, n)};
}

Outcome noiseless_fixed_point()
{
    const PipelineConfig cfg; // every noise source off
    int ok = 0;
    double worst_pose = 0.0, worst_iou = 1.0, worst_f1 = 1.0;
    const int n = 200;
    for (int k = 0; k < n; ++k) {
        const TrialResult r = run_trial(cfg, PipelineFlags{true, true}, derive_seed(2002, static_cast<std::uint64_t>(k)));
        const double f1 = r.matching ? r.matching->f1 : 0.0;
        const double pose = std::max(r.pose_after.trans_rmse, r.pose_after.rot_rmse);
        worst_pose = std::max(worst_pose, pose);
        worst_iou = std::min(worst_iou, r.iou_after);
        worst_f1 = std::min(worst_f1, f1);
        ok += f1 == 1.0 && pose <= 1e-9 && r.iou_after >= 0.999;
    }
    return {ok == n, fmt::format("{}/{} scenes; min F1 {:.4f}, max pose RMSE {:.3g}, min IoU {:.6f}", ok, n, worst_f1,
                                 worst_pose, worst_iou)};
}

Outcome pcm_efficacy()
{
    const PipelineConfig cfg = testing::noisy_pipeline(0.4);
    const int n = 100;
    std::vector<double> before, after;
    int wins = 0;
    for (int k = 0; k < n; ++k) {
        const std::uint64_t seed = derive_seed(3003, static_cast<std::uint64_t>(k));
        const TrialResult on = run_trial(cfg, PipelineFlags{true, true}, seed);
        const TrialResult off = run_trial(cfg, PipelineFlags{false, true}, seed);
        before.push_back(on.pose_before.trans_rmse);
        after.push_back(on.pose_after.trans_rmse);
        wins += on.iou_after >= off.iou_after;
    }
    const double mb = median(before), ma = median(after);
    return {ma <= 0.5 * mb && wins >= 95,
            fmt::format("median trans RMSE {:.4f} -> {:.4f} m (ratio {:.3f}, need <= 0.5); pcm-on IoU >= off in {}/{}",
                        mb, ma, ma / mb, wins, n)};
}

Outcome lm_correctness()
{
    std::mt19937_64 rng(4004);
    int monotone = 0;
    for (int i = 0; i < 100; ++i) {
        const PoseGraphProblem p = testing::random_problem(rng, 3, 8, 0.3);
        SolveReport rep;
        solve_lm(p, SolverOptions{}, &rep);
        bool ok = true;
        for (std::size_t k = 1; k < rep.cost_trace.size(); ++k)
            ok = ok && rep.cost_trace[k] <= rep.cost_trace[k - 1];
        monotone += ok;
    }

    std::uniform_real_distribution<double> pos(-10, 10), ang(-3, 3), small(-0.5, 0.5);
    double worst_jac = 0.0;
    for (int i = 0; i < 100; ++i) {
        const Pose2 a(pos(rng), pos(rng), ang(rng)), m(pos(rng), pos(rng), ang(rng));
        const Pose2 b = compose(compose(a, m), Pose2(small(rng), small(rng), small(rng)));
        Eigen::Matrix3d ja, jb;
        edge_residual(a, m, b, &ja, &jb);
        const auto [na, nb] = testing::numeric_edge_jacobians(a, m, b);
        worst_jac = std::max({worst_jac, (ja - na).norm() / na.norm(), (jb - nb).norm() / nb.norm()});
    }

    // single observation edge: the optimum places the object at agent * measurement
    double worst_closed = 0.0;
    for (int i = 0; i < 100; ++i) {
        PoseGraphProblem p;
        p.agent_nodes[0] = Pose2(pos(rng), pos(rng), ang(rng));
        p.object_nodes[0] = Pose2(pos(rng), pos(rng), ang(rng));
        const Pose2 m(pos(rng), pos(rng), ang(rng));
        std::uniform_real_distribution<double> w(0.5, 50.0);
        p.obs_edges.push_back({0, 0, to_matrix(m), Eigen::Vector3d(w(rng), w(rng), w(rng)).asDiagonal()});
        const Pose2 expected = compose(p.agent_nodes.at(0), m);
        const Pose2 got = solve_lm(p, SolverOptions{}).objects.at(0);
        worst_closed = std::max({worst_closed, (got.translation() - expected.translation()).norm(),
                                 std::abs(wrap_angle(got.theta() - expected.theta()))});
    }
    return {monotone == 100 && worst_jac < 1e-5 && worst_closed <= 1e-8,
            fmt::format("monotone traces {}/100; max Jacobian rel. error {:.2e}; max closed-form error {:.2e}", monotone,
                        worst_jac, worst_closed)};
}

Outcome edge_consistency_anchors()
{
    std::mt19937_64 rng(5005);
    std::uniform_real_distribution<double> u(-5, 5), dir(-3.14159, 3.14159);
    bool identical = true;
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
        const Pose2 q(u(rng), u(rng), u(rng));
        identical = identical && edge_consistency(to_matrix(q), to_matrix(q)) == 1.0;
        // a unit translation in front of T_qn leaves T_pm T_qn^-1 - I with Frobenius norm 1
        const double phi = dir(rng);
        const Eigen::Matrix3d shift = testing::hand_matrix(std::cos(phi), std::sin(phi), 0.0);
        const Eigen::Matrix3d tq = testing::hand_matrix(q.x(), q.y(), q.theta());
        const Eigen::Matrix3d tp = shift * tq;
        const double oracle = std::exp(-(tp * tq.inverse() - Eigen::Matrix3d::Identity()).norm());
        const double got = edge_consistency(Transform2(tp), Transform2(tq));
        worst = std::max({worst, std::abs(got - std::exp(-1.0)), std::abs(oracle - std::exp(-1.0))});
    }
    return {identical && worst <= 1e-12,
            fmt::format("identical -> 1.0: {}; max |value - e^-1| {:.2e}", identical ? "yes" : "no", worst)};
}

Outcome forward_marginals()
{
    const auto s = make_schedule(500, 1e-4, 0.02);
    const double mu0 = 0.5, sigma0 = 0.8;
    const int n = 100000;
    Rng rng(6006);
    bool ok = true;
    std::string detail;
    for (const int t : {1, 125, 250, 500}) {
        Latent x0(n, 1, 1), eps(n, 1, 1);
        for (int i = 0; i < n; ++i) {
            x0.data(i, 0) = mu0 + gaussian(rng, sigma0);
            eps.data(i, 0) = gaussian(rng, 1.0);
        }
        const Latent xt = forward_sample(x0, t, eps, s);
        const auto m = testing::moments(std::vector<double>(xt.data.data(), xt.data.data() + n));
        const double ab = s.alpha_bar(t);
        const double mean = std::sqrt(ab) * mu0;
        const double var = ab * sigma0 * sigma0 + (1.0 - ab);
        const double z_mean = (m.mean - mean) / std::sqrt(var / n);
        const double z_var = (m.variance - var) / (var * std::sqrt(2.0 / (n - 1)));
        ok = ok && std::abs(z_mean) <= 3.0 && std::abs(z_var) <= 3.0;
        detail += fmt::format("t={}: z_mean {:+.2f} z_var {:+.2f}; ", t, z_mean, z_var);
    }
    detail.resize(detail.size() - 2);
    return {ok, detail};
}

Outcome sampler_recovery()
{
    const double mu0 = 0.5, sigma0 = 1.0;
    const auto s = make_schedule(500, 1e-4, 0.02);
    const AnalyticGaussianDenoiser d(mu0, sigma0, s);
    const int n = 10000;
    bool ok = true;
    std::string detail;
    for (const auto kind : {SamplerKind::ddpm, SamplerKind::ddim}) {
        Rng rng(7007);
        const Latent x = sample(d, {}, s, 8, kind, rng, n, 1, 1);
        const auto m = testing::moments(std::vector<double>(x.data.data(), x.data.data() + n));
        const double mean_err = (m.mean - mu0) / sigma0;
        const double var_err = m.variance / (sigma0 * sigma0) - 1.0;
        const bool pass = std::abs(mean_err) <= 0.02 && std::abs(var_err) <= 0.05;
        ok = ok && pass;
        detail += fmt::format("{} {}: mean err {:+.2f}% of sigma0, var err {:+.2f}%; ", to_string(kind),
                              pass ? "ok" : "out of tolerance", 100 * mean_err, 100 * var_err);
    }
    detail.resize(detail.size() - 2);
    return {ok, detail};
}

Outcome perfect_inversion()
{
    const auto s = make_schedule(500, 1e-4, 0.02);
    Rng rng(8008);
    std::uniform_int_distribution<int> step(1, 500);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const Latent x0 = random_latent(rng, 4, 4, 4);
        const Latent eps = random_latent(rng, 4, 4, 4);
        const int t = step(rng);
        const Latent back = ddim_step(forward_sample(x0, t, eps, s), t, 0, eps, s);
        worst = std::max(worst, (back.data - x0.data).cwiseAbs().maxCoeff());
    }
    return {worst <= 1e-10, fmt::format("max reconstruction error {:.2e} over 1000 latents", worst)};
}

Outcome codec_monotonicity()
{
    Rng rng(9009);
    const int h = 12, w = 12, c = 64;
    auto batch = [&](int rank, double noise) {
        Eigen::MatrixXd basis(rank, c);
        for (Eigen::Index i = 0; i < basis.size(); ++i)
            basis.data()[i] = gaussian(rng, 1.0);
        std::vector<FeatureMap> maps;
        for (int k = 0; k < 4; ++k) {
            FeatureMap f(h, w, c, 1.0);
            Eigen::MatrixXd coeff(h * w, rank);
            for (int r = 0; r < rank; ++r)
                for (int p = 0; p < h * w; ++p)
                    coeff(p, r) = gaussian(rng, std::pow(0.7, r));
            f.data = coeff * basis;
            for (Eigen::Index i = 0; i < f.data.size(); ++i)
                f.data.data()[i] += gaussian(rng, noise);
            maps.push_back(std::move(f));
        }
        return maps;
    };
    auto error = [](const std::vector<FeatureMap>& maps, int rate) {
        const LinearCodec codec = fit_codec(maps, rate);
        double e = 0.0;
        for (const auto& f : maps)
            e += (codec.decode(codec.encode(f), f).data - f.data).squaredNorm();
        return e;
    };

    int monotone = 0;
    for (int b = 0; b < 100; ++b) {
        const auto maps = batch(16, 0.05);
        double prev = std::numeric_limits<double>::infinity();
        bool ok = true;
        for (const int rate : {64, 32, 16, 8}) {
            const double e = error(maps, rate);
            ok = ok && e <= prev;
            prev = e;
        }
        monotone += ok;
    }

    double worst_exact = 0.0;
    for (const int rate : {64, 32, 16, 8}) {
        const auto maps = batch(c / rate, 0.0);
        const LinearCodec codec = fit_codec(maps, rate);
        for (const auto& f : maps)
            worst_exact = std::max(worst_exact, (codec.decode(codec.encode(f), f).data - f.data).cwiseAbs().maxCoeff());
    }
    return {monotone == 100 && worst_exact <= 1e-9,
            fmt::format("non-increasing in {}/100 batches; max error on rank-limited data {:.2e}", monotone,
                        worst_exact)};
}

Outcome delay_trend()
{
    const PipelineConfig cfg = testing::noisy_pipeline(0.4);
    const SweepGrid grid{{0.4}, {0.0, 0.1, 0.2, 0.4}, {PipelineFlags{true, false}, PipelineFlags{false, false}}, 100};
    const auto rows = run_sweep(cfg, grid, 10010, jobs());
    std::map<double, std::vector<double>> on, off;
    for (const auto& r : rows)
        (r.flags.pcm ? on : off)[r.delay].push_back(r.iou_after);
    bool ok = true;
    double prev_off = 2.0;
    std::string detail;
    for (const double d : grid.delays) {
        const double m_on = median(on[d]), m_off = median(off[d]);
        ok = ok && m_off <= prev_off && m_on >= m_off;
        prev_off = m_off;
        detail += fmt::format("{:.0f} ms: on {:.3f} off {:.3f}; ", d * 1000, m_on, m_off);
    }
    detail.resize(detail.size() - 2);
    return {ok, "median IoU " + detail};
}

Outcome sweep_determinism()
{
    const fs::path dir = fs::current_path() / "acceptance_tmp";
    fs::create_directories(dir);
    const fs::path cfg = dir / "sweep.json";
    std::ofstream(cfg) << R"({"schema": "codiff.config/1", "seed": 11011,
        "noise": {"detection_sigma": [0.05, 0.05, 0.01]},
        "sweep": {"sigmas": [0.0, 0.1, 0.2, 0.3, 0.4], "delays": [0.0, 0.1, 0.2, 0.4],
                  "configs": ["pcm+tcm", "pcm", "tcm", "none"], "trials": 3}})";
    auto run = [&](const std::string& out, int j) {
        const std::string cmd = fmt::format("{} sweep --config {} --jobs {} --out {} > /dev/null", CODIFF_CLI_PATH,
                                            cfg.string(), j, (dir / out).string());
        return std::system(cmd.c_str());
    };
    auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    if (run("a", jobs()) != 0 || run("b", jobs()) != 0 || run("c", 1) != 0)
        return {false, "sweep command failed"};
    const std::string a = slurp(dir / "a" / "results.csv");
    const bool same = !a.empty() && a == slurp(dir / "b" / "results.csv") && a == slurp(dir / "c" / "results.csv");
    const auto rows = std::count(a.begin(), a.end(), '\n') - 1;
    return {same, fmt::format("{} rows; repeated runs (parallel and serial) byte-identical: {}", rows,
                              same ? "yes" : "no")};
}

struct Criterion {
    const char* name;
    double budget_s; ///< 0 when no time limit applies
    std::function<Outcome()> run;
};

} // namespace

int main(int argc, char** argv)
{
    const std::vector<Criterion> criteria{
        {"assignment optimality", 10, assignment_optimality},
        {"noiseless pipeline fixed point", 30, noiseless_fixed_point},
        {"pose calibration efficacy", 300, pcm_efficacy},
        {"LM correctness", 60, lm_correctness},
        {"edge-consistency anchor values", 0, edge_consistency_anchors},
        {"forward-diffusion marginals", 60, forward_marginals},
        {"sampler distribution recovery", 60, sampler_recovery},
        {"perfect-denoiser inversion", 0, perfect_inversion},
        {"codec monotonicity", 0, codec_monotonicity},
        {"delay robustness trend", 300, delay_trend},
        {"sweep determinism", 0, sweep_determinism},
    };

    int only = 0;
    for (int i = 1; i + 1 < argc; ++i)
        if (std::string(argv[i]) == "--criterion")
            only = std::atoi(argv[i + 1]);
    if (only < 0 || only > static_cast<int>(criteria.size())) {
        std::cerr << "unknown criterion " << only << "\n";
        return 2;
    }

    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        if (only != 0 && static_cast<int>(i) + 1 != only)
            continue;
        const auto& c = criteria[i];
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool in_time = c.budget_s <= 0.0 || secs <= c.budget_s;
        const bool pass = o.pass && in_time;
        failed += !pass;
        const std::string timing = c.budget_s > 0.0 ? fmt::format("{:.1f} s / {:.0f} s budget{}", secs, c.budget_s,
                                                                   in_time ? "" : ", over budget")
                                                     : fmt::format("{:.1f} s", secs);
        fmt::print("[{}] criterion {:>2}: {} ({}) [{}]\n", pass ? "PASS" : "FAIL", i + 1, c.name, o.detail, timing);
    }
    std::fflush(stdout);
    return failed == 0 ? 0 : 1;
}
