#include "codiff/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numbers>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <tuple>

#include <fmt/format.h>

namespace codiff {

std::string PipelineFlags::label() const
{
    if (pcm && tcm)
        return "pcm+tcm";
    if (pcm)
        return "pcm";
    if (tcm)
        return "tcm";
    return "none";
}

PipelineFlags PipelineFlags::parse(const std::string& label)
{
    if (label == "pcm+tcm")
        return {true, true};
    if (label == "pcm")
        return {true, false};
    if (label == "tcm")
        return {false, true};
    if (label == "none")
        return {false, false};
    throw std::invalid_argument("unknown pipeline configuration '" + label + "' (pcm+tcm, pcm, tcm, none)");
}

MatchMetrics assignment_metrics(const Assignment& pred, const std::vector<std::pair<int, int>>& truth)
{
    const std::set<std::pair<int, int>> truth_set(truth.begin(), truth.end());
    std::size_t hits = 0;
    for (const auto& pr : pred.pairs)
        hits += truth_set.count({pr.p, pr.q});
    MatchMetrics m;
    m.precision = pred.pairs.empty() ? 1.0 : static_cast<double>(hits) / static_cast<double>(pred.pairs.size());
    m.recall = truth_set.empty() ? 1.0 : static_cast<double>(hits) / static_cast<double>(truth_set.size());
    m.f1 = (m.precision + m.recall) > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    return m;
}

PoseError pose_rmse(const std::map<int, Pose2>& estimated, const std::map<int, Pose2>& truth)
{
    if (estimated.size() != truth.size())
        throw std::invalid_argument("pose_rmse: id sets differ");
    PoseError err;
    if (truth.empty())
        return err;
    double st = 0.0, sr = 0.0;
    for (const auto& [id, p] : truth) {
        const auto it = estimated.find(id);
        if (it == estimated.end())
            throw std::invalid_argument("pose_rmse: id sets differ");
        st += (it->second.translation() - p.translation()).squaredNorm();
        const double dr = wrap_angle(it->second.theta() - p.theta()) * 180.0 / std::numbers::pi;
        sr += dr * dr;
    }
    const double n = static_cast<double>(truth.size());
    err.trans_rmse = std::sqrt(st / n);
    err.rot_rmse = std::sqrt(sr / n);
    return err;
}

double average_precision(const std::vector<DetectedBox>& detections, const std::vector<DetectedBox>& ground_truth,
                         double iou_threshold)
{
    if (ground_truth.empty())
        return detections.empty() ? 1.0 : 0.0;
    std::vector<std::size_t> order(detections.size());
    for (std::size_t i = 0; i < order.size(); ++i)
        order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return detections[a].confidence > detections[b].confidence;
    });

    std::vector<char> consumed(ground_truth.size(), 0);
    std::vector<double> precision, recall;
    double tp = 0.0, fp = 0.0;
    for (const std::size_t d : order) {
        double best = -1.0;
        std::size_t best_gt = 0;
        for (std::size_t g = 0; g < ground_truth.size(); ++g) {
            if (consumed[g])
                continue;
            const double iou = rotated_iou(detections[d], ground_truth[g]);
            if (iou > best) {
                best = iou;
                best_gt = g;
            }
        }
        if (best >= iou_threshold) {
            consumed[best_gt] = 1;
            tp += 1.0;
        } else {
            fp += 1.0;
        }
        precision.push_back(tp / (tp + fp));
        recall.push_back(tp / static_cast<double>(ground_truth.size()));
    }

    // all-point interpolation: precision envelope from the right
    for (std::size_t k = precision.size(); k-- > 1;)
        precision[k - 1] = std::max(precision[k - 1], precision[k]);
    double ap = 0.0, prev_recall = 0.0;
    for (std::size_t k = 0; k < precision.size(); ++k) {
        ap += (recall[k] - prev_recall) * precision[k];
        prev_recall = recall[k];
    }
    return ap;
}

std::vector<DetectedBox> suppress_duplicates(std::vector<DetectedBox> boxes, double iou_threshold)
{
    std::stable_sort(boxes.begin(), boxes.end(),
                     [](const DetectedBox& a, const DetectedBox& b) { return a.confidence > b.confidence; });
    std::vector<DetectedBox> kept;
    for (const auto& b : boxes) {
        const bool duplicate = std::any_of(kept.begin(), kept.end(),
                                           [&](const DetectedBox& k) { return rotated_iou(k, b) > iou_threshold; });
        if (!duplicate)
            kept.push_back(b);
    }
    return kept;
}

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

DetectedBox truth_box(const SceneObject& o, const Pose2& frame)
{
    DetectedBox b;
    b.center = relative(frame, o.pose);
    b.half_length = o.half_length;
    b.half_width = o.half_width;
    b.sigma = Eigen::Vector3d::Constant(kMinReportedSigma);
    return b;
}

FeatureMap fuse_features(const FeatureMap& ego, const std::vector<FeatureMap>& aligned, const PipelineConfig& config,
                         bool tcm, std::uint64_t seed)
{
    if (!tcm) {
        FeatureMap fused = ego;
        for (const auto& f : aligned)
            fused.data = fused.data.cwiseMax(f.data);
        return fused;
    }
    std::vector<FeatureMap> samples{ego};
    samples.insert(samples.end(), aligned.begin(), aligned.end());
    const LinearCodec codec = fit_codec(samples, config.diffusion.codec_rate);
    const Latent ego_z = codec.encode(ego);
    std::vector<Latent> others;
    for (const auto& f : aligned)
        others.push_back(codec.encode(f));
    const std::vector<Latent> y_cond{fuse_condition(ego_z, others)};
    const DiffusionSchedule sched =
        make_schedule(config.diffusion.steps, config.diffusion.beta_start, config.diffusion.beta_end);
    const ConditionPriorDenoiser denoiser(config.diffusion.prior_sigma, sched);
    Rng rng(seed);
    const Latent z = sample(denoiser, y_cond, sched, config.diffusion.sampling_steps, config.diffusion.sampler, rng,
                            ego_z.height, ego_z.width, ego_z.channels());
    return codec.decode(z, ego);
}

} // namespace

TrialResult run_trial(const PipelineConfig& config, const PipelineFlags& flags, std::uint64_t seed)
{
    return run_trial(generate_scene(config.scene, derive_seed(seed, 0)), config, flags, seed);
}

TrialResult run_trial(const Scene& scene, const PipelineConfig& config, const PipelineFlags& flags,
                      std::uint64_t seed)
{
    config.noise.validate();
    scene.validate();
    if (scene.agents.empty())
        throw std::invalid_argument("run_trial: scene has no agents");

    TrialResult result;
    result.sigma_t = config.noise.sigma_t;
    result.sigma_r = config.noise.sigma_r;
    result.delay = config.noise.delay;
    result.flags = flags;
    result.seed = seed;

    // All random draws happen before any flag-dependent branch so paired trials see identical data.
    Rng rng(derive_seed(seed, 1));
    const Agent& ego = scene.agents.front();
    const Pose2 ego_reported = perturb_pose(ego.true_pose, config.noise, rng);
    const Detections ego_det = observe(scene, ego.id, config.noise, rng);
    std::vector<CollabMessage> messages;
    for (std::size_t a = 1; a < scene.agents.size(); ++a)
        messages.push_back(build_message(scene, scene.agents[a].id, config.noise, rng, config.grid));

    std::map<int, Pose2> truth_rel, reported_rel, corrected_rel;
    for (const auto& msg : messages) {
        truth_rel[msg.sender_id] = relative(ego.true_pose, scene.agent(msg.sender_id).true_pose);
        reported_rel[msg.sender_id] = relative(ego_reported, msg.reported_pose);
    }
    corrected_rel = reported_rel;

    if (flags.pcm && !messages.empty()) {
        std::vector<Assignment> assignments;
        Assignment all_pred;
        std::vector<std::pair<int, int>> all_truth;
        int offset = 0;
        for (const auto& msg : messages) {
            Assignment a = match_agents(ego_det.boxes, msg, reported_rel.at(msg.sender_id), config.matching);
            for (std::size_t p = 0; p < ego_det.object_ids.size(); ++p)
                for (std::size_t q = 0; q < msg.truth_object_ids.size(); ++q)
                    if (ego_det.object_ids[p] == msg.truth_object_ids[q])
                        all_truth.emplace_back(static_cast<int>(p), offset + static_cast<int>(q));
            for (const auto& pr : a.pairs)
                all_pred.pairs.push_back({pr.p, offset + pr.q, pr.score});
            offset += static_cast<int>(msg.boxes.size());
            assignments.push_back(std::move(a));
        }
        result.matching = assignment_metrics(all_pred, all_truth);

        const AgentPrior prior{config.noise.sigma_t, config.noise.sigma_r * kDegToRad};
        const PoseGraphProblem problem =
            build_pose_graph(assignments, messages, ego_det.boxes, ego.id, ego_reported, prior);
        SolveReport report;
        PoseGraphState state;
        try {
            state = solve_lm(problem, config.solver, &report);
        } catch (const SolverError& e) {
            throw SolverError(std::string(e.what()) + " (trial seed " + std::to_string(seed) + ")", e.report);
        }
        result.solver_iterations = report.iterations;
        result.solver_converged = report.converged;
        for (const auto& msg : messages)
            corrected_rel[msg.sender_id] =
                corrected_relative_pose(state.agents.at(ego.id), state.agents.at(msg.sender_id));
    }

    result.pose_before = pose_rmse(reported_rel, truth_rel);
    result.pose_after = pose_rmse(corrected_rel, truth_rel);
    for (const auto& msg : messages) {
        const Pose2& t = truth_rel.at(msg.sender_id);
        const Pose2& b = reported_rel.at(msg.sender_id);
        const Pose2& a = corrected_rel.at(msg.sender_id);
        result.agents.push_back({msg.sender_id, (b.translation() - t.translation()).norm(),
                                 (a.translation() - t.translation()).norm(),
                                 std::abs(wrap_angle(b.theta() - t.theta())) / kDegToRad,
                                 std::abs(wrap_angle(a.theta() - t.theta())) / kDegToRad});
    }

    // Alignment IoU of every collaborator box against its object's current ego-frame footprint.
    std::map<int, const SceneObject*> object_by_id;
    for (const auto& o : scene.objects)
        object_by_id[o.id] = &o;
    double iou_b = 0.0, iou_a = 0.0;
    int n_boxes = 0;
    std::vector<DetectedBox> detections = ego_det.boxes;
    for (const auto& msg : messages) {
        for (std::size_t q = 0; q < msg.boxes.size(); ++q) {
            const DetectedBox truth = truth_box(*object_by_id.at(msg.truth_object_ids[q]), ego.true_pose);
            iou_b += rotated_iou(transform_box(msg.boxes[q], reported_rel.at(msg.sender_id)), truth);
            const DetectedBox aligned = transform_box(msg.boxes[q], corrected_rel.at(msg.sender_id));
            iou_a += rotated_iou(aligned, truth);
            detections.push_back(aligned);
            ++n_boxes;
        }
    }
    result.iou_before = n_boxes == 0 ? 1.0 : iou_b / n_boxes;
    result.iou_after = n_boxes == 0 ? 1.0 : iou_a / n_boxes;

    // Ground truth: objects currently inside any agent's sensing range, in the ego frame.
    std::vector<DetectedBox> gt;
    for (const auto& o : scene.objects) {
        const bool visible = std::any_of(scene.agents.begin(), scene.agents.end(), [&](const Agent& ag) {
            return (o.pose.translation() - ag.true_pose.translation()).norm() <= ag.sensing_range;
        });
        if (visible)
            gt.push_back(truth_box(o, ego.true_pose));
    }
    const std::vector<DetectedBox> fused_boxes = suppress_duplicates(detections, 0.1);
    result.ap50 = average_precision(fused_boxes, gt, 0.5);
    result.ap70 = average_precision(fused_boxes, gt, 0.7);

    // Feature fusion against the clean current-time ego-frame rendering.
    const FeatureMap ego_feature = synthesize_feature(ego_det.boxes, config.grid);
    std::vector<FeatureMap> aligned_features;
    for (const auto& msg : messages)
        aligned_features.push_back(warp_feature(msg.feature, ego_feature, inverse(corrected_rel.at(msg.sender_id))));
    const FeatureMap fused = fuse_features(ego_feature, aligned_features, config, flags.tcm, derive_seed(seed, 2));
    const FeatureMap clean = synthesize_feature(gt, config.grid);
    result.feature_mse = (fused.data - clean.data).squaredNorm() / static_cast<double>(clean.data.size());
    return result;
}

std::vector<TrialResult> run_sweep(const PipelineConfig& config, const SweepGrid& grid, std::uint64_t base_seed,
                                   int jobs)
{
    if (grid.sigmas.empty() || grid.delays.empty() || grid.configurations.empty() || grid.trials < 1)
        throw std::invalid_argument("run_sweep: empty grid");

    struct Task {
        double sigma;
        double delay;
        PipelineFlags flags;
        int trial;
    };
    std::vector<Task> tasks;
    for (const double s : grid.sigmas)
        for (const double d : grid.delays)
            for (const auto& f : grid.configurations)
                for (int k = 0; k < grid.trials; ++k)
                    tasks.push_back({s, d, f, k});

    std::vector<TrialResult> rows(tasks.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (std::size_t i = next++; i < tasks.size(); i = next++) {
            try {
                PipelineConfig cfg = config;
                cfg.noise.sigma_t = tasks[i].sigma;
                cfg.noise.sigma_r = tasks[i].sigma;
                cfg.noise.delay = tasks[i].delay;
                rows[i] = run_trial(cfg, tasks[i].flags, derive_seed(base_seed, static_cast<std::uint64_t>(tasks[i].trial)));
                rows[i].trial = tasks[i].trial;
            } catch (...) {
                const std::lock_guard lock(failure_mutex);
                if (!failure)
                    failure = std::current_exception();
            }
        }
    };
    const int n_threads = std::max(1, std::min<int>(jobs, static_cast<int>(tasks.size())));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < n_threads; ++t)
            pool.emplace_back(worker);
        for (auto& th : pool)
            th.join();
    }
    if (failure)
        std::rethrow_exception(failure);
    return rows;
}

std::string csv_header()
{
    return "sigma_t,sigma_r,delay,config,trial,seed,precision,recall,f1,trans_rmse_before,trans_rmse_after,"
           "rot_rmse_before,rot_rmse_after,iou_before,iou_after,ap50,ap70,feature_mse,solver_iterations,"
           "solver_converged";
}

std::string to_csv_row(const TrialResult& r)
{
    auto opt = [&](double MatchMetrics::*field) {
        return r.matching ? fmt::format("{:.9g}", (*r.matching).*field) : std::string();
    };
    return fmt::format("{:.9g},{:.9g},{:.9g},{},{},{},{},{},{},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},"
                       "{:.9g},{},{}",
                       r.sigma_t, r.sigma_r, r.delay, r.flags.label(), r.trial, r.seed, opt(&MatchMetrics::precision),
                       opt(&MatchMetrics::recall), opt(&MatchMetrics::f1), r.pose_before.trans_rmse,
                       r.pose_after.trans_rmse, r.pose_before.rot_rmse, r.pose_after.rot_rmse, r.iou_before,
                       r.iou_after, r.ap50, r.ap70, r.feature_mse, r.solver_iterations, r.solver_converged ? 1 : 0);
}

std::string to_csv(const std::vector<TrialResult>& rows)
{
    std::string out = csv_header() + "\n";
    for (const auto& r : rows)
        out += to_csv_row(r) + "\n";
    return out;
}

std::vector<TrialResult> from_csv(const std::string& text)
{
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != csv_header())
        throw std::invalid_argument("results CSV: unexpected header");
    std::vector<TrialResult> rows;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty())
            continue;
        std::vector<std::string> f;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ','))
            f.push_back(cell);
        if (!line.empty() && line.back() == ',')
            f.emplace_back();
        if (f.size() != 20)
            throw std::invalid_argument("results CSV line " + std::to_string(line_no) + ": expected 20 fields");
        TrialResult r;
        r.sigma_t = std::stod(f[0]);
        r.sigma_r = std::stod(f[1]);
        r.delay = std::stod(f[2]);
        r.flags = PipelineFlags::parse(f[3]);
        r.trial = std::stoi(f[4]);
        r.seed = std::stoull(f[5]);
        if (!f[6].empty())
            r.matching = MatchMetrics{std::stod(f[6]), std::stod(f[7]), std::stod(f[8])};
        r.pose_before.trans_rmse = std::stod(f[9]);
        r.pose_after.trans_rmse = std::stod(f[10]);
        r.pose_before.rot_rmse = std::stod(f[11]);
        r.pose_after.rot_rmse = std::stod(f[12]);
        r.iou_before = std::stod(f[13]);
        r.iou_after = std::stod(f[14]);
        r.ap50 = std::stod(f[15]);
        r.ap70 = std::stod(f[16]);
        r.feature_mse = std::stod(f[17]);
        r.solver_iterations = std::stoi(f[18]);
        r.solver_converged = f[19] == "1";
        rows.push_back(r);
    }
    return rows;
}

nlohmann::json trial_to_json(const TrialResult& r)
{
    nlohmann::json j;
    j["sigma_t"] = r.sigma_t;
    j["sigma_r"] = r.sigma_r;
    j["delay"] = r.delay;
    j["config"] = r.flags.label();
    j["trial"] = r.trial;
    j["seed"] = r.seed;
    if (r.matching)
        j["matching"] = {{"precision", r.matching->precision}, {"recall", r.matching->recall}, {"f1", r.matching->f1}};
    else
        j["matching"] = nullptr;
    j["pose_rmse_before"] = {{"trans_m", r.pose_before.trans_rmse}, {"rot_deg", r.pose_before.rot_rmse}};
    j["pose_rmse_after"] = {{"trans_m", r.pose_after.trans_rmse}, {"rot_deg", r.pose_after.rot_rmse}};
    j["alignment_iou_before"] = r.iou_before;
    j["alignment_iou_after"] = r.iou_after;
    j["ap50"] = r.ap50;
    j["ap70"] = r.ap70;
    j["ap_interpolation"] = "all-point";
    j["feature_mse"] = r.feature_mse;
    j["solver"] = {{"iterations", r.solver_iterations}, {"converged", r.solver_converged}};
    j["agents"] = nlohmann::json::array();
    for (const auto& a : r.agents)
        j["agents"].push_back({{"id", a.agent_id},
                               {"trans_error_before_m", a.trans_error_before},
                               {"trans_error_after_m", a.trans_error_after},
                               {"rot_error_before_deg", a.rot_error_before},
                               {"rot_error_after_deg", a.rot_error_after}});
    return j;
}

double median(std::vector<double> values)
{
    if (values.empty())
        throw std::invalid_argument("median of an empty sample");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

nlohmann::json summarize(const std::vector<TrialResult>& rows)
{
    using Key = std::tuple<double, double, std::string>;
    std::map<Key, std::vector<const TrialResult*>> cells;
    std::vector<std::string> config_order;
    for (const auto& r : rows) {
        cells[{r.sigma_t, r.delay, r.flags.label()}].push_back(&r);
        if (std::find(config_order.begin(), config_order.end(), r.flags.label()) == config_order.end())
            config_order.push_back(r.flags.label());
    }

    const std::vector<std::pair<std::string, double (*)(const TrialResult&)>> metrics{
        {"f1", [](const TrialResult& r) { return r.matching ? r.matching->f1 : std::nan(""); }},
        {"trans_rmse_before", [](const TrialResult& r) { return r.pose_before.trans_rmse; }},
        {"trans_rmse_after", [](const TrialResult& r) { return r.pose_after.trans_rmse; }},
        {"rot_rmse_before", [](const TrialResult& r) { return r.pose_before.rot_rmse; }},
        {"rot_rmse_after", [](const TrialResult& r) { return r.pose_after.rot_rmse; }},
        {"iou_before", [](const TrialResult& r) { return r.iou_before; }},
        {"iou_after", [](const TrialResult& r) { return r.iou_after; }},
        {"ap50", [](const TrialResult& r) { return r.ap50; }},
        {"ap70", [](const TrialResult& r) { return r.ap70; }},
        {"feature_mse", [](const TrialResult& r) { return r.feature_mse; }},
    };

    nlohmann::json out;
    out["schema"] = "codiff.summary/1";
    out["ap_interpolation"] = "all-point";
    out["precision_convention"] = "precision is 1 when no pairs are predicted";
    out["configurations"] = config_order;
    out["cells"] = nlohmann::json::array();
    for (const auto& [key, members] : cells) {
        nlohmann::json cell;
        cell["sigma"] = std::get<0>(key);
        cell["delay"] = std::get<1>(key);
        cell["config"] = std::get<2>(key);
        cell["trials"] = members.size();
        for (const auto& [name, get] : metrics) {
            std::vector<double> values;
            for (const auto* r : members) {
                const double v = get(*r);
                if (!std::isnan(v))
                    values.push_back(v);
            }
            if (values.empty()) {
                cell[name] = nullptr;
                continue;
            }
            double mean = 0.0;
            for (const double v : values)
                mean += v;
            mean /= static_cast<double>(values.size());
            double var = 0.0;
            for (const double v : values)
                var += (v - mean) * (v - mean);
            const double stddev = values.size() > 1 ? std::sqrt(var / static_cast<double>(values.size() - 1)) : 0.0;
            cell[name] = {{"mean", mean}, {"std", stddev}, {"median", median(values)}};
        }
        out["cells"].push_back(cell);
    }
    return out;
}

} // namespace codiff
