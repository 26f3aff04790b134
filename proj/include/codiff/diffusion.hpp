#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include "json.hpp"

#include "codiff/feature_map.hpp"
#include "codiff/scenario.hpp"

namespace codiff {

/// h x w x c latent tensor, pixels as rows and channels as columns.
struct Latent {
    int height = 0;
    int width = 0;
    Eigen::MatrixXd data;

    Latent() = default;
    Latent(int h, int w, int c) : height(h), width(w), data(Eigen::MatrixXd::Zero(Eigen::Index(h) * w, c)) { }
    Latent(int h, int w, Eigen::MatrixXd values) : height(h), width(w), data(std::move(values)) { }

    int channels() const { return static_cast<int>(data.cols()); }
    bool same_shape(const Latent& other) const
    {
        return height == other.height && width == other.width && data.cols() == other.data.cols();
    }
};

/// Linear beta schedule with cumulative products. Index 0 is the clean-data convention (alpha_bar = 1).
class DiffusionSchedule {
public:
    DiffusionSchedule(int steps, double beta_start, double beta_end);

    int steps() const { return steps_; }
    double beta(int t) const { return beta_(t); }
    double alpha(int t) const { return 1.0 - beta_(t); }
    double alpha_bar(int t) const { return alpha_bar_(t); }
    double beta_start() const { return beta_start_; }
    double beta_end() const { return beta_end_; }

private:
    int steps_;
    double beta_start_;
    double beta_end_;
    Eigen::VectorXd beta_;      // [0] unused (0)
    Eigen::VectorXd alpha_bar_; // [0] = 1
};

DiffusionSchedule make_schedule(int steps, double beta_start, double beta_end);

Latent forward_sample(const Latent& x0, int t, const Latent& eps, const DiffusionSchedule& sched);

/// Mean squared error between true and predicted noise.
double dm_loss(const Latent& eps, const Latent& eps_hat);

class Denoiser {
public:
    virtual ~Denoiser() = default;
    /// Predicted noise with the shape of z_t.
    virtual Latent evaluate(const Latent& z_t, int t, std::span<const Latent> y_cond) const = 0;
};

/// Posterior-mean noise predictor for an i.i.d. N(mu0, sigma0^2) prior. Ignores the condition.
class AnalyticGaussianDenoiser : public Denoiser {
public:
    AnalyticGaussianDenoiser(double mu0, double sigma0, DiffusionSchedule sched);
    Latent evaluate(const Latent& z_t, int t, std::span<const Latent> y_cond) const override;

private:
    double mu0_;
    double sigma0_;
    DiffusionSchedule sched_;
};

/// Gaussian posterior-mean predictor whose per-element prior mean is the average of the condition
/// blocks (each condition latent is split into channel blocks of z_t's width).
class ConditionPriorDenoiser : public Denoiser {
public:
    ConditionPriorDenoiser(double sigma0, DiffusionSchedule sched);
    Latent evaluate(const Latent& z_t, int t, std::span<const Latent> y_cond) const override;

private:
    double sigma0_;
    DiffusionSchedule sched_;
};

/// Ancestral step t -> t-1.
Latent ddpm_step(const Latent& x_t, int t, const Latent& eps_hat, const DiffusionSchedule& sched, Rng& rng);

/// Ancestral step over a stride t -> t_prev using the respaced beta' = 1 - abar_t / abar_tprev.
Latent ddpm_step(const Latent& x_t, int t, int t_prev, const Latent& eps_hat, const DiffusionSchedule& sched, Rng& rng);

/// DDIM update t -> t_prev. eta = 0 is deterministic; eta > 0 needs rng.
Latent ddim_step(const Latent& x_t, int t, int t_prev, const Latent& eps_hat, const DiffusionSchedule& sched,
                 double eta = 0.0, Rng* rng = nullptr);

enum class SamplerKind { ddpm, ddim };

SamplerKind parse_sampler(const std::string& name);
std::string to_string(SamplerKind kind);

/// n_steps timesteps, uniformly strided from T down to 1 (round(linspace(T, 1, n))).
std::vector<int> sample_timesteps(int total_steps, int n_steps);

/// Reverse process from N(0, I) with the given latent shape.
Latent sample(const Denoiser& denoiser, std::span<const Latent> y_cond, const DiffusionSchedule& sched, int n_steps,
              SamplerKind kind, Rng& rng, int height, int width, int channels);

/// Principal-subspace channel codec.
class LinearCodec {
public:
    LinearCodec(Eigen::VectorXd mean, Eigen::MatrixXd components, int rate);

    int rate() const { return rate_; }
    int input_channels() const { return static_cast<int>(components_.rows()); }
    int latent_channels() const { return static_cast<int>(components_.cols()); }
    const Eigen::VectorXd& mean() const { return mean_; }
    const Eigen::MatrixXd& components() const { return components_; }

    Latent encode(const FeatureMap& f) const;
    /// Decoded map with unit resolution and identity origin.
    FeatureMap decode(const Latent& z) const;
    /// Decoded map carrying the layout (resolution, origin) of `like`.
    FeatureMap decode(const Latent& z, const FeatureMap& like) const;

private:
    Eigen::VectorXd mean_;
    Eigen::MatrixXd components_; // C x (C / rate), orthonormal columns
    int rate_;
};

LinearCodec fit_codec(std::span<const FeatureMap> samples, int rate);

/// Sum over channels of KL(N(F) || N(F_rec)) with per-channel Gaussian fits; variances floored at 1e-12.
double cmp_loss(const FeatureMap& f, const FeatureMap& f_rec);

/// Channel-axis concatenation [ego | others...].
Latent fuse_condition(const Latent& ego, std::span<const Latent> others);

double total_loss(double l_ldm, double l_cls, double l_reg, double lambda_cls, double lambda_reg);

nlohmann::json schedule_to_json(const DiffusionSchedule& sched);
nlohmann::json latent_to_json(const Latent& z);
Latent latent_from_json(const nlohmann::json& j);

} // namespace codiff
