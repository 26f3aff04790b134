#include "codiff/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Eigenvalues>

namespace codiff {

DiffusionSchedule::DiffusionSchedule(int steps, double beta_start, double beta_end)
    : steps_(steps), beta_start_(beta_start), beta_end_(beta_end)
{
    if (steps < 1)
        throw std::invalid_argument("make_schedule: T must be >= 1");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
        throw std::invalid_argument("make_schedule: require 0 < beta_start <= beta_end < 1");
    beta_ = Eigen::VectorXd::Zero(steps + 1);
    alpha_bar_ = Eigen::VectorXd::Ones(steps + 1);
    for (int t = 1; t <= steps; ++t) {
        beta_(t) = steps == 1 ? beta_start : beta_start + (beta_end - beta_start) * (t - 1) / (steps - 1);
        alpha_bar_(t) = alpha_bar_(t - 1) * (1.0 - beta_(t));
    }
}

DiffusionSchedule make_schedule(int steps, double beta_start, double beta_end)
{
    return {steps, beta_start, beta_end};
}

namespace {

void require_same_shape(const Latent& a, const Latent& b, const char* where)
{
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(where) + ": latent shape mismatch");
}

void require_step(const DiffusionSchedule& sched, int t, int lo, const char* where)
{
    if (t < lo || t > sched.steps())
        throw std::out_of_range(std::string(where) + ": timestep out of range");
}

Eigen::MatrixXd standard_normal(Rng& rng, Eigen::Index rows, Eigen::Index cols)
{
    Eigen::MatrixXd z(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i)
            z(i, j) = gaussian(rng, 1.0);
    return z;
}

// Posterior-mean noise for an elementwise Gaussian prior with mean `mu` (broadcast) and std sigma0.
Latent gaussian_posterior_noise(const Latent& z_t, int t, const Eigen::MatrixXd& mu, double sigma0,
                                const DiffusionSchedule& sched)
{
    if (t < 1 || t > sched.steps())
        throw std::out_of_range("denoiser: timestep must be in [1, T]");
    const double ab = sched.alpha_bar(t);
    const double s2 = sigma0 * sigma0;
    const double gain = std::sqrt(ab) * s2 / (ab * s2 + 1.0 - ab);
    const Eigen::MatrixXd x0 = (mu.array() + gain * (z_t.data.array() - std::sqrt(ab) * mu.array())).matrix();
    return {z_t.height, z_t.width, ((z_t.data - std::sqrt(ab) * x0) / std::sqrt(1.0 - ab)).eval()};
}

} // namespace

Latent forward_sample(const Latent& x0, int t, const Latent& eps, const DiffusionSchedule& sched)
{
    require_same_shape(x0, eps, "forward_sample");
    require_step(sched, t, 0, "forward_sample");
    const double ab = sched.alpha_bar(t);
    return {x0.height, x0.width, (std::sqrt(ab) * x0.data + std::sqrt(1.0 - ab) * eps.data).eval()};
}

double dm_loss(const Latent& eps, const Latent& eps_hat)
{
    require_same_shape(eps, eps_hat, "dm_loss");
    if (eps.data.size() == 0)
        return 0.0;
    return (eps.data - eps_hat.data).squaredNorm() / static_cast<double>(eps.data.size());
}

AnalyticGaussianDenoiser::AnalyticGaussianDenoiser(double mu0, double sigma0, DiffusionSchedule sched)
    : mu0_(mu0), sigma0_(sigma0), sched_(std::move(sched))
{
    if (!(sigma0 >= 0.0))
        throw std::invalid_argument("AnalyticGaussianDenoiser: sigma0 must be >= 0");
}

Latent AnalyticGaussianDenoiser::evaluate(const Latent& z_t, int t, std::span<const Latent>) const
{
    const Eigen::MatrixXd mu = Eigen::MatrixXd::Constant(z_t.data.rows(), z_t.data.cols(), mu0_);
    return gaussian_posterior_noise(z_t, t, mu, sigma0_, sched_);
}

ConditionPriorDenoiser::ConditionPriorDenoiser(double sigma0, DiffusionSchedule sched)
    : sigma0_(sigma0), sched_(std::move(sched))
{
    if (!(sigma0 >= 0.0))
        throw std::invalid_argument("ConditionPriorDenoiser: sigma0 must be >= 0");
}

Latent ConditionPriorDenoiser::evaluate(const Latent& z_t, int t, std::span<const Latent> y_cond) const
{
    Eigen::MatrixXd mu = Eigen::MatrixXd::Zero(z_t.data.rows(), z_t.data.cols());
    int blocks = 0;
    for (const Latent& cond : y_cond) {
        if (cond.height != z_t.height || cond.width != z_t.width || cond.channels() % z_t.channels() != 0)
            throw std::invalid_argument("ConditionPriorDenoiser: condition shape incompatible with z_t");
        for (int b = 0; b < cond.channels() / z_t.channels(); ++b) {
            mu += cond.data.middleCols(Eigen::Index(b) * z_t.channels(), z_t.channels());
            ++blocks;
        }
    }
    if (blocks > 0)
        mu /= blocks;
    return gaussian_posterior_noise(z_t, t, mu, sigma0_, sched_);
}

Latent ddpm_step(const Latent& x_t, int t, const Latent& eps_hat, const DiffusionSchedule& sched, Rng& rng)
{
    return ddpm_step(x_t, t, t - 1, eps_hat, sched, rng);
}

Latent ddpm_step(const Latent& x_t, int t, int t_prev, const Latent& eps_hat, const DiffusionSchedule& sched, Rng& rng)
{
    require_same_shape(x_t, eps_hat, "ddpm_step");
    require_step(sched, t, 1, "ddpm_step");
    if (t_prev < 0 || t_prev >= t)
        throw std::out_of_range("ddpm_step: require 0 <= t_prev < t");
    const double ab = sched.alpha_bar(t);
    double alpha, beta;
    if (t_prev == t - 1) {
        alpha = sched.alpha(t);
        beta = sched.beta(t);
    } else {
        alpha = ab / sched.alpha_bar(t_prev);
        beta = 1.0 - alpha;
    }
    Eigen::MatrixXd next = (x_t.data - (beta / std::sqrt(1.0 - ab)) * eps_hat.data) / std::sqrt(alpha);
    if (t_prev > 0)
        next += std::sqrt(beta) * standard_normal(rng, next.rows(), next.cols());
    return {x_t.height, x_t.width, std::move(next)};
}

Latent ddim_step(const Latent& x_t, int t, int t_prev, const Latent& eps_hat, const DiffusionSchedule& sched,
                 double eta, Rng* rng)
{
    require_same_shape(x_t, eps_hat, "ddim_step");
    require_step(sched, t, 1, "ddim_step");
    if (t_prev < 0 || t_prev >= t)
        throw std::out_of_range("ddim_step: require 0 <= t_prev < t");
    const double ab = sched.alpha_bar(t);
    const double ab_prev = sched.alpha_bar(t_prev);
    const double sigma = eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab)) * std::sqrt(1.0 - ab / ab_prev);
    const Eigen::MatrixXd x0_hat = (x_t.data - std::sqrt(1.0 - ab) * eps_hat.data) / std::sqrt(ab);
    Eigen::MatrixXd next =
        std::sqrt(ab_prev) * x0_hat + std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma)) * eps_hat.data;
    if (sigma > 0.0) {
        if (rng == nullptr)
            throw std::invalid_argument("ddim_step: eta > 0 requires an rng");
        next += sigma * standard_normal(*rng, next.rows(), next.cols());
    }
    return {x_t.height, x_t.width, std::move(next)};
}

SamplerKind parse_sampler(const std::string& name)
{
    if (name == "ddpm")
        return SamplerKind::ddpm;
    if (name == "ddim")
        return SamplerKind::ddim;
    throw std::invalid_argument("unknown sampler '" + name + "' (expected ddpm or ddim)");
}

std::string to_string(SamplerKind kind)
{
    return kind == SamplerKind::ddpm ? "ddpm" : "ddim";
}

std::vector<int> sample_timesteps(int total_steps, int n_steps)
{
    if (n_steps < 1 || n_steps > total_steps)
        throw std::invalid_argument("sample_timesteps: require 1 <= n_steps <= T");
    std::vector<int> ts;
    if (n_steps == 1)
        return {total_steps};
    for (int i = 0; i < n_steps; ++i) {
        const double t = total_steps - static_cast<double>(total_steps - 1) * i / (n_steps - 1);
        ts.push_back(static_cast<int>(std::lround(t)));
    }
    return ts;
}

Latent sample(const Denoiser& denoiser, std::span<const Latent> y_cond, const DiffusionSchedule& sched, int n_steps,
              SamplerKind kind, Rng& rng, int height, int width, int channels)
{
    const std::vector<int> ts = sample_timesteps(sched.steps(), n_steps);
    Latent x(height, width, standard_normal(rng, Eigen::Index(height) * width, channels));
    for (std::size_t k = 0; k < ts.size(); ++k) {
        const int t = ts[k];
        const int t_prev = k + 1 < ts.size() ? ts[k + 1] : 0;
        const Latent eps_hat = denoiser.evaluate(x, t, y_cond);
        x = kind == SamplerKind::ddpm ? ddpm_step(x, t, t_prev, eps_hat, sched, rng)
                                      : ddim_step(x, t, t_prev, eps_hat, sched, 0.0, nullptr);
    }
    return x;
}

LinearCodec::LinearCodec(Eigen::VectorXd mean, Eigen::MatrixXd components, int rate)
    : mean_(std::move(mean)), components_(std::move(components)), rate_(rate)
{
    if (mean_.size() != components_.rows())
        throw std::invalid_argument("LinearCodec: mean and component sizes differ");
}

Latent LinearCodec::encode(const FeatureMap& f) const
{
    if (f.channels() != input_channels())
        throw std::invalid_argument("LinearCodec::encode: channel count mismatch");
    return {f.height, f.width, ((f.data.rowwise() - mean_.transpose()) * components_).eval()};
}

FeatureMap LinearCodec::decode(const Latent& z) const
{
    if (z.channels() != latent_channels())
        throw std::invalid_argument("LinearCodec::decode: latent channel count mismatch");
    FeatureMap f(z.height, z.width, input_channels(), 1.0);
    f.data = (z.data * components_.transpose()).rowwise() + mean_.transpose();
    return f;
}

FeatureMap LinearCodec::decode(const Latent& z, const FeatureMap& like) const
{
    FeatureMap f = decode(z);
    f.resolution = like.resolution;
    f.origin = like.origin;
    return f;
}

LinearCodec fit_codec(std::span<const FeatureMap> samples, int rate)
{
    if (samples.empty())
        throw std::invalid_argument("fit_codec: no samples");
    const int channels = samples.front().channels();
    if (rate < 1 || channels % rate != 0)
        throw std::invalid_argument("fit_codec: rate must divide the channel count");
    const int k = channels / rate;
    Eigen::Index rows = 0;
    for (const auto& s : samples) {
        if (s.channels() != channels)
            throw std::invalid_argument("fit_codec: samples disagree on channel count");
        rows += s.data.rows();
    }
    if (rows < k)
        throw std::invalid_argument("fit_codec: insufficient samples for the requested latent width");

    Eigen::VectorXd mean = Eigen::VectorXd::Zero(channels);
    for (const auto& s : samples)
        mean += s.data.colwise().sum().transpose();
    mean /= static_cast<double>(rows);
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(channels, channels);
    for (const auto& s : samples) {
        const Eigen::MatrixXd centered = s.data.rowwise() - mean.transpose();
        cov.noalias() += centered.transpose() * centered;
    }
    cov /= static_cast<double>(rows);

    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    Eigen::MatrixXd components(channels, k);
    for (int i = 0; i < k; ++i) {
        Eigen::VectorXd v = eig.eigenvectors().col(channels - 1 - i);
        Eigen::Index arg;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0.0)
            v = -v;
        components.col(i) = v;
    }
    return {mean, components, rate};
}

double cmp_loss(const FeatureMap& f, const FeatureMap& f_rec)
{
    if (f.data.rows() != f_rec.data.rows() || f.data.cols() != f_rec.data.cols())
        throw std::invalid_argument("cmp_loss: shape mismatch");
    constexpr double floor = 1e-12;
    const double n = static_cast<double>(f.data.rows());
    double kl = 0.0;
    for (Eigen::Index c = 0; c < f.data.cols(); ++c) {
        const double mp = f.data.col(c).mean();
        const double mq = f_rec.data.col(c).mean();
        const double vp = std::max((f.data.col(c).array() - mp).square().sum() / n, floor);
        const double vq = std::max((f_rec.data.col(c).array() - mq).square().sum() / n, floor);
        kl += 0.5 * (std::log(vq / vp) + (vp + (mp - mq) * (mp - mq)) / vq - 1.0);
    }
    return std::max(kl, 0.0);
}

Latent fuse_condition(const Latent& ego, std::span<const Latent> others)
{
    int channels = ego.channels();
    for (const auto& o : others) {
        if (o.height != ego.height || o.width != ego.width)
            throw std::invalid_argument("fuse_condition: spatial dimensions differ");
        channels += o.channels();
    }
    Latent out(ego.height, ego.width, channels);
    out.data.leftCols(ego.channels()) = ego.data;
    Eigen::Index col = ego.channels();
    for (const auto& o : others) {
        out.data.middleCols(col, o.channels()) = o.data;
        col += o.channels();
    }
    return out;
}

double total_loss(double l_ldm, double l_cls, double l_reg, double lambda_cls, double lambda_reg)
{
    return l_ldm + lambda_cls * l_cls + lambda_reg * l_reg;
}

nlohmann::json schedule_to_json(const DiffusionSchedule& sched)
{
    nlohmann::json j;
    j["T"] = sched.steps();
    j["beta_start"] = sched.beta_start();
    j["beta_end"] = sched.beta_end();
    std::vector<double> ab;
    for (int t = 0; t <= sched.steps(); ++t)
        ab.push_back(sched.alpha_bar(t));
    j["alpha_bar"] = ab;
    return j;
}

nlohmann::json latent_to_json(const Latent& z)
{
    std::vector<double> values(z.data.data(), z.data.data() + z.data.size());
    return {{"height", z.height}, {"width", z.width}, {"channels", z.channels()}, {"data", values}};
}

Latent latent_from_json(const nlohmann::json& j)
{
    const int h = j.at("height").get<int>();
    const int w = j.at("width").get<int>();
    const int c = j.at("channels").get<int>();
    const auto values = j.at("data").get<std::vector<double>>();
    if (values.size() != static_cast<std::size_t>(h) * w * c)
        throw std::invalid_argument("latent: data length does not match shape");
    Latent z(h, w, c);
    std::copy(values.begin(), values.end(), z.data.data());
    return z;
}

} // namespace codiff
