#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "gdsr/denoiser.hpp"
#include "gdsr/linop.hpp"
#include "gdsr/metrics.hpp"
#include "gdsr/schedule.hpp"

namespace gdsr {

enum class Method { unguided, dps, pigdm, ddnm, ddnm_plus, energy, energy_ddnm };

/// How rho_t is formed from the configured value zeta.
enum class StepSizeMode {
    constant,             // rho_t = zeta
    residual_normalized,  // rho_t = zeta / sqrt(loss)
};

enum class GradientMode {
    automatic,          // exact vjp when the denoiser has one, otherwise finite differences
    exact_vjp,          // fail if the denoiser has no vjp
    finite_difference,  // central differences through the denoiser
};

inline std::string_view method_name(Method m)
{
    switch (m) {
    case Method::unguided: return "unguided";
    case Method::dps: return "dps";
    case Method::pigdm: return "pigdm";
    case Method::ddnm: return "ddnm";
    case Method::ddnm_plus: return "ddnm_plus";
    case Method::energy: return "energy";
    case Method::energy_ddnm: return "energy_ddnm";
    }
    return "?";
}

inline std::optional<Method> parse_method(std::string_view s)
{
    for (auto m : {Method::unguided, Method::dps, Method::pigdm, Method::ddnm, Method::ddnm_plus, Method::energy,
                   Method::energy_ddnm})
        if (method_name(m) == s) return m;
    if (s == "clip_ddnm") return Method::energy_ddnm;
    return std::nullopt;
}

struct SamplerConfig {
    Method method = Method::ddnm;
    int steps = 100;
    int t_stop = 1000;
    bool pinv_init = true;
    StepSizeMode step_mode = StepSizeMode::constant;
    double rho = 1.0;
    double cfg_scale = 1.0;
    std::uint64_t seed = 0;
    GradientMode gradient = GradientMode::automatic;

    /// Defaults per method: residual-normalized steps for DPS, constant elsewhere.
    static SamplerConfig for_method(Method m)
    {
        SamplerConfig c;
        c.method = m;
        if (m == Method::dps) c.step_mode = StepSizeMode::residual_normalized;
        return c;
    }
};

/// Differentiable energy E(c, x0) used for training-free guidance.
class EnergyFunction {
public:
    virtual ~EnergyFunction() = default;
    [[nodiscard]] virtual double value(const ConditionVector* c, const ImageTensor& x0) const = 0;
    [[nodiscard]] virtual ImageTensor gradient(const ConditionVector* c, const ImageTensor& x0) const = 0;
};

/// ||x0 - target||^2; ignores the condition.
class QuadraticEnergy final : public EnergyFunction {
public:
    explicit QuadraticEnergy(ImageTensor target) : target_(std::move(target)) {}

    [[nodiscard]] double value(const ConditionVector*, const ImageTensor& x0) const override
    {
        return (x0.data() - target_.data()).squaredNorm();
    }
    [[nodiscard]] ImageTensor gradient(const ConditionVector*, const ImageTensor& x0) const override
    {
        return 2.0 * (x0 - target_);
    }

private:
    ImageTensor target_;
};

/// 1 - cos(embedder(x0), c): CLIP-style text/image distance with the linear stand-in encoder.
class CosineEnergy final : public EnergyFunction {
public:
    explicit CosineEnergy(LinearEmbedder embedder) : embedder_(std::move(embedder)) {}

    [[nodiscard]] double value(const ConditionVector* c, const ImageTensor& x0) const override
    {
        return 1.0 - semantic_score(embedder_, require(c), x0).value;
    }

    [[nodiscard]] ImageTensor gradient(const ConditionVector* c, const ImageTensor& x0) const override
    {
        const Vector& cv = require(c).embedding;
        const Vector u = embedder_.embed(x0);
        const double nu = u.norm();
        const double nc = cv.norm();
        if (nu == 0.0 || nc == 0.0) return ImageTensor(x0.shape());
        const double cos = u.dot(cv) / (nu * nc);
        const Vector dcos = cv / (nu * nc) - cos * u / (nu * nu);
        return -1.0 * embedder_.embed_transpose(dcos);
    }

    [[nodiscard]] const LinearEmbedder& embedder() const { return embedder_; }

private:
    static const ConditionVector& require(const ConditionVector* c)
    {
        if (c == nullptr) throw std::invalid_argument("cosine energy needs a target condition");
        return *c;
    }

    LinearEmbedder embedder_;
};

/// Everything a sampling chain reads but never mutates.
struct SamplingProblem {
    const Denoiser* denoiser = nullptr;
    const NoiseSchedule* schedule = nullptr;
    const Measurement* measurement = nullptr;
    const ConditionVector* condition = nullptr;  // conditional branch of the denoiser
    const ConditionVector* negative = nullptr;   // unconditional / negative-prompt branch
    const EnergyFunction* energy = nullptr;
    const ConditionVector* energy_target = nullptr;
};

struct StepRecord {
    int t = 0;
    double residual = std::numeric_limits<double>::quiet_NaN();  // ||y - A x0|t||
    double energy = std::numeric_limits<double>::quiet_NaN();
    double rho = 0.0;
};

struct SampleTrace {
    std::vector<StepRecord> steps;
    double final_residual = std::numeric_limits<double>::quiet_NaN();
    double wall_ms = 0.0;
};

struct SampleResult {
    ImageTensor x0;
    SampleTrace trace;
};

struct GuidanceGradient {
    double loss = 0.0;
    ImageTensor gradient;  // d loss / d x_t
};

namespace detail {

inline const Measurement& need_measurement(const SamplingProblem& p, Method m)
{
    if (p.measurement == nullptr)
        throw std::invalid_argument(std::string(method_name(m)) + " sampling needs a measurement");
    return *p.measurement;
}

inline ImageTensor epsilon(const SamplingProblem& p, const SamplerConfig& cfg, const ImageTensor& x, int t)
{
    return guided_epsilon(*p.denoiser, x, t, p.condition, p.negative, cfg.cfg_scale);
}

inline ImageTensor clean_estimate(const SamplingProblem& p, const SamplerConfig& cfg, const ImageTensor& x, int t)
{
    return estimate_x0(x, epsilon(p, cfg, x, t), t, *p.schedule);
}

/// Scalar loss on the clean estimate together with its gradient with respect to x0.
struct CleanLoss {
    std::function<double(const ImageTensor&)> value;
    std::function<ImageTensor(const ImageTensor&)> gradient;
};

inline CleanLoss loss_for(Method m, const SamplingProblem& p)
{
    switch (m) {
    case Method::dps: {
        const Measurement& meas = need_measurement(p, m);
        return {[&meas](const ImageTensor& x0) { return (meas.y - meas.op().apply(x0)).data().squaredNorm(); },
                [&meas](const ImageTensor& x0) {
                    return -2.0 * meas.op().apply_transpose(meas.y - meas.op().apply(x0));
                }};
    }
    case Method::pigdm: {
        const Measurement& meas = need_measurement(p, m);
        auto residual = [&meas](const ImageTensor& x0) {
            return pinv_apply(meas.f(), meas.y) - range_project(meas.f(), x0);
        };
        return {[residual](const ImageTensor& x0) { return residual(x0).data().squaredNorm(); },
                [residual, &meas](const ImageTensor& x0) { return -2.0 * range_project(meas.f(), residual(x0)); }};
    }
    case Method::energy:
    case Method::energy_ddnm: {
        if (p.energy == nullptr) throw std::invalid_argument("energy guidance needs an energy function");
        const EnergyFunction& e = *p.energy;
        const ConditionVector* c = p.energy_target;
        return {[&e, c](const ImageTensor& x0) { return e.value(c, x0); },
                [&e, c](const ImageTensor& x0) { return e.gradient(c, x0); }};
    }
    default: throw std::invalid_argument(std::string(method_name(m)) + " has no guidance loss");
    }
}

/// d/dx_t of loss(x0|t(x_t)): exact through the denoiser vjp,
///   (1/sqrt(abar)) (g - sqrt(1 - abar) J_eps^T g),
/// or central differences with h = 1e-5 (1 + ||x_t||_inf).
inline ImageTensor chain_to_xt(const SamplingProblem& p, const SamplerConfig& cfg, const ImageTensor& x_t, int t,
                               const ImageTensor& x0, const CleanLoss& loss)
{
    const bool has_vjp = p.denoiser->has_exact_vjp();
    bool exact = false;
    switch (cfg.gradient) {
    case GradientMode::automatic: exact = has_vjp; break;
    case GradientMode::exact_vjp:
        if (!has_vjp) throw std::invalid_argument("exact gradient requested but the denoiser has no vjp");
        exact = true;
        break;
    case GradientMode::finite_difference: exact = false; break;
    }
    if (exact) {
        const ImageTensor g = loss.gradient(x0);
        const double ab = p.schedule->alpha_bar(t);
        const ImageTensor jg = guided_vjp(*p.denoiser, x_t, t, p.condition, p.negative, cfg.cfg_scale, g);
        return (1.0 / std::sqrt(ab)) * (g - std::sqrt(1.0 - ab) * jg);
    }
    const double h = 1e-5 * (1.0 + x_t.data().cwiseAbs().maxCoeff());
    ImageTensor grad(x_t.shape());
    ImageTensor probe = x_t;
    for (Eigen::Index i = 0; i < x_t.data().size(); ++i) {
        const double orig = probe.data()[i];
        probe.data()[i] = orig + h;
        const double up = loss.value(clean_estimate(p, cfg, probe, t));
        probe.data()[i] = orig - h;
        const double down = loss.value(clean_estimate(p, cfg, probe, t));
        probe.data()[i] = orig;
        grad.data()[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

inline double step_size(const SamplerConfig& cfg, double loss)
{
    if (cfg.step_mode == StepSizeMode::constant) return cfg.rho;
    const double norm = std::sqrt(std::max(loss, 0.0));
    return norm > 0.0 ? cfg.rho / norm : 0.0;
}

inline double residual_norm(const SamplingProblem& p, const ImageTensor& x0)
{
    if (p.measurement == nullptr) return std::numeric_limits<double>::quiet_NaN();
    return (p.measurement->y - p.measurement->op().apply(x0)).data().norm();
}

inline void check_step(const DiffusionState& s, int t_prev, const SamplingProblem& p)
{
    if (p.denoiser == nullptr || p.schedule == nullptr)
        throw std::invalid_argument("sampling problem needs a denoiser and a schedule");
    if (s.t < 1) throw std::out_of_range("cannot step from t = 0");
    if (t_prev < 0 || t_prev >= s.t) throw std::out_of_range("t_prev must lie in [0, t)");
}

/// x'_{t-1} from the unrectified estimate, then x_{t-1} = x'_{t-1} - rho_t grad_{x_t} loss.
inline StepRecord gradient_guided_step(Method m, DiffusionState& s, int t_prev, const SamplingProblem& p,
                                       const SamplerConfig& cfg)
{
    check_step(s, t_prev, p);
    const ImageTensor z = s.rng.normal_like(s.x.shape());
    const ImageTensor x0 = clean_estimate(p, cfg, s.x, s.t);
    const CleanLoss loss = loss_for(m, p);
    const double l = loss.value(x0);
    const double rho = step_size(cfg, l);
    StepRecord rec{s.t, residual_norm(p, x0), m == Method::energy ? l : std::numeric_limits<double>::quiet_NaN(), rho};
    ImageTensor next = ancestral_step(s.x, x0, s.t, t_prev, z, *p.schedule);
    if (rho != 0.0) next -= rho * chain_to_xt(p, cfg, s.x, s.t, x0, loss);
    s.x = std::move(next);
    s.t = t_prev;
    return rec;
}

} // namespace detail

/// Full guidance loss and its gradient with respect to x_t for a gradient-based method.
inline GuidanceGradient guidance_gradient(Method m, const SamplingProblem& p, const SamplerConfig& cfg,
                                          const ImageTensor& x_t, int t)
{
    const ImageTensor x0 = detail::clean_estimate(p, cfg, x_t, t);
    const detail::CleanLoss loss = detail::loss_for(m, p);
    return {loss.value(x0), detail::chain_to_xt(p, cfg, x_t, t, x0, loss)};
}

inline StepRecord unguided_step(DiffusionState& s, int t_prev, const SamplingProblem& p, const SamplerConfig& cfg)
{
    detail::check_step(s, t_prev, p);
    const ImageTensor z = s.rng.normal_like(s.x.shape());
    const ImageTensor x0 = detail::clean_estimate(p, cfg, s.x, s.t);
    StepRecord rec{s.t, detail::residual_norm(p, x0), std::numeric_limits<double>::quiet_NaN(), 0.0};
    s.x = ancestral_step(s.x, x0, s.t, t_prev, z, *p.schedule);
    s.t = t_prev;
    return rec;
}

/// Reconstruction guidance on ||y - A x0|t||^2.
inline StepRecord dps_step(DiffusionState& s, int t_prev, const SamplingProblem& p, const SamplerConfig& cfg)
{
    return detail::gradient_guided_step(Method::dps, s, t_prev, p, cfg);
}

/// Pseudoinverse guidance on ||A^+ y - A^+ A x0|t||^2.
inline StepRecord pigdm_step(DiffusionState& s, int t_prev, const SamplingProblem& p, const SamplerConfig& cfg)
{
    return detail::gradient_guided_step(Method::pigdm, s, t_prev, p, cfg);
}

/// Training-free guidance on E(c, x0|t).
inline StepRecord energy_guided_step(DiffusionState& s, int t_prev, const SamplingProblem& p, const SamplerConfig& cfg)
{
    return detail::gradient_guided_step(Method::energy, s, t_prev, p, cfg);
}

/// Null-space rectification of the clean estimate, then the ancestral draw from it.
inline StepRecord ddnm_step(DiffusionState& s, int t_prev, const SamplingProblem& p, const SamplerConfig& cfg)
{
    detail::check_step(s, t_prev, p);
    const Measurement& meas = detail::need_measurement(p, Method::ddnm);
    const ImageTensor z = s.rng.normal_like(s.x.shape());
    const ImageTensor x0 = detail::clean_estimate(p, cfg, s.x, s.t);
    StepRecord rec{s.t, detail::residual_norm(p, x0), std::numeric_limits<double>::quiet_NaN(), 0.0};
    s.x = ancestral_step(s.x, rectify(meas.f(), meas.y, x0), s.t, t_prev, z, *p.schedule);
    s.t = t_prev;
    return rec;
}

/// Spectrally damped rectification for noisy measurements.  Coefficient i of the range-space
/// correction is scaled by
///   phi_i = s_i^2 (1 - abar_t) / (s_i^2 (1 - abar_t) + abar_t sigma_y^2),
/// which is 1 for sigma_y = 0 and tends to 0 as sigma_y grows.
inline StepRecord ddnm_plus_step(DiffusionState& s, int t_prev, const SamplingProblem& p, const SamplerConfig& cfg)
{
    detail::check_step(s, t_prev, p);
    const Measurement& meas = detail::need_measurement(p, Method::ddnm_plus);
    if (!(meas.sigma_y > 0.0)) throw std::invalid_argument("ddnm_plus needs sigma_y > 0; use ddnm for noiseless data");
    const ImageTensor z = s.rng.normal_like(s.x.shape());
    const ImageTensor x0 = detail::clean_estimate(p, cfg, s.x, s.t);
    StepRecord rec{s.t, detail::residual_norm(p, x0), std::numeric_limits<double>::quiet_NaN(), 0.0};

    const SvdFactors& f = meas.f();
    const Vector& sv = f.spectrum();
    const double ab = p.schedule->alpha_bar(s.t);
    const double noise = ab * meas.sigma_y * meas.sigma_y;
    const Vector target = f.coefficients_out(meas.y);
    const Vector current = f.coefficients_in(x0);
    Vector correction = Vector::Zero(sv.size());
    for (Eigen::Index i = 0; i < sv.size(); ++i) {
        if (sv[i] <= 0.0) continue;
        const double signal = sv[i] * sv[i] * (1.0 - ab);
        const double phi = signal / (signal + noise);
        correction[i] = phi * (target[i] / sv[i] - current[i]);
    }
    const ImageTensor x0_hat = x0 + f.from_coefficients_in(correction);
    s.x = ancestral_step(s.x, x0_hat, s.t, t_prev, z, *p.schedule);
    s.t = t_prev;
    return rec;
}

/// Rectified ancestral draw followed by an energy step whose gradient is taken at the
/// unrectified clean estimate.
inline StepRecord clip_ddnm_step(DiffusionState& s, int t_prev, const SamplingProblem& p, const SamplerConfig& cfg)
{
    detail::check_step(s, t_prev, p);
    const Measurement& meas = detail::need_measurement(p, Method::energy_ddnm);
    const ImageTensor z = s.rng.normal_like(s.x.shape());
    const ImageTensor x0 = detail::clean_estimate(p, cfg, s.x, s.t);
    const detail::CleanLoss loss = detail::loss_for(Method::energy_ddnm, p);
    const double l = loss.value(x0);
    const double rho = detail::step_size(cfg, l);
    StepRecord rec{s.t, detail::residual_norm(p, x0), l, rho};
    ImageTensor next = ancestral_step(s.x, rectify(meas.f(), meas.y, x0), s.t, t_prev, z, *p.schedule);
    if (rho != 0.0) next -= rho * detail::chain_to_xt(p, cfg, s.x, s.t, x0, loss);
    s.x = std::move(next);
    s.t = t_prev;
    return rec;
}

inline StepRecord sampler_step(DiffusionState& s, int t_prev, const SamplingProblem& p, const SamplerConfig& cfg)
{
    switch (cfg.method) {
    case Method::unguided: return unguided_step(s, t_prev, p, cfg);
    case Method::dps: return dps_step(s, t_prev, p, cfg);
    case Method::pigdm: return pigdm_step(s, t_prev, p, cfg);
    case Method::ddnm: return ddnm_step(s, t_prev, p, cfg);
    case Method::ddnm_plus: return ddnm_plus_step(s, t_prev, p, cfg);
    case Method::energy: return energy_guided_step(s, t_prev, p, cfg);
    case Method::energy_ddnm: return clip_ddnm_step(s, t_prev, p, cfg);
    }
    throw std::invalid_argument("unknown method");
}

/// Initial state: pseudoinverse solution noised to t_stop when a measurement is available and
/// pinv_init is set, otherwise N(0, I) at t_stop.
inline DiffusionState initial_state(const SamplingProblem& p, const SamplerConfig& cfg, const Shape& shape)
{
    if (p.schedule == nullptr) throw std::invalid_argument("sampling problem needs a schedule");
    Rng rng(cfg.seed);
    if (cfg.t_stop < 1 || cfg.t_stop > p.schedule->steps())
        throw std::out_of_range("t_stop " + std::to_string(cfg.t_stop) + " outside [1, " +
                                std::to_string(p.schedule->steps()) + "]");
    if (cfg.pinv_init && p.measurement != nullptr)
        return init_from_pinv(p.measurement->f(), p.measurement->y, cfg.t_stop, *p.schedule, std::move(rng));
    return init_from_noise(shape, cfg.t_stop, std::move(rng));
}

/// Run one chain over the uniform timestep grid from t_stop down to 0.
inline SampleResult run_sampler(const SamplerConfig& cfg, const SamplingProblem& p, const Shape& shape)
{
    const auto start = std::chrono::steady_clock::now();
    if (p.measurement != nullptr) require_shape(ImageTensor(shape), p.measurement->op().input_shape(), "sample shape");
    DiffusionState state = initial_state(p, cfg, shape);
    const std::vector<int> grid = timestep_grid(cfg.t_stop, cfg.steps);
    SampleResult out;
    out.trace.steps.reserve(grid.size() - 1);
    for (std::size_t i = 0; i + 1 < grid.size(); ++i) out.trace.steps.push_back(sampler_step(state, grid[i + 1], p, cfg));
    if (!state.x.all_finite()) throw std::runtime_error("sampler diverged (non-finite iterate)");
    out.trace.final_residual = detail::residual_norm(p, state.x);
    out.x0 = std::move(state.x);
    out.trace.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return out;
}

} // namespace gdsr
