#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <string>

#include "gdsr/cascade.hpp"
#include "gdsr/denoiser.hpp"
#include "gdsr/linop.hpp"
#include "gdsr/metrics.hpp"
#include "gdsr/schedule.hpp"

namespace gdsr {

/// A complete synthetic super-resolution problem: data prior, operator, semantic encoder, prompt
/// and one fixed measurement drawn from a chosen mixture component.
struct ToyProblem {
    GaussianMixturePrior prior;  // full resolution; embeddings = embedder(mean_k)
    std::size_t factor = 1;
    std::shared_ptr<const SvdFactors> op;
    std::shared_ptr<const LinearEmbedder> embedder;
    ConditionVector condition;  // the prompt
    double temperature = 1.0;
    std::size_t truth_component = 0;
    ImageTensor x_true;
    ImageTensor y;
    double sigma_y = 0.0;

    [[nodiscard]] Measurement measurement() const { return {op, y, sigma_y}; }
};

struct ToyOptions {
    std::size_t height = 16;
    std::size_t width = 16;
    std::size_t factor = 4;
    std::size_t embedding_dim = 16;
    double sigma_y = 0.0;
    std::uint64_t seed = 0;
};

namespace detail {

/// Sum of low-order cosines with seeded decaying amplitudes.
inline Vector smooth_field(std::size_t h, std::size_t w, int order, double amplitude, Rng& rng)
{
    Vector f = Vector::Zero(static_cast<Eigen::Index>(h * w));
    for (int a = 0; a <= order; ++a)
        for (int b = 0; b <= order; ++b) {
            if (a == 0 && b == 0) continue;
            const double c = amplitude * rng.normal() / static_cast<double>(1 + a + b);
            for (std::size_t i = 0; i < h; ++i)
                for (std::size_t j = 0; j < w; ++j)
                    f[static_cast<Eigen::Index>(i * w + j)] +=
                        c * std::cos(std::numbers::pi * a * (static_cast<double>(i) + 0.5) / static_cast<double>(h)) *
                        std::cos(std::numbers::pi * b * (static_cast<double>(j) + 0.5) / static_cast<double>(w));
        }
    return f;
}

inline void finish(ToyProblem& p, const ToyOptions& o, std::size_t truth)
{
    p.prior.validate();
    p.factor = o.factor;
    p.op = std::make_shared<const SvdFactors>(
        factorize(build_bicubic_downsampler(o.height, o.width, o.factor, p.prior.shape.channels)));
    p.embedder = std::make_shared<const LinearEmbedder>(o.embedding_dim, p.prior.shape, o.seed + 7919);
    p.prior.embeddings.resize(static_cast<Eigen::Index>(o.embedding_dim),
                              static_cast<Eigen::Index>(p.prior.components()));
    for (Eigen::Index k = 0; k < p.prior.embeddings.cols(); ++k)
        p.prior.embeddings.col(k) = p.embedder->embed({p.prior.shape, p.prior.means.col(k)});
    p.sigma_y = o.sigma_y;
    p.truth_component = truth;
    Rng rng(o.seed + 104729);
    p.x_true = ImageTensor(p.prior.shape, p.prior.means.col(static_cast<Eigen::Index>(truth)) +
                                              p.prior.variances.col(static_cast<Eigen::Index>(truth)).cwiseSqrt().cwiseProduct(
                                                  rng.normal_vector(p.prior.dim())));
    p.y = p.op->op().apply(p.x_true);
    if (o.sigma_y > 0.0) p.y += o.sigma_y * rng.normal_like(p.y.shape());
}

} // namespace detail

/// Faces analog: four smooth "identities" on a grey background with per-pixel jitter.  The
/// measurement and the prompt both come from component 1.
inline ToyProblem faces_toy(const ToyOptions& o = {})
{
    ToyProblem p;
    p.prior.shape = {1, o.height, o.width};
    const Eigen::Index d = static_cast<Eigen::Index>(p.prior.shape.size());
    constexpr Eigen::Index k_count = 4;
    Rng rng(o.seed);
    p.prior.weights = Vector::Constant(k_count, 1.0 / k_count);
    p.prior.means.resize(d, k_count);
    p.prior.variances = Matrix::Constant(d, k_count, 0.003);
    for (Eigen::Index k = 0; k < k_count; ++k)
        p.prior.means.col(k) =
            (0.5 + detail::smooth_field(o.height, o.width, 3, 0.6, rng).array()).cwiseMax(0.05).cwiseMin(0.95).matrix();
    p.temperature = 0.25;
    detail::finish(p, o, 1);
    p.condition = {p.prior.embeddings.col(1)};
    return p;
}

struct TwoModeOptions {
    double ramp = 0.02;      // amplitude of the diagonal ramp the measurement resolves
    double blocks = 0.2;     // amplitude of the 2x2-block checkerboard, invisible to y
    double variance = 0.01;  // per-pixel prior variance
    double temperature = 0.5;
};

/// Two mirrored modes A (index 0) and B (index 1) around grey: a faint diagonal ramp the
/// measurement resolves and a 2x2-block checkerboard that only the stage-1 resolution sees.
/// Prompt = embedding of A; measurement drawn from B.
inline ToyProblem two_mode_toy(const ToyOptions& o = {8, 8, 4, 16, 0.0, 0}, const TwoModeOptions& t = {})
{
    ToyProblem p;
    p.prior.shape = {1, o.height, o.width};
    const Eigen::Index d = static_cast<Eigen::Index>(p.prior.shape.size());
    Vector pattern(d);
    for (std::size_t i = 0; i < o.height; ++i)
        for (std::size_t j = 0; j < o.width; ++j) {
            const double u = (static_cast<double>(i + j) + 1.0) / static_cast<double>(o.height + o.width) - 0.5;
            const double sign = ((i / 2 + j / 2) % 2) != 0U ? 1.0 : -1.0;
            pattern[static_cast<Eigen::Index>(i * o.width + j)] = 2.0 * t.ramp * u + t.blocks * sign;
        }
    p.prior.weights = Vector::Constant(2, 0.5);
    p.prior.means.resize(d, 2);
    p.prior.means.col(0) = (0.5 + pattern.array()).matrix();
    p.prior.means.col(1) = (0.5 - pattern.array()).matrix();
    p.prior.variances = Matrix::Constant(d, 2, t.variance);
    p.temperature = t.temperature;
    detail::finish(p, o, 1);
    p.condition = {p.prior.embeddings.col(0)};
    return p;
}

/// Problem around an arbitrary mixture (e.g. loaded from a prior file).  Prompt and measurement
/// both come from component `truth`.
inline ToyProblem problem_from_prior(GaussianMixturePrior prior, const ToyOptions& o, std::size_t truth,
                                     double temperature = 1.0)
{
    if (prior.shape.height != o.height || prior.shape.width != o.width)
        throw DimensionError("prior shape " + to_string(prior.shape) + " does not match the problem size");
    if (truth >= prior.components()) throw std::invalid_argument("truth component out of range");
    ToyProblem p;
    p.prior = std::move(prior);
    p.prior.embeddings = Matrix::Zero(0, static_cast<Eigen::Index>(p.prior.components()));
    p.temperature = temperature;
    detail::finish(p, o, truth);
    p.condition = {p.prior.embeddings.col(static_cast<Eigen::Index>(truth))};
    return p;
}

/// Index of the mixture mean nearest to x in L2.
inline std::size_t nearest_component(const GaussianMixturePrior& prior, const ImageTensor& x)
{
    require_shape(x, prior.shape, "classified sample");
    Eigen::Index best = 0;
    (prior.means.colwise() - x.data()).colwise().squaredNorm().minCoeff(&best);
    return static_cast<std::size_t>(best);
}

/// Coarse-resolution version of a full-resolution mixture: means D mu_k and the diagonal of
/// D diag(var_k) D^T, with D the bicubic downsampler by `factor`.
inline GaussianMixturePrior downsample_prior(const GaussianMixturePrior& prior, std::size_t factor)
{
    const DegradationOperator d = build_bicubic_downsampler(prior.shape.height, prior.shape.width, factor,
                                                           prior.shape.channels);
    const Matrix dm = d.to_dense();
    const Matrix d2 = dm.cwiseAbs2();
    GaussianMixturePrior out = prior;
    out.shape = d.output_shape();
    out.means = dm * prior.means;
    out.variances = d2 * prior.variances;
    return out;
}

struct CascadeOptions {
    std::size_t stage_factor = 2;  // full / stage resolution
    int stage1_steps = 200;
    int stage2_steps = 50;
    double detail_variance = 0.002;
    double lambda = 0.0;
};

/// Two-stage plan for a toy problem: stage 1 samples the downsampled mixture against A_LR, stage 2
/// samples a narrow detail prior centred on the upsampled stage-1 output against A.
inline CascadePlan make_cascade_plan(const ToyProblem& p, const NoiseSchedule& schedule, const CascadeOptions& o,
                                     const SamplerConfig& base)
{
    CascadePlan plan;
    const Shape& full = p.prior.shape;
    if (o.stage_factor == 0 || full.height % o.stage_factor != 0 || full.width % o.stage_factor != 0)
        throw DimensionError("stage factor must divide the full resolution");
    const Shape stage{full.channels, full.height / o.stage_factor, full.width / o.stage_factor};
    plan.full_op = p.op;
    plan.stage_op = std::make_shared<const SvdFactors>(factorize(build_stage_operator(p.factor, full, stage)));

    plan.stage1.shape = stage;
    plan.stage1.denoiser =
        std::make_shared<const GmmDenoiser>(downsample_prior(p.prior, o.stage_factor), schedule, p.temperature);
    plan.stage1.condition = p.condition;
    plan.stage1.sampler = base;
    plan.stage1.sampler.steps = o.stage1_steps;

    GaussianMixturePrior detail;
    detail.shape = full;
    detail.weights = Vector::Ones(1);
    detail.means = Matrix::Zero(static_cast<Eigen::Index>(full.size()), 1);
    detail.variances = Matrix::Constant(static_cast<Eigen::Index>(full.size()), 1, o.detail_variance);
    detail.embeddings = Matrix::Zero(p.prior.embeddings.rows(), 1);
    const NoiseSchedule sched = schedule;
    plan.stage2.shape = full;
    plan.stage2.builder = [detail, sched](const ImageTensor& x_lr) -> std::shared_ptr<const Denoiser> {
        return stage2_conditional_denoiser(x_lr, detail, sched);
    };
    plan.stage2.sampler = base;
    plan.stage2.sampler.steps = o.stage2_steps;

    plan.lambda = o.lambda;
    plan.prior_embedding = p.condition;
    plan.embedder = p.embedder;
    return plan;
}

} // namespace gdsr
