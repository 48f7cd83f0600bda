#pragma once

#include <array>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>

#include "gdsr/denoiser.hpp"
#include "gdsr/guidance.hpp"
#include "gdsr/linop.hpp"
#include "gdsr/metrics.hpp"

namespace gdsr {

/// Bicubic operator from the stage resolution down to the measurement resolution of a
/// full-resolution operator with factor `full_factor`.
inline DegradationOperator build_stage_operator(std::size_t full_factor, const Shape& full_shape,
                                                const Shape& stage_shape)
{
    if (full_factor == 0 || full_shape.height % full_factor != 0 || full_shape.width % full_factor != 0)
        throw DimensionError("full shape " + to_string(full_shape) + " not divisible by factor " +
                             std::to_string(full_factor));
    if (stage_shape.channels != full_shape.channels || stage_shape.height == 0 || stage_shape.width == 0 ||
        full_shape.height % stage_shape.height != 0 || full_shape.width % stage_shape.width != 0)
        throw DimensionError("stage shape " + to_string(stage_shape) + " does not divide " + to_string(full_shape));
    const std::size_t yh = full_shape.height / full_factor;
    const std::size_t yw = full_shape.width / full_factor;
    if (yh > stage_shape.height || yw > stage_shape.width)
        throw DimensionError("measurement is larger than stage " + to_string(stage_shape));
    if (stage_shape.height % yh != 0 || stage_shape.width % yw != 0 ||
        stage_shape.height / yh != stage_shape.width / yw)
        throw DimensionError("stage " + to_string(stage_shape) + " is not an integer multiple of the measurement");
    return build_bicubic_downsampler(stage_shape.height, stage_shape.width, stage_shape.height / yh,
                                     stage_shape.channels);
}

/// (1 - lambda) e_prior + lambda e_pinv
inline ConditionVector average_embeddings(const ConditionVector& e_prior, const ConditionVector& e_pinv, double lambda)
{
    if (e_prior.dim() != e_pinv.dim()) throw DimensionError("embeddings to average differ in dimension");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("averaging weight must lie in [0, 1]");
    if (lambda == 0.0) return e_prior;
    if (lambda == 1.0) return e_pinv;
    return {(1.0 - lambda) * e_prior.embedding + lambda * e_pinv.embedding};
}

/// Embedding e_k of the mixture component selected by the condition (the most probable one
/// after conditioning).
inline ConditionVector prior_embedding(const GmmDenoiser& denoiser, const ConditionVector& condition)
{
    Eigen::Index k = 0;
    denoiser.conditioned_weights(&condition).maxCoeff(&k);
    return {denoiser.prior().embeddings.col(k)};
}

/// embedder(A^+ y)
inline ConditionVector pinv_embedding(const SvdFactors& f, const ImageTensor& y, const LinearEmbedder& embedder)
{
    return {embedder.embed(pinv_apply(f, y))};
}

using DenoiserBuilder = std::function<std::shared_ptr<const Denoiser>(const ImageTensor& x_lr)>;

struct StageSpec {
    Shape shape{};
    std::shared_ptr<const Denoiser> denoiser;  // used when `builder` is empty
    DenoiserBuilder builder;                   // stage 2: denoiser conditioned on the stage-1 output
    std::optional<ConditionVector> condition;
    std::optional<ConditionVector> negative;
    SamplerConfig sampler{};
};

struct CascadePlan {
    StageSpec stage1;
    StageSpec stage2;
    std::shared_ptr<const SvdFactors> full_op;   // A
    std::shared_ptr<const SvdFactors> stage_op;  // A_LR
    double lambda = 0.0;
    std::optional<ConditionVector> prior_embedding;  // falls back to stage1.condition
    std::shared_ptr<const LinearEmbedder> embedder;  // at full resolution; needed when lambda > 0

    void validate() const
    {
        if (!full_op || !stage_op) throw std::invalid_argument("cascade plan needs both operators");
        if (!(full_op->op().output_shape() == stage_op->op().output_shape()))
            throw DimensionError("A and A_LR must share the measurement shape");
        if (!(stage1.shape == stage_op->op().input_shape()))
            throw DimensionError("stage 1 shape " + to_string(stage1.shape) + " does not match A_LR input");
        if (!(stage2.shape == full_op->op().input_shape()))
            throw DimensionError("stage 2 shape " + to_string(stage2.shape) + " does not match A input");
        if (stage2.shape.height % stage1.shape.height != 0 || stage2.shape.width % stage1.shape.width != 0)
            throw DimensionError("stage 1 resolution must divide stage 2 resolution");
        if (!stage1.denoiser && !stage1.builder) throw std::invalid_argument("stage 1 has no denoiser");
        if (!stage2.denoiser && !stage2.builder) throw std::invalid_argument("stage 2 has no denoiser");
        if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("averaging weight must lie in [0, 1]");
        if (lambda > 0.0) {
            if (!embedder) throw std::invalid_argument("embeddings averaging needs an embedder");
            if (!(embedder->input_shape() == stage2.shape))
                throw DimensionError("averaging embedder must act on the full resolution");
            if (!prior_embedding && !stage1.condition)
                throw std::invalid_argument("embeddings averaging needs a prior embedding or a stage-1 condition");
        }
    }
};

struct CascadeResult {
    ImageTensor x_lr;
    ImageTensor x;
    SampleTrace stage1;
    SampleTrace stage2;
};

/// Two-stage sampling with the same method in both stages.  Stage 1 runs against (A_LR, y) at the
/// coarse resolution; stage 2 runs against (A, y) with a denoiser built from the stage-1 output.
inline CascadeResult run_cascade(const CascadePlan& plan, const NoiseSchedule& schedule, const ImageTensor& y,
                                 double sigma_y, Method method, std::array<std::uint64_t, 2> seeds)
{
    plan.validate();
    const Measurement meas_lr(plan.stage_op, y, sigma_y);
    const Measurement meas_full(plan.full_op, y, sigma_y);

    std::optional<ConditionVector> c1 = plan.stage1.condition;
    if (plan.lambda > 0.0) {
        const ConditionVector& e_prior = plan.prior_embedding ? *plan.prior_embedding : *plan.stage1.condition;
        c1 = average_embeddings(e_prior, pinv_embedding(*plan.full_op, y, *plan.embedder), plan.lambda);
    }

    auto run = [&](const StageSpec& stage, std::uint64_t seed, const Measurement& meas, const ConditionVector* cond,
                   const Denoiser& d) {
        SamplerConfig cfg = stage.sampler;
        cfg.method = method;
        cfg.seed = seed;
        SamplingProblem p;
        p.denoiser = &d;
        p.schedule = &schedule;
        p.measurement = &meas;
        p.condition = cond;
        p.negative = stage.negative ? &*stage.negative : nullptr;
        return run_sampler(cfg, p, stage.shape);
    };

    CascadeResult out;
    const auto d1 = plan.stage1.builder ? plan.stage1.builder(ImageTensor(plan.stage1.shape)) : plan.stage1.denoiser;
    SampleResult s1 = run(plan.stage1, seeds[0], meas_lr, c1 ? &*c1 : nullptr, *d1);
    const auto d2 = plan.stage2.builder ? plan.stage2.builder(s1.x0) : plan.stage2.denoiser;
    const ConditionVector* c2 = plan.stage2.condition ? &*plan.stage2.condition : nullptr;
    SampleResult s2 = run(plan.stage2, seeds[1], meas_full, c2, *d2);
    out.x_lr = std::move(s1.x0);
    out.stage1 = std::move(s1.trace);
    out.x = std::move(s2.x0);
    out.stage2 = std::move(s2.trace);
    return out;
}

/// Null-space rectification in both stages.
inline CascadeResult t2i_ddnm(const CascadePlan& plan, const NoiseSchedule& schedule, const ImageTensor& y,
                              std::array<std::uint64_t, 2> seeds)
{
    return run_cascade(plan, schedule, y, 0.0, Method::ddnm, seeds);
}

/// Reconstruction guidance in both stages, A_LR in stage 1 and A in stage 2.
inline CascadeResult t2i_dps(const CascadePlan& plan, const NoiseSchedule& schedule, const ImageTensor& y,
                             std::array<std::uint64_t, 2> seeds)
{
    return run_cascade(plan, schedule, y, 0.0, Method::dps, seeds);
}

/// Pseudoinverse guidance in both stages.
inline CascadeResult t2i_pigdm(const CascadePlan& plan, const NoiseSchedule& schedule, const ImageTensor& y,
                               std::array<std::uint64_t, 2> seeds)
{
    return run_cascade(plan, schedule, y, 0.0, Method::pigdm, seeds);
}

} // namespace gdsr
