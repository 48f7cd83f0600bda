#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace gdsr;

TEST(StageOperator, FullResolutionStageIsTheFullOperator)
{
    const Shape full{1, 16, 16};
    const DegradationOperator a = build_bicubic_downsampler(16, 16, 4);
    const DegradationOperator s = build_stage_operator(4, full, full);
    EXPECT_EQ(a.to_dense(), s.to_dense());
}

TEST(StageOperator, ComposesWithDownsamplingToApproximatelyA)
{
    const Shape full{1, 16, 16};
    const Matrix a = build_bicubic_downsampler(16, 16, 4).to_dense();
    const Matrix a_lr = build_stage_operator(4, full, {1, 8, 8}).to_dense();
    const Matrix d = build_bicubic_downsampler(16, 16, 2).to_dense();
    EXPECT_EQ(a_lr.rows(), 16);
    EXPECT_EQ(a_lr.cols(), 64);
    EXPECT_LT((a - a_lr * d).norm() / a.norm(), 0.05);
}

TEST(StageOperator, RejectsIncompatibleShapes)
{
    EXPECT_THROW((void)build_stage_operator(4, {1, 16, 16}, {1, 2, 2}), DimensionError);
    EXPECT_THROW((void)build_stage_operator(4, {1, 16, 16}, {1, 6, 6}), DimensionError);
    EXPECT_THROW((void)build_stage_operator(3, {1, 16, 16}, {1, 8, 8}), DimensionError);
    EXPECT_THROW((void)build_stage_operator(4, {1, 16, 16}, {3, 8, 8}), DimensionError);
}

TEST(EmbeddingAveraging, EndpointsAndLinearity)
{
    const ConditionVector a{Vector{{1.0, 2.0, 3.0}}};
    const ConditionVector b{Vector{{-1.0, 0.0, 5.0}}};
    EXPECT_EQ(average_embeddings(a, b, 0.0).embedding, a.embedding);
    EXPECT_EQ(average_embeddings(a, b, 1.0).embedding, b.embedding);
    EXPECT_TRUE(average_embeddings(a, b, 0.25).embedding.isApprox(Vector{{0.5, 1.5, 3.5}}, 1e-15));
    EXPECT_THROW((void)average_embeddings(a, b, 1.5), std::invalid_argument);
    EXPECT_THROW((void)average_embeddings(a, {Vector::Zero(2)}, 0.5), DimensionError);
}

TEST(EmbeddingAveraging, PinvEmbeddingIsLinearInY)
{
    const auto f = factorize(build_bicubic_downsampler(8, 8, 2));
    const LinearEmbedder emb(5, {1, 8, 8}, 3);
    Rng rng(1);
    const ImageTensor y1 = rng.normal_like({1, 4, 4});
    const ImageTensor y2 = rng.normal_like({1, 4, 4});
    const Vector lhs = pinv_embedding(f, 2.0 * y1 + y2, emb).embedding;
    const Vector rhs = 2.0 * pinv_embedding(f, y1, emb).embedding + pinv_embedding(f, y2, emb).embedding;
    EXPECT_LT((lhs - rhs).norm(), 1e-12);
    const Vector direct = emb.weights() * oracle::pinv_matrix(f) * y1.data();
    EXPECT_LT((pinv_embedding(f, y1, emb).embedding - direct).norm(), 1e-12);
}

TEST(PriorEmbedding, PicksTheComponentTheConditionSelects)
{
    const ToyProblem p = two_mode_toy();
    const auto sched = make_linear_schedule();
    const GmmDenoiser d(p.prior, sched, p.temperature);
    EXPECT_EQ(prior_embedding(d, {p.prior.embeddings.col(0)}).embedding, p.prior.embeddings.col(0));
    EXPECT_EQ(prior_embedding(d, {p.prior.embeddings.col(1)}).embedding, p.prior.embeddings.col(1));
}

namespace {

struct CascadeFixture {
    NoiseSchedule sched = make_linear_schedule();
    ToyProblem toy = two_mode_toy();
    CascadePlan plan;

    explicit CascadeFixture(int steps = 20)
    {
        CascadeOptions o;
        o.stage1_steps = steps;
        o.stage2_steps = steps;
        plan = make_cascade_plan(toy, sched, o, SamplerConfig{});
    }
};

} // namespace

TEST(Cascade, PlanShapesAndValidation)
{
    CascadeFixture fx;
    EXPECT_NO_THROW(fx.plan.validate());
    EXPECT_EQ(fx.plan.stage1.shape, (Shape{1, 4, 4}));
    EXPECT_EQ(fx.plan.stage2.shape, (Shape{1, 8, 8}));
    CascadePlan bad = fx.plan;
    bad.stage1.shape = {1, 8, 8};
    EXPECT_THROW(bad.validate(), DimensionError);
    bad = fx.plan;
    bad.lambda = 0.5;
    bad.embedder.reset();
    EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Cascade, DdnmIsConsistentInBothStages)
{
    CascadeFixture fx;
    for (std::uint64_t s = 0; s < 4; ++s) {
        const auto r = t2i_ddnm(fx.plan, fx.sched, fx.toy.y, {s, s + 100});
        EXPECT_LT(r.stage1.final_residual, 1e-9);
        EXPECT_LT(r.stage2.final_residual, 1e-9);
        EXPECT_EQ(r.x_lr.shape(), fx.plan.stage1.shape);
        EXPECT_EQ(r.x.shape(), fx.plan.stage2.shape);
        EXPECT_EQ(r.stage1.steps.size(), 20U);
    }
}

TEST(Cascade, DeterministicPerSeedPair)
{
    CascadeFixture fx;
    const auto a = t2i_pigdm(fx.plan, fx.sched, fx.toy.y, {3, 4});
    const auto b = t2i_pigdm(fx.plan, fx.sched, fx.toy.y, {3, 4});
    const auto c = t2i_pigdm(fx.plan, fx.sched, fx.toy.y, {3, 5});
    EXPECT_EQ(a.x.data(), b.x.data());
    EXPECT_EQ(a.x_lr.data(), c.x_lr.data());
    EXPECT_NE(a.x.data(), c.x.data());
}

TEST(Cascade, StageTwoStaysNearUpsampledStageOne)
{
    CascadeFixture fx(50);
    const auto r = t2i_ddnm(fx.plan, fx.sched, fx.toy.y, {1, 2});
    const ImageTensor up = bicubic_upsample(r.x_lr, 2);
    const double rms = (r.x - up).data().norm() / std::sqrt(static_cast<double>(r.x.size()));
    EXPECT_LT(rms, 0.2);
}

TEST(Cascade, AveragingWeightZeroIgnoresTheEmbedder)
{
    CascadeFixture fx;
    CascadePlan no_embedder = fx.plan;
    no_embedder.embedder.reset();
    const auto a = t2i_ddnm(fx.plan, fx.sched, fx.toy.y, {7, 8});
    const auto b = t2i_ddnm(no_embedder, fx.sched, fx.toy.y, {7, 8});
    EXPECT_EQ(a.x.data(), b.x.data());
    CascadePlan averaged = fx.plan;
    averaged.lambda = 1.0;
    const auto c = t2i_ddnm(averaged, fx.sched, fx.toy.y, {7, 8});
    EXPECT_NE(a.x_lr.data(), c.x_lr.data());
}
