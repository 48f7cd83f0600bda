#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace gdsr;

TEST(Schedule, LinearEndpointsAndCumulativeProduct)
{
    const auto s = make_linear_schedule();
    EXPECT_EQ(s.steps(), 1000);
    EXPECT_DOUBLE_EQ(s.beta(1), 1e-4);
    EXPECT_NEAR(s.beta(1000), 0.02, 1e-17);
    EXPECT_DOUBLE_EQ(s.alpha_bar(0), 1.0);
    long double prod = 1.0L;
    for (int t = 1; t <= 1000; ++t) {
        prod *= 1.0L - (1e-4L + (0.02L - 1e-4L) * (t - 1) / 999.0L);
        EXPECT_NEAR(s.alpha_bar(t), static_cast<double>(prod), 1e-13 * static_cast<double>(prod) + 1e-300);
    }
    // Reference value of the standard linear schedule at T.
    EXPECT_NEAR(s.alpha_bar(1000), 4.035e-5, 1e-7);
}

TEST(Schedule, PosteriorVarianceMatchesClosedForm)
{
    const auto s = make_linear_schedule();
    for (int t : {2, 10, 500, 1000}) {
        const double expect = (1.0 - s.alpha_bar(t - 1)) / (1.0 - s.alpha_bar(t)) * s.beta(t);
        EXPECT_NEAR(s.posterior_variance(t), expect, 1e-16);
    }
    EXPECT_DOUBLE_EQ(s.posterior_variance(1), 0.0);
}

TEST(Schedule, RejectsOutOfRange)
{
    const auto s = make_linear_schedule(10);
    EXPECT_THROW((void)s.beta(0), std::out_of_range);
    EXPECT_THROW((void)s.alpha_bar(11), std::out_of_range);
    EXPECT_THROW((void)s.alpha_bar(-1), std::out_of_range);
    EXPECT_THROW(NoiseSchedule({0.5, 1.0}), std::invalid_argument);
    EXPECT_THROW(make_linear_schedule(0), std::invalid_argument);
    EXPECT_DOUBLE_EQ(make_linear_schedule(1).beta(1), 1e-4);
}

TEST(TimestepGrid, UniformSubsampleEndsAtZero)
{
    const auto g = timestep_grid(1000, 100);
    ASSERT_EQ(g.size(), 101U);
    EXPECT_EQ(g.front(), 1000);
    EXPECT_EQ(g[99], 10);
    EXPECT_EQ(g.back(), 0);
    for (std::size_t i = 1; i < g.size(); ++i) EXPECT_LT(g[i], g[i - 1]);
    const auto full = timestep_grid(50, 50);
    for (int i = 0; i < 50; ++i) EXPECT_EQ(full[static_cast<std::size_t>(i)], 50 - i);
    EXPECT_THROW(timestep_grid(10, 11), std::invalid_argument);
    EXPECT_THROW(timestep_grid(10, 0), std::invalid_argument);
}

TEST(AncestralStep, SingleStepMatchesDdpmPosteriorMean)
{
    const auto s = make_linear_schedule();
    const Shape sh{1, 1, 3};
    const ImageTensor x0(sh, Vector{{0.2, -0.4, 1.0}});
    const ImageTensor xt(sh, Vector{{1.5, 0.1, -0.3}});
    const ImageTensor zero(sh);
    for (int t : {2, 37, 999}) {
        const double ab = s.alpha_bar(t), abp = s.alpha_bar(t - 1), b = s.beta(t);
        const Vector mean = std::sqrt(abp) * b / (1 - ab) * x0.data() + std::sqrt(1 - b) * (1 - abp) / (1 - ab) * xt.data();
        EXPECT_LT((ancestral_step(xt, x0, t, zero, s).data() - mean).norm(), 1e-12);
    }
}

TEST(AncestralStep, CoarseJumpPreservesForwardMarginal)
{
    // If x_t ~ q(x_t | x0), the draw at t' must have mean sqrt(abar_t') x0 and variance 1 - abar_t'.
    const auto s = make_linear_schedule();
    const Shape sh{1, 1, 1};
    const ImageTensor zero(sh);
    for (auto [t, tp] : std::vector<std::pair<int, int>>{{1000, 990}, {1000, 1}, {500, 250}, {20, 19}, {7, 3}}) {
        const double ab = s.alpha_bar(t), abp = s.alpha_bar(tp);
        const double c_x0 = ancestral_step(zero, ImageTensor::constant(sh, 1.0), t, tp, zero, s).data()[0];
        const double c_xt = ancestral_step(ImageTensor::constant(sh, 1.0), zero, t, tp, zero, s).data()[0];
        const double var = s.posterior_variance(t, tp);
        EXPECT_NEAR(c_x0 + c_xt * std::sqrt(ab), std::sqrt(abp), 1e-13);
        EXPECT_NEAR(c_xt * c_xt * (1 - ab) + var, 1 - abp, 1e-13);
    }
}

TEST(AncestralStep, JumpToZeroReturnsTargetExactly)
{
    const auto s = make_linear_schedule();
    Rng rng(4);
    const Shape sh{1, 2, 2};
    const ImageTensor x0 = rng.normal_like(sh);
    const ImageTensor out = ancestral_step(rng.normal_like(sh), x0, 40, 0, rng.normal_like(sh), s);
    EXPECT_EQ(out.data(), x0.data());
    EXPECT_THROW((void)ancestral_step(x0, x0, 3, 3, x0, s), std::out_of_range);
}

TEST(ForwardSample, EstimateX0InvertsWithTrueNoise)
{
    const auto s = make_linear_schedule();
    Rng rng(8);
    const Shape sh{1, 4, 4};
    const ImageTensor x0 = rng.normal_like(sh);
    const ImageTensor eps = rng.normal_like(sh);
    for (int t : {1, 100, 1000}) {
        const ImageTensor xt = forward_sample(x0, t, eps, s);
        EXPECT_LT((estimate_x0(xt, eps, t, s) - x0).data().norm(), 1e-9);
    }
}

TEST(Rng, SameSeedSameStream)
{
    Rng a(123), b(123), c(124);
    const Vector va = a.normal_vector(16);
    EXPECT_EQ(va, b.normal_vector(16));
    EXPECT_NE(va, c.normal_vector(16));
}

TEST(Init, PinvInitHasNoisedPinvMean)
{
    const auto s = make_linear_schedule();
    const auto a = build_bicubic_downsampler(4, 4, 2);
    const auto f = factorize(a);
    const ImageTensor y(a.output_shape(), Vector{{0.1, 0.9, 0.4, 0.6}});
    const ImageTensor target = pinv_apply(f, y);
    const int t = 300;
    const int n = 4000;
    Vector mean = Vector::Zero(16);
    for (int i = 0; i < n; ++i) mean += init_from_pinv(f, y, t, s, Rng(static_cast<std::uint64_t>(i))).x.data();
    mean /= n;
    const double se = std::sqrt((1 - s.alpha_bar(t)) / n);
    EXPECT_LT(((mean - std::sqrt(s.alpha_bar(t)) * target.data()).cwiseAbs().array() / se).maxCoeff(), 4.5);
    EXPECT_THROW((void)init_from_pinv(f, y, 0, s, Rng(1)), std::out_of_range);
}
