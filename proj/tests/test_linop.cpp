#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace gdsr;

TEST(BicubicTaps, FactorTwoMatchesHandComputedCatmullRomWeights)
{
    // Keys a = -0.5 at x = 0.25, 0.75, 1.25, 1.75 is 0.8671875, 0.2265625, -0.0703125, -0.0234375;
    // the two-sided sum is 2, hence the halving.
    const auto taps = bicubic_downsample_taps(2);
    const std::vector<double> expect{-0.01171875, -0.03515625, 0.11328125, 0.43359375,
                                     0.43359375,  0.11328125,  -0.03515625, -0.01171875};
    ASSERT_EQ(taps.size(), expect.size());
    for (std::size_t i = 0; i < taps.size(); ++i) {
        EXPECT_EQ(taps[i].offset, static_cast<long long>(i) - 3);
        EXPECT_NEAR(taps[i].weight, expect[i], 1e-15);
    }
}

TEST(BicubicTaps, SumToOneAndSymmetricForAllFactors)
{
    for (std::size_t f : {1, 2, 3, 4, 8}) {
        const auto taps = bicubic_downsample_taps(f);
        double sum = 0.0;
        for (const auto& t : taps) sum += t.weight;
        EXPECT_NEAR(sum, 1.0, 1e-14);
        for (std::size_t i = 0; i < taps.size(); ++i)
            EXPECT_NEAR(taps[i].weight, taps[taps.size() - 1 - i].weight, 1e-15);
    }
    const auto one = bicubic_downsample_taps(1);
    ASSERT_EQ(one.size(), 1U);
    EXPECT_EQ(one[0].offset, 0);
}

TEST(DegradationOperator, SeparableApplyMatchesTapByTapLoop)
{
    const std::size_t h = 8, w = 12, f = 4;
    const auto a = build_bicubic_downsampler(h, w, f, 2);
    Rng rng(3);
    const ImageTensor x = rng.normal_like(a.input_shape());
    const auto taps = bicubic_downsample_taps(f);
    auto refl = [](long long i, long long n) {
        while (i < 0 || i >= n) i = i < 0 ? -1 - i : 2 * n - 1 - i;
        return i;
    };
    const ImageTensor y = a.apply(x);
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t i = 0; i < h / f; ++i)
            for (std::size_t j = 0; j < w / f; ++j) {
                double acc = 0.0;
                for (const auto& ti : taps)
                    for (const auto& tj : taps)
                        acc += ti.weight * tj.weight *
                               x(c, static_cast<std::size_t>(refl(static_cast<long long>(i * f) + ti.offset, h)),
                                 static_cast<std::size_t>(refl(static_cast<long long>(j * f) + tj.offset, w)));
                EXPECT_NEAR(y(c, i, j), acc, 1e-13);
            }
}

TEST(DegradationOperator, ConstantImageIsPreserved)
{
    const auto a = build_bicubic_downsampler(16, 16, 8);
    const ImageTensor y = a.apply(ImageTensor::constant(a.input_shape(), 0.37));
    for (Eigen::Index i = 0; i < y.data().size(); ++i) EXPECT_NEAR(y.data()[i], 0.37, 1e-14);
}

TEST(DegradationOperator, TransposeIsAdjoint)
{
    const auto a = build_bicubic_downsampler(8, 16, 2, 3);
    Rng rng(11);
    const ImageTensor x = rng.normal_like(a.input_shape());
    const ImageTensor y = rng.normal_like(a.output_shape());
    EXPECT_NEAR(a.apply(x).data().dot(y.data()), x.data().dot(a.apply_transpose(y).data()), 1e-12);
    const Matrix d = a.to_dense();
    EXPECT_LT((d * x.data() - a.apply(x).data()).norm(), 1e-12);
}

TEST(DegradationOperator, RejectsBadShapes)
{
    EXPECT_THROW(build_bicubic_downsampler(10, 8, 4), DimensionError);
    EXPECT_THROW(build_bicubic_downsampler(8, 8, 0), DimensionError);
    EXPECT_THROW(DegradationOperator::dense(Matrix::Zero(3, 5), {1, 2, 2}, {1, 1, 3}), DimensionError);
    EXPECT_THROW(DegradationOperator::separable({{0, 0.5}}, 2, {1, 4, 4}), std::invalid_argument);
    const auto a = build_bicubic_downsampler(8, 8, 2);
    EXPECT_THROW((void)a.apply(ImageTensor(Shape{1, 4, 4})), DimensionError);
}

TEST(Factorize, DensePinvMatchesNormalEquations)
{
    Rng rng(5);
    const Matrix m = oracle::random_matrix(6, 20, rng);
    const auto f = factorize(DegradationOperator::dense(m, {1, 4, 5}, {1, 2, 3}));
    EXPECT_EQ(f.rank(), 6U);
    EXPECT_LT(oracle::rel_error(oracle::pinv_matrix(f), oracle::normal_equations_pinv(m)), 1e-12);
}

TEST(Factorize, SeparableSpectrumMatchesDenseSvd)
{
    const auto a = build_bicubic_downsampler(16, 8, 4, 2);
    const auto f = factorize(a);
    Eigen::JacobiSVD<Matrix> svd(a.to_dense());
    const Vector dense_s = svd.singularValues();
    const Vector s = f.singular_values();
    ASSERT_EQ(s.size(), 2 * 4 * 2);
    EXPECT_LT((s - dense_s.head(s.size())).norm(), 1e-12);
    const Matrix u = f.left_vectors();
    const Matrix v = f.right_vectors();
    EXPECT_LT((u.transpose() * u - Matrix::Identity(u.cols(), u.cols())).norm(), 1e-12);
    EXPECT_LT((v.transpose() * v - Matrix::Identity(v.cols(), v.cols())).norm(), 1e-12);
    EXPECT_LT(oracle::rel_error(Matrix(u * s.asDiagonal() * v.transpose()), a.to_dense()), 1e-12);
}

TEST(Factorize, SeparablePinvMatchesNormalEquations)
{
    const auto a = build_bicubic_downsampler(8, 8, 2);
    const auto f = factorize(a);
    EXPECT_LT(oracle::rel_error(oracle::pinv_matrix(f), oracle::normal_equations_pinv(a.to_dense())), 1e-10);
}

TEST(Factorize, TruncatesRankDeficientOperator)
{
    Rng rng(9);
    const Matrix b = oracle::random_matrix(5, 2, rng);
    const Matrix c = oracle::random_matrix(2, 10, rng);
    const auto f = factorize(DegradationOperator::dense(b * c, {1, 2, 5}, {1, 1, 5}));
    EXPECT_EQ(f.rank(), 2U);
    const Matrix a = b * c;
    const Matrix p = oracle::pinv_matrix(f);
    EXPECT_LT(oracle::rel_error(Matrix(a * p * a), a), 1e-10);
    EXPECT_LT(oracle::rel_error(Matrix(p * a * p), p), 1e-10);
}

TEST(Factorize, NonFiniteOperatorFails)
{
    Matrix m = Matrix::Ones(2, 4);
    m(1, 2) = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW((void)factorize(DegradationOperator::dense(m, {1, 2, 2}, {1, 1, 2})), FactorizationError);
}

TEST(Projections, RangePlusNullIsIdentityAndNullIsInvisible)
{
    const auto a = build_bicubic_downsampler(8, 8, 4, 3);
    const auto f = factorize(a);
    Rng rng(1);
    for (int k = 0; k < 10; ++k) {
        const ImageTensor x = rng.normal_like(a.input_shape());
        const ImageTensor r = range_project(f, x);
        const ImageTensor n = null_project(f, x);
        EXPECT_LT((r + n - x).data().cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_LT(a.apply(n).data().cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_LT((range_project(f, r) - r).data().norm(), 1e-12);
    }
}

TEST(Projections, RectifyIsConsistentAndFixesConsistentInputs)
{
    const auto a = build_bicubic_downsampler(16, 16, 8);
    const auto f = factorize(a);
    Rng rng(2);
    const ImageTensor truth = rng.normal_like(a.input_shape());
    const ImageTensor y = a.apply(truth);
    const ImageTensor guess = rng.normal_like(a.input_shape());
    const ImageTensor fixed = rectify(f, y, guess);
    EXPECT_LT((a.apply(fixed) - y).data().cwiseAbs().maxCoeff(), 1e-13);
    EXPECT_LT((null_project(f, fixed) - null_project(f, guess)).data().norm(), 1e-12);
    EXPECT_LT((rectify(f, y, truth) - truth).data().norm(), 1e-12);
}

TEST(Upsample, ReproducesConstantsAndHasRightShape)
{
    const ImageTensor x = ImageTensor::constant({2, 3, 4}, 0.25);
    const ImageTensor up = bicubic_upsample(x, 4);
    EXPECT_EQ(up.shape(), (Shape{2, 12, 16}));
    EXPECT_LT((up.data().array() - 0.25).abs().maxCoeff(), 1e-14);
}
