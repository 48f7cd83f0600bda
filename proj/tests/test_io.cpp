#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <sstream>

#include "oracles.hpp"

using namespace gdsr;

namespace {

std::filesystem::path scratch(const std::string& name)
{
    const auto dir = std::filesystem::temp_directory_path() / "gdsr_test_io";
    std::filesystem::create_directories(dir);
    return dir / name;
}

} // namespace

TEST(TensorFile, ByteLayoutOfASmallRecord)
{
    std::ostringstream out;
    const std::vector<std::uint64_t> dims{2};
    const std::vector<double> data{1.0, -2.5};
    write_tensor(out, dims, data);
    const std::string b = out.str();
    ASSERT_EQ(b.size(), 4U + 4 + 4 + 8 + 16);
    EXPECT_EQ(b.substr(0, 4), "ZTSR");
    EXPECT_EQ(b[4], 1);
    EXPECT_EQ(b[8], 1);
    EXPECT_EQ(b[12], 2);
    double v = 0;
    std::memcpy(&v, b.data() + 28, 8);
    EXPECT_EQ(v, -2.5);
}

TEST(TensorFile, RoundTripIsBitExact)
{
    Rng rng(4);
    const ImageTensor x = rng.normal_like({3, 5, 7});
    const auto path = scratch("x.ztsr");
    write_tensor(path, x);
    const ImageTensor back = read_image_tensor(path);
    EXPECT_EQ(back.shape(), x.shape());
    EXPECT_EQ(back.data(), x.data());
}

TEST(TensorFile, RejectsBadMagicTruncationAndVersion)
{
    std::ostringstream out;
    const std::vector<std::uint64_t> dims{3};
    const std::vector<double> data{1, 2, 3};
    write_tensor(out, dims, data);
    const std::string good = out.str();

    std::string bad = good;
    bad[0] = 'X';
    std::istringstream a(bad);
    EXPECT_THROW((void)read_tensor(a), FormatError);

    std::istringstream b(good.substr(0, good.size() - 3));
    EXPECT_THROW((void)read_tensor(b), FormatError);

    bad = good;
    bad[4] = 9;
    std::istringstream c(bad);
    EXPECT_THROW((void)read_tensor(c), FormatError);
}

TEST(OperatorFile, RoundTripPreservesMatrixAndShapes)
{
    const DegradationOperator a = build_bicubic_downsampler(8, 12, 4, 3);
    const auto path = scratch("a.ztsr");
    write_operator(path, a);
    const DegradationOperator b = read_operator(path);
    EXPECT_EQ(b.input_shape(), a.input_shape());
    EXPECT_EQ(b.output_shape(), a.output_shape());
    EXPECT_EQ(b.to_dense(), a.to_dense());
}

TEST(PriorFile, RoundTrip)
{
    GaussianMixturePrior p;
    p.shape = {1, 2, 3};
    p.weights = Vector{{0.25, 0.75}};
    Rng rng(2);
    p.means = oracle::random_matrix(6, 2, rng);
    p.variances = Matrix::Constant(6, 2, 0.1);
    p.embeddings = Matrix::Zero(0, 2);
    const auto path = scratch("p.ztsr");
    write_prior(path, p);
    const GaussianMixturePrior q = read_prior(path);
    EXPECT_EQ(q.shape, p.shape);
    EXPECT_EQ(q.weights, p.weights);
    EXPECT_EQ(q.means, p.means);
    EXPECT_EQ(q.variances, p.variances);
}

TEST(Netpbm, QuantizationRoundsHalfUpAndClamps)
{
    EXPECT_EQ(quantize_byte(0.5), 128);
    EXPECT_EQ(quantize_byte(0.0), 0);
    EXPECT_EQ(quantize_byte(1.0), 255);
    EXPECT_EQ(quantize_byte(-3.0), 0);
    EXPECT_EQ(quantize_byte(7.0), 255);
    EXPECT_EQ(quantize_byte(std::nan("")), 0);
    EXPECT_EQ(quantize_byte(1.0 / 255.0), 1);
}

TEST(Netpbm, ColorImageIsInterleavedRowMajor)
{
    ImageTensor x({3, 2, 2});
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t h = 0; h < 2; ++h)
            for (std::size_t w = 0; w < 2; ++w) x(c, h, w) = static_cast<double>(c * 4 + h * 2 + w) / 255.0;
    std::ostringstream out;
    write_netpbm(out, x);
    const std::string b = out.str();
    const std::string header = "P6\n2 2\n255\n";
    ASSERT_EQ(b.substr(0, header.size()), header);
    const std::string px = b.substr(header.size());
    const std::string expected{0, 4, 8, 1, 5, 9, 2, 6, 10, 3, 7, 11};
    EXPECT_EQ(px, expected);
    std::istringstream in(b);
    const ImageTensor back = read_netpbm(in);
    EXPECT_LT((back - x).data().cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Netpbm, RejectsUnsupportedInput)
{
    std::ostringstream out;
    EXPECT_THROW(write_netpbm(out, ImageTensor({2, 2, 2})), DimensionError);
    std::istringstream bad("P3\n1 1\n255\n0 0 0\n");
    EXPECT_THROW((void)read_netpbm(bad), FormatError);
    std::istringstream short_payload("P5\n4 4\n255\nab");
    EXPECT_THROW((void)read_netpbm(short_payload), FormatError);
}

TEST(FormatDouble, ShortestRoundTrip)
{
    EXPECT_EQ(format_double(0.1), "0.1");
    EXPECT_EQ(format_double(300.0), "300");
    EXPECT_EQ(format_double(std::nan("")), "nan");
    EXPECT_EQ(format_double(-std::numeric_limits<double>::infinity()), "-inf");
    const double v = 1.0 / 3.0;
    EXPECT_EQ(std::strtod(format_double(v).c_str(), nullptr), v);
}

TEST(Csv, ScheduleAndTraceHeaders)
{
    std::ostringstream s;
    write_schedule_csv(s, make_linear_schedule(3, 0.1, 0.3));
    EXPECT_EQ(s.str().substr(0, s.str().find('\n')), "t,beta,alpha,alpha_bar,sigma");
    EXPECT_NE(s.str().find("\n2,0.2"), std::string::npos);
    const std::string text = s.str();
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 4);
    SampleTrace trace;
    trace.steps.push_back({10, 0.5, std::nan(""), 2.0});
    std::ostringstream t;
    write_trace_csv(t, trace);
    EXPECT_EQ(t.str(), "step,t,residual,energy,rho\n0,10,0.5,nan,2\n");
}
