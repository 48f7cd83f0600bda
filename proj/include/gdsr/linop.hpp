#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "gdsr/tensor.hpp"

namespace gdsr {

struct FactorizationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {

/// Keys cubic convolution kernel; a = -0.5 gives Catmull-Rom.
inline double cubic_kernel(double x, double a = -0.5)
{
    x = std::abs(x);
    if (x < 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    if (x < 2.0) return (((x - 5.0) * x + 8.0) * x - 4.0) * a;
    return 0.0;
}

/// Half-sample symmetric reflection into [0, n).
inline std::size_t reflect_index(long long i, std::size_t n)
{
    const auto period = static_cast<long long>(2 * n);
    long long m = i % period;
    if (m < 0) m += period;
    if (m >= static_cast<long long>(n)) m = period - 1 - m;
    return static_cast<std::size_t>(m);
}

inline auto row_major_view(const Vector& v, std::size_t offset, std::size_t rows, std::size_t cols)
{
    return Eigen::Map<const RowMajorMatrix>(v.data() + offset, static_cast<Eigen::Index>(rows),
                                            static_cast<Eigen::Index>(cols));
}

inline auto row_major_view(Vector& v, std::size_t offset, std::size_t rows, std::size_t cols)
{
    return Eigen::Map<RowMajorMatrix>(v.data() + offset, static_cast<Eigen::Index>(rows),
                                      static_cast<Eigen::Index>(cols));
}

} // namespace detail

/// One kernel tap: output sample i reads input sample (i * factor + offset).
struct Tap {
    long long offset = 0;
    double weight = 0.0;
};

/// Catmull-Rom taps for integer downsampling by `factor`, kernel support stretched by the factor
/// for anti-aliasing and renormalized to unit sum.
inline std::vector<Tap> bicubic_downsample_taps(std::size_t factor)
{
    if (factor == 0) throw DimensionError("downsampling factor must be >= 1");
    const double f = static_cast<double>(factor);
    const double centre = (f - 1.0) / 2.0;
    std::vector<Tap> taps;
    double total = 0.0;
    const auto reach = static_cast<long long>(2 * factor + 1);
    for (long long p = -reach; p <= reach + static_cast<long long>(factor); ++p) {
        const double w = detail::cubic_kernel((static_cast<double>(p) - centre) / f);
        if (w == 0.0) continue;
        taps.push_back({p, w});
        total += w;
    }
    for (auto& t : taps) t.weight /= total;
    return taps;
}

/// Dense (n / factor) x n matrix of a strided 1-D filter with reflect boundaries.
inline Matrix axis_operator(std::size_t n, std::size_t factor, const std::vector<Tap>& taps)
{
    if (factor == 0 || n % factor != 0)
        throw DimensionError("axis length " + std::to_string(n) + " is not divisible by factor " +
                             std::to_string(factor));
    const std::size_t m = n / factor;
    Matrix r = Matrix::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < m; ++i) {
        for (const auto& t : taps) {
            const long long j = static_cast<long long>(i * factor) + t.offset;
            r(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(detail::reflect_index(j, n))) += t.weight;
        }
    }
    return r;
}

/// Catmull-Rom interpolation matrix (n * factor) x n, pixel-centre aligned, reflect boundaries.
inline Matrix bicubic_upsample_axis(std::size_t n, std::size_t factor)
{
    if (factor == 0 || n == 0) throw DimensionError("upsampling needs positive length and factor");
    const std::size_t m = n * factor;
    Matrix r = Matrix::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < m; ++i) {
        const double c = (static_cast<double>(i) + 0.5) / static_cast<double>(factor) - 0.5;
        const auto base = static_cast<long long>(std::floor(c));
        double total = 0.0;
        for (long long j = base - 1; j <= base + 2; ++j) total += detail::cubic_kernel(static_cast<double>(j) - c);
        for (long long j = base - 1; j <= base + 2; ++j) {
            const double w = detail::cubic_kernel(static_cast<double>(j) - c) / total;
            r(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(detail::reflect_index(j, n))) += w;
        }
    }
    return r;
}

/// Linear measurement map y = A x.  Either an explicit matrix acting on the flattened tensor, or a
/// separable strided filter applied along both spatial axes of every channel independently.
class DegradationOperator {
public:
    enum class Kind { dense, separable };

    static DegradationOperator dense(Matrix matrix, Shape input, Shape output)
    {
        if (static_cast<std::size_t>(matrix.rows()) != output.size() ||
            static_cast<std::size_t>(matrix.cols()) != input.size())
            throw DimensionError("dense operator is " + std::to_string(matrix.rows()) + "x" +
                                 std::to_string(matrix.cols()) + " but shapes are " + to_string(output) + " <- " +
                                 to_string(input));
        DegradationOperator op;
        op.kind_ = Kind::dense;
        op.input_ = input;
        op.output_ = output;
        op.matrix_ = std::move(matrix);
        return op;
    }

    static DegradationOperator separable(std::vector<Tap> taps, std::size_t factor, Shape input)
    {
        if (factor == 0) throw DimensionError("factor must be >= 1");
        if (input.height % factor != 0 || input.width % factor != 0)
            throw DimensionError("input " + to_string(input) + " is not divisible by factor " +
                                 std::to_string(factor));
        const double total =
            std::accumulate(taps.begin(), taps.end(), 0.0, [](double acc, const Tap& t) { return acc + t.weight; });
        if (taps.empty() || std::abs(total - 1.0) > 1e-12)
            throw std::invalid_argument("separable kernel taps must sum to 1");
        DegradationOperator op;
        op.kind_ = Kind::separable;
        op.input_ = input;
        op.output_ = Shape{input.channels, input.height / factor, input.width / factor};
        op.factor_ = factor;
        op.rows_ = axis_operator(input.height, factor, taps);
        op.cols_ = axis_operator(input.width, factor, taps);
        op.taps_ = std::move(taps);
        return op;
    }

    [[nodiscard]] Kind kind() const { return kind_; }
    [[nodiscard]] const Shape& input_shape() const { return input_; }
    [[nodiscard]] const Shape& output_shape() const { return output_; }
    [[nodiscard]] std::size_t factor() const { return factor_; }
    [[nodiscard]] const std::vector<Tap>& taps() const { return taps_; }
    [[nodiscard]] const Matrix& matrix() const { return matrix_; }
    /// Per-axis operators of a separable operator (height axis, width axis).
    [[nodiscard]] const Matrix& row_operator() const { return rows_; }
    [[nodiscard]] const Matrix& column_operator() const { return cols_; }

    [[nodiscard]] ImageTensor apply(const ImageTensor& x) const
    {
        require_shape(x, input_, "apply");
        if (kind_ == Kind::dense) return {output_, matrix_ * x.data()};
        ImageTensor y(output_);
        for (std::size_t c = 0; c < input_.channels; ++c) {
            auto in = detail::row_major_view(x.data(), c * input_.height * input_.width, input_.height, input_.width);
            auto out = detail::row_major_view(y.data(), c * output_.height * output_.width, output_.height,
                                              output_.width);
            out.noalias() = rows_ * in * cols_.transpose();
        }
        return y;
    }

    [[nodiscard]] ImageTensor apply_transpose(const ImageTensor& y) const
    {
        require_shape(y, output_, "apply_transpose");
        if (kind_ == Kind::dense) return {input_, matrix_.transpose() * y.data()};
        ImageTensor x(input_);
        for (std::size_t c = 0; c < input_.channels; ++c) {
            auto in = detail::row_major_view(y.data(), c * output_.height * output_.width, output_.height,
                                             output_.width);
            auto out = detail::row_major_view(x.data(), c * input_.height * input_.width, input_.height, input_.width);
            out.noalias() = rows_.transpose() * in * cols_;
        }
        return x;
    }

    /// Explicit m x n matrix on flattened tensors; block diagonal over channels when separable.
    [[nodiscard]] Matrix to_dense() const
    {
        if (kind_ == Kind::dense) return matrix_;
        const Matrix block = kron(rows_, cols_);
        Matrix full = Matrix::Zero(static_cast<Eigen::Index>(output_.size()), static_cast<Eigen::Index>(input_.size()));
        for (std::size_t c = 0; c < input_.channels; ++c)
            full.block(static_cast<Eigen::Index>(c) * block.rows(), static_cast<Eigen::Index>(c) * block.cols(),
                       block.rows(), block.cols()) = block;
        return full;
    }

    static Matrix kron(const Matrix& a, const Matrix& b)
    {
        Matrix k(a.rows() * b.rows(), a.cols() * b.cols());
        for (Eigen::Index i = 0; i < a.rows(); ++i)
            for (Eigen::Index j = 0; j < a.cols(); ++j)
                k.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
        return k;
    }

private:
    DegradationOperator() = default;

    Kind kind_ = Kind::dense;
    Shape input_{};
    Shape output_{};
    Matrix matrix_{};
    std::size_t factor_ = 1;
    std::vector<Tap> taps_{};
    Matrix rows_{};
    Matrix cols_{};
};

inline DegradationOperator build_bicubic_downsampler(std::size_t height, std::size_t width, std::size_t factor,
                                                     std::size_t channels = 1)
{
    return DegradationOperator::separable(bicubic_downsample_taps(factor), factor, Shape{channels, height, width});
}

inline ImageTensor apply(const DegradationOperator& a, const ImageTensor& x) { return a.apply(x); }

/// Separable bicubic interpolation of every channel by an integer factor.
inline ImageTensor bicubic_upsample(const ImageTensor& x, std::size_t factor)
{
    const Shape out{x.channels(), x.height() * factor, x.width() * factor};
    const Matrix rows = bicubic_upsample_axis(x.height(), factor);
    const Matrix cols = bicubic_upsample_axis(x.width(), factor);
    ImageTensor y(out);
    for (std::size_t c = 0; c < out.channels; ++c) {
        auto in = detail::row_major_view(x.data(), c * x.height() * x.width(), x.height(), x.width());
        auto o = detail::row_major_view(y.data(), c * out.height * out.width, out.height, out.width);
        o.noalias() = rows * in * cols.transpose();
    }
    return y;
}

/// Truncated SVD of a degradation operator, A = U diag(s) V^T.
///
/// Dense operators are factorized directly.  Separable operators keep the two per-axis SVDs and
/// work in the Kronecker basis, so an H x W image never needs an (HW)^2 factorization; the
/// spectral coefficients of one channel form an r_h x r_w grid with singular value s_h[i] * s_w[j].
/// Coefficients whose singular value falls below tolerance * s_max are dropped (spectrum entry 0).
class SvdFactors {
public:
    [[nodiscard]] const DegradationOperator& op() const { return op_; }
    [[nodiscard]] double tolerance() const { return tolerance_; }
    [[nodiscard]] std::size_t rank() const { return rank_; }
    [[nodiscard]] std::size_t coefficient_count() const { return static_cast<std::size_t>(spectrum_.size()); }

    /// Singular value per spectral coefficient, 0 for dropped coefficients.
    [[nodiscard]] const Vector& spectrum() const { return spectrum_; }

    /// V^T x.
    [[nodiscard]] Vector coefficients_in(const ImageTensor& x) const
    {
        require_shape(x, op_.input_shape(), "spectral projection");
        if (op_.kind() == DegradationOperator::Kind::dense) return v_.transpose() * x.data();
        return kron_project(x.data(), vh_, vw_, op_.input_shape());
    }

    /// V c.
    [[nodiscard]] ImageTensor from_coefficients_in(const Vector& c) const
    {
        check_coefficients(c);
        if (op_.kind() == DegradationOperator::Kind::dense) return {op_.input_shape(), v_ * c};
        return {op_.input_shape(), kron_lift(c, vh_, vw_, op_.input_shape())};
    }

    /// U^T y.
    [[nodiscard]] Vector coefficients_out(const ImageTensor& y) const
    {
        require_shape(y, op_.output_shape(), "spectral projection");
        if (op_.kind() == DegradationOperator::Kind::dense) return u_.transpose() * y.data();
        return kron_project(y.data(), uh_, uw_, op_.output_shape());
    }

    /// U c.
    [[nodiscard]] ImageTensor from_coefficients_out(const Vector& c) const
    {
        check_coefficients(c);
        if (op_.kind() == DegradationOperator::Kind::dense) return {op_.output_shape(), u_ * c};
        return {op_.output_shape(), kron_lift(c, uh_, uw_, op_.output_shape())};
    }

    /// Kept singular values, descending.
    [[nodiscard]] Vector singular_values() const
    {
        std::vector<double> kept;
        for (Eigen::Index i = 0; i < spectrum_.size(); ++i)
            if (spectrum_[i] > 0.0) kept.push_back(spectrum_[i]);
        std::stable_sort(kept.begin(), kept.end(), std::greater<>());
        return Eigen::Map<Vector>(kept.data(), static_cast<Eigen::Index>(kept.size()));
    }

    /// Materialized U (m x r) and V (n x r), columns ordered to match singular_values().
    [[nodiscard]] Matrix left_vectors() const { return materialize(true); }
    [[nodiscard]] Matrix right_vectors() const { return materialize(false); }

private:
    friend SvdFactors factorize(const DegradationOperator& a, double tolerance);

    explicit SvdFactors(DegradationOperator op) : op_(std::move(op)) {}

    void check_coefficients(const Vector& c) const
    {
        if (c.size() != spectrum_.size())
            throw DimensionError("expected " + std::to_string(spectrum_.size()) + " spectral coefficients, got " +
                                 std::to_string(c.size()));
    }

    [[nodiscard]] Vector kron_project(const Vector& data, const Matrix& bh, const Matrix& bw, const Shape& s) const
    {
        const auto rh = static_cast<std::size_t>(bh.cols());
        const auto rw = static_cast<std::size_t>(bw.cols());
        Vector c(static_cast<Eigen::Index>(s.channels * rh * rw));
        for (std::size_t ch = 0; ch < s.channels; ++ch) {
            auto in = detail::row_major_view(data, ch * s.height * s.width, s.height, s.width);
            auto out = detail::row_major_view(c, ch * rh * rw, rh, rw);
            out.noalias() = bh.transpose() * in * bw;
        }
        return c.cwiseProduct(mask_);
    }

    [[nodiscard]] Vector kron_lift(const Vector& coeffs, const Matrix& bh, const Matrix& bw, const Shape& s) const
    {
        const auto rh = static_cast<std::size_t>(bh.cols());
        const auto rw = static_cast<std::size_t>(bw.cols());
        const Vector masked = coeffs.cwiseProduct(mask_);
        Vector data(static_cast<Eigen::Index>(s.size()));
        for (std::size_t ch = 0; ch < s.channels; ++ch) {
            auto in = detail::row_major_view(masked, ch * rh * rw, rh, rw);
            auto out = detail::row_major_view(data, ch * s.height * s.width, s.height, s.width);
            out.noalias() = bh * in * bw.transpose();
        }
        return data;
    }

    [[nodiscard]] Matrix materialize(bool left) const
    {
        const Shape& s = left ? op_.output_shape() : op_.input_shape();
        std::vector<Eigen::Index> order;
        for (Eigen::Index i = 0; i < spectrum_.size(); ++i)
            if (spectrum_[i] > 0.0) order.push_back(i);
        std::stable_sort(order.begin(), order.end(),
                         [&](Eigen::Index a, Eigen::Index b) { return spectrum_[a] > spectrum_[b]; });
        Matrix out(static_cast<Eigen::Index>(s.size()), static_cast<Eigen::Index>(order.size()));
        for (std::size_t k = 0; k < order.size(); ++k) {
            Vector e = Vector::Zero(spectrum_.size());
            e[order[k]] = 1.0;
            out.col(static_cast<Eigen::Index>(k)) = left ? from_coefficients_out(e).data() : from_coefficients_in(e).data();
        }
        return out;
    }

    DegradationOperator op_;
    double tolerance_ = 1e-10;
    std::size_t rank_ = 0;
    Vector spectrum_{};
    Vector mask_{};
    Matrix u_{}, v_{};
    Matrix uh_{}, vh_{}, uw_{}, vw_{};
};

namespace detail {

struct ThinSvd {
    Matrix u;
    Vector s;
    Matrix v;
};

inline ThinSvd thin_svd(const Matrix& a)
{
    if (!a.allFinite()) throw FactorizationError("operator contains non-finite entries");
    Eigen::JacobiSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (svd.info() != Eigen::Success) throw FactorizationError("SVD did not converge");
    return {svd.matrixU(), svd.singularValues(), svd.matrixV()};
}

} // namespace detail

/// Factorize A; singular values below tolerance * s_max are discarded.
inline SvdFactors factorize(const DegradationOperator& a, double tolerance = 1e-10)
{
    SvdFactors f(a);
    f.tolerance_ = tolerance;
    if (a.kind() == DegradationOperator::Kind::dense) {
        auto svd = detail::thin_svd(a.matrix());
        const double smax = svd.s.size() > 0 ? svd.s[0] : 0.0;
        Eigen::Index r = 0;
        while (r < svd.s.size() && svd.s[r] > tolerance * smax && svd.s[r] > 0.0) ++r;
        f.u_ = svd.u.leftCols(r);
        f.v_ = svd.v.leftCols(r);
        f.spectrum_ = svd.s.head(r);
        f.mask_ = Vector::Ones(r);
        f.rank_ = static_cast<std::size_t>(r);
        return f;
    }
    auto rows = detail::thin_svd(a.row_operator());
    auto cols = detail::thin_svd(a.column_operator());
    f.uh_ = rows.u;
    f.vh_ = rows.v;
    f.uw_ = cols.u;
    f.vw_ = cols.v;
    const Eigen::Index rh = rows.s.size();
    const Eigen::Index rw = cols.s.size();
    const auto channels = static_cast<Eigen::Index>(a.input_shape().channels);
    const double smax = (rh > 0 && rw > 0) ? rows.s.maxCoeff() * cols.s.maxCoeff() : 0.0;
    f.spectrum_ = Vector::Zero(channels * rh * rw);
    f.mask_ = Vector::Zero(channels * rh * rw);
    for (Eigen::Index c = 0; c < channels; ++c)
        for (Eigen::Index i = 0; i < rh; ++i)
            for (Eigen::Index j = 0; j < rw; ++j) {
                const double s = rows.s[i] * cols.s[j];
                if (s > tolerance * smax && s > 0.0) {
                    const Eigen::Index k = (c * rh + i) * rw + j;
                    f.spectrum_[k] = s;
                    f.mask_[k] = 1.0;
                    ++f.rank_;
                }
            }
    return f;
}

/// A^+ y = V diag(1/s) U^T y.
inline ImageTensor pinv_apply(const SvdFactors& f, const ImageTensor& y)
{
    Vector c = f.coefficients_out(y);
    const Vector& s = f.spectrum();
    for (Eigen::Index i = 0; i < c.size(); ++i) c[i] = s[i] > 0.0 ? c[i] / s[i] : 0.0;
    return f.from_coefficients_in(c);
}

/// Observation y = A x + n with the factorized operator and the noise level sigma_y.
struct Measurement {
    std::shared_ptr<const SvdFactors> factors;
    ImageTensor y;
    double sigma_y = 0.0;

    Measurement(std::shared_ptr<const SvdFactors> f, ImageTensor obs, double noise = 0.0)
        : factors(std::move(f)), y(std::move(obs)), sigma_y(noise)
    {
        if (!factors) throw std::invalid_argument("measurement needs a factorized operator");
        require_shape(y, factors->op().output_shape(), "measurement");
        if (!(sigma_y >= 0.0)) throw std::invalid_argument("sigma_y must be >= 0");
    }

    [[nodiscard]] const SvdFactors& f() const { return *factors; }
    [[nodiscard]] const DegradationOperator& op() const { return factors->op(); }
};

/// A^+ A x.
inline ImageTensor range_project(const SvdFactors& f, const ImageTensor& x)
{
    return f.from_coefficients_in(f.coefficients_in(x));
}

/// (I - A^+ A) x.
inline ImageTensor null_project(const SvdFactors& f, const ImageTensor& x) { return x - range_project(f, x); }

/// A^+ y + (I - A^+ A) x_bar: the range component of x_bar is replaced by the one implied by y.
/// Evaluated as x_bar + A^+ (y - A x_bar), which keeps the rounding error of A x_hat - y at the
/// level of the residual instead of the level of x_bar.
inline ImageTensor rectify(const SvdFactors& f, const ImageTensor& y, const ImageTensor& x_bar)
{
    return x_bar + pinv_apply(f, y - f.op().apply(x_bar));
}

} // namespace gdsr
