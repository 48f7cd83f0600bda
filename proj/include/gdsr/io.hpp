#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gdsr/denoiser.hpp"
#include "gdsr/guidance.hpp"
#include "gdsr/linop.hpp"
#include "gdsr/schedule.hpp"
#include "gdsr/tensor.hpp"

namespace gdsr {

struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr std::array<char, 4> kTensorMagic{'Z', 'T', 'S', 'R'};
inline constexpr std::uint32_t kTensorVersion = 1;

/// Decoded TensorFile record: dims plus row-major f64 payload.
struct TensorRecord {
    std::vector<std::uint64_t> dims;
    std::vector<double> data;

    [[nodiscard]] std::uint64_t count() const
    {
        std::uint64_t n = 1;
        for (auto d : dims) n *= d;
        return n;
    }
};

namespace detail {

template <class T>
void put_le(std::ostream& out, T v)
{
    static_assert(std::is_unsigned_v<T>);
    std::array<char, sizeof(T)> b{};
    for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFFU);
    out.write(b.data(), b.size());
}

template <class T>
T get_le(std::istream& in, const char* what)
{
    std::array<unsigned char, sizeof(T)> b{};
    if (!in.read(reinterpret_cast<char*>(b.data()), b.size()))
        throw FormatError(std::string("truncated tensor file while reading ") + what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(b[i]) << (8 * i);
    return v;
}

inline std::ofstream open_out(const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    return out;
}

inline std::ifstream open_in(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return in;
}

} // namespace detail

inline void write_tensor(std::ostream& out, std::span<const std::uint64_t> dims, std::span<const double> data)
{
    std::uint64_t n = 1;
    for (auto d : dims) n *= d;
    if (n != data.size()) throw DimensionError("tensor payload does not match its dims");
    out.write(kTensorMagic.data(), kTensorMagic.size());
    detail::put_le<std::uint32_t>(out, kTensorVersion);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(dims.size()));
    for (auto d : dims) detail::put_le<std::uint64_t>(out, d);
    for (double v : data) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    if (!out) throw std::runtime_error("tensor write failed");
}

inline TensorRecord read_tensor(std::istream& in)
{
    std::array<char, 4> magic{};
    if (!in.read(magic.data(), magic.size())) throw FormatError("truncated tensor file (no magic)");
    if (magic != kTensorMagic) throw FormatError("bad tensor magic");
    const auto version = detail::get_le<std::uint32_t>(in, "version");
    if (version != kTensorVersion) throw FormatError("unsupported tensor version " + std::to_string(version));
    const auto ndim = detail::get_le<std::uint32_t>(in, "ndim");
    if (ndim > 16) throw FormatError("implausible tensor rank " + std::to_string(ndim));
    TensorRecord r;
    r.dims.resize(ndim);
    for (auto& d : r.dims) d = detail::get_le<std::uint64_t>(in, "dims");
    const std::uint64_t n = r.count();
    if (n > (std::uint64_t{1} << 32)) throw FormatError("implausible tensor size");
    r.data.resize(n);
    for (auto& v : r.data) v = std::bit_cast<double>(detail::get_le<std::uint64_t>(in, "payload"));
    return r;
}

inline void write_tensor(const std::filesystem::path& path, const ImageTensor& x)
{
    auto out = detail::open_out(path);
    const std::array<std::uint64_t, 3> dims{x.channels(), x.height(), x.width()};
    write_tensor(out, dims, std::span<const double>(x.data().data(), x.size()));
}

inline ImageTensor to_image(const TensorRecord& r)
{
    Shape s{};
    if (r.dims.size() == 3)
        s = {r.dims[0], r.dims[1], r.dims[2]};
    else if (r.dims.size() == 2)
        s = {1, r.dims[0], r.dims[1]};
    else
        throw FormatError("image tensor needs 2 or 3 dims, got " + std::to_string(r.dims.size()));
    return {s, Eigen::Map<const Vector>(r.data.data(), static_cast<Eigen::Index>(r.data.size()))};
}

inline ImageTensor read_image_tensor(const std::filesystem::path& path)
{
    auto in = detail::open_in(path);
    return to_image(read_tensor(in));
}

/// Operator file: a 6-value shape record (input C,H,W then output C,H,W) followed by the dense
/// m x n matrix record.
inline void write_operator(const std::filesystem::path& path, const DegradationOperator& a)
{
    auto out = detail::open_out(path);
    const Shape& i = a.input_shape();
    const Shape& o = a.output_shape();
    const std::array<double, 6> header{double(i.channels), double(i.height), double(i.width),
                                       double(o.channels), double(o.height), double(o.width)};
    const std::array<std::uint64_t, 1> hdims{6};
    write_tensor(out, hdims, header);
    const RowMajorMatrix m = a.to_dense();
    const std::array<std::uint64_t, 2> mdims{static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
    write_tensor(out, mdims, std::span<const double>(m.data(), static_cast<std::size_t>(m.size())));
}

inline DegradationOperator read_operator(const std::filesystem::path& path)
{
    auto in = detail::open_in(path);
    const TensorRecord h = read_tensor(in);
    if (h.dims.size() != 1 || h.dims[0] != 6) throw FormatError("operator file needs a 6-value shape header");
    for (double v : h.data)
        if (!(v >= 1.0 && v == std::floor(v))) throw FormatError("operator shape header must hold positive integers");
    auto dim = [&](std::size_t k) { return static_cast<std::size_t>(h.data[k]); };
    const Shape in_shape{dim(0), dim(1), dim(2)};
    const Shape out_shape{dim(3), dim(4), dim(5)};
    const TensorRecord m = read_tensor(in);
    if (m.dims.size() != 2 || m.dims[0] != out_shape.size() || m.dims[1] != in_shape.size())
        throw FormatError("operator matrix does not match its shape header");
    Matrix a = Eigen::Map<const RowMajorMatrix>(m.data.data(), static_cast<Eigen::Index>(m.dims[0]),
                                                static_cast<Eigen::Index>(m.dims[1]));
    return DegradationOperator::dense(std::move(a), in_shape, out_shape);
}

/// Mixture file: shape record (C,H,W), weights (K), means (K x d), variances (K x d).
inline void write_prior(const std::filesystem::path& path, const GaussianMixturePrior& prior)
{
    prior.validate();
    auto out = detail::open_out(path);
    const Shape& s = prior.shape;
    const std::array<double, 3> shape{double(s.channels), double(s.height), double(s.width)};
    const std::array<std::uint64_t, 1> sdims{3};
    write_tensor(out, sdims, shape);
    const std::array<std::uint64_t, 1> wdims{prior.components()};
    write_tensor(out, wdims, std::span<const double>(prior.weights.data(), prior.components()));
    const std::array<std::uint64_t, 2> mdims{prior.components(), prior.dim()};
    const Matrix mt = prior.means.transpose();
    const Matrix vt = prior.variances.transpose();
    const RowMajorMatrix m = mt;
    const RowMajorMatrix v = vt;
    write_tensor(out, mdims, std::span<const double>(m.data(), static_cast<std::size_t>(m.size())));
    write_tensor(out, mdims, std::span<const double>(v.data(), static_cast<std::size_t>(v.size())));
}

/// Reads a mixture file; embeddings are left empty for the caller to fill.
inline GaussianMixturePrior read_prior(const std::filesystem::path& path)
{
    auto in = detail::open_in(path);
    const TensorRecord s = read_tensor(in);
    if (s.dims.size() != 1 || s.dims[0] != 3) throw FormatError("prior file needs a 3-value shape record");
    for (double v : s.data)
        if (!(v >= 1.0 && v == std::floor(v))) throw FormatError("prior shape must hold positive integers");
    GaussianMixturePrior p;
    p.shape = {static_cast<std::size_t>(s.data[0]), static_cast<std::size_t>(s.data[1]),
               static_cast<std::size_t>(s.data[2])};
    const TensorRecord w = read_tensor(in);
    const TensorRecord m = read_tensor(in);
    const TensorRecord v = read_tensor(in);
    if (w.dims.size() != 1) throw FormatError("prior weights must be a vector");
    const auto k = static_cast<Eigen::Index>(w.dims[0]);
    const auto d = static_cast<Eigen::Index>(p.shape.size());
    for (const auto* r : {&m, &v})
        if (r->dims.size() != 2 || static_cast<Eigen::Index>(r->dims[0]) != k ||
            static_cast<Eigen::Index>(r->dims[1]) != d)
            throw FormatError("prior means/variances must be K x (C*H*W)");
    p.weights = Eigen::Map<const Vector>(w.data.data(), k);
    p.means = Eigen::Map<const RowMajorMatrix>(m.data.data(), k, d).transpose();
    p.variances = Eigen::Map<const RowMajorMatrix>(v.data.data(), k, d).transpose();
    p.embeddings = Matrix::Zero(0, k);
    p.validate();
    return p;
}

/// 8-bit quantization used by image export: clamp to [0, 1], scale by 255, round half up.
inline std::uint8_t quantize_byte(double v)
{
    const double c = std::isnan(v) ? 0.0 : std::clamp(v, 0.0, 1.0);
    return static_cast<std::uint8_t>(std::floor(c * 255.0 + 0.5));
}

/// Binary PGM (one channel) or PPM (three channels, interleaved RGB).
inline void write_netpbm(std::ostream& out, const ImageTensor& x)
{
    if (x.channels() != 1 && x.channels() != 3)
        throw DimensionError("netpbm export needs 1 or 3 channels, got " + std::to_string(x.channels()));
    out << (x.channels() == 1 ? "P5" : "P6") << '\n' << x.width() << ' ' << x.height() << "\n255\n";
    std::vector<char> bytes;
    bytes.reserve(x.size());
    for (std::size_t h = 0; h < x.height(); ++h)
        for (std::size_t w = 0; w < x.width(); ++w)
            for (std::size_t c = 0; c < x.channels(); ++c) bytes.push_back(static_cast<char>(quantize_byte(x(c, h, w))));
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("image write failed");
}

inline void write_netpbm(const std::filesystem::path& path, const ImageTensor& x)
{
    auto out = detail::open_out(path);
    write_netpbm(out, x);
}

inline ImageTensor read_netpbm(std::istream& in)
{
    auto token = [&in]() {
        std::string t;
        char c = 0;
        while (in.get(c)) {
            if (c == '#') {
                std::string skip;
                std::getline(in, skip);
                continue;
            }
            if (std::isspace(static_cast<unsigned char>(c)) != 0) {
                if (!t.empty()) break;
                continue;
            }
            t.push_back(c);
        }
        if (t.empty()) throw FormatError("truncated netpbm header");
        return t;
    };
    const std::string magic = token();
    std::size_t channels = 0;
    if (magic == "P5")
        channels = 1;
    else if (magic == "P6")
        channels = 3;
    else
        throw FormatError("unsupported netpbm magic '" + magic + "'");
    const auto width = static_cast<std::size_t>(std::stoul(token()));
    const auto height = static_cast<std::size_t>(std::stoul(token()));
    if (std::stoul(token()) != 255) throw FormatError("only maxval 255 is supported");
    ImageTensor x(Shape{channels, height, width});
    std::vector<unsigned char> bytes(x.size());
    if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size())))
        throw FormatError("truncated netpbm payload");
    std::size_t k = 0;
    for (std::size_t h = 0; h < height; ++h)
        for (std::size_t w = 0; w < width; ++w)
            for (std::size_t c = 0; c < channels; ++c) x(c, h, w) = static_cast<double>(bytes[k++]) / 255.0;
    return x;
}

inline ImageTensor read_netpbm(const std::filesystem::path& path)
{
    auto in = detail::open_in(path);
    return read_netpbm(in);
}

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v)
{
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    for (int prec = 15; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

inline void write_schedule_csv(std::ostream& out, const NoiseSchedule& s)
{
    out << "t,beta,alpha,alpha_bar,sigma\n";
    for (int t = 1; t <= s.steps(); ++t)
        out << t << ',' << format_double(s.beta(t)) << ',' << format_double(s.alpha(t)) << ','
            << format_double(s.alpha_bar(t)) << ',' << format_double(std::sqrt(s.posterior_variance(t))) << '\n';
}

inline void write_trace_csv(std::ostream& out, const SampleTrace& trace)
{
    out << "step,t,residual,energy,rho\n";
    for (std::size_t i = 0; i < trace.steps.size(); ++i) {
        const auto& r = trace.steps[i];
        out << i << ',' << r.t << ',' << format_double(r.residual) << ',' << format_double(r.energy) << ','
            << format_double(r.rho) << '\n';
    }
}

inline void write_trace_csv(const std::filesystem::path& path, const SampleTrace& trace)
{
    auto out = detail::open_out(path);
    write_trace_csv(out, trace);
}

} // namespace gdsr
