#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace gdsr {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct Shape {
    std::size_t channels = 1;
    std::size_t height = 1;
    std::size_t width = 1;

    [[nodiscard]] std::size_t size() const { return channels * height * width; }
    friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s)
{
    return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" + std::to_string(s.width);
}

/// Dense channels x height x width image, row-major within each channel.
/// Pixel values are nominally in [0, 1] but never clamped by the library.
class ImageTensor {
public:
    ImageTensor() = default;

    explicit ImageTensor(Shape shape) : shape_(shape), data_(Vector::Zero(static_cast<Eigen::Index>(shape.size()))) {}

    ImageTensor(Shape shape, Vector data) : shape_(shape), data_(std::move(data))
    {
        if (static_cast<std::size_t>(data_.size()) != shape_.size())
            throw DimensionError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                                 to_string(shape_));
    }

    static ImageTensor constant(Shape shape, double value)
    {
        return {shape, Vector::Constant(static_cast<Eigen::Index>(shape.size()), value)};
    }

    [[nodiscard]] const Shape& shape() const { return shape_; }
    [[nodiscard]] std::size_t channels() const { return shape_.channels; }
    [[nodiscard]] std::size_t height() const { return shape_.height; }
    [[nodiscard]] std::size_t width() const { return shape_.width; }
    [[nodiscard]] std::size_t size() const { return shape_.size(); }

    [[nodiscard]] const Vector& data() const { return data_; }
    Vector& data() { return data_; }

    double& operator()(std::size_t c, std::size_t h, std::size_t w) { return data_[index(c, h, w)]; }
    double operator()(std::size_t c, std::size_t h, std::size_t w) const { return data_[index(c, h, w)]; }

    [[nodiscard]] bool all_finite() const { return data_.allFinite(); }

    ImageTensor& operator+=(const ImageTensor& o)
    {
        require_same_shape(o);
        data_ += o.data_;
        return *this;
    }
    ImageTensor& operator-=(const ImageTensor& o)
    {
        require_same_shape(o);
        data_ -= o.data_;
        return *this;
    }
    ImageTensor& operator*=(double a)
    {
        data_ *= a;
        return *this;
    }

    friend ImageTensor operator+(ImageTensor a, const ImageTensor& b) { return a += b; }
    friend ImageTensor operator-(ImageTensor a, const ImageTensor& b) { return a -= b; }
    friend ImageTensor operator*(double s, ImageTensor a) { return a *= s; }
    friend ImageTensor operator*(ImageTensor a, double s) { return a *= s; }

    void require_same_shape(const ImageTensor& o) const
    {
        if (o.shape_ != shape_)
            throw DimensionError("shape mismatch: " + to_string(shape_) + " vs " + to_string(o.shape_));
    }

private:
    [[nodiscard]] Eigen::Index index(std::size_t c, std::size_t h, std::size_t w) const
    {
        return static_cast<Eigen::Index>((c * shape_.height + h) * shape_.width + w);
    }

    Shape shape_{};
    Vector data_{};
};

inline void require_shape(const ImageTensor& x, const Shape& expected, const char* what)
{
    if (x.shape() != expected)
        throw DimensionError(std::string(what) + ": expected shape " + to_string(expected) + ", got " +
                             to_string(x.shape()));
}

} // namespace gdsr
