#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "gdsr/denoiser.hpp"
#include "gdsr/linop.hpp"
#include "gdsr/schedule.hpp"
#include "gdsr/tensor.hpp"

namespace gdsr {

inline constexpr double kPsnrCapDb = 300.0;
inline constexpr double kPsnrZeroMse = 1e-30;

/// PSNR with peak 1.0, capped at 300 dB.
inline double psnr(const ImageTensor& reference, const ImageTensor& estimate)
{
    reference.require_same_shape(estimate);
    const double mse = (reference.data() - estimate.data()).squaredNorm() / static_cast<double>(reference.size());
    if (mse < kPsnrZeroMse) return kPsnrCapDb;
    return 10.0 * std::log10(1.0 / mse);
}

/// Data consistency: PSNR between the measurement and the re-degraded solution.
inline double lr_psnr(const SvdFactors& f, const ImageTensor& y, const ImageTensor& x_hat)
{
    require_shape(y, f.op().output_shape(), "lr_psnr measurement");
    return psnr(y, f.op().apply(x_hat));
}

/// Fixed random linear image encoder.  Rows are zero-mean over pixels and unit-norm, so the
/// embedding ignores global brightness.
class LinearEmbedder {
public:
    LinearEmbedder(std::size_t embedding_dim, Shape input, std::uint64_t seed) : input_(input)
    {
        if (embedding_dim == 0 || input.size() < 2) throw DimensionError("embedder needs dim >= 1 and >= 2 pixels");
        Rng rng(seed);
        weights_.resize(static_cast<Eigen::Index>(embedding_dim), static_cast<Eigen::Index>(input.size()));
        for (Eigen::Index r = 0; r < weights_.rows(); ++r) {
            Vector row = rng.normal_vector(input.size());
            row.array() -= row.mean();
            weights_.row(r) = row.transpose() / row.norm();
        }
    }

    [[nodiscard]] const Shape& input_shape() const { return input_; }
    [[nodiscard]] std::size_t dim() const { return static_cast<std::size_t>(weights_.rows()); }
    [[nodiscard]] const Matrix& weights() const { return weights_; }

    [[nodiscard]] Vector embed(const ImageTensor& x) const
    {
        require_shape(x, input_, "embedder input");
        return weights_ * x.data();
    }

    /// W^T u, the adjoint used by embedding-space gradients.
    [[nodiscard]] ImageTensor embed_transpose(const Vector& u) const
    {
        if (static_cast<std::size_t>(u.size()) != dim()) throw DimensionError("embedding dimension mismatch");
        return {input_, weights_.transpose() * u};
    }

private:
    Shape input_;
    Matrix weights_;
};

struct SemanticScore {
    double value = 0.0;
    bool zero_norm = false;  // set when either embedding vanished; value is then 0
};

/// Cosine similarity between embedder(x_hat) and the condition vector.
inline SemanticScore semantic_score(const LinearEmbedder& embedder, const ConditionVector& condition,
                                    const ImageTensor& x_hat)
{
    if (condition.dim() != embedder.dim()) throw DimensionError("condition and embedder dimensions differ");
    const Vector u = embedder.embed(x_hat);
    const double nu = u.norm();
    const double nc = condition.embedding.norm();
    if (nu == 0.0 || nc == 0.0) return {0.0, true};
    return {u.dot(condition.embedding) / (nu * nc), false};
}

struct DiversityStats {
    double mean_pixel_std = 0.0;      // population std per pixel, averaged
    double mean_pairwise_l2 = 0.0;
};

inline DiversityStats diversity(std::span<const ImageTensor> samples)
{
    if (samples.size() < 2) throw std::invalid_argument("diversity needs at least two samples");
    const auto n = static_cast<double>(samples.size());
    Vector mean = Vector::Zero(samples[0].data().size());
    for (const auto& s : samples) {
        samples[0].require_same_shape(s);
        mean += s.data();
    }
    mean /= n;
    Vector var = Vector::Zero(mean.size());
    for (const auto& s : samples) var += (s.data() - mean).cwiseAbs2();
    var /= n;

    double pair_sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < samples.size(); ++i)
        for (std::size_t j = i + 1; j < samples.size(); ++j, ++pairs)
            pair_sum += (samples[i].data() - samples[j].data()).norm();
    return {var.cwiseSqrt().mean(), pair_sum / static_cast<double>(pairs)};
}

} // namespace gdsr
