#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "gdsr/linop.hpp"
#include "gdsr/schedule.hpp"
#include "gdsr/tensor.hpp"

namespace gdsr {

/// Conditioning signal: a text-like embedding c, c_1 or c_2.
struct ConditionVector {
    Vector embedding;

    [[nodiscard]] std::size_t dim() const { return static_cast<std::size_t>(embedding.size()); }
};

/// Noise predictor eps(x_t, t | c).  A null condition means the unconditional branch.
class Denoiser {
public:
    virtual ~Denoiser() = default;

    [[nodiscard]] virtual ImageTensor predict(const ImageTensor& x_t, int t, const ConditionVector* condition) const = 0;

    [[nodiscard]] virtual bool has_exact_vjp() const { return false; }

    /// v^T (d eps / d x_t).
    [[nodiscard]] virtual ImageTensor vjp(const ImageTensor& /*x_t*/, int /*t*/, const ConditionVector* /*condition*/,
                                          const ImageTensor& /*v*/) const
    {
        throw std::logic_error("denoiser has no exact vector-Jacobian product");
    }
};

/// eps_uncond + s (eps_cond - eps_uncond)
inline ImageTensor cfg_combine(const ImageTensor& eps_uncond, const ImageTensor& eps_cond, double scale)
{
    eps_uncond.require_same_shape(eps_cond);
    if (scale == 1.0) return eps_cond;
    if (scale == 0.0) return eps_uncond;
    return {eps_cond.shape(), eps_uncond.data() + scale * (eps_cond.data() - eps_uncond.data())};
}

/// Classifier-free guided prediction.  `negative` is the unconditional branch (null text when
/// nullptr, or a negative prompt).
inline ImageTensor guided_epsilon(const Denoiser& d, const ImageTensor& x_t, int t, const ConditionVector* condition,
                                  const ConditionVector* negative, double scale)
{
    if (scale == 1.0) return d.predict(x_t, t, condition);
    if (scale == 0.0) return d.predict(x_t, t, negative);
    return cfg_combine(d.predict(x_t, t, negative), d.predict(x_t, t, condition), scale);
}

inline ImageTensor guided_vjp(const Denoiser& d, const ImageTensor& x_t, int t, const ConditionVector* condition,
                              const ConditionVector* negative, double scale, const ImageTensor& v)
{
    if (scale == 1.0) return d.vjp(x_t, t, condition, v);
    if (scale == 0.0) return d.vjp(x_t, t, negative, v);
    return cfg_combine(d.vjp(x_t, t, negative, v), d.vjp(x_t, t, condition, v), scale);
}

/// Mixture of K axis-aligned Gaussians in flattened image space, each tagged with a semantic
/// embedding used for conditioning.
struct GaussianMixturePrior {
    Shape shape{};
    Vector weights;     // K
    Matrix means;       // d x K
    Matrix variances;   // d x K, diagonal covariances
    Matrix embeddings;  // m x K, may have zero rows

    [[nodiscard]] std::size_t components() const { return static_cast<std::size_t>(weights.size()); }
    [[nodiscard]] std::size_t dim() const { return shape.size(); }
    [[nodiscard]] std::size_t embedding_dim() const { return static_cast<std::size_t>(embeddings.rows()); }

    void validate() const
    {
        const auto k = weights.size();
        const auto d = static_cast<Eigen::Index>(shape.size());
        if (k == 0) throw std::invalid_argument("mixture needs at least one component");
        if (means.rows() != d || means.cols() != k || variances.rows() != d || variances.cols() != k)
            throw DimensionError("mixture means/variances must be " + std::to_string(d) + "x" + std::to_string(k));
        if (embeddings.size() > 0 && embeddings.cols() != k)
            throw DimensionError("mixture embeddings need one column per component");
        if ((weights.array() <= 0.0).any()) throw std::invalid_argument("mixture weights must be positive");
        if (std::abs(weights.sum() - 1.0) > 1e-9) throw std::invalid_argument("mixture weights must sum to 1");
        if ((variances.array() <= 0.0).any()) throw std::invalid_argument("mixture variances must be positive");
        if (!means.allFinite() || !variances.allFinite() || !embeddings.allFinite())
            throw std::invalid_argument("mixture parameters must be finite");
    }

    /// Same mixture with every mean shifted by `offset`.
    [[nodiscard]] GaussianMixturePrior translated(const ImageTensor& offset) const
    {
        require_shape(offset, shape, "mixture translation");
        GaussianMixturePrior p = *this;
        p.means.colwise() += offset.data();
        return p;
    }

    [[nodiscard]] ImageTensor mean() const { return {shape, means * weights}; }

    ImageTensor sample(Rng& rng, std::size_t* component = nullptr) const
    {
        const double u = rng.uniform();
        Eigen::Index k = 0;
        double acc = weights[0];
        while (u > acc && k + 1 < weights.size()) acc += weights[++k];
        if (component != nullptr) *component = static_cast<std::size_t>(k);
        Vector x = means.col(k) + variances.col(k).cwiseSqrt().cwiseProduct(rng.normal_vector(dim()));
        return {shape, std::move(x)};
    }
};

/// Exact noise predictor for a Gaussian-mixture data distribution.
///
/// Under the forward process the marginal at step t is again a mixture with means sqrt(abar) mu_k
/// and variances abar Sigma_k + (1 - abar).  The prediction is eps = -sqrt(1 - abar) grad log p_t,
/// with responsibilities evaluated in log space.  A condition c reweights the components by
/// w_k exp(<e_k, c> / tau).
class GmmDenoiser final : public Denoiser {
public:
    GmmDenoiser(GaussianMixturePrior prior, NoiseSchedule schedule, double temperature = 1.0)
        : prior_(std::move(prior)), schedule_(std::move(schedule)), temperature_(temperature)
    {
        prior_.validate();
        if (!(temperature_ > 0.0)) throw std::invalid_argument("conditioning temperature must be positive");
    }

    [[nodiscard]] const GaussianMixturePrior& prior() const { return prior_; }
    [[nodiscard]] const NoiseSchedule& schedule() const { return schedule_; }
    [[nodiscard]] double temperature() const { return temperature_; }

    [[nodiscard]] ImageTensor predict(const ImageTensor& x_t, int t, const ConditionVector* condition) const override
    {
        const Marginal m = marginal(x_t, t, condition);
        return {x_t.shape(), -std::sqrt(1.0 - m.alpha_bar) * (m.gradients * m.resp)};
    }

    [[nodiscard]] bool has_exact_vjp() const override { return true; }

    [[nodiscard]] ImageTensor vjp(const ImageTensor& x_t, int t, const ConditionVector* condition,
                                  const ImageTensor& v) const override
    {
        require_shape(v, prior_.shape, "vjp direction");
        const Marginal m = marginal(x_t, t, condition);
        // Hessian of log p_t applied to v:
        //   sum_k r_k (-v / var_k + g_k (g_k . v)) - gbar (gbar . v)
        Vector hv = Vector::Zero(v.data().size());
        const Vector gbar = m.gradients * m.resp;
        for (Eigen::Index k = 0; k < m.resp.size(); ++k) {
            const auto g = m.gradients.col(k);
            hv += m.resp[k] * (-v.data().cwiseQuotient(m.variances.col(k)) + g * g.dot(v.data()));
        }
        hv -= gbar * gbar.dot(v.data());
        return {x_t.shape(), -std::sqrt(1.0 - m.alpha_bar) * hv};
    }

    /// log p_t(x_t | c), for score checks.
    [[nodiscard]] double log_density(const ImageTensor& x_t, int t, const ConditionVector* condition) const
    {
        return marginal(x_t, t, condition).log_density;
    }

    /// Component responsibilities at (x_t, t).
    [[nodiscard]] Vector responsibilities(const ImageTensor& x_t, int t, const ConditionVector* condition) const
    {
        return marginal(x_t, t, condition).resp;
    }

    /// Prior weights after conditioning on c.
    [[nodiscard]] Vector conditioned_weights(const ConditionVector* condition) const
    {
        Vector logw = log_weights(condition);
        logw.array() -= logw.maxCoeff();
        Vector w = logw.array().exp();
        return w / w.sum();
    }

private:
    struct Marginal {
        double alpha_bar = 1.0;
        Vector resp;       // K
        Matrix gradients;  // d x K, per-component grad log N
        Matrix variances;  // d x K
        double log_density = 0.0;
    };

    [[nodiscard]] Vector log_weights(const ConditionVector* condition) const
    {
        Vector logw = prior_.weights.array().log();
        if (condition != nullptr) {
            if (condition->dim() != prior_.embedding_dim())
                throw DimensionError("condition has dimension " + std::to_string(condition->dim()) +
                                     ", prior embeddings have " + std::to_string(prior_.embedding_dim()));
            logw += (prior_.embeddings.transpose() * condition->embedding) / temperature_;
        }
        return logw;
    }

    [[nodiscard]] Marginal marginal(const ImageTensor& x_t, int t, const ConditionVector* condition) const
    {
        require_shape(x_t, prior_.shape, "denoiser input");
        if (t < 1) throw std::out_of_range("denoiser needs t >= 1");
        Marginal m;
        m.alpha_bar = schedule_.alpha_bar(t);
        const double a = std::sqrt(m.alpha_bar);
        const auto k_count = static_cast<Eigen::Index>(prior_.components());
        const Vector logw_raw = log_weights(condition);
        const double logw_norm = log_sum_exp(logw_raw);
        m.variances = (m.alpha_bar * prior_.variances).array() + (1.0 - m.alpha_bar);
        m.gradients.resize(x_t.data().size(), k_count);
        Vector logp(k_count);
        const double log2pi = std::log(2.0 * std::numbers::pi);
        for (Eigen::Index k = 0; k < k_count; ++k) {
            const Vector diff = x_t.data() - a * prior_.means.col(k);
            const auto var = m.variances.col(k);
            m.gradients.col(k) = -diff.cwiseQuotient(var);
            const double quad = diff.cwiseProduct(diff).cwiseQuotient(var).sum();
            const double logdet = var.array().log().sum();
            logp[k] = logw_raw[k] - logw_norm - 0.5 * (quad + logdet + static_cast<double>(diff.size()) * log2pi);
        }
        m.log_density = log_sum_exp(logp);
        m.resp = (logp.array() - m.log_density).exp();
        return m;
    }

    static double log_sum_exp(const Vector& v)
    {
        const double mx = v.maxCoeff();
        if (!std::isfinite(mx)) return mx;
        return mx + std::log((v.array() - mx).exp().sum());
    }

    GaussianMixturePrior prior_;
    NoiseSchedule schedule_;
    double temperature_;
};

/// Stage-2 denoiser conditioned on the stage-1 output: the detail prior translated by the bicubic
/// upsampling of x_lr to the detail prior's resolution.
inline std::shared_ptr<const GmmDenoiser> stage2_conditional_denoiser(const ImageTensor& x_lr,
                                                                      const GaussianMixturePrior& detail_prior,
                                                                      const NoiseSchedule& schedule,
                                                                      double temperature = 1.0)
{
    const Shape& hr = detail_prior.shape;
    if (x_lr.channels() != hr.channels || x_lr.height() == 0 || hr.height % x_lr.height() != 0 ||
        hr.width % x_lr.width() != 0 || hr.height / x_lr.height() != hr.width / x_lr.width())
        throw DimensionError("cannot upsample " + to_string(x_lr.shape()) + " to " + to_string(hr));
    const ImageTensor up = bicubic_upsample(x_lr, hr.height / x_lr.height());
    return std::make_shared<const GmmDenoiser>(detail_prior.translated(up), schedule, temperature);
}

} // namespace gdsr
