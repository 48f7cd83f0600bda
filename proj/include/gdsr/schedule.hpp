#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "gdsr/linop.hpp"
#include "gdsr/tensor.hpp"

namespace gdsr {

/// Seeded standard-normal source. One per sampling chain; never shared.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    double normal() { return normal_(engine_); }
    double uniform() { return uniform_(engine_); }

    Vector normal_vector(std::size_t n)
    {
        Vector v(static_cast<Eigen::Index>(n));
        for (auto& e : v) e = normal();
        return v;
    }

    ImageTensor normal_like(const Shape& shape) { return {shape, normal_vector(shape.size())}; }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

/// DDPM variance schedule indexed t = 1..T, with alpha_bar(0) = 1.
class NoiseSchedule {
public:
    explicit NoiseSchedule(std::vector<double> betas) : beta_(betas.size() + 1, 0.0), alpha_bar_(betas.size() + 1, 1.0)
    {
        if (betas.empty()) throw std::invalid_argument("schedule needs at least one step");
        for (std::size_t t = 1; t <= betas.size(); ++t) {
            const double b = betas[t - 1];
            if (!(b > 0.0 && b < 1.0)) throw std::invalid_argument("beta values must lie in (0, 1)");
            beta_[t] = b;
            alpha_bar_[t] = alpha_bar_[t - 1] * (1.0 - b);
        }
    }

    [[nodiscard]] int steps() const { return static_cast<int>(beta_.size()) - 1; }
    [[nodiscard]] double beta(int t) const { return beta_.at(check(t, 1)); }
    [[nodiscard]] double alpha(int t) const { return 1.0 - beta(t); }
    [[nodiscard]] double alpha_bar(int t) const { return alpha_bar_.at(check(t, 0)); }

    /// ((1 - abar_{t-1}) / (1 - abar_t)) * beta_t
    [[nodiscard]] double posterior_variance(int t) const { return posterior_variance(t, t - 1); }

    /// Posterior variance for a jump t -> t_prev on a coarse grid, using the effective
    /// beta = 1 - abar_t / abar_{t_prev}.
    [[nodiscard]] double posterior_variance(int t, int t_prev) const
    {
        const double ab = alpha_bar(t);
        const double ab_prev = alpha_bar(t_prev);
        const double beta_eff = 1.0 - ab / ab_prev;
        return (1.0 - ab_prev) / (1.0 - ab) * beta_eff;
    }

private:
    [[nodiscard]] std::size_t check(int t, int lo) const
    {
        if (t < lo || t > steps())
            throw std::out_of_range("timestep " + std::to_string(t) + " outside [" + std::to_string(lo) + ", " +
                                    std::to_string(steps()) + "]");
        return static_cast<std::size_t>(t);
    }

    std::vector<double> beta_;
    std::vector<double> alpha_bar_;
};

inline NoiseSchedule make_linear_schedule(int steps = 1000, double beta_start = 1e-4, double beta_end = 0.02)
{
    if (steps < 1) throw std::invalid_argument("schedule needs T >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw std::invalid_argument("need 0 < beta_start <= beta_end < 1");
    std::vector<double> betas(static_cast<std::size_t>(steps));
    for (int i = 0; i < steps; ++i) {
        const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
        betas[static_cast<std::size_t>(i)] = beta_start + (beta_end - beta_start) * frac;
    }
    return NoiseSchedule(std::move(betas));
}

/// Descending timestep grid t_start = g[0] > ... > g[steps-1] >= 1, followed by 0.
inline std::vector<int> timestep_grid(int t_start, int steps)
{
    if (steps < 1 || steps > t_start)
        throw std::invalid_argument("step count " + std::to_string(steps) + " must lie in [1, " +
                                    std::to_string(t_start) + "]");
    std::vector<int> grid;
    grid.reserve(static_cast<std::size_t>(steps) + 1);
    for (int j = steps; j >= 1; --j)
        grid.push_back(static_cast<int>((static_cast<long long>(t_start) * j) / steps));
    grid.push_back(0);
    return grid;
}

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
inline ImageTensor forward_sample(const ImageTensor& x0, int t, const ImageTensor& eps, const NoiseSchedule& sched)
{
    x0.require_same_shape(eps);
    const double ab = sched.alpha_bar(t);
    return {x0.shape(), std::sqrt(ab) * x0.data() + std::sqrt(1.0 - ab) * eps.data()};
}

/// Clean estimate x0|t = (x_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t).
inline ImageTensor estimate_x0(const ImageTensor& x_t, const ImageTensor& eps_hat, int t, const NoiseSchedule& sched)
{
    if (t < 1) throw std::out_of_range("estimate_x0 needs t >= 1");
    x_t.require_same_shape(eps_hat);
    const double ab = sched.alpha_bar(t);
    return {x_t.shape(), (x_t.data() - std::sqrt(1.0 - ab) * eps_hat.data()) / std::sqrt(ab)};
}

/// Draw from q(x_{t_prev} | x_t, x0 = x0_target) on a possibly coarse grid.  The jump to
/// t_prev = 0 returns x0_target exactly.
inline ImageTensor ancestral_step(const ImageTensor& x_t, const ImageTensor& x0_target, int t, int t_prev,
                                  const ImageTensor& z, const NoiseSchedule& sched)
{
    if (t < 1) throw std::out_of_range("ancestral_step needs t >= 1");
    if (t_prev < 0 || t_prev >= t) throw std::out_of_range("ancestral_step needs 0 <= t_prev < t");
    x_t.require_same_shape(x0_target);
    x_t.require_same_shape(z);
    if (t_prev == 0) return x0_target;
    const double ab = sched.alpha_bar(t);
    const double ab_prev = sched.alpha_bar(t_prev);
    const double beta_eff = 1.0 - ab / ab_prev;
    const double c_x0 = std::sqrt(ab_prev) * beta_eff / (1.0 - ab);
    const double c_xt = std::sqrt(ab / ab_prev) * (1.0 - ab_prev) / (1.0 - ab);
    const double sigma = std::sqrt(sched.posterior_variance(t, t_prev));
    return {x_t.shape(), c_x0 * x0_target.data() + c_xt * x_t.data() + sigma * z.data()};
}

inline ImageTensor ancestral_step(const ImageTensor& x_t, const ImageTensor& x0_target, int t, const ImageTensor& z,
                                  const NoiseSchedule& sched)
{
    return ancestral_step(x_t, x0_target, t, t - 1, z, sched);
}

/// One sampling chain: current iterate, its timestep, and the chain's private noise stream.
struct DiffusionState {
    ImageTensor x;
    int t = 0;
    Rng rng;
};

/// Start reverse diffusion at t_stop from the pseudoinverse solution noised to that level.
inline DiffusionState init_from_pinv(const SvdFactors& f, const ImageTensor& y, int t_stop, const NoiseSchedule& sched,
                                     Rng rng)
{
    if (t_stop < 1 || t_stop > sched.steps())
        throw std::out_of_range("t_stop " + std::to_string(t_stop) + " outside [1, " + std::to_string(sched.steps()) +
                                "]");
    const ImageTensor x0 = pinv_apply(f, y);
    const ImageTensor eps = rng.normal_like(x0.shape());
    return {forward_sample(x0, t_stop, eps, sched), t_stop, std::move(rng)};
}

/// Pure-noise start x_t ~ N(0, I).
inline DiffusionState init_from_noise(const Shape& shape, int t, Rng rng)
{
    ImageTensor x = rng.normal_like(shape);
    return {std::move(x), t, std::move(rng)};
}

} // namespace gdsr
