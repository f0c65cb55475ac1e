#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "lamcast/grid.hpp"
#include "lamcast/rng.hpp"
#include "lamcast/tensor.hpp"

namespace lamcast {

// Diffusion mathematics: the sigma ladder, the preconditioning algebra
// around the raw network, the deterministic 2nd-order Heun probability-flow
// sampler, and the noise-level loss weight.

// Geometric-like ladder sigma_0 = sigma_max >= ... >= sigma_{N-1} =
// sigma_min, closed with sigma_N = 0 exactly. Endpoints are returned
// exactly (not through the power formula) so they are bit-precise.
struct NoiseSchedule {
    double sigma_min = 0.03;
    double sigma_max = 80.0;
    double rho = 7.0;
    std::int64_t steps = 20;  // N solver steps; the ladder has N+1 entries

    static NoiseSchedule training_defaults() { return {0.02, 88.0, 7.0, 20}; }
    static NoiseSchedule inference_defaults() { return {0.03, 80.0, 7.0, 20}; }

    void validate() const {
        if (!(sigma_min > 0) || !(sigma_max > sigma_min))
            throw config_error("NoiseSchedule: need 0 < sigma_min < sigma_max");
        if (!(rho > 0)) throw config_error("NoiseSchedule: rho must be positive");
        if (steps < 2) throw config_error("NoiseSchedule: need at least 2 steps");
    }

    double sigma_at(std::int64_t n) const {
        require(n >= 0 && n <= steps, "NoiseSchedule: index " + std::to_string(n) +
                                          " outside 0.." + std::to_string(steps));
        if (n == 0) return sigma_max;
        if (n == steps - 1) return sigma_min;
        if (n == steps) return 0.0;
        const double a = std::pow(sigma_max, 1.0 / rho);
        const double b = std::pow(sigma_min, 1.0 / rho);
        const double u = double(n) / double(steps - 1);
        return std::pow(a + u * (b - a), rho);
    }
};

// c_skip/c_out/c_in/c_noise scalings and the loss weight. With these forms
// the identities c_in^2 (sigma^2 + sigma_data^2) = 1, c_out^2 = c_skip
// sigma^2 and omega = 1/c_out^2 hold exactly.
struct Preconditioner {
    double sigma_data = 1.0;

    struct Coeffs {
        double c_skip, c_out, c_in, c_noise;
    };

    void validate() const {
        if (!(sigma_data > 0)) throw config_error("Preconditioner: sigma_data must be positive");
    }

    Coeffs coeffs(double sigma) const {
        require(sigma > 0, "Preconditioner: sigma must be positive, got " +
                               std::to_string(sigma));
        const double s2 = sigma * sigma, d2 = sigma_data * sigma_data;
        const double denom = std::sqrt(s2 + d2);
        return {d2 / (s2 + d2), sigma * sigma_data / denom, 1.0 / denom,
                std::log(sigma) / 4.0};
    }

    double loss_weight(double sigma) const {
        require(sigma > 0, "Preconditioner: sigma must be positive, got " +
                               std::to_string(sigma));
        const double sd = sigma * sigma_data;
        return (sigma * sigma + sigma_data * sigma_data) / (sd * sd);
    }
};

// The denoiser seen by the sampler: D(Z; sigma) conditioned on the assembled
// interior/boundary inputs, returning an interior-shaped estimate of the
// clean residual.
template <typename T>
class DenoiserInterface {
public:
    virtual ~DenoiserInterface() = default;
    virtual Tensor<T> denoise(const Tensor<T>& z, double sigma,
                              const ConditioningPair<T>& cond) const = 0;
};

// Raw network F behind the preconditioning: receives the scaled latent
// c_in * Z and the noise coordinate c_noise(sigma).
template <typename T>
class RawNet {
public:
    virtual ~RawNet() = default;
    virtual Tensor<T> raw_forward(const Tensor<T>& scaled_z, double c_noise,
                                  const ConditioningPair<T>& cond) const = 0;
};

// D(Z; sigma) = c_skip Z + c_out F(c_in Z, c_noise, I, B).
template <typename T>
Tensor<T> apply_denoiser(const RawNet<T>& net, const Preconditioner& pre, const Tensor<T>& z,
                         double sigma, const ConditioningPair<T>& cond) {
    const auto c = pre.coeffs(sigma);
    Tensor<T> scaled(z.shape());
    for (std::int64_t i = 0; i < z.numel(); ++i) scaled[i] = T(c.c_in * double(z[i]));
    Tensor<T> f = net.raw_forward(scaled, c.c_noise, cond);
    check_same_shape(f, z, "apply_denoiser");
    Tensor<T> out(z.shape());
    for (std::int64_t i = 0; i < z.numel(); ++i)
        out[i] = T(c.c_skip * double(z[i]) + c.c_out * double(f[i]));
    return out;
}

template <typename T>
class PreconditionedDenoiser : public DenoiserInterface<T> {
public:
    PreconditionedDenoiser(const RawNet<T>& net, Preconditioner pre) : net_(net), pre_(pre) {
        pre_.validate();
    }
    Tensor<T> denoise(const Tensor<T>& z, double sigma,
                      const ConditioningPair<T>& cond) const override {
        return apply_denoiser(net_, pre_, z, sigma, cond);
    }
    const Preconditioner& preconditioner() const { return pre_; }

private:
    const RawNet<T>& net_;
    Preconditioner pre_;
};

struct SampleStats {
    std::int64_t denoiser_evals = 0;
};

// Deterministic integration of dx = ((x - D(x; sigma))/sigma) dsigma down
// the ladder. Second-order Heun correction on every step except the last
// (sigma_N = 0 has no defined slope), so N steps cost 2N-1 denoiser
// evaluations. force_euler drops the correction everywhere (N evaluations),
// used by the closed-form sampler oracles.
template <typename T>
Tensor<T> heun_sample(const DenoiserInterface<T>& denoiser, Tensor<T> z0,
                      const ConditioningPair<T>& cond, const NoiseSchedule& sched,
                      bool force_euler = false, SampleStats* stats = nullptr) {
    sched.validate();
    Tensor<T> x = std::move(z0);
    std::int64_t nfe = 0;
    for (std::int64_t n = 0; n < sched.steps; ++n) {
        const double s0 = sched.sigma_at(n);
        const double s1 = sched.sigma_at(n + 1);
        const double h = s1 - s0;

        const Tensor<T> d0 = denoiser.denoise(x, s0, cond);
        ++nfe;
        Tensor<T> xe(x.shape());
        for (std::int64_t i = 0; i < x.numel(); ++i) {
            const double slope = (double(x[i]) - double(d0[i])) / s0;
            xe[i] = T(double(x[i]) + h * slope);
        }

        if (s1 > 0.0 && !force_euler) {
            const Tensor<T> d1 = denoiser.denoise(xe, s1, cond);
            ++nfe;
            for (std::int64_t i = 0; i < x.numel(); ++i) {
                const double slope0 = (double(x[i]) - double(d0[i])) / s0;
                const double slope1 = (double(xe[i]) - double(d1[i])) / s1;
                x[i] = T(double(x[i]) + h * 0.5 * (slope0 + slope1));
            }
        } else {
            x = std::move(xe);
        }

        if (!x.all_finite())
            throw numeric_error("heun_sample: non-finite state after step " +
                                std::to_string(n) + " (sigma " + std::to_string(s1) + ")");
    }
    if (stats) stats->denoiser_evals = nfe;
    return x;
}

// Draw the initial latent Z_0 ~ N(0, sigma_0^2 I) for one sampling run.
template <typename T>
Tensor<T> sample_initial_latent(const NoiseSchedule& sched, Shape shape, RngStream& rng) {
    Tensor<T> z(shape);
    rng.fill_normal(z.values(), 0.0, sched.sigma_at(0));
    return z;
}

// Training-time draw: noise index n ~ Uniform{0..N-1}, plus a matching
// Gaussian perturbation with std sigma_n.
template <typename T>
struct TrainingNoise {
    std::int64_t n;
    double sigma;
    Tensor<T> eps;
};

template <typename T>
TrainingNoise<T> sample_training_noise(const NoiseSchedule& sched, Shape shape, RngStream& rng) {
    sched.validate();
    TrainingNoise<T> out;
    out.n = std::int64_t(rng.uniform_below(std::uint64_t(sched.steps)));
    out.sigma = sched.sigma_at(out.n);
    out.eps = Tensor<T>(shape);
    rng.fill_normal(out.eps.values(), 0.0, out.sigma);
    return out;
}

}  // namespace lamcast
