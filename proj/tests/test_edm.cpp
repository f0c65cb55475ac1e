#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <memory>
#include <vector>

#include "lamcast/denoiser.hpp"
#include "lamcast/edm.hpp"
#include "lamcast/grid.hpp"
#include "lamcast/rng.hpp"

using namespace lamcast;

namespace {

// A conditioning pair with arbitrary finite contents; the oracles under test
// ignore it but the interfaces require one.
ConditioningPair<double> dummy_cond(std::shared_ptr<RegionMask> mask) {
    Tensor<double> interior = Tensor<double>::zeros(Shape{2, mask->num_interior()});
    Tensor<double> boundary = Tensor<double>::zeros(Shape{2, mask->num_boundary()});
    return ConditioningPair<double>(std::move(interior), std::move(boundary), std::move(mask));
}

// Denoiser returning a fixed field, independent of input and noise level.
class ConstantDenoiser : public DenoiserInterface<double> {
public:
    explicit ConstantDenoiser(Tensor<double> value) : value_(std::move(value)) {}
    Tensor<double> denoise(const Tensor<double>& z, double,
                           const ConditioningPair<double>&) const override {
        check_same_shape(z, value_, "ConstantDenoiser");
        return value_;
    }

private:
    Tensor<double> value_;
};

}  // namespace

TEST_CASE("noise ladder endpoints are exact and interior follows the power rule") {
    const NoiseSchedule sched = NoiseSchedule::inference_defaults();
    CHECK(sched.sigma_at(0) == 80.0);
    CHECK(sched.sigma_at(19) == 0.03);
    CHECK(sched.sigma_at(20) == 0.0);

    // Strictly decreasing through the whole ladder.
    for (std::int64_t n = 0; n < sched.steps; ++n)
        REQUIRE(sched.sigma_at(n) > sched.sigma_at(n + 1));

    // Interior entries match the rho-power interpolation evaluated directly.
    for (std::int64_t n = 1; n < sched.steps - 1; ++n) {
        const double a = std::pow(80.0, 1.0 / 7.0), b = std::pow(0.03, 1.0 / 7.0);
        const double want = std::pow(a + double(n) / 19.0 * (b - a), 7.0);
        REQUIRE(sched.sigma_at(n) == Catch::Approx(want).epsilon(1e-15));
    }
    // Published midpoint value, approximate guidance.
    CHECK(sched.sigma_at(10) == Catch::Approx(3.68).margin(0.01));

    const NoiseSchedule train = NoiseSchedule::training_defaults();
    CHECK(train.sigma_at(0) == 88.0);
    CHECK(train.sigma_at(train.steps - 1) == 0.02);

    CHECK_THROWS_AS(sched.sigma_at(21), contract_error);
    NoiseSchedule bad = sched;
    bad.sigma_min = 100.0;
    CHECK_THROWS_AS(bad.validate(), config_error);
    bad = sched;
    bad.steps = 1;
    CHECK_THROWS_AS(bad.validate(), config_error);
}

TEST_CASE("preconditioner coefficients at sigma = sigma_data") {
    const Preconditioner pre;
    const auto c = pre.coeffs(1.0);
    CHECK(c.c_skip == Catch::Approx(0.5).margin(1e-15));
    CHECK(c.c_out == Catch::Approx(1.0 / std::sqrt(2.0)).margin(1e-15));
    CHECK(c.c_in == Catch::Approx(1.0 / std::sqrt(2.0)).margin(1e-15));
    CHECK(c.c_noise == Catch::Approx(0.0).margin(1e-15));
    CHECK(pre.loss_weight(1.0) == Catch::Approx(2.0).margin(1e-14));
}

TEST_CASE("preconditioner identities hold across eight decades of sigma") {
    const Preconditioner pre;
    double prev_w = -1.0;
    for (int k = 0; k <= 1000; ++k) {
        const double sigma = std::pow(10.0, -4.0 + 8.0 * double(k) / 1000.0);
        const auto c = pre.coeffs(sigma);
        CHECK(c.c_in * c.c_in * (sigma * sigma + 1.0) == Catch::Approx(1.0).epsilon(1e-12));
        CHECK(c.c_out * c.c_out ==
              Catch::Approx(c.c_skip * sigma * sigma).epsilon(1e-12));
        CHECK(c.c_noise == Catch::Approx(std::log(sigma) / 4.0).epsilon(1e-12));
        const double w = pre.loss_weight(sigma);
        CHECK(w == Catch::Approx(1.0 / (c.c_out * c.c_out)).epsilon(1e-12));
        // omega decreases monotonically toward 1/sigma_data^2.
        if (prev_w > 0) CHECK(w < prev_w);
        prev_w = w;
    }
    CHECK(pre.loss_weight(1e6) == Catch::Approx(1.0).epsilon(1e-9));

    // sigma -> 0+ limit: c_skip -> 1 and c_out -> 0.
    const auto c0 = pre.coeffs(1e-6);
    CHECK(c0.c_skip == Catch::Approx(1.0).epsilon(1e-10));
    CHECK(c0.c_out == Catch::Approx(0.0).margin(1e-5));
    CHECK_THROWS_AS(pre.coeffs(0.0), contract_error);
}

TEST_CASE("apply_denoiser combines skip and output branches") {
    // Raw net returning a constant field F.
    class FixedNet : public RawNet<double> {
    public:
        explicit FixedNet(double f) : f_(f) {}
        Tensor<double> raw_forward(const Tensor<double>& scaled_z, double,
                                   const ConditioningPair<double>&) const override {
            Tensor<double> out(scaled_z.shape());
            for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = f_;
            return out;
        }

    private:
        double f_;
    };

    auto mask = std::make_shared<RegionMask>(6, 6, 2);
    const auto cond = dummy_cond(mask);
    RngStream r(4, StreamKind::test, 30);
    Tensor<double> z(Shape{1, 2, 2});
    r.fill_normal(z.values(), 0.0, 1.0);

    const Preconditioner pre;
    for (double sigma : {0.02, 0.5, 7.0, 88.0}) {
        const auto c = pre.coeffs(sigma);
        const FixedNet net(1.75);
        const Tensor<double> d = apply_denoiser(net, pre, z, sigma, cond);
        for (std::int64_t i = 0; i < z.numel(); ++i)
            REQUIRE(d[i] == Catch::Approx(c.c_skip * z[i] + c.c_out * 1.75).epsilon(1e-14));

        // F == 0 collapses to the skip branch alone.
        const FixedNet zero(0.0);
        const Tensor<double> skip = apply_denoiser(zero, pre, z, sigma, cond);
        for (std::int64_t i = 0; i < z.numel(); ++i)
            REQUIRE(skip[i] == Catch::Approx(c.c_skip * z[i]).epsilon(1e-14));
    }
}

TEST_CASE("analytic gaussian denoiser wrapped as a raw net survives the algebra") {
    // F = (D_analytic - c_skip z) / c_out; apply_denoiser must reproduce
    // D_analytic, exercising the preconditioning round trip.
    auto mask = std::make_shared<RegionMask>(6, 6, 2);
    const auto cond = dummy_cond(mask);
    const Shape shape{1, 2, 2};
    Tensor<double> mu(shape), var(shape);
    RngStream r(6, StreamKind::test, 31);
    r.fill_normal(mu.values(), 0.3, 1.0);
    for (std::int64_t i = 0; i < var.numel(); ++i) var[i] = 0.5 + r.uniform();
    const AnalyticGaussianDenoiser<double> oracle(mu, var);

    class WrappedOracle : public RawNet<double> {
    public:
        WrappedOracle(const AnalyticGaussianDenoiser<double>& d, const Preconditioner& pre)
            : d_(d), pre_(pre) {}
        Tensor<double> raw_forward(const Tensor<double>& scaled_z, double c_noise,
                                   const ConditioningPair<double>& cond) const override {
            const double sigma = std::exp(4.0 * c_noise);
            const auto c = pre_.coeffs(sigma);
            Tensor<double> z(scaled_z.shape());
            for (std::int64_t i = 0; i < z.numel(); ++i) z[i] = scaled_z[i] / c.c_in;
            const Tensor<double> d = d_.denoise(z, sigma, cond);
            Tensor<double> f(z.shape());
            for (std::int64_t i = 0; i < z.numel(); ++i)
                f[i] = (d[i] - c.c_skip * z[i]) / c.c_out;
            return f;
        }

    private:
        const AnalyticGaussianDenoiser<double>& d_;
        Preconditioner pre_;
    };

    const Preconditioner pre;
    const WrappedOracle net(oracle, pre);
    Tensor<double> z(shape);
    r.fill_normal(z.values(), 0.0, 2.0);
    for (double sigma : {0.03, 1.0, 15.0, 80.0}) {
        const Tensor<double> via_net = apply_denoiser(net, pre, z, sigma, cond);
        const Tensor<double> direct = oracle.denoise(z, sigma, cond);
        for (std::int64_t i = 0; i < z.numel(); ++i)
            REQUIRE(via_net[i] == Catch::Approx(direct[i]).margin(1e-9));
    }
}

TEST_CASE("zero denoiser: ladder contraction to zero") {
    // With D == 0 the flow is dx/dsigma = x/sigma, so every step rescales x
    // by sigma_{n+1}/sigma_n and the final factor sigma_N / sigma_{N-1} = 0
    // annihilates the state (up to one rounding of the fused last step).
    auto mask = std::make_shared<RegionMask>(8, 8, 2);
    const auto cond = dummy_cond(mask);
    const Shape shape{1, 4, 4};
    const ConstantDenoiser zero(Tensor<double>::zeros(shape));
    const NoiseSchedule sched = NoiseSchedule::inference_defaults();

    RngStream r(8, StreamKind::test, 32);
    Tensor<double> z0 = sample_initial_latent<double>(sched, shape, r);

    SampleStats euler_stats;
    const Tensor<double> euler =
        heun_sample(zero, z0, cond, sched, /*force_euler=*/true, &euler_stats);
    for (std::int64_t i = 0; i < euler.numel(); ++i) REQUIRE(std::abs(euler[i]) < 1e-15);
    CHECK(euler_stats.denoiser_evals == sched.steps);

    SampleStats heun_stats;
    const Tensor<double> heun = heun_sample(zero, z0, cond, sched, false, &heun_stats);
    for (std::int64_t i = 0; i < heun.numel(); ++i) REQUIRE(std::abs(heun[i]) < 1e-8);
    CHECK(heun_stats.denoiser_evals == 2 * sched.steps - 1);
}

TEST_CASE("constant denoiser: both solvers land exactly on the fixed point") {
    // dx/dsigma = (x - c)/sigma is affine with solution x(sigma) =
    // c + (x0 - c) sigma/sigma_0; Euler and Heun integrate it exactly, so the
    // terminal state is c itself.
    auto mask = std::make_shared<RegionMask>(8, 8, 2);
    const auto cond = dummy_cond(mask);
    const Shape shape{2, 4, 4};
    Tensor<double> c(shape);
    RngStream r(9, StreamKind::test, 33);
    r.fill_normal(c.values(), 0.2, 1.0);
    const ConstantDenoiser den(c);
    const NoiseSchedule sched = NoiseSchedule::inference_defaults();

    Tensor<double> z0 = sample_initial_latent<double>(sched, shape, r);
    for (bool euler : {false, true}) {
        const Tensor<double> out = heun_sample(den, z0, cond, sched, euler);
        for (std::int64_t i = 0; i < out.numel(); ++i)
            REQUIRE(out[i] == Catch::Approx(c[i]).margin(1e-10));
    }
}

TEST_CASE("heun transport of a single latent matches the gaussian closed form") {
    // For data N(mu, c) the probability-flow solution from (z0, sigma_0) to
    // sigma = 0 is mu + (z0 - mu) sqrt(c / (c + sigma_0^2)).
    auto mask = std::make_shared<RegionMask>(8, 8, 2);
    const auto cond = dummy_cond(mask);
    const Shape shape{1, 4, 4};
    Tensor<double> mu(shape), var(shape);
    RngStream r(10, StreamKind::test, 34);
    r.fill_normal(mu.values(), 0.0, 0.8);
    for (std::int64_t i = 0; i < var.numel(); ++i) var[i] = 0.5 + 1.5 * r.uniform();
    const AnalyticGaussianDenoiser<double> den(mu, var);

    NoiseSchedule sched = NoiseSchedule::inference_defaults();
    Tensor<double> z0 = sample_initial_latent<double>(sched, shape, r);
    const double s0 = sched.sigma_at(0);

    auto max_err = [&](const NoiseSchedule& s) {
        const Tensor<double> out = heun_sample(den, z0, cond, s);
        double worst = 0.0;
        for (std::int64_t i = 0; i < out.numel(); ++i) {
            const double want =
                mu[i] + (z0[i] - mu[i]) * std::sqrt(var[i] / (var[i] + s0 * s0));
            worst = std::max(worst, std::abs(out[i] - want));
        }
        return worst;
    };

    // Truncation error is dominated by the huge first steps of the rho=7
    // ladder down from sigma_0 = 80 (measured ~4.5e-2 at 20 steps).
    const double err20 = max_err(sched);
    CHECK(err20 < 0.1);

    // Refining the ladder shrinks it at roughly second order: 2.5x the steps
    // cuts the measured error ~8x.
    NoiseSchedule fine = sched;
    fine.steps = 50;
    const double err50 = max_err(fine);
    CHECK(err50 < err20 / 4.0);
}

TEST_CASE("heun sampling is deterministic and rejects divergence") {
    auto mask = std::make_shared<RegionMask>(8, 8, 2);
    const auto cond = dummy_cond(mask);
    const Shape shape{1, 4, 4};
    Tensor<double> mu = Tensor<double>::zeros(shape);
    Tensor<double> var(shape);
    for (std::int64_t i = 0; i < var.numel(); ++i) var[i] = 1.0;
    const AnalyticGaussianDenoiser<double> den(mu, var);
    const NoiseSchedule sched = NoiseSchedule::inference_defaults();

    RngStream r1(11, StreamKind::test, 35);
    RngStream r2(11, StreamKind::test, 35);
    const Tensor<double> a =
        heun_sample(den, sample_initial_latent<double>(sched, shape, r1), cond, sched);
    const Tensor<double> b =
        heun_sample(den, sample_initial_latent<double>(sched, shape, r2), cond, sched);
    for (std::int64_t i = 0; i < a.numel(); ++i) REQUIRE(a[i] == b[i]);

    // A denoiser emitting non-finite values trips the per-step check.
    Tensor<double> nan_field(shape);
    for (std::int64_t i = 0; i < nan_field.numel(); ++i)
        nan_field[i] = std::numeric_limits<double>::quiet_NaN();
    const ConstantDenoiser bad(nan_field);
    Tensor<double> z0 = sample_initial_latent<double>(sched, shape, r1);
    CHECK_THROWS_AS(heun_sample(bad, z0, cond, sched), numeric_error);
}

TEST_CASE("training noise draws: level distribution, scale, determinism") {
    const NoiseSchedule sched = NoiseSchedule::training_defaults();
    const Shape shape{1, 10, 10};

    // Noise index is uniform over {0..N-1}: chi-squared over 1e5 draws with
    // 19 degrees of freedom; 43.8 is the p = 0.001 cutoff.
    RngStream r(12, StreamKind::test, 36);
    std::vector<std::int64_t> counts(size_t(sched.steps), 0);
    const std::int64_t draws = 100000;
    for (std::int64_t i = 0; i < draws; ++i) {
        const auto tn = sample_training_noise<double>(sched, Shape{1, 1, 1}, r);
        REQUIRE(tn.n >= 0);
        REQUIRE(tn.n < sched.steps);
        REQUIRE(tn.sigma == sched.sigma_at(tn.n));
        ++counts[size_t(tn.n)];
    }
    const double expect = double(draws) / double(sched.steps);
    double chi2 = 0.0;
    for (std::int64_t c : counts) chi2 += (double(c) - expect) * (double(c) - expect) / expect;
    CHECK(chi2 < 43.8);

    // Epsilon sample std tracks sigma_n within 2% on a large tensor.
    RngStream r2(13, StreamKind::test, 37);
    for (int rep = 0; rep < 40; ++rep) {
        const auto tn = sample_training_noise<double>(sched, Shape{1, 64, 64}, r2);
        double sumsq = 0.0;
        for (std::int64_t i = 0; i < tn.eps.numel(); ++i) sumsq += tn.eps[i] * tn.eps[i];
        const double sd = std::sqrt(sumsq / double(tn.eps.numel()));
        CHECK(sd == Catch::Approx(tn.sigma).epsilon(0.05));
    }

    // Same stream id -> identical (n, eps) sequence.
    RngStream a(14, StreamKind::test, 38), b(14, StreamKind::test, 38);
    for (int rep = 0; rep < 10; ++rep) {
        const auto ta = sample_training_noise<double>(sched, shape, a);
        const auto tb = sample_training_noise<double>(sched, shape, b);
        REQUIRE(ta.n == tb.n);
        for (std::int64_t i = 0; i < ta.eps.numel(); ++i) REQUIRE(ta.eps[i] == tb.eps[i]);
    }
}

TEST_CASE("initial latent has the top-of-ladder scale") {
    const NoiseSchedule sched = NoiseSchedule::inference_defaults();
    RngStream r(15, StreamKind::test, 39);
    const Tensor<double> z = sample_initial_latent<double>(sched, Shape{2, 48, 48}, r);
    double sumsq = 0.0;
    for (std::int64_t i = 0; i < z.numel(); ++i) sumsq += z[i] * z[i];
    const double sd = std::sqrt(sumsq / double(z.numel()));
    CHECK(sd == Catch::Approx(80.0).epsilon(0.03));
}
