#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "lamcast/autodiff.hpp"
#include "lamcast/edm.hpp"
#include "lamcast/grid.hpp"

namespace lamcast {

// Closed-form denoiser for Gaussian data N(mu, diag c): the posterior mean
// (c/(c+sigma^2)) y + (sigma^2/(c+sigma^2)) mu, the exact minimizer of the
// denoising loss. Used to verify the sampler against a known distribution.
template <typename T>
class AnalyticGaussianDenoiser : public DenoiserInterface<T> {
public:
    AnalyticGaussianDenoiser(Tensor<T> mu, Tensor<T> var) : mu_(std::move(mu)), var_(std::move(var)) {
        check_same_shape(mu_, var_, "AnalyticGaussianDenoiser");
        for (std::int64_t i = 0; i < var_.numel(); ++i)
            require(var_[i] > T(0), "AnalyticGaussianDenoiser: variance must be positive");
    }

    Tensor<T> denoise(const Tensor<T>& y, double sigma,
                      const ConditioningPair<T>&) const override {
        check_same_shape(y, mu_, "AnalyticGaussianDenoiser::denoise");
        require(sigma >= 0, "AnalyticGaussianDenoiser: sigma must be >= 0");
        Tensor<T> out(y.shape());
        const double s2 = sigma * sigma;
        for (std::int64_t i = 0; i < y.numel(); ++i) {
            const double c = double(var_[i]);
            out[i] = T((c * double(y[i]) + s2 * double(mu_[i])) / (c + s2));
        }
        return out;
    }

private:
    Tensor<T> mu_, var_;
};

// Architecture hyperparameters of the trainable conditional denoiser.
// Serialized into checkpoints and validated on load.
struct DenoiserArch {
    std::int64_t num_vars = 3;           // d_x, also the latent channel count
    std::int64_t interior_channels = 26;  // conditioning channels of I^t (without latent)
    std::int64_t boundary_channels = 29;  // conditioning channels of B^t
    std::int64_t latent_width = 32;       // encoder output width
    std::int64_t level1_width = 32;       // U-Net top level
    std::int64_t level2_width = 64;       // U-Net bottom level
    std::int64_t emb_width = 128;         // noise embedding width
    std::int64_t fourier_freqs = 32;      // sin/cos frequency count
    double fourier_base_period = 16.0;

    void validate() const {
        if (num_vars < 1 || interior_channels < 1 || boundary_channels < 1)
            throw config_error("DenoiserArch: channel counts must be positive");
        if (latent_width < 2 || level1_width < 2 || level2_width < 2 || emb_width < 2)
            throw config_error("DenoiserArch: widths must be at least 2");
        if (latent_width != level1_width)
            throw config_error("DenoiserArch: encoder width must match U-Net top width");
        if (fourier_freqs < 1 || !(fourier_base_period > 1))
            throw config_error("DenoiserArch: bad Fourier embedding parameters");
    }

    std::int64_t groups_for(std::int64_t channels) const {
        std::int64_t g = std::min<std::int64_t>(8, channels);
        while (channels % g != 0) --g;
        return g;
    }

    bool operator==(const DenoiserArch&) const = default;
};

// Named, ordered parameter registry: iteration order is the checkpoint and
// optimizer order, so it must stay fixed.
template <typename T>
struct ParamSet {
    std::vector<std::string> names;
    std::vector<Tensor<T>> values;

    Tensor<T>& add(const std::string& name, Shape shape) {
        names.push_back(name);
        values.emplace_back(shape);
        return values.back();
    }
    size_t size() const { return values.size(); }
    std::int64_t total_count() const {
        std::int64_t n = 0;
        for (const auto& v : values) n += v.numel();
        return n;
    }
    std::int64_t index_of(const std::string& name) const {
        for (size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return std::int64_t(i);
        throw contract_error("ParamSet: unknown parameter '" + name + "'");
    }
};

// Sin/cos features of the noise coordinate at geometrically spaced
// frequencies f_k = (1/base_period)^(k/K): [cos(x f_0..), sin(x f_0..)].
template <typename T>
Tensor<T> fourier_features(double x, std::int64_t K, double base_period) {
    Tensor<T> out(Shape{2 * K, 1});
    for (std::int64_t k = 0; k < K; ++k) {
        const double f = std::pow(1.0 / base_period, double(k) / double(K));
        out[k] = T(std::cos(x * f));
        out[K + k] = T(std::sin(x * f));
    }
    return out;
}

// The trainable raw network F. Pixel-wise interior/boundary encoders with
// conditional layer norms, scatter onto the full grid, a two-level U-Net
// with modulated group norms, and a zero-initialized interior decoder.
// Forward for inference and graph-building for training share one code
// path; inference runs it on a gradient-disabled tape.
template <typename T>
class CondDenoiserNet : public RawNet<T> {
public:
    CondDenoiserNet(DenoiserArch arch, std::shared_ptr<RegionMask> mask)
        : arch_(arch), mask_(std::move(mask)) {
        arch_.validate();
        register_params();
    }

    const DenoiserArch& arch() const { return arch_; }
    ParamSet<T>& params() { return params_; }
    const ParamSet<T>& params() const { return params_; }
    std::int64_t param_count() const { return params_.total_count(); }

    // Zero-mean uniform init with variance 1/fan_in for dense/conv weights;
    // the decoder and all modulation heads start at zero so the initial raw
    // network is the zero function.
    void init_params(RngStream& rng) {
        for (size_t i = 0; i < params_.size(); ++i) {
            Tensor<T>& p = params_.values[i];
            const std::string& name = params_.names[i];
            const bool zero_init = name.rfind("dec.", 0) == 0 ||
                                   name.find(".mod_") != std::string::npos ||
                                   name.ends_with(".b");
            if (zero_init) {
                std::fill(p.values().begin(), p.values().end(), T(0));
                continue;
            }
            std::int64_t fan_in = p.dim(1);
            if (p.rank() == 4) fan_in = p.dim(1) * p.dim(2) * p.dim(3);
            const double bound = std::sqrt(3.0 / double(fan_in));
            for (std::int64_t j = 0; j < p.numel(); ++j)
                p[j] = T(bound * (2.0 * rng.uniform() - 1.0));
        }
    }

    // Put every parameter on the tape once; the returned ids follow the
    // ParamSet order and can be shared across several forward graphs.
    std::vector<VarId> push_params(Tape<T>& tape) const {
        std::vector<VarId> ids;
        ids.reserve(params_.size());
        for (const auto& v : params_.values) ids.push_back(tape.parameter(v));
        return ids;
    }

    // Record one forward computation on the given tape.
    VarId forward_on(Tape<T>& tape, const std::vector<VarId>& param_ids,
                     const Tensor<T>& scaled_z, double c_noise,
                     const ConditioningPair<T>& cond) const {
        validate_inputs(scaled_z, cond);
        require(param_ids.size() == params_.size(), "CondDenoiserNet: parameter id count");
        auto P = [&](const char* name) { return param_ids[size_t(params_.index_of(name))]; };

        const std::int64_t mi = mask_->num_interior();
        const std::int64_t H = mask_->grid_height(), W = mask_->grid_width();

        // Noise embedding: Fourier features -> two SiLU dense layers.
        VarId emb = tape.constant(
            fourier_features<T>(c_noise, arch_.fourier_freqs, arch_.fourier_base_period));
        emb = ops::silu(tape, ops::linear(tape, emb, P("emb.l1.w"), P("emb.l1.b")));
        emb = ops::silu(tape, ops::linear(tape, emb, P("emb.l2.w"), P("emb.l2.b")));

        // scale = 1 + head_s(emb), shift = head_b(emb); heads start at zero
        // so every normalization is initially unmodulated.
        auto modulation = [&](const std::string& site) {
            VarId s = ops::linear(tape, emb, P((site + ".mod_scale.w").c_str()),
                                  P((site + ".mod_scale.b").c_str()));
            s = ops::affine_scalar(tape, s, T(1), T(1));
            VarId b = ops::linear(tape, emb, P((site + ".mod_shift.w").c_str()),
                                  P((site + ".mod_shift.b").c_str()));
            return std::pair<VarId, VarId>(s, b);
        };

        // Pixel-wise encoders (one hidden layer, conditional layer norm).
        auto encode = [&](VarId input, const std::string& site) {
            VarId h = ops::linear(tape, input, P((site + ".l1.w").c_str()),
                                  P((site + ".l1.b").c_str()));
            auto [s, b] = modulation(site);
            h = ops::silu(tape, ops::layer_norm_modulated(tape, h, s, b));
            return ops::linear(tape, h, P((site + ".l2.w").c_str()), P((site + ".l2.b").c_str()));
        };

        VarId z_cols = ops::reshape(tape, tape.constant(scaled_z), Shape{arch_.num_vars, mi});
        VarId int_in = ops::concat_channels(tape, tape.constant(cond.interior()), z_cols);
        VarId int_feat = checked(tape, encode(int_in, "enc_int"), "interior encoder");
        VarId bnd_feat = checked(tape, encode(tape.constant(cond.boundary()), "enc_bnd"),
                                 "boundary encoder");

        VarId grid = ops::scatter_cells(tape, int_feat, mask_->interior_cells(), bnd_feat,
                                        mask_->boundary_cells(), H, W);

        // U-Net trunk: conv -> modulated group norm -> SiLU blocks.
        auto block = [&](VarId x, const std::string& site, std::int64_t out_ch) {
            VarId y = ops::conv2d_3x3(tape, x, P((site + ".conv.w").c_str()),
                                      P((site + ".conv.b").c_str()));
            auto [s, b] = modulation(site);
            return ops::silu(
                tape, ops::group_norm_modulated(tape, y, arch_.groups_for(out_ch), s, b));
        };

        VarId l1 = block(grid, "unet.enc1a", arch_.level1_width);
        l1 = checked(tape, block(l1, "unet.enc1b", arch_.level1_width), "U-Net level 1");
        VarId l2 = ops::downsample_avg2(tape, l1);
        l2 = block(l2, "unet.enc2a", arch_.level2_width);
        l2 = checked(tape, block(l2, "unet.enc2b", arch_.level2_width), "U-Net level 2");
        VarId up = ops::concat_channels(tape, ops::upsample_nearest2(tape, l2), l1);
        VarId d1 = block(up, "unet.dec1a", arch_.level1_width);
        d1 = checked(tape, block(d1, "unet.dec1b", arch_.level1_width), "U-Net decoder");

        // Interior-only decoding back to residual channels.
        VarId gathered = ops::gather_cells(tape, d1, mask_->interior_cells());
        VarId out_cols = ops::linear(tape, gathered, P("dec.w"), P("dec.b"));
        return ops::reshape(tape, out_cols,
                            Shape{arch_.num_vars, mask_->interior_height(),
                                  mask_->interior_width()});
    }

    Tensor<T> raw_forward(const Tensor<T>& scaled_z, double c_noise,
                          const ConditioningPair<T>& cond) const override {
        Tape<T> tape(/*grad_enabled=*/false);
        return tape.value(forward_on(tape, push_params(tape), scaled_z, c_noise, cond));
    }

    const std::shared_ptr<RegionMask>& mask() const { return mask_; }

private:
    VarId checked(Tape<T>& tape, VarId id, const char* layer) const {
        if (!tape.value(id).all_finite())
            throw numeric_error(std::string("CondDenoiserNet: non-finite activation in ") +
                                layer);
        return id;
    }

    void validate_inputs(const Tensor<T>& scaled_z, const ConditioningPair<T>& cond) const {
        if (cond.interior_channels() != arch_.interior_channels)
            throw config_error("CondDenoiserNet: interior input has " +
                               std::to_string(cond.interior_channels()) + " channels, expected " +
                               std::to_string(arch_.interior_channels));
        if (cond.boundary_channels() != arch_.boundary_channels)
            throw config_error("CondDenoiserNet: boundary input has " +
                               std::to_string(cond.boundary_channels()) + " channels, expected " +
                               std::to_string(arch_.boundary_channels));
        const Shape want{arch_.num_vars, mask_->interior_height(), mask_->interior_width()};
        if (scaled_z.shape() != want)
            throw contract_error("CondDenoiserNet: latent shape " + scaled_z.shape().str() +
                                 ", expected " + want.str());
    }

    void add_dense(const std::string& site, std::int64_t out_ch, std::int64_t in_ch) {
        params_.add(site + ".w", Shape{out_ch, in_ch});
        params_.add(site + ".b", Shape{out_ch});
    }
    void add_modulated(const std::string& site, std::int64_t channels) {
        add_dense(site + ".mod_scale", channels, arch_.emb_width);
        add_dense(site + ".mod_shift", channels, arch_.emb_width);
    }
    void add_conv_block(const std::string& site, std::int64_t out_ch, std::int64_t in_ch) {
        params_.add(site + ".conv.w", Shape{out_ch, in_ch, 3, 3});
        params_.add(site + ".conv.b", Shape{out_ch});
        add_modulated(site, out_ch);
    }

    void register_params() {
        const std::int64_t L = arch_.latent_width, E = arch_.emb_width;
        add_dense("emb.l1", E, 2 * arch_.fourier_freqs);
        add_dense("emb.l2", E, E);
        add_dense("enc_int.l1", L, arch_.interior_channels + arch_.num_vars);
        add_modulated("enc_int", L);
        add_dense("enc_int.l2", L, L);
        add_dense("enc_bnd.l1", L, arch_.boundary_channels);
        add_modulated("enc_bnd", L);
        add_dense("enc_bnd.l2", L, L);
        add_conv_block("unet.enc1a", arch_.level1_width, L);
        add_conv_block("unet.enc1b", arch_.level1_width, arch_.level1_width);
        add_conv_block("unet.enc2a", arch_.level2_width, arch_.level1_width);
        add_conv_block("unet.enc2b", arch_.level2_width, arch_.level2_width);
        add_conv_block("unet.dec1a", arch_.level1_width,
                       arch_.level2_width + arch_.level1_width);
        add_conv_block("unet.dec1b", arch_.level1_width, arch_.level1_width);
        add_dense("dec", arch_.num_vars, arch_.latent_width);
    }

    DenoiserArch arch_;
    std::shared_ptr<RegionMask> mask_;
    ParamSet<T> params_;
};

// Expected conditioning channel counts for a variable catalogue.
inline DenoiserArch default_arch(std::int64_t d_x, std::int64_t d_f, std::int64_t d_s) {
    DenoiserArch a;
    a.num_vars = d_x;
    a.interior_channels = 2 * d_x + 3 * d_f + d_s;
    a.boundary_channels = 3 * d_x + 3 * d_f + d_s;
    return a;
}

}  // namespace lamcast
