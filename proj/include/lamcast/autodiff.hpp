#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#define EIGEN_DONT_PARALLELIZE
#include <Eigen/Core>

#include "lamcast/rng.hpp"
#include "lamcast/tensor.hpp"

namespace lamcast {

// Reverse-mode differentiation over a fixed op set: dense maps, 3x3
// convolution, SiLU, modulated normalizations, 2x down/up-sampling, channel
// concatenation, cell gather/scatter and weighted-square reduction. The
// graph is a linear tape; backward walks it in reverse, so gradient
// accumulation order is fixed and results are bit-reproducible.

using VarId = std::int32_t;

template <typename T>
class Tape {
public:
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    bool grad_enabled() const { return grad_enabled_; }

    // Leaf that never receives a gradient.
    VarId constant(Tensor<T> value) { return push(std::move(value), false, nullptr); }

    // Leaf that accumulates a gradient during backward (network parameters).
    VarId parameter(Tensor<T> value) {
        return push(std::move(value), grad_enabled_, nullptr);
    }

    const Tensor<T>& value(VarId id) const { return nodes_[size_t(id)].value; }

    // Gradient of the last backward() target w.r.t. this leaf/intermediate.
    const Tensor<T>& grad(VarId id) const {
        const Node& n = nodes_[size_t(id)];
        require(n.grad.numel() > 0, "grad: no gradient recorded for this variable");
        return n.grad;
    }

    // Gradient if recorded, else zeros (variable unused by the output).
    Tensor<T> grad_or_zero(VarId id) const {
        const Node& n = nodes_[size_t(id)];
        return n.grad.numel() > 0 ? n.grad : Tensor<T>::zeros(n.value.shape());
    }

    // Reverse sweep from a scalar output. Each node's adjoint is fully
    // accumulated before its own backward fires (reverse topological order
    // of a linear tape).
    void backward(VarId output) {
        require(grad_enabled_, "backward: tape was built with gradients disabled");
        Node& out = nodes_[size_t(output)];
        require(out.value.numel() == 1, "backward: output must be scalar, got shape " +
                                            out.value.shape().str());
        for (Node& n : nodes_) n.grad = Tensor<T>();
        out.grad = Tensor<T>::full(out.value.shape(), T(1));
        for (std::int64_t i = output; i >= 0; --i) {
            Node& n = nodes_[size_t(i)];
            if (!n.requires_grad || n.grad.numel() == 0 || !n.backward_fn) continue;
            n.backward_fn(*this, VarId(i));
        }
    }

    // --- used by op implementations ---

    VarId push(Tensor<T> value, bool requires_grad,
               std::function<void(Tape&, VarId)> backward_fn) {
        nodes_.push_back(Node{std::move(value), Tensor<T>(), std::move(backward_fn),
                              requires_grad && grad_enabled_});
        return VarId(nodes_.size() - 1);
    }

    bool requires_grad(VarId id) const { return nodes_[size_t(id)].requires_grad; }

    // Accumulation buffer, zero-initialized on first touch.
    Tensor<T>& grad_buf(VarId id) {
        Node& n = nodes_[size_t(id)];
        if (n.grad.numel() == 0) n.grad = Tensor<T>::zeros(n.value.shape());
        return n.grad;
    }

    size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        std::function<void(Tape&, VarId)> backward_fn;
        bool requires_grad = false;
    };
    std::vector<Node> nodes_;
    bool grad_enabled_;
};

namespace ops {

namespace detail {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Map = Eigen::Map<EMat<T>>;
template <typename T>
using CMap = Eigen::Map<const EMat<T>>;

inline constexpr double kNormEps = 1e-8;

// Zero-padded 3x3 patch matrix: [Cin*9, H*W]. Row (ci*3+ky)*3+kx holds the
// input shifted by (ky-1, kx-1).
template <typename T>
Tensor<T> im2col3x3(const Tensor<T>& x) {
    const std::int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    Tensor<T> col(Shape{C * 9, H * W});
    for (std::int64_t ci = 0; ci < C; ++ci) {
        for (int ky = 0; ky < 3; ++ky) {
            const int dy = ky - 1;
            for (int kx = 0; kx < 3; ++kx) {
                const int dx = kx - 1;
                T* dst_row = col.data() + ((ci * 3 + ky) * 3 + kx) * H * W;
                const std::int64_t x0 = std::max<std::int64_t>(0, -dx);
                const std::int64_t x1 = W - std::max<std::int64_t>(0, dx);
                for (std::int64_t y = 0; y < H; ++y) {
                    const std::int64_t sy = y + dy;
                    if (sy < 0 || sy >= H || x1 <= x0) continue;
                    const T* src = &x.at(ci, sy, x0 + dx);
                    std::memcpy(dst_row + y * W + x0, src, size_t(x1 - x0) * sizeof(T));
                }
            }
        }
    }
    return col;
}

// Adjoint of im2col3x3: scatter-add patch rows back onto the input grid.
template <typename T>
void col2im3x3_add(const Tensor<T>& col, Tensor<T>& dx) {
    const std::int64_t C = dx.dim(0), H = dx.dim(1), W = dx.dim(2);
    for (std::int64_t ci = 0; ci < C; ++ci) {
        for (int ky = 0; ky < 3; ++ky) {
            const int dy = ky - 1;
            for (int kx = 0; kx < 3; ++kx) {
                const int dx_off = kx - 1;
                const T* src_row = col.data() + ((ci * 3 + ky) * 3 + kx) * H * W;
                const std::int64_t x0 = std::max<std::int64_t>(0, -dx_off);
                const std::int64_t x1 = W - std::max<std::int64_t>(0, dx_off);
                for (std::int64_t y = 0; y < H; ++y) {
                    const std::int64_t sy = y + dy;
                    if (sy < 0 || sy >= H || x1 <= x0) continue;
                    T* dst = &dx.at(ci, sy, x0 + dx_off);
                    const T* src = src_row + y * W + x0;
                    for (std::int64_t i = 0; i < x1 - x0; ++i) dst[i] += src[i];
                }
            }
        }
    }
}

template <typename T>
inline T sigmoid(T v) {
    return T(1) / (T(1) + std::exp(-v));
}

}  // namespace detail

// y = a * x + b, scalars applied elementwise.
template <typename T>
VarId affine_scalar(Tape<T>& tape, VarId x, T a, T b) {
    const Tensor<T>& xv = tape.value(x);
    Tensor<T> y(xv.shape());
    for (std::int64_t i = 0; i < xv.numel(); ++i) y[i] = a * xv[i] + b;
    return tape.push(std::move(y), tape.requires_grad(x), [x, a](Tape<T>& t, VarId self) {
        const Tensor<T>& dy = t.grad(self);
        Tensor<T>& dx = t.grad_buf(x);
        for (std::int64_t i = 0; i < dy.numel(); ++i) dx[i] += a * dy[i];
    });
}

template <typename T>
VarId add(Tape<T>& tape, VarId a, VarId b) {
    const Tensor<T>&av = tape.value(a), &bv = tape.value(b);
    check_same_shape(av, bv, "add");
    Tensor<T> y(av.shape());
    for (std::int64_t i = 0; i < av.numel(); ++i) y[i] = av[i] + bv[i];
    const bool rg = tape.requires_grad(a) || tape.requires_grad(b);
    return tape.push(std::move(y), rg, [a, b](Tape<T>& t, VarId self) {
        const Tensor<T>& dy = t.grad(self);
        if (t.requires_grad(a)) {
            Tensor<T>& da = t.grad_buf(a);
            for (std::int64_t i = 0; i < dy.numel(); ++i) da[i] += dy[i];
        }
        if (t.requires_grad(b)) {
            Tensor<T>& db = t.grad_buf(b);
            for (std::int64_t i = 0; i < dy.numel(); ++i) db[i] += dy[i];
        }
    });
}

// y = scale[c] * x + offset, with per-channel constant scale and a constant
// offset tensor. Used for residual decoding inside the loss graph.
template <typename T>
VarId scale_channels_add(Tape<T>& tape, VarId x, std::vector<T> scale,
                         Tensor<T> offset) {
    const Tensor<T>& xv = tape.value(x);
    check_same_shape(xv, offset, "scale_channels_add");
    const std::int64_t C = xv.dim(0), M = xv.numel() / C;
    require(std::int64_t(scale.size()) == C, "scale_channels_add: scale size mismatch");
    Tensor<T> y(xv.shape());
    for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t m = 0; m < M; ++m)
            y[c * M + m] = scale[size_t(c)] * xv[c * M + m] + offset[c * M + m];
    return tape.push(std::move(y), tape.requires_grad(x),
                     [x, scale = std::move(scale), C, M](Tape<T>& t, VarId self) {
                         const Tensor<T>& dy = t.grad(self);
                         Tensor<T>& dx = t.grad_buf(x);
                         for (std::int64_t c = 0; c < C; ++c)
                             for (std::int64_t m = 0; m < M; ++m)
                                 dx[c * M + m] += scale[size_t(c)] * dy[c * M + m];
                     });
}

template <typename T>
VarId reshape(Tape<T>& tape, VarId x, Shape shape) {
    Tensor<T> y = tape.value(x).reshaped(shape);
    return tape.push(std::move(y), tape.requires_grad(x), [x](Tape<T>& t, VarId self) {
        const Tensor<T>& dy = t.grad(self);
        Tensor<T>& dx = t.grad_buf(x);
        for (std::int64_t i = 0; i < dy.numel(); ++i) dx[i] += dy[i];
    });
}

// y = W x + b with x:[Cin, M], W:[Cout, Cin], b:[Cout].
template <typename T>
VarId linear(Tape<T>& tape, VarId x, VarId w, VarId b) {
    const Tensor<T>&xv = tape.value(x), &wv = tape.value(w), &bv = tape.value(b);
    require(xv.rank() == 2, "linear: input must be rank 2, got " + xv.shape().str());
    require(wv.rank() == 2, "linear: weight must be rank 2");
    require(bv.rank() == 1, "linear: bias must be rank 1");
    const std::int64_t Cin = xv.dim(0), M = xv.dim(1), Cout = wv.dim(0);
    require(wv.dim(1) == Cin, "linear: weight columns " + std::to_string(wv.dim(1)) +
                                  " != input channels " + std::to_string(Cin));
    require(bv.dim(0) == Cout, "linear: bias size mismatch");

    Tensor<T> y(Shape{Cout, M});
    {
        detail::CMap<T> X(xv.data(), Cin, M), W(wv.data(), Cout, Cin);
        detail::Map<T> Y(y.data(), Cout, M);
        Y.noalias() = W * X;
    }
    for (std::int64_t co = 0; co < Cout; ++co)
        for (std::int64_t m = 0; m < M; ++m) y[co * M + m] += bv[co];

    const bool rg = tape.requires_grad(x) || tape.requires_grad(w) || tape.requires_grad(b);
    return tape.push(std::move(y), rg, [x, w, b, Cin, M, Cout](Tape<T>& t, VarId self) {
        const Tensor<T>& dy = t.grad(self);
        detail::CMap<T> dY(dy.data(), Cout, M);
        if (t.requires_grad(w)) {
            detail::CMap<T> X(t.value(x).data(), Cin, M);
            detail::Map<T> dW(t.grad_buf(w).data(), Cout, Cin);
            dW.noalias() += dY * X.transpose();
        }
        if (t.requires_grad(b)) {
            Tensor<T>& db = t.grad_buf(b);
            for (std::int64_t co = 0; co < Cout; ++co)
                for (std::int64_t m = 0; m < M; ++m) db[co] += dy[co * M + m];
        }
        if (t.requires_grad(x)) {
            detail::CMap<T> W(t.value(w).data(), Cout, Cin);
            detail::Map<T> dX(t.grad_buf(x).data(), Cin, M);
            dX.noalias() += W.transpose() * dY;
        }
    });
}

// 3x3 convolution, zero padding 1, stride 1. x:[Cin,H,W], k:[Cout,Cin,3,3],
// b:[Cout] -> [Cout,H,W].
template <typename T>
VarId conv2d_3x3(Tape<T>& tape, VarId x, VarId k, VarId b) {
    const Tensor<T>&xv = tape.value(x), &kv = tape.value(k), &bv = tape.value(b);
    require(xv.rank() == 3, "conv2d_3x3: input must be rank 3, got " + xv.shape().str());
    require(kv.rank() == 4 && kv.dim(2) == 3 && kv.dim(3) == 3,
            "conv2d_3x3: kernel must be [Cout,Cin,3,3]");
    const std::int64_t Cin = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
    const std::int64_t Cout = kv.dim(0);
    require(kv.dim(1) == Cin, "conv2d_3x3: kernel Cin " + std::to_string(kv.dim(1)) +
                                  " != input channels " + std::to_string(Cin));
    require(bv.rank() == 1 && bv.dim(0) == Cout, "conv2d_3x3: bias size mismatch");

    auto col = std::make_shared<Tensor<T>>(detail::im2col3x3(xv));
    const std::int64_t HW = H * W;
    Tensor<T> y(Shape{Cout, H, W});
    {
        detail::CMap<T> K(kv.data(), Cout, Cin * 9), C(col->data(), Cin * 9, HW);
        detail::Map<T> Y(y.data(), Cout, HW);
        Y.noalias() = K * C;
    }
    for (std::int64_t co = 0; co < Cout; ++co)
        for (std::int64_t i = 0; i < HW; ++i) y[co * HW + i] += bv[co];

    const bool rg = tape.requires_grad(x) || tape.requires_grad(k) || tape.requires_grad(b);
    if (!tape.grad_enabled() || !rg) return tape.push(std::move(y), false, nullptr);

    return tape.push(std::move(y), true,
                     [x, k, b, col, Cin, Cout, H, W, HW](Tape<T>& t, VarId self) {
        const Tensor<T>& dy = t.grad(self);
        detail::CMap<T> dY(dy.data(), Cout, HW);
        if (t.requires_grad(k)) {
            detail::CMap<T> C(col->data(), Cin * 9, HW);
            detail::Map<T> dK(t.grad_buf(k).data(), Cout, Cin * 9);
            dK.noalias() += dY * C.transpose();
        }
        if (t.requires_grad(b)) {
            Tensor<T>& db = t.grad_buf(b);
            for (std::int64_t co = 0; co < Cout; ++co)
                for (std::int64_t i = 0; i < HW; ++i) db[co] += dy[co * HW + i];
        }
        if (t.requires_grad(x)) {
            Tensor<T> dcol(Shape{Cin * 9, HW});
            {
                detail::CMap<T> K(t.value(k).data(), Cout, Cin * 9);
                detail::Map<T> dC(dcol.data(), Cin * 9, HW);
                dC.noalias() = K.transpose() * dY;
            }
            detail::col2im3x3_add(dcol, t.grad_buf(x));
        }
    });
}

template <typename T>
VarId silu(Tape<T>& tape, VarId x) {
    const Tensor<T>& xv = tape.value(x);
    Tensor<T> y(xv.shape());
    for (std::int64_t i = 0; i < xv.numel(); ++i) y[i] = xv[i] * detail::sigmoid(xv[i]);
    return tape.push(std::move(y), tape.requires_grad(x), [x](Tape<T>& t, VarId self) {
        const Tensor<T>& dy = t.grad(self);
        const Tensor<T>& xv = t.value(x);
        Tensor<T>& dx = t.grad_buf(x);
        for (std::int64_t i = 0; i < dy.numel(); ++i) {
            const T s = detail::sigmoid(xv[i]);
            dx[i] += dy[i] * s * (T(1) + xv[i] * (T(1) - s));
        }
    });
}

// Per-position normalization over channels followed by per-channel
// modulation: y[c,m] = scale[c] * (x[c,m] - mu_m) / sd_m + shift[c].
// scale and shift are tape variables (gradients flow to modulation heads).
template <typename T>
VarId layer_norm_modulated(Tape<T>& tape, VarId x, VarId scale, VarId shift) {
    const Tensor<T>&xv = tape.value(x), &sv = tape.value(scale), &bv = tape.value(shift);
    require(xv.rank() >= 2, "layer_norm_modulated: input must have channel + position axes");
    const std::int64_t C = xv.dim(0), M = xv.numel() / C;
    require(sv.numel() == C && bv.numel() == C,
            "layer_norm_modulated: scale/shift must have one entry per channel");

    auto xhat = std::make_shared<Tensor<T>>(xv.shape());
    auto inv_sd = std::make_shared<Tensor<T>>(Shape{M});
    Tensor<T> y(xv.shape());
    for (std::int64_t m = 0; m < M; ++m) {
        T mean = 0;
        for (std::int64_t c = 0; c < C; ++c) mean += xv[c * M + m];
        mean /= T(C);
        T var = 0;
        for (std::int64_t c = 0; c < C; ++c) {
            const T d = xv[c * M + m] - mean;
            var += d * d;
        }
        var /= T(C);
        const T isd = T(1) / std::sqrt(var + T(detail::kNormEps));
        (*inv_sd)[m] = isd;
        for (std::int64_t c = 0; c < C; ++c) {
            const T h = (xv[c * M + m] - mean) * isd;
            (*xhat)[c * M + m] = h;
            y[c * M + m] = sv[c] * h + bv[c];
        }
    }

    const bool rg =
        tape.requires_grad(x) || tape.requires_grad(scale) || tape.requires_grad(shift);
    if (!tape.grad_enabled() || !rg) return tape.push(std::move(y), false, nullptr);

    return tape.push(std::move(y), true,
                     [x, scale, shift, xhat, inv_sd, C, M](Tape<T>& t, VarId self) {
        const Tensor<T>& dy = t.grad(self);
        const Tensor<T>& sv = t.value(scale);
        if (t.requires_grad(scale)) {
            Tensor<T>& ds = t.grad_buf(scale);
            for (std::int64_t c = 0; c < C; ++c)
                for (std::int64_t m = 0; m < M; ++m)
                    ds[c] += dy[c * M + m] * (*xhat)[c * M + m];
        }
        if (t.requires_grad(shift)) {
            Tensor<T>& db = t.grad_buf(shift);
            for (std::int64_t c = 0; c < C; ++c)
                for (std::int64_t m = 0; m < M; ++m) db[c] += dy[c * M + m];
        }
        if (t.requires_grad(x)) {
            Tensor<T>& dx = t.grad_buf(x);
            for (std::int64_t m = 0; m < M; ++m) {
                T g_mean = 0, gh_mean = 0;
                for (std::int64_t c = 0; c < C; ++c) {
                    const T g = dy[c * M + m] * sv[c];
                    g_mean += g;
                    gh_mean += g * (*xhat)[c * M + m];
                }
                g_mean /= T(C);
                gh_mean /= T(C);
                for (std::int64_t c = 0; c < C; ++c) {
                    const T g = dy[c * M + m] * sv[c];
                    dx[c * M + m] +=
                        (*inv_sd)[m] * (g - g_mean - (*xhat)[c * M + m] * gh_mean);
                }
            }
        }
    });
}

// Group normalization over (channels-in-group x positions) with per-channel
// modulation. groups must divide the channel count.
template <typename T>
VarId group_norm_modulated(Tape<T>& tape, VarId x, std::int64_t groups, VarId scale,
                           VarId shift) {
    const Tensor<T>&xv = tape.value(x), &sv = tape.value(scale), &bv = tape.value(shift);
    require(xv.rank() >= 2, "group_norm_modulated: input must have channel + position axes");
    const std::int64_t C = xv.dim(0), M = xv.numel() / C;
    require(groups >= 1 && C % groups == 0,
            "group_norm_modulated: groups " + std::to_string(groups) +
                " must divide channels " + std::to_string(C));
    require(sv.numel() == C && bv.numel() == C,
            "group_norm_modulated: scale/shift must have one entry per channel");
    const std::int64_t cg = C / groups, gsize = cg * M;

    auto xhat = std::make_shared<Tensor<T>>(xv.shape());
    auto inv_sd = std::make_shared<Tensor<T>>(Shape{groups});
    Tensor<T> y(xv.shape());
    for (std::int64_t g = 0; g < groups; ++g) {
        const std::int64_t base = g * cg * M;
        T mean = 0;
        for (std::int64_t i = 0; i < gsize; ++i) mean += xv[base + i];
        mean /= T(gsize);
        T var = 0;
        for (std::int64_t i = 0; i < gsize; ++i) {
            const T d = xv[base + i] - mean;
            var += d * d;
        }
        var /= T(gsize);
        const T isd = T(1) / std::sqrt(var + T(detail::kNormEps));
        (*inv_sd)[g] = isd;
        for (std::int64_t c = g * cg; c < (g + 1) * cg; ++c)
            for (std::int64_t m = 0; m < M; ++m) {
                const T h = (xv[c * M + m] - mean) * isd;
                (*xhat)[c * M + m] = h;
                y[c * M + m] = sv[c] * h + bv[c];
            }
    }

    const bool rg =
        tape.requires_grad(x) || tape.requires_grad(scale) || tape.requires_grad(shift);
    if (!tape.grad_enabled() || !rg) return tape.push(std::move(y), false, nullptr);

    return tape.push(std::move(y), true,
                     [x, scale, shift, xhat, inv_sd, groups, C, M, cg,
                      gsize](Tape<T>& t, VarId self) {
        const Tensor<T>& dy = t.grad(self);
        const Tensor<T>& sv = t.value(scale);
        if (t.requires_grad(scale)) {
            Tensor<T>& ds = t.grad_buf(scale);
            for (std::int64_t c = 0; c < C; ++c)
                for (std::int64_t m = 0; m < M; ++m)
                    ds[c] += dy[c * M + m] * (*xhat)[c * M + m];
        }
        if (t.requires_grad(shift)) {
            Tensor<T>& db = t.grad_buf(shift);
            for (std::int64_t c = 0; c < C; ++c)
                for (std::int64_t m = 0; m < M; ++m) db[c] += dy[c * M + m];
        }
        if (t.requires_grad(x)) {
            Tensor<T>& dx = t.grad_buf(x);
            for (std::int64_t g = 0; g < groups; ++g) {
                T g_mean = 0, gh_mean = 0;
                for (std::int64_t c = g * cg; c < (g + 1) * cg; ++c)
                    for (std::int64_t m = 0; m < M; ++m) {
                        const T gv = dy[c * M + m] * sv[c];
                        g_mean += gv;
                        gh_mean += gv * (*xhat)[c * M + m];
                    }
                g_mean /= T(gsize);
                gh_mean /= T(gsize);
                for (std::int64_t c = g * cg; c < (g + 1) * cg; ++c)
                    for (std::int64_t m = 0; m < M; ++m) {
                        const T gv = dy[c * M + m] * sv[c];
                        dx[c * M + m] +=
                            (*inv_sd)[g] * (gv - g_mean - (*xhat)[c * M + m] * gh_mean);
                    }
            }
        }
    });
}

// 2x average pooling; requires even spatial dims.
template <typename T>
VarId downsample_avg2(Tape<T>& tape, VarId x) {
    const Tensor<T>& xv = tape.value(x);
    require(xv.rank() == 3, "downsample_avg2: input must be [C,H,W]");
    const std::int64_t C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
    require(H % 2 == 0 && W % 2 == 0, "downsample_avg2: spatial dims must be even, got " +
                                          xv.shape().str());
    Tensor<T> y(Shape{C, H / 2, W / 2});
    for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t i = 0; i < H / 2; ++i)
            for (std::int64_t j = 0; j < W / 2; ++j)
                y.at(c, i, j) = (xv.at(c, 2 * i, 2 * j) + xv.at(c, 2 * i, 2 * j + 1) +
                                 xv.at(c, 2 * i + 1, 2 * j) + xv.at(c, 2 * i + 1, 2 * j + 1)) /
                                T(4);
    return tape.push(std::move(y), tape.requires_grad(x), [x, C, H, W](Tape<T>& t, VarId self) {
        const Tensor<T>& dy = t.grad(self);
        Tensor<T>& dx = t.grad_buf(x);
        for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t i = 0; i < H / 2; ++i)
                for (std::int64_t j = 0; j < W / 2; ++j) {
                    const T g = dy.at(c, i, j) / T(4);
                    dx.at(c, 2 * i, 2 * j) += g;
                    dx.at(c, 2 * i, 2 * j + 1) += g;
                    dx.at(c, 2 * i + 1, 2 * j) += g;
                    dx.at(c, 2 * i + 1, 2 * j + 1) += g;
                }
    });
}

// 2x nearest-neighbour upsampling.
template <typename T>
VarId upsample_nearest2(Tape<T>& tape, VarId x) {
    const Tensor<T>& xv = tape.value(x);
    require(xv.rank() == 3, "upsample_nearest2: input must be [C,H,W]");
    const std::int64_t C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
    Tensor<T> y(Shape{C, H * 2, W * 2});
    for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t i = 0; i < H; ++i)
            for (std::int64_t j = 0; j < W; ++j) {
                const T v = xv.at(c, i, j);
                y.at(c, 2 * i, 2 * j) = v;
                y.at(c, 2 * i, 2 * j + 1) = v;
                y.at(c, 2 * i + 1, 2 * j) = v;
                y.at(c, 2 * i + 1, 2 * j + 1) = v;
            }
    return tape.push(std::move(y), tape.requires_grad(x), [x, C, H, W](Tape<T>& t, VarId self) {
        const Tensor<T>& dy = t.grad(self);
        Tensor<T>& dx = t.grad_buf(x);
        for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t i = 0; i < H; ++i)
                for (std::int64_t j = 0; j < W; ++j)
                    dx.at(c, i, j) += dy.at(c, 2 * i, 2 * j) + dy.at(c, 2 * i, 2 * j + 1) +
                                      dy.at(c, 2 * i + 1, 2 * j) + dy.at(c, 2 * i + 1, 2 * j + 1);
    });
}

// Concatenate along the channel axis; trailing axes must match.
template <typename T>
VarId concat_channels(Tape<T>& tape, VarId a, VarId b) {
    const Tensor<T>&av = tape.value(a), &bv = tape.value(b);
    require(av.rank() == bv.rank() && av.rank() >= 2, "concat_channels: rank mismatch");
    for (int i = 1; i < av.rank(); ++i)
        require(av.dim(i) == bv.dim(i), "concat_channels: trailing dims mismatch " +
                                            av.shape().str() + " vs " + bv.shape().str());
    const std::int64_t Ca = av.dim(0), Cb = bv.dim(0), M = av.numel() / Ca;
    Shape s = av.shape();
    s.dims[0] = Ca + Cb;
    Tensor<T> y(s);
    std::memcpy(y.data(), av.data(), size_t(av.numel()) * sizeof(T));
    std::memcpy(y.data() + av.numel(), bv.data(), size_t(bv.numel()) * sizeof(T));
    const bool rg = tape.requires_grad(a) || tape.requires_grad(b);
    return tape.push(std::move(y), rg, [a, b, Ca, Cb, M](Tape<T>& t, VarId self) {
        const Tensor<T>& dy = t.grad(self);
        if (t.requires_grad(a)) {
            Tensor<T>& da = t.grad_buf(a);
            for (std::int64_t i = 0; i < Ca * M; ++i) da[i] += dy[i];
        }
        if (t.requires_grad(b)) {
            Tensor<T>& db = t.grad_buf(b);
            for (std::int64_t i = 0; i < Cb * M; ++i) db[i] += dy[Ca * M + i];
        }
    });
}

// Gather flattened spatial cells: x:[C,H,W], cells into [C, |cells|].
template <typename T>
VarId gather_cells(Tape<T>& tape, VarId x, std::shared_ptr<const std::vector<std::int64_t>> cells) {
    const Tensor<T>& xv = tape.value(x);
    require(xv.rank() == 3, "gather_cells: input must be [C,H,W]");
    const std::int64_t C = xv.dim(0), HW = xv.dim(1) * xv.dim(2);
    const std::int64_t M = std::int64_t(cells->size());
    Tensor<T> y(Shape{C, M});
    for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t m = 0; m < M; ++m) y[c * M + m] = xv[c * HW + (*cells)[size_t(m)]];
    return tape.push(std::move(y), tape.requires_grad(x),
                     [x, cells, C, HW, M](Tape<T>& t, VarId self) {
                         const Tensor<T>& dy = t.grad(self);
                         Tensor<T>& dx = t.grad_buf(x);
                         for (std::int64_t c = 0; c < C; ++c)
                             for (std::int64_t m = 0; m < M; ++m)
                                 dx[c * HW + (*cells)[size_t(m)]] += dy[c * M + m];
                     });
}

// Scatter two disjoint cell sets onto a full [C,H,W] grid. The two index
// lists must partition the grid.
template <typename T>
VarId scatter_cells(Tape<T>& tape, VarId a, std::shared_ptr<const std::vector<std::int64_t>> cells_a,
                    VarId b, std::shared_ptr<const std::vector<std::int64_t>> cells_b,
                    std::int64_t H, std::int64_t W) {
    const Tensor<T>&av = tape.value(a), &bv = tape.value(b);
    require(av.rank() == 2 && bv.rank() == 2, "scatter_cells: inputs must be [C, M]");
    require(av.dim(0) == bv.dim(0), "scatter_cells: channel mismatch");
    const std::int64_t C = av.dim(0), Ma = av.dim(1), Mb = bv.dim(1);
    require(Ma == std::int64_t(cells_a->size()) && Mb == std::int64_t(cells_b->size()),
            "scatter_cells: cell list length mismatch");
    require(Ma + Mb == H * W, "scatter_cells: cell lists must partition the grid");
    const std::int64_t HW = H * W;
    Tensor<T> y(Shape{C, H, W});
    for (std::int64_t c = 0; c < C; ++c) {
        for (std::int64_t m = 0; m < Ma; ++m) y[c * HW + (*cells_a)[size_t(m)]] = av[c * Ma + m];
        for (std::int64_t m = 0; m < Mb; ++m) y[c * HW + (*cells_b)[size_t(m)]] = bv[c * Mb + m];
    }
    const bool rg = tape.requires_grad(a) || tape.requires_grad(b);
    return tape.push(std::move(y), rg,
                     [a, b, cells_a, cells_b, C, Ma, Mb, HW](Tape<T>& t, VarId self) {
                         const Tensor<T>& dy = t.grad(self);
                         if (t.requires_grad(a)) {
                             Tensor<T>& da = t.grad_buf(a);
                             for (std::int64_t c = 0; c < C; ++c)
                                 for (std::int64_t m = 0; m < Ma; ++m)
                                     da[c * Ma + m] += dy[c * HW + (*cells_a)[size_t(m)]];
                         }
                         if (t.requires_grad(b)) {
                             Tensor<T>& db = t.grad_buf(b);
                             for (std::int64_t c = 0; c < C; ++c)
                                 for (std::int64_t m = 0; m < Mb; ++m)
                                     db[c * Mb + m] += dy[c * HW + (*cells_b)[size_t(m)]];
                         }
                     });
}

// Scalar reduction: (1/M) * sum_c w[c] * sum_m x[c,m]^2 where M is the
// position count. Weights are fixed (no gradient).
template <typename T>
VarId weighted_sq_mean(Tape<T>& tape, VarId x, std::vector<T> weights) {
    const Tensor<T>& xv = tape.value(x);
    require(xv.rank() >= 2, "weighted_sq_mean: input must have channel + position axes");
    const std::int64_t C = xv.dim(0), M = xv.numel() / C;
    require(std::int64_t(weights.size()) == C, "weighted_sq_mean: one weight per channel");
    T acc = 0;
    for (std::int64_t c = 0; c < C; ++c) {
        T s = 0;
        for (std::int64_t m = 0; m < M; ++m) s += xv[c * M + m] * xv[c * M + m];
        acc += weights[size_t(c)] * s;
    }
    Tensor<T> y(Shape{1});
    y[0] = acc / T(M);
    return tape.push(std::move(y), tape.requires_grad(x),
                     [x, weights = std::move(weights), C, M](Tape<T>& t, VarId self) {
                         const T g = t.grad(self)[0];
                         const Tensor<T>& xv = t.value(x);
                         Tensor<T>& dx = t.grad_buf(x);
                         for (std::int64_t c = 0; c < C; ++c) {
                             const T f = g * T(2) * weights[size_t(c)] / T(M);
                             for (std::int64_t m = 0; m < M; ++m)
                                 dx[c * M + m] += f * xv[c * M + m];
                         }
                     });
}

}  // namespace ops

// Central finite-difference validation of reverse-mode gradients.
//
// `loss` must rebuild the graph from the current contents of `params` and
// return the scalar loss; `analytic` must run one reverse sweep and return
// gradients in the same order as `params`. Returns the worst relative error
// over all checked entries (optionally a random subset per parameter).
struct GradCheckResult {
    double max_rel_error = 0.0;
    std::int64_t checked = 0;
};

template <typename T, typename LossFn, typename GradFn>
GradCheckResult grad_check(std::span<Tensor<T>*> params, LossFn loss, GradFn analytic,
                           double eps, std::int64_t max_entries_per_param = -1,
                           RngStream* picker = nullptr) {
    require(eps > 0, "grad_check: eps must be positive");
    std::vector<Tensor<T>> grads = analytic();
    require(grads.size() == params.size(), "grad_check: gradient count mismatch");
    GradCheckResult result;
    for (size_t p = 0; p < params.size(); ++p) {
        Tensor<T>& par = *params[p];
        check_same_shape(par, grads[p], "grad_check");
        std::vector<std::int64_t> entries;
        if (max_entries_per_param < 0 || par.numel() <= max_entries_per_param) {
            entries.resize(size_t(par.numel()));
            for (std::int64_t i = 0; i < par.numel(); ++i) entries[size_t(i)] = i;
        } else {
            require(picker != nullptr, "grad_check: sampling requires an RNG stream");
            for (std::int64_t i = 0; i < max_entries_per_param; ++i)
                entries.push_back(std::int64_t(picker->uniform_below(std::uint64_t(par.numel()))));
        }
        for (std::int64_t idx : entries) {
            const T saved = par[idx];
            par[idx] = saved + T(eps);
            const double fp = double(loss());
            par[idx] = saved - T(eps);
            const double fm = double(loss());
            par[idx] = saved;
            const double fd = (fp - fm) / (2.0 * eps);
            const double ad = double(grads[p][idx]);
            const double denom = std::max({1.0, std::abs(fd), std::abs(ad)});
            result.max_rel_error = std::max(result.max_rel_error, std::abs(fd - ad) / denom);
            ++result.checked;
        }
    }
    return result;
}

}  // namespace lamcast
