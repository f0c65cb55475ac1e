#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <memory>
#include <vector>

#include "lamcast/autodiff.hpp"
#include "lamcast/rng.hpp"
#include "lamcast/tensor.hpp"

using namespace lamcast;

namespace {

Tensor<double> random_tensor(Shape s, RngStream& r, double scale = 1.0) {
    Tensor<double> t(s);
    r.fill_normal(t.values(), 0.0, scale);
    return t;
}

// Direct 3x3 convolution with zero padding; independent oracle for the
// im2col/GEMM path.
Tensor<double> conv3x3_ref(const Tensor<double>& x, const Tensor<double>& k,
                           const Tensor<double>& b) {
    const auto Cout = k.dim(0), Cin = k.dim(1), H = x.dim(1), W = x.dim(2);
    Tensor<double> y(Shape{Cout, H, W});
    for (std::int64_t co = 0; co < Cout; ++co)
        for (std::int64_t i = 0; i < H; ++i)
            for (std::int64_t j = 0; j < W; ++j) {
                double acc = b[co];
                for (std::int64_t ci = 0; ci < Cin; ++ci)
                    for (int ky = 0; ky < 3; ++ky)
                        for (int kx = 0; kx < 3; ++kx) {
                            const std::int64_t si = i + ky - 1, sj = j + kx - 1;
                            if (si < 0 || si >= H || sj < 0 || sj >= W) continue;
                            acc += k.at(co, ci, ky, kx) * x.at(ci, si, sj);
                        }
                y.at(co, i, j) = acc;
            }
    return y;
}

// Finite-difference check of an arbitrary graph over a parameter list.
// graph_fn: (tape, ids) -> scalar VarId.
template <typename GraphFn>
double fd_check(std::vector<Tensor<double>*> params, GraphFn graph_fn, double eps = 1e-5) {
    auto loss = [&]() {
        Tape<double> t;
        std::vector<VarId> ids;
        for (auto* p : params) ids.push_back(t.parameter(*p));
        return t.value(graph_fn(t, ids))[0];
    };
    auto analytic = [&]() {
        Tape<double> t;
        std::vector<VarId> ids;
        for (auto* p : params) ids.push_back(t.parameter(*p));
        t.backward(graph_fn(t, ids));
        std::vector<Tensor<double>> gs;
        for (VarId id : ids) gs.push_back(t.grad_or_zero(id));
        return gs;
    };
    return grad_check<double>(std::span<Tensor<double>*>(params.data(), params.size()), loss,
                              analytic, eps)
        .max_rel_error;
}

}  // namespace

TEST_CASE("shape arithmetic and validation") {
    Shape s{2, 3, 4};
    CHECK(s.rank == 3);
    CHECK(s.numel() == 24);
    CHECK(s.str() == "[2,3,4]");
    CHECK(s == Shape{2, 3, 4});
    CHECK(s != Shape{2, 3});
    CHECK_THROWS_AS((Shape{-1, 2}), contract_error);
    CHECK_THROWS_AS(s[3], contract_error);
}

TEST_CASE("tensor layout is row-major with channel first") {
    Tensor<double> t(Shape{2, 3, 4});
    t.at(1, 2, 3) = 7.0;
    CHECK(t[1 * 12 + 2 * 4 + 3] == 7.0);
    t.at(0, 0, 1) = 3.0;
    CHECK(t[1] == 3.0);

    CHECK_THROWS_AS(t.reshaped(Shape{5, 5}), contract_error);
    Tensor<double> r = t.reshaped(Shape{6, 4});
    CHECK(r.at(5, 3) == 7.0);

    CHECK(t.all_finite());
    t[0] = std::nan("");
    CHECK(!t.all_finite());
}

TEST_CASE("mismatched shapes are rejected before compute") {
    Tape<double> t;
    VarId a = t.constant(Tensor<double>::zeros(Shape{2, 3}));
    VarId b = t.constant(Tensor<double>::zeros(Shape{3, 2}));
    CHECK_THROWS_AS(ops::add(t, a, b), contract_error);

    VarId x = t.constant(Tensor<double>::zeros(Shape{4, 6, 6}));
    VarId k = t.constant(Tensor<double>::zeros(Shape{8, 3, 3, 3}));
    VarId bias = t.constant(Tensor<double>::zeros(Shape{8}));
    CHECK_THROWS_AS(ops::conv2d_3x3(t, x, k, bias), contract_error);

    VarId odd = t.constant(Tensor<double>::zeros(Shape{1, 5, 6}));
    CHECK_THROWS_AS(ops::downsample_avg2(t, odd), contract_error);
}

TEST_CASE("linear matches a hand-computed example") {
    Tape<double> t;
    // x = [[1, 2], [3, 4]] (2 channels, 2 positions), W = [[1, 10], [0, 2]], b = [0.5, -1]
    VarId x = t.constant(Tensor<double>(Shape{2, 2}, {1, 2, 3, 4}));
    VarId w = t.constant(Tensor<double>(Shape{2, 2}, {1, 10, 0, 2}));
    VarId b = t.constant(Tensor<double>(Shape{2}, {0.5, -1}));
    const Tensor<double>& y = t.value(ops::linear(t, x, w, b));
    CHECK(y.at(0, 0) == Catch::Approx(1 + 30 + 0.5));
    CHECK(y.at(0, 1) == Catch::Approx(2 + 40 + 0.5));
    CHECK(y.at(1, 0) == Catch::Approx(6 - 1));
    CHECK(y.at(1, 1) == Catch::Approx(8 - 1));
}

TEST_CASE("conv2d_3x3 matches the direct convolution oracle") {
    RngStream r(5, StreamKind::test, 20);
    Tensor<double> x = random_tensor(Shape{3, 7, 6}, r);
    Tensor<double> k = random_tensor(Shape{4, 3, 3, 3}, r);
    Tensor<double> b = random_tensor(Shape{4}, r);
    Tape<double> t;
    const Tensor<double>& y =
        t.value(ops::conv2d_3x3(t, t.constant(x), t.constant(k), t.constant(b)));
    const Tensor<double> ref = conv3x3_ref(x, k, b);
    REQUIRE(y.shape() == ref.shape());
    for (std::int64_t i = 0; i < y.numel(); ++i)
        CHECK(y[i] == Catch::Approx(ref[i]).margin(1e-12));
}

TEST_CASE("silu known values") {
    Tape<double> t;
    VarId x = t.constant(Tensor<double>(Shape{1, 3}, {0.0, 1.0, -1.0}));
    const Tensor<double>& y = t.value(ops::silu(t, x));
    CHECK(y[0] == 0.0);
    CHECK(y[1] == Catch::Approx(1.0 / (1.0 + std::exp(-1.0))));
    CHECK(y[2] == Catch::Approx(-1.0 / (1.0 + std::exp(1.0))));
}

TEST_CASE("layer norm normalizes each position over channels") {
    RngStream r(6, StreamKind::test, 21);
    Tensor<double> x = random_tensor(Shape{8, 5}, r, 3.0);
    Tape<double> t;
    VarId ones = t.constant(Tensor<double>::full(Shape{8}, 1.0));
    VarId zeros = t.constant(Tensor<double>::zeros(Shape{8}));
    const Tensor<double>& y = t.value(ops::layer_norm_modulated(t, t.constant(x), ones, zeros));
    for (std::int64_t m = 0; m < 5; ++m) {
        double mean = 0, var = 0;
        for (std::int64_t c = 0; c < 8; ++c) mean += y.at(c, m);
        mean /= 8;
        for (std::int64_t c = 0; c < 8; ++c) var += (y.at(c, m) - mean) * (y.at(c, m) - mean);
        var /= 8;
        CHECK(std::abs(mean) < 1e-12);
        CHECK(var == Catch::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("group norm normalizes each group and applies modulation") {
    RngStream r(7, StreamKind::test, 22);
    Tensor<double> x = random_tensor(Shape{4, 3, 3}, r, 2.0);
    Tape<double> t;
    VarId ones = t.constant(Tensor<double>::full(Shape{4}, 1.0));
    VarId zeros = t.constant(Tensor<double>::zeros(Shape{4}));
    const Tensor<double>& y =
        t.value(ops::group_norm_modulated(t, t.constant(x), 2, ones, zeros));
    for (int g = 0; g < 2; ++g) {
        double mean = 0, var = 0;
        for (std::int64_t c = 2 * g; c < 2 * g + 2; ++c)
            for (std::int64_t i = 0; i < 9; ++i) mean += y[c * 9 + i];
        mean /= 18;
        for (std::int64_t c = 2 * g; c < 2 * g + 2; ++c)
            for (std::int64_t i = 0; i < 9; ++i)
                var += (y[c * 9 + i] - mean) * (y[c * 9 + i] - mean);
        var /= 18;
        CHECK(std::abs(mean) < 1e-12);
        CHECK(var == Catch::Approx(1.0).epsilon(1e-6));
    }
    CHECK_THROWS_AS(ops::group_norm_modulated(t, t.constant(x), 3, ones, zeros),
                    contract_error);
}

TEST_CASE("downsample averages 2x2 blocks, upsample repeats them") {
    Tape<double> t;
    VarId x = t.constant(Tensor<double>(Shape{1, 2, 2}, {1, 2, 3, 4}));
    const Tensor<double>& d = t.value(ops::downsample_avg2(t, x));
    CHECK(d.shape() == Shape{1, 1, 1});
    CHECK(d[0] == 2.5);
    const Tensor<double>& u = t.value(ops::upsample_nearest2(t, x));
    CHECK(u.shape() == Shape{1, 4, 4});
    CHECK(u.at(0, 0, 1) == 1);
    CHECK(u.at(0, 3, 2) == 4);
    CHECK(u.at(0, 2, 1) == 3);
}

TEST_CASE("concat_channels stacks blocks in argument order") {
    Tape<double> t;
    VarId a = t.constant(Tensor<double>(Shape{1, 2, 2}, {1, 2, 3, 4}));
    VarId b = t.constant(Tensor<double>(Shape{2, 2, 2}, {5, 6, 7, 8, 9, 10, 11, 12}));
    const Tensor<double>& y = t.value(ops::concat_channels(t, a, b));
    CHECK(y.shape() == Shape{3, 2, 2});
    CHECK(y.at(0, 1, 1) == 4);
    CHECK(y.at(1, 0, 0) == 5);
    CHECK(y.at(2, 1, 0) == 11);
}

TEST_CASE("gather/scatter cells round-trips a partition of the grid") {
    const std::int64_t H = 4, W = 4;
    auto interior = std::make_shared<std::vector<std::int64_t>>();
    auto boundary = std::make_shared<std::vector<std::int64_t>>();
    for (std::int64_t i = 0; i < H; ++i)
        for (std::int64_t j = 0; j < W; ++j) {
            const bool edge = i == 0 || j == 0 || i == H - 1 || j == W - 1;
            (edge ? boundary : interior)->push_back(i * W + j);
        }
    RngStream r(8, StreamKind::test, 23);
    Tensor<double> x = random_tensor(Shape{2, H, W}, r);
    Tape<double> t;
    VarId xv = t.constant(x);
    VarId gi = ops::gather_cells(t, xv, interior);
    VarId gb = ops::gather_cells(t, xv, boundary);
    CHECK(t.value(gi).shape() == Shape{2, 4});
    CHECK(t.value(gb).shape() == Shape{2, 12});
    VarId back = ops::scatter_cells(t, gi, interior, gb, boundary, H, W);
    CHECK(t.value(back) == x);
}

TEST_CASE("weighted_sq_mean hand value") {
    Tape<double> t;
    // x = [[1, 2], [3, 4]], w = [2, 0.5]: (2*(1+4) + 0.5*(9+16)) / 2 = 11.25
    VarId x = t.constant(Tensor<double>(Shape{2, 2}, {1, 2, 3, 4}));
    VarId y = ops::weighted_sq_mean(t, x, std::vector<double>{2.0, 0.5});
    CHECK(t.value(y)[0] == Catch::Approx(11.25));
}

TEST_CASE("finite-difference gradients per op") {
    RngStream r(9, StreamKind::test, 24);
    const std::vector<double> w4 = {0.9, 1.2, 0.4, 1.0};

    SECTION("affine_scalar + add, shared input") {
        Tensor<double> x = random_tensor(Shape{3, 4}, r);
        CHECK(fd_check({&x}, [&](Tape<double>& t, const std::vector<VarId>& ids) {
                  VarId a = ops::affine_scalar(t, ids[0], 1.5, -0.25);
                  VarId y = ops::add(t, a, ids[0]);  // x used twice
                  return ops::weighted_sq_mean(t, y, std::vector<double>{1.0, 0.7, 1.3});
              }) < 1e-6);
    }
    SECTION("linear") {
        Tensor<double> x = random_tensor(Shape{3, 5}, r);
        Tensor<double> w = random_tensor(Shape{4, 3}, r, 0.5);
        Tensor<double> b = random_tensor(Shape{4}, r, 0.5);
        CHECK(fd_check({&x, &w, &b}, [&](Tape<double>& t, const std::vector<VarId>& ids) {
                  return ops::weighted_sq_mean(t, ops::linear(t, ids[0], ids[1], ids[2]), w4);
              }) < 1e-6);
    }
    SECTION("conv2d_3x3") {
        Tensor<double> x = random_tensor(Shape{2, 5, 4}, r);
        Tensor<double> k = random_tensor(Shape{3, 2, 3, 3}, r, 0.5);
        Tensor<double> b = random_tensor(Shape{3}, r, 0.5);
        CHECK(fd_check({&x, &k, &b}, [&](Tape<double>& t, const std::vector<VarId>& ids) {
                  return ops::weighted_sq_mean(t, ops::conv2d_3x3(t, ids[0], ids[1], ids[2]),
                                               std::vector<double>{1.0, 0.6, 1.4});
              }) < 1e-6);
    }
    SECTION("silu") {
        Tensor<double> x = random_tensor(Shape{3, 4}, r);
        CHECK(fd_check({&x}, [&](Tape<double>& t, const std::vector<VarId>& ids) {
                  return ops::weighted_sq_mean(t, ops::silu(t, ids[0]),
                                               std::vector<double>{1.0, 0.7, 1.3});
              }) < 1e-6);
    }
    SECTION("layer_norm_modulated") {
        Tensor<double> x = random_tensor(Shape{4, 6}, r, 2.0);
        Tensor<double> s = random_tensor(Shape{4}, r, 0.5);
        Tensor<double> h = random_tensor(Shape{4}, r, 0.5);
        CHECK(fd_check({&x, &s, &h}, [&](Tape<double>& t, const std::vector<VarId>& ids) {
                  return ops::weighted_sq_mean(
                      t, ops::layer_norm_modulated(t, ids[0], ids[1], ids[2]), w4);
              }) < 1e-6);
    }
    SECTION("group_norm_modulated") {
        Tensor<double> x = random_tensor(Shape{4, 4, 4}, r, 2.0);
        Tensor<double> s = random_tensor(Shape{4}, r, 0.5);
        Tensor<double> h = random_tensor(Shape{4}, r, 0.5);
        CHECK(fd_check({&x, &s, &h}, [&](Tape<double>& t, const std::vector<VarId>& ids) {
                  return ops::weighted_sq_mean(
                      t, ops::group_norm_modulated(t, ids[0], 2, ids[1], ids[2]), w4);
              }) < 1e-6);
    }
    SECTION("resampling, concat, reshape") {
        Tensor<double> x = random_tensor(Shape{2, 4, 4}, r);
        CHECK(fd_check({&x}, [&](Tape<double>& t, const std::vector<VarId>& ids) {
                  VarId d = ops::downsample_avg2(t, ids[0]);
                  VarId u = ops::upsample_nearest2(t, d);
                  VarId c = ops::concat_channels(t, u, ids[0]);
                  VarId f = ops::reshape(t, c, Shape{4, 16});
                  return ops::weighted_sq_mean(t, f, w4);
              }) < 1e-6);
    }
    SECTION("gather/scatter") {
        auto cells_a = std::make_shared<std::vector<std::int64_t>>(
            std::vector<std::int64_t>{5, 6, 9, 10});
        auto cells_b = std::make_shared<std::vector<std::int64_t>>(
            std::vector<std::int64_t>{0, 1, 2, 3, 4, 7, 8, 11, 12, 13, 14, 15});
        Tensor<double> x = random_tensor(Shape{2, 4, 4}, r);
        Tensor<double> z = random_tensor(Shape{2, 12}, r);
        CHECK(fd_check({&x, &z}, [&](Tape<double>& t, const std::vector<VarId>& ids) {
                  VarId g = ops::gather_cells(t, ids[0], cells_a);
                  VarId s = ops::scatter_cells(t, g, cells_a, ids[1], cells_b, 4, 4);
                  return ops::weighted_sq_mean(t, s, std::vector<double>{1.0, 0.8});
              }) < 1e-6);
    }
    SECTION("scale_channels_add") {
        RngStream r2(10, StreamKind::test, 25);
        Tensor<double> x = random_tensor(Shape{3, 4}, r2);
        Tensor<double> off = random_tensor(Shape{3, 4}, r2);
        CHECK(fd_check({&x}, [&](Tape<double>& t, const std::vector<VarId>& ids) {
                  VarId y = ops::scale_channels_add(t, ids[0],
                                                    std::vector<double>{2.0, 0.5, -1.0}, off);
                  return ops::weighted_sq_mean(t, y, std::vector<double>{1.0, 0.7, 1.3});
              }) < 1e-6);
    }
}

TEST_CASE("two-layer MLP gradient error below 1e-5 at eps 1e-5") {
    RngStream r(11, StreamKind::test, 26);
    Tensor<double> x = random_tensor(Shape{8, 3}, r);
    Tensor<double> w1 = random_tensor(Shape{16, 8}, r, 0.35);
    Tensor<double> b1 = random_tensor(Shape{16}, r, 0.1);
    Tensor<double> w2 = random_tensor(Shape{4, 16}, r, 0.25);
    Tensor<double> b2 = random_tensor(Shape{4}, r, 0.1);
    const double err =
        fd_check({&x, &w1, &b1, &w2, &b2}, [&](Tape<double>& t, const std::vector<VarId>& ids) {
            VarId h = ops::silu(t, ops::linear(t, ids[0], ids[1], ids[2]));
            VarId y = ops::linear(t, h, ids[3], ids[4]);
            return ops::weighted_sq_mean(t, y, std::vector<double>{0.9, 1.2, 0.4, 1.0});
        });
    INFO("max relative gradient error " << err);
    CHECK(err < 1e-5);
}

TEST_CASE("backward is deterministic and repeatable") {
    RngStream r(12, StreamKind::test, 27);
    Tensor<double> x = random_tensor(Shape{2, 6, 6}, r);
    Tensor<double> k = random_tensor(Shape{2, 2, 3, 3}, r, 0.5);
    Tensor<double> b = random_tensor(Shape{2}, r, 0.5);
    auto run = [&]() {
        Tape<double> t;
        VarId xv = t.parameter(x), kv = t.parameter(k), bv = t.parameter(b);
        VarId y = ops::silu(t, ops::conv2d_3x3(t, xv, kv, bv));
        t.backward(ops::weighted_sq_mean(t, y, std::vector<double>{1.0, 1.0}));
        return std::vector<Tensor<double>>{t.grad(xv), t.grad(kv), t.grad(bv)};
    };
    const auto g1 = run(), g2 = run();
    for (size_t i = 0; i < g1.size(); ++i) REQUIRE(g1[i] == g2[i]);
}

TEST_CASE("backward requires a scalar output and an enabled tape") {
    Tape<double> t;
    VarId x = t.parameter(Tensor<double>::full(Shape{2, 2}, 1.0));
    CHECK_THROWS_AS(t.backward(x), contract_error);

    Tape<double> frozen(false);
    VarId y = frozen.parameter(Tensor<double>::full(Shape{2, 2}, 1.0));
    VarId s = ops::weighted_sq_mean(frozen, y, std::vector<double>{1.0, 1.0});
    CHECK(frozen.value(s)[0] == Catch::Approx(2.0));
    CHECK_THROWS_AS(frozen.backward(s), contract_error);
}
