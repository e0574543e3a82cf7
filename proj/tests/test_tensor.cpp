#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "hct/gradcheck.hpp"
#include "hct/rng.hpp"
#include "hct/tensor.hpp"

using namespace hct;
using namespace hct::ops;

namespace {

Var rand_tensor(const Shape& s, Rng& rng, bool rg = true) { return randn(s, rng, 1.0, rg); }

// Independent triple-loop matmul oracle.
std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b,
                                 int64_t m, int64_t k, int64_t n) {
    std::vector<double> c(size_t(m * n), 0.0);
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j)
            for (int64_t p = 0; p < k; ++p)
                c[size_t(i * n + j)] += a[size_t(i * k + p)] * b[size_t(p * n + j)];
    return c;
}

} // namespace

TEST_CASE("matmul identity and zero") {
    Rng rng(1);
    auto x = rand_tensor({3, 3}, rng, false);
    auto eye = zeros({3, 3});
    for (int i = 0; i < 3; ++i) eye->data[size_t(i * 3 + i)] = 1.0;
    auto y = matmul(eye, x);
    for (size_t i = 0; i < 9; ++i) CHECK(y->data[i] == doctest::Approx(x->data[i]).epsilon(1e-15));

    auto z = matmul(make_tensor({2, 2}, {1, 2, 3, 4}), zeros({2, 2}));
    for (double v : z->data) CHECK(v == 0.0);
}

TEST_CASE("matmul matches triple-loop oracle") {
    Rng rng(2);
    auto a = rand_tensor({5, 4}, rng, false);
    auto b = rand_tensor({4, 3}, rng, false);
    auto c = matmul(a, b);
    auto ref = naive_matmul(a->data, b->data, 5, 4, 3);
    for (size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(c->data[i] - ref[i]) < 1e-12);
}

TEST_CASE("matmul shape mismatch names both shapes") {
    auto a = zeros({2, 3});
    auto b = zeros({4, 2});
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2,3]"), DimError);
}

TEST_CASE("softmax rows") {
    auto s = softmax_rows(make_tensor({1, 2}, {0.0, 0.0}));
    CHECK(s->data[0] == doctest::Approx(0.5));
    CHECK(s->data[1] == doctest::Approx(0.5));

    auto big = softmax_rows(make_tensor({1, 3}, {1000.0, 1000.0, 1000.0}));
    for (double v : big->data) CHECK(v == doctest::Approx(1.0 / 3.0));

    // direct exp-normalize oracle
    auto y = softmax_rows(make_tensor({1, 3}, {1.0, 2.0, 3.0}));
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    CHECK(std::abs(y->data[0] - std::exp(1.0) / z) < 1e-12);
    CHECK(std::abs(y->data[1] - std::exp(2.0) / z) < 1e-12);
    CHECK(std::abs(y->data[2] - std::exp(3.0) / z) < 1e-12);
}

TEST_CASE("softmax rows sum to 1 on random inputs") {
    Rng rng(3);
    for (int rep = 0; rep < 20; ++rep) {
        auto x = rand_tensor({4, 7}, rng, false);
        auto s = softmax_rows(x);
        for (int r = 0; r < 4; ++r) {
            double tot = 0.0;
            for (int c = 0; c < 7; ++c) tot += s->data[size_t(r * 7 + c)];
            CHECK(std::abs(tot - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("gelu values") {
    auto y0 = gelu(make_tensor({1}, {0.0}));
    CHECK(y0->data[0] == 0.0);

    auto y10 = gelu(make_tensor({1}, {10.0}));
    CHECK(y10->data[0] == doctest::Approx(10.0).epsilon(1e-9));

    // scalar tanh-approximation formula evaluated independently
    const double x = 1.0;
    const double ref =
        0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (x + 0.044715 * x * x * x)));
    auto y1 = gelu(make_tensor({1}, {1.0}));
    CHECK(std::abs(y1->data[0] - ref) < 1e-12);
}

TEST_CASE("depthwise_conv3d identity, zero and naive oracle") {
    Rng rng(4);
    auto x = rand_tensor({4, 4, 4, 2}, rng, false);

    auto delta = zeros({3, 3, 3, 2});
    for (int c = 0; c < 2; ++c) delta->data[size_t(((1 * 3 + 1) * 3 + 1) * 2 + c)] = 1.0;
    auto y = depthwise_conv3d(x, delta);
    for (size_t i = 0; i < x->data.size(); ++i) CHECK(y->data[i] == x->data[i]); // bit-for-bit

    auto z = depthwise_conv3d(x, zeros({3, 3, 3, 2}));
    for (double v : z->data) CHECK(v == 0.0);

    // 6-loop naive oracle
    auto k = rand_tensor({3, 3, 3, 2}, rng, false);
    auto out = depthwise_conv3d(x, k);
    const int64_t T = 4, H = 4, W = 4, C = 2;
    for (int64_t t = 0; t < T; ++t)
        for (int64_t h = 0; h < H; ++h)
            for (int64_t w = 0; w < W; ++w)
                for (int64_t c = 0; c < C; ++c) {
                    double acc = 0.0;
                    for (int64_t a = 0; a < 3; ++a)
                        for (int64_t b = 0; b < 3; ++b)
                            for (int64_t g = 0; g < 3; ++g) {
                                const int64_t ts = t + a - 1, hs = h + b - 1, ws = w + g - 1;
                                if (ts < 0 || ts >= T || hs < 0 || hs >= H || ws < 0 || ws >= W)
                                    continue;
                                acc += x->data[size_t(((ts * H + hs) * W + ws) * C + c)] *
                                       k->data[size_t(((a * 3 + b) * 3 + g) * C + c)];
                            }
                    CHECK(std::abs(out->data[size_t(((t * H + h) * W + w) * C + c)] - acc) < 1e-12);
                }
}

TEST_CASE("depthwise_conv3d rejects even kernel extent") {
    auto x = zeros({2, 2, 2, 1});
    CHECK_THROWS_AS(depthwise_conv3d(x, zeros({2, 1, 1, 1})), ConfigError);
}

TEST_CASE("pool_st identity, constant and windowed-mean oracle") {
    Rng rng(5);
    auto x = rand_tensor({4, 4, 4, 2}, rng, false);
    auto id = pool_st(x, 1, 1, 1);
    for (size_t i = 0; i < x->data.size(); ++i) CHECK(id->data[i] == x->data[i]);

    auto c = pool_st(full({4, 4, 4, 2}, 3.25), 2, 2, 2);
    CHECK(c->shape == Shape{2, 2, 2, 2});
    for (double v : c->data) CHECK(v == doctest::Approx(3.25).epsilon(1e-15));

    auto p = pool_st(x, 2, 2, 2);
    for (int64_t t = 0; t < 2; ++t)
        for (int64_t h = 0; h < 2; ++h)
            for (int64_t w = 0; w < 2; ++w)
                for (int64_t ch = 0; ch < 2; ++ch) {
                    double acc = 0.0;
                    for (int64_t dt = 0; dt < 2; ++dt)
                        for (int64_t dh = 0; dh < 2; ++dh)
                            for (int64_t dw = 0; dw < 2; ++dw)
                                acc += x->data[size_t(
                                    (((2 * t + dt) * 4 + 2 * h + dh) * 4 + 2 * w + dw) * 2 + ch)];
                    CHECK(std::abs(p->data[size_t(((t * 2 + h) * 2 + w) * 2 + ch)] - acc / 8.0) <
                          1e-12);
                }
}

TEST_CASE("pool_st ceil shape law") {
    auto x = zeros({5, 3, 4, 1});
    auto p = pool_st(x, 2, 2, 3);
    CHECK(p->shape == Shape{3, 2, 2, 1});
}

TEST_CASE("concat/slice channels") {
    Rng rng(6);
    auto a = rand_tensor({3, 2}, rng, false);
    auto b = rand_tensor({3, 4}, rng, false);
    auto cat = concat_channels({a, b});
    CHECK(cat->shape == Shape{3, 6});
    auto back = slice_channels(cat, 0, 2);
    for (size_t i = 0; i < a->data.size(); ++i) CHECK(back->data[i] == a->data[i]);

    auto single = concat_channels({a});
    for (size_t i = 0; i < a->data.size(); ++i) CHECK(single->data[i] == a->data[i]);

    CHECK_THROWS_AS(slice_channels(a, 0, 5), DimError);
    CHECK_THROWS_AS(concat_channels({a, rand_tensor({2, 2}, rng, false)}), DimError);
}

TEST_CASE("slice gradient is an indicator") {
    Rng rng(7);
    auto x = rand_tensor({2, 4}, rng);
    auto loss = sum(slice_channels(x, 1, 3));
    backward(loss);
    for (int64_t r = 0; r < 2; ++r)
        for (int64_t c = 0; c < 4; ++c)
            CHECK(x->grad[size_t(r * 4 + c)] == ((c >= 1 && c < 3) ? 1.0 : 0.0));
}

TEST_CASE("cosine similarity") {
    auto x = make_tensor({3}, {1.0, -2.0, 0.5});
    CHECK(cosine_sim(x, x)->data[0] == doctest::Approx(1.0).epsilon(1e-12));
    auto nx = make_tensor({3}, {-1.0, 2.0, -0.5});
    CHECK(cosine_sim(x, nx)->data[0] == doctest::Approx(-1.0).epsilon(1e-12));
    auto u = make_tensor({2}, {1.0, 0.0});
    auto v = make_tensor({2}, {1.0, 1.0});
    CHECK(cosine_sim(u, v)->data[0] == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
    CHECK_THROWS_AS(l2_normalize_rows(zeros({1, 3})), NumericError);
}

TEST_CASE("backward basics") {
    Rng rng(8);
    auto x = rand_tensor({3, 2}, rng);
    auto loss = sum(x);
    backward(loss);
    for (double g : x->grad) CHECK(g == 1.0);

    x->zero_grad();
    auto loss2 = sum(mul(x, x));
    backward(loss2);
    for (size_t i = 0; i < x->data.size(); ++i)
        CHECK(x->grad[i] == doctest::Approx(2.0 * x->data[i]).epsilon(1e-14));
}

TEST_CASE("backward twice without zeroing accumulates exactly 2x") {
    Rng rng(9);
    auto x = rand_tensor({4}, rng);
    auto l1 = sum(mul(x, x));
    backward(l1);
    auto once = x->grad;
    auto l2 = sum(mul(x, x));
    backward(l2);
    for (size_t i = 0; i < once.size(); ++i) CHECK(x->grad[i] == 2.0 * once[i]);
}

TEST_CASE("backward requires scalar loss") {
    Rng rng(10);
    auto x = rand_tensor({2, 2}, rng);
    auto y = mul(x, x);
    CHECK_THROWS_AS(backward(y), UsageError);
}

TEST_CASE("non-finite forward values are an error") {
    auto x = make_tensor({1}, {1e308});
    CHECK_THROWS_AS(scale(x, 1e10), NumericError);
}

TEST_CASE("grad_check: linear map is exact") {
    Rng rng(11);
    auto x = rand_tensor({3, 4}, rng);
    auto w = rand_tensor({4, 2}, rng);
    const double err = grad_check([&] { return sum(matmul(x, w)); }, {x, w});
    CHECK(err < 1e-9);
}

TEST_CASE("grad_check per op") {
    Rng rng(12);

    SUBCASE("softmax_rows") {
        auto x = rand_tensor({3, 4}, rng);
        auto w = rand_tensor({3, 4}, rng, false);
        CHECK(grad_check([&] { return sum(mul(softmax_rows(x), w)); }, {x}) < 1e-6);
    }
    SUBCASE("log_softmax_rows") {
        auto x = rand_tensor({3, 4}, rng);
        auto w = rand_tensor({3, 4}, rng, false);
        CHECK(grad_check([&] { return sum(mul(log_softmax_rows(x), w)); }, {x}) < 1e-6);
    }
    SUBCASE("masked_softmax_rows") {
        auto x = rand_tensor({3, 5}, rng);
        auto w = rand_tensor({3, 5}, rng, false);
        std::vector<uint8_t> mask = {1, 0, 1, 1, 0};
        CHECK(grad_check([&] { return sum(mul(masked_softmax_rows(x, mask), w)); }, {x}) < 1e-6);
    }
    SUBCASE("gelu") {
        auto x = rand_tensor({2, 5}, rng);
        CHECK(grad_check([&] { return sum(gelu(x)); }, {x}) < 1e-6);
    }
    SUBCASE("layer_norm_rows") {
        auto x = rand_tensor({3, 6}, rng);
        auto g = rand_tensor({6}, rng);
        auto b = rand_tensor({6}, rng);
        auto w = rand_tensor({3, 6}, rng, false);
        CHECK(grad_check([&] { return sum(mul(layer_norm_rows(x, g, b), w)); }, {x, g, b}) < 1e-4);
    }
    SUBCASE("depthwise_conv3d") {
        auto x = rand_tensor({3, 3, 3, 2}, rng);
        auto k = rand_tensor({3, 1, 1, 2}, rng);
        CHECK(grad_check([&] { return sum(mul(depthwise_conv3d(x, k), x)); }, {x, k}) < 1e-6);
    }
    SUBCASE("pool_st") {
        auto x = rand_tensor({4, 2, 2, 3}, rng);
        auto w = rand_tensor({2, 1, 1, 3}, rng, false);
        CHECK(grad_check([&] { return sum(mul(pool_st(x, 2, 2, 2), w)); }, {x}) < 1e-6);
    }
    SUBCASE("l2_normalize_rows") {
        auto x = rand_tensor({3, 4}, rng);
        auto w = rand_tensor({3, 4}, rng, false);
        CHECK(grad_check([&] { return sum(mul(l2_normalize_rows(x), w)); }, {x}) < 1e-6);
    }
    SUBCASE("bce_with_logits") {
        auto x = rand_tensor({2, 3}, rng);
        std::vector<double> targets = {1, 0, 1, 0, 1, 0};
        std::vector<double> weights = {0.5, 1.0, 2.0};
        CHECK(grad_check([&] { return bce_with_logits(x, targets, weights); }, {x}) < 1e-6);
    }
    SUBCASE("concat and slice") {
        auto a = rand_tensor({3, 2}, rng);
        auto b = rand_tensor({3, 3}, rng);
        CHECK(grad_check([&] { return sum(mul(slice_channels(concat_channels({a, b}), 1, 4),
                                              slice_channels(concat_channels({a, b}), 0, 3))); },
                         {a, b}) < 1e-6);
    }
    SUBCASE("gather and diag") {
        auto x = rand_tensor({3, 3}, rng);
        std::vector<int64_t> idx = {2, 0, 1};
        CHECK(grad_check([&] { return sum(gather_cols(x, idx)); }, {x}) < 1e-9);
        CHECK(grad_check([&] { return sum(mul(diag(x), diag(x))); }, {x}) < 1e-6);
    }
    SUBCASE("mean_rows and transpose") {
        auto x = rand_tensor({4, 3}, rng);
        CHECK(grad_check([&] { return sum(mul(mean_rows(x), mean_rows(x))); }, {x}) < 1e-6);
        CHECK(grad_check([&] { return sum(mul(transpose2d(x), transpose2d(x))); }, {x}) < 1e-6);
    }
}
