#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "hct/attention.hpp"
#include "hct/gradcheck.hpp"

using namespace hct;

namespace {

// independent attention oracle: plain loops, own stable softmax
std::vector<double> naive_attention(const std::vector<double>& q, const std::vector<double>& k,
                                    const std::vector<double>& v, int64_t lq, int64_t lk,
                                    int64_t d, const std::vector<uint8_t>* mask = nullptr) {
    std::vector<double> out(size_t(lq * d), 0.0);
    const double inv = 1.0 / std::sqrt(double(d));
    for (int64_t r = 0; r < lq; ++r) {
        std::vector<double> scores(size_t(lk), 0.0);
        for (int64_t c = 0; c < lk; ++c) {
            double s = 0.0;
            for (int64_t j = 0; j < d; ++j) s += q[size_t(r * d + j)] * k[size_t(c * d + j)];
            scores[size_t(c)] = s * inv;
        }
        double mx = -1e300;
        for (int64_t c = 0; c < lk; ++c)
            if (!mask || (*mask)[size_t(c)]) mx = std::max(mx, scores[size_t(c)]);
        double denom = 0.0;
        std::vector<double> w(size_t(lk), 0.0);
        for (int64_t c = 0; c < lk; ++c) {
            if (mask && !(*mask)[size_t(c)]) continue;
            w[size_t(c)] = std::exp(scores[size_t(c)] - mx);
            denom += w[size_t(c)];
        }
        for (int64_t c = 0; c < lk; ++c)
            for (int64_t j = 0; j < d; ++j)
                out[size_t(r * d + j)] += w[size_t(c)] / denom * v[size_t(c * d + j)];
    }
    return out;
}

Var rand_mat(int64_t r, int64_t c, Rng& rng, bool rg = false) {
    std::vector<double> d(size_t(r * c), 0.0);
    for (auto& x : d) x = rng.normal();
    return make_tensor({r, c}, std::move(d), rg);
}

} // namespace

TEST_CASE("pooled_shape follows the ceil law") {
    CHECK(pooled_shape({8, 8, 8}, {1, 2, 2}) == STShape{8, 4, 4});
    CHECK(pooled_shape({7, 5, 3}, {2, 2, 2}) == STShape{4, 3, 2});
    CHECK(pooled_shape({1, 1, 1}, {3, 3, 3}) == STShape{1, 1, 1});
    CHECK(pooled_shape({9, 9, 9}, {1, 1, 1}) == STShape{9, 9, 9});
}

TEST_CASE("single key/value row gets attention weight one") {
    Rng rng(5);
    auto q = rand_mat(4, 6, rng);
    auto k = rand_mat(1, 6, rng);
    auto v = rand_mat(1, 6, rng);
    auto out = scaled_attention(q, k, v, 1);
    for (int64_t r = 0; r < 4; ++r)
        for (int64_t c = 0; c < 6; ++c)
            CHECK(out->data[size_t(r * 6 + c)] == doctest::Approx(v->data[size_t(c)]).epsilon(1e-12));
}

TEST_CASE("zero query means uniform attention over values") {
    Rng rng(6);
    auto q = make_tensor({3, 4}, std::vector<double>(12, 0.0));
    auto k = rand_mat(5, 4, rng);
    auto v = rand_mat(5, 4, rng);
    auto out = scaled_attention(q, k, v, 1);
    for (int64_t c = 0; c < 4; ++c) {
        double mean = 0.0;
        for (int64_t r = 0; r < 5; ++r) mean += v->data[size_t(r * 4 + c)];
        mean /= 5.0;
        for (int64_t r = 0; r < 3; ++r)
            CHECK(out->data[size_t(r * 4 + c)] == doctest::Approx(mean).epsilon(1e-12));
    }
}

TEST_CASE("scaled_attention matches the naive oracle") {
    Rng rng(17);
    for (int rep = 0; rep < 20; ++rep) {
        const int64_t lq = 1 + int64_t(rng.below(6));
        const int64_t lk = 1 + int64_t(rng.below(6));
        const int64_t d = 1 + int64_t(rng.below(5));
        auto q = rand_mat(lq, d, rng);
        auto k = rand_mat(lk, d, rng);
        auto v = rand_mat(lk, d, rng);
        auto got = scaled_attention(q, k, v, 1);
        auto want = naive_attention(q->data, k->data, v->data, lq, lk, d);
        for (size_t i = 0; i < want.size(); ++i)
            CHECK(std::abs(got->data[i] - want[i]) < 1e-10);
    }
}

TEST_CASE("multi-head equals per-head single-head attention on channel slices") {
    Rng rng(23);
    const int64_t l = 5, c = 12, heads = 3, d = c / heads;
    auto q = rand_mat(l, c, rng);
    auto k = rand_mat(l, c, rng);
    auto v = rand_mat(l, c, rng);
    auto multi = scaled_attention(q, k, v, heads);
    for (int64_t h = 0; h < heads; ++h) {
        auto qh = ops::slice_channels(q, h * d, (h + 1) * d);
        auto kh = ops::slice_channels(k, h * d, (h + 1) * d);
        auto vh = ops::slice_channels(v, h * d, (h + 1) * d);
        auto single = scaled_attention(qh, kh, vh, 1);
        for (int64_t r = 0; r < l; ++r)
            for (int64_t j = 0; j < d; ++j)
                CHECK(multi->data[size_t(r * c + h * d + j)] ==
                      doctest::Approx(single->data[size_t(r * d + j)]).epsilon(1e-13));
    }
}

TEST_CASE("key mask equals attention over the kept rows") {
    Rng rng(31);
    const int64_t lq = 3, lk = 6, d = 4;
    auto q = rand_mat(lq, d, rng);
    auto k = rand_mat(lk, d, rng);
    auto v = rand_mat(lk, d, rng);
    std::vector<uint8_t> mask = {1, 0, 1, 1, 0, 1};
    auto got = scaled_attention(q, k, v, 1, &mask);

    // build the dense submatrix of kept rows
    std::vector<double> ks, vs;
    int64_t kept = 0;
    for (int64_t r = 0; r < lk; ++r)
        if (mask[size_t(r)]) {
            ++kept;
            for (int64_t j = 0; j < d; ++j) {
                ks.push_back(k->data[size_t(r * d + j)]);
                vs.push_back(v->data[size_t(r * d + j)]);
            }
        }
    auto want = naive_attention(q->data, ks, vs, lq, kept, d);
    for (size_t i = 0; i < want.size(); ++i) CHECK(std::abs(got->data[i] - want[i]) < 1e-10);
}

TEST_CASE("mhpa block reduces to the pooled residual when attention and ffn are zeroed") {
    Rng rng(41);
    const int64_t c = 8;
    ParamRegistry reg;
    auto w = BlockWeights::create(reg, "blk", c, rng);
    for (auto* z : {&w.wv.w, &w.proj.w, &w.ffn2.w})
        std::fill((*z)->data.begin(), (*z)->data.end(), 0.0);

    AttentionConfig cfg;
    cfg.channels = c;
    cfg.heads = 2;
    cfg.q_stride = {1, 2, 2};
    cfg.kv_stride = {1, 2, 2};
    SeqFeature f{rand_mat(2 * 4 * 4, c, rng), {2, 4, 4}};
    auto out = mhpa_block(f, cfg, w);
    CHECK(out.st == STShape{2, 2, 2});
    CHECK(out.x->shape == Shape{8, c});

    // independent 2x2 window average over the grid
    for (int64_t t = 0; t < 2; ++t)
        for (int64_t y = 0; y < 2; ++y)
            for (int64_t x = 0; x < 2; ++x)
                for (int64_t ch = 0; ch < c; ++ch) {
                    double mean = 0.0;
                    for (int64_t dy = 0; dy < 2; ++dy)
                        for (int64_t dx = 0; dx < 2; ++dx)
                            mean += f.x->data[size_t(
                                ((t * 4 + 2 * y + dy) * 4 + 2 * x + dx) * c + ch)];
                    mean /= 4.0;
                    const double got = out.x->data[size_t(((t * 2 + y) * 2 + x) * c + ch)];
                    CHECK(got == doctest::Approx(mean).epsilon(1e-13));
                }
}

TEST_CASE("trunk forward produces the documented token count") {
    Rng rng(3);
    TrunkConfig cfg;
    cfg.ensure_blocks(2);
    ParamRegistry reg;
    auto w = TrunkWeights::create(reg, "trunk", cfg, rng);
    std::vector<double> clip(size_t(16 * 32 * 32 * 3), 0.0);
    Rng cr(9);
    for (auto& v : clip) v = cr.normal(0.0, 0.3);
    auto out = trunk_forward(make_tensor({16, 32, 32, 3}, std::move(clip)), cfg, w);
    // 8x8x8 tokens, block0 pools space by 2 -> 8x4x4 = 128
    CHECK(out.st == STShape{8, 4, 4});
    CHECK(out.x->shape == Shape{128, 48});

    auto bad = zeros({8, 32, 32, 3});
    CHECK_THROWS_AS(trunk_forward(bad, cfg, w), DataError);
}

TEST_CASE("attention gradients pass the finite-difference check") {
    Rng rng(53);
    auto q = rand_mat(3, 4, rng, true);
    auto k = rand_mat(5, 4, rng, true);
    auto v = rand_mat(5, 4, rng, true);
    auto forward = [&]() { return ops::sum(ops::mul(scaled_attention(q, k, v, 2),
                                                    scaled_attention(q, k, v, 2))); };
    CHECK(grad_check(forward, {q, k, v}) < 1e-6);
}
