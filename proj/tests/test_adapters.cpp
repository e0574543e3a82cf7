#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "hct/attention.hpp"
#include "hct/gradcheck.hpp"

using namespace hct;

namespace {

Var rand4(int64_t l, int64_t h, int64_t m, int64_t c, Rng& rng, bool rg = false) {
    std::vector<double> d(size_t(l * h * m * c), 0.0);
    for (auto& x : d) x = rng.normal();
    return make_tensor({l, h, m, c}, std::move(d), rg);
}

} // namespace

TEST_CASE("both adapters are exact identities at initialization") {
    Rng rng(3);
    const int64_t c = 8;
    AdapterConfig cfg;
    ParamRegistry reg;
    auto tw = TAdapterWeights::create(reg, "t", c, cfg, rng);
    auto sw = SAdapterWeights::create(reg, "s", c, cfg, rng);

    auto f = rand4(3, 2, 2, c, rng);
    auto tout = t_ada(f, tw);
    for (size_t i = 0; i < f->data.size(); ++i) CHECK(tout->data[i] == f->data[i]); // bit-exact

    std::vector<double> flat(f->data);
    auto f2 = make_tensor({12, c}, std::move(flat));
    auto sout = s_ada(f2, sw);
    for (size_t i = 0; i < f2->data.size(); ++i) CHECK(sout->data[i] == f2->data[i]);
}

TEST_CASE("perturbing the up projection breaks the identity") {
    Rng rng(5);
    const int64_t c = 8;
    ParamRegistry reg;
    auto tw = TAdapterWeights::create(reg, "t", c, AdapterConfig{}, rng);
    tw.up.w->data[3] = 0.5;
    auto f = rand4(2, 2, 2, c, rng);
    auto out = t_ada(f, tw);
    double diff = 0.0;
    for (size_t i = 0; i < f->data.size(); ++i) diff += std::abs(out->data[i] - f->data[i]);
    CHECK(diff > 1e-6);
}

TEST_CASE("parameter counts match the closed form for r in {1/8, 1/4, 1/2}") {
    Rng rng(7);
    const int64_t c = 16;
    for (double r : {0.125, 0.25, 0.5}) {
        AdapterConfig cfg;
        cfg.ratio = r;
        const int64_t chat = cfg.bottleneck(c);
        CHECK(chat == int64_t(r * double(c) + 0.5));

        ParamRegistry treg;
        TAdapterWeights::create(treg, "t", c, cfg, rng);
        const int64_t t_want = (c * chat + chat)                      // down
                               + cfg.kt * cfg.kh * cfg.kw * chat      // depth-wise conv
                               + (chat * c + c);                      // up
        CHECK(treg.total_count() == t_want);

        ParamRegistry sreg;
        SAdapterWeights::create(sreg, "s", c, cfg, rng);
        CHECK(sreg.total_count() == (c * chat + chat) + (chat * c + c));
    }
}

TEST_CASE("a bottleneck at or above C is rejected") {
    Rng rng(9);
    AdapterConfig cfg;
    cfg.ratio = 0.99; // rounds to C for small C
    ParamRegistry reg;
    CHECK_THROWS_AS(TAdapterWeights::create(reg, "t", 2, cfg, rng), ConfigError);
    ParamRegistry reg2;
    CHECK_THROWS_AS(SAdapterWeights::create(reg2, "s", 2, cfg, rng), ConfigError);
}

TEST_CASE("an mhpa block with freshly inserted adapters matches the plain block") {
    Rng rng(11);
    const int64_t c = 8;
    ParamRegistry reg;
    auto w = BlockWeights::create(reg, "blk", c, rng);
    auto tw = TAdapterWeights::create(reg, "t", c, AdapterConfig{}, rng);
    auto sw = SAdapterWeights::create(reg, "s", c, AdapterConfig{}, rng);

    AttentionConfig cfg;
    cfg.channels = c;
    cfg.heads = 2;
    SeqFeature f{rand4(2, 2, 2, c, rng), {2, 2, 2}};
    f.x = ops::reshape(f.x, {8, c});

    auto plain = mhpa_block(f, cfg, w);
    BlockAdapters ada;
    ada.temporal = &tw;
    ada.spatial = &sw;
    auto with = mhpa_block(f, cfg, w, ada);
    for (size_t i = 0; i < plain.x->data.size(); ++i)
        CHECK(with.x->data[i] == doctest::Approx(plain.x->data[i]).epsilon(1e-14));
}

TEST_CASE("the temporal adapter only mixes along time") {
    Rng rng(13);
    const int64_t c = 4;
    AdapterConfig cfg; // kernel (3,1,1)
    ParamRegistry reg;
    auto tw = TAdapterWeights::create(reg, "t", c, cfg, rng);
    // make the adapter active
    for (auto& v : tw.up.w->data) v = rng.normal(0.0, 0.3);

    auto f = rand4(4, 2, 2, c, rng);
    auto base = t_ada(f, tw);
    // changing a pixel at (t=0, y=0, x=0) must not affect outputs at other
    // spatial positions, at any time
    auto g = make_tensor({4, 2, 2, c}, f->data);
    g->data[0] += 1.0;
    auto bumped = t_ada(g, tw);
    for (int64_t t = 0; t < 4; ++t)
        for (int64_t y = 0; y < 2; ++y)
            for (int64_t x = 0; x < 2; ++x)
                for (int64_t ch = 0; ch < c; ++ch) {
                    const size_t i = size_t(((t * 2 + y) * 2 + x) * c + ch);
                    if (y == 0 && x == 0) continue;
                    CHECK(bumped->data[i] == doctest::Approx(base->data[i]).epsilon(1e-14));
                }
}

TEST_CASE("adapter gradients pass the finite-difference check") {
    Rng rng(17);
    const int64_t c = 6;
    AdapterConfig cfg;
    cfg.ratio = 0.5;
    ParamRegistry reg;
    auto tw = TAdapterWeights::create(reg, "t", c, cfg, rng);
    auto sw = SAdapterWeights::create(reg, "s", c, cfg, rng);
    for (auto& v : tw.up.w->data) v = rng.normal(0.0, 0.3);
    for (auto& v : sw.up.w->data) v = rng.normal(0.0, 0.3);

    auto f = rand4(3, 2, 2, c, rng, true);
    auto forward = [&]() {
        auto t = t_ada(f, tw);
        auto flat = ops::reshape(t, {12, c});
        auto s = s_ada(flat, sw);
        return ops::sum(ops::mul(s, s));
    };
    std::vector<Var> leaves = {f, tw.down.w, tw.conv, tw.up.w, sw.down.w, sw.up.w};
    CHECK(grad_check(forward, leaves) < 1e-6);
}
