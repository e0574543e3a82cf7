#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "hct/optim.hpp"

using namespace hct;

TEST_CASE("cosine warmup schedule hits its landmark points") {
    const double base = 0.1;
    CHECK(cosine_warmup_lr(base, 0, 10, 100) == 0.0);
    CHECK(cosine_warmup_lr(base, 5, 10, 100) == doctest::Approx(0.05));
    CHECK(cosine_warmup_lr(base, 10, 10, 100) == doctest::Approx(base));
    CHECK(cosine_warmup_lr(base, 55, 10, 100) == doctest::Approx(base / 2.0).epsilon(1e-12));
    CHECK(cosine_warmup_lr(base, 100, 10, 100) == doctest::Approx(0.0).epsilon(1e-15));
    // no warmup starts at full rate
    CHECK(cosine_warmup_lr(base, 0, 0, 100) == doctest::Approx(base));
    CHECK_THROWS_AS(cosine_warmup_lr(base, 0, 100, 100), ConfigError);
    CHECK_THROWS_AS(cosine_warmup_lr(base, 101, 10, 100), UsageError);
}

TEST_CASE("the schedule is monotone up through warmup and down after") {
    double prev = -1.0;
    for (int64_t s = 0; s <= 10; ++s) {
        const double lr = cosine_warmup_lr(1.0, s, 10, 50);
        CHECK(lr >= prev);
        prev = lr;
    }
    for (int64_t s = 10; s <= 50; ++s) {
        const double lr = cosine_warmup_lr(1.0, s, 10, 50);
        CHECK(lr <= prev + 1e-15);
        prev = lr;
    }
}

TEST_CASE("adamw first step matches the closed form") {
    ParamRegistry reg;
    auto x = make_tensor({1}, {2.0});
    reg.add("x", x);
    AdamWConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.05;
    AdamW opt(reg, cfg);
    x->grad_ref()[0] = 0.4;
    opt.step();
    // after bias correction m-hat = g, v-hat = g^2
    const double want = 2.0 - 0.1 * (0.4 / (std::sqrt(0.16) + cfg.eps) + 0.05 * 2.0);
    CHECK(x->data[0] == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("weight decay is decoupled from the gradient") {
    ParamRegistry reg;
    auto x = make_tensor({1}, {1.0});
    reg.add("x", x);
    AdamWConfig cfg;
    cfg.lr = 0.01;
    cfg.weight_decay = 0.5;
    AdamW opt(reg, cfg);
    x->grad_ref(); // zero gradient, decay must still act
    opt.step();
    CHECK(x->data[0] == doctest::Approx(1.0 - 0.01 * 0.5 * 1.0).epsilon(1e-12));
}

TEST_CASE("adamw minimizes a quadratic") {
    ParamRegistry reg;
    auto x = make_tensor({1}, {-4.0});
    reg.add("x", x);
    AdamWConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.0;
    AdamW opt(reg, cfg);
    for (int i = 0; i < 500; ++i) {
        x->zero_grad();
        x->grad_ref()[0] = 2.0 * (x->data[0] - 3.0);
        opt.step();
    }
    CHECK(x->data[0] == doctest::Approx(3.0).epsilon(1e-3));
}

TEST_CASE("frozen parameters stay bit-exact") {
    ParamRegistry reg;
    auto a = make_tensor({1}, {1.25});
    auto b = make_tensor({1}, {0.75});
    reg.add("tune.a", a);
    reg.add("frozen.b", b);
    FreezePlan plan{{"tune.*"}};
    AdamW opt(reg, {}, plan);
    for (int i = 0; i < 10; ++i) {
        a->zero_grad();
        b->zero_grad();
        a->grad_ref()[0] = 1.0;
        b->grad_ref()[0] = 1.0;
        opt.step();
    }
    CHECK(b->data[0] == 0.75); // exact
    CHECK(a->data[0] != 1.25);
}

TEST_CASE("a non-finite gradient raises a numeric error") {
    ParamRegistry reg;
    auto x = make_tensor({1}, {0.0});
    reg.add("x", x);
    AdamW opt(reg, {});
    x->grad_ref()[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(opt.step(), NumericError);
}
