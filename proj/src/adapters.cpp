#include "hct/adapters.hpp"

namespace hct {

namespace {
int64_t checked_bottleneck(int64_t c, const AdapterConfig& cfg, const std::string& prefix) {
    const int64_t chat = cfg.bottleneck(c);
    if (chat >= c)
        throw ConfigError("adapter '" + prefix + "': bottleneck width " + std::to_string(chat) +
                          " must be smaller than C=" + std::to_string(c));
    return chat;
}
} // namespace

TAdapterWeights TAdapterWeights::create(ParamRegistry& reg, const std::string& prefix, int64_t c,
                                        const AdapterConfig& cfg, Rng& rng) {
    const int64_t chat = checked_bottleneck(c, cfg, prefix);
    TAdapterWeights w;
    w.down = Linear::create(reg, prefix + ".down", c, chat, rng);
    w.conv = reg.add(prefix + ".conv",
                     randn({cfg.kt, cfg.kh, cfg.kw, chat}, rng,
                           1.0 / std::sqrt(double(cfg.kt * cfg.kh * cfg.kw))));
    w.up = Linear::create(reg, prefix + ".up", chat, c, rng, /*zero_init=*/true);
    return w;
}

SAdapterWeights SAdapterWeights::create(ParamRegistry& reg, const std::string& prefix, int64_t c,
                                        const AdapterConfig& cfg, Rng& rng) {
    const int64_t chat = checked_bottleneck(c, cfg, prefix);
    SAdapterWeights w;
    w.down = Linear::create(reg, prefix + ".down", c, chat, rng);
    w.up = Linear::create(reg, prefix + ".up", chat, c, rng, /*zero_init=*/true);
    return w;
}

Var t_ada(const Var& f, const TAdapterWeights& w) {
    if (f->shape.size() != 4)
        throw DimError("t_ada: input must be [l,h,m,C], got " + shape_str(f->shape));
    const int64_t l = f->shape[0], h = f->shape[1], m = f->shape[2], c = f->shape[3];
    const int64_t chat = w.down.w->shape[1];
    auto flat = ops::reshape(f, {l * h * m, c});
    auto mid = ops::reshape(w.down.apply(flat), {l, h, m, chat});
    auto conv = ops::depthwise_conv3d(mid, w.conv);
    auto up = w.up.apply(ops::reshape(conv, {l * h * m, chat}));
    return ops::add(f, ops::reshape(up, {l, h, m, c}));
}

SeqFeature t_ada(const SeqFeature& f, const TAdapterWeights& w) {
    const int64_t c = f.channels();
    auto grid = ops::reshape(f.x, {f.st.l, f.st.h, f.st.m, c});
    return {ops::reshape(t_ada(grid, w), {f.st.tokens(), c}), f.st};
}

Var s_ada(const Var& f, const SAdapterWeights& w) {
    return ops::add(f, w.up.apply(ops::gelu(w.down.apply(f))));
}

} // namespace hct
