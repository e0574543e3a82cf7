#include "hct/attention.hpp"

namespace hct {

using namespace ops;

BlockWeights BlockWeights::create(ParamRegistry& reg, const std::string& prefix, int64_t c,
                                  Rng& rng) {
    BlockWeights w;
    w.ln1 = LayerNorm::create(reg, prefix + ".ln1", c);
    w.wq = Linear::create(reg, prefix + ".wq", c, c, rng);
    w.wk = Linear::create(reg, prefix + ".wk", c, c, rng);
    w.wv = Linear::create(reg, prefix + ".wv", c, c, rng);
    w.proj = Linear::create(reg, prefix + ".proj", c, c, rng);
    w.ln2 = LayerNorm::create(reg, prefix + ".ln2", c);
    w.ffn1 = Linear::create(reg, prefix + ".ffn1", c, 4 * c, rng);
    w.ffn2 = Linear::create(reg, prefix + ".ffn2", 4 * c, c, rng);
    return w;
}

namespace {

// Project then pool on the spatial-temporal grid.
SeqFeature project_pool(const SeqFeature& f, const Linear& proj, const Stride& s) {
    const int64_t c = proj.w->shape[1];
    if (f.x->shape[0] != f.st.tokens())
        throw DimError("pooled_qkv: token count " + std::to_string(f.x->shape[0]) +
                       " does not factor as (" + std::to_string(f.st.l) + "," +
                       std::to_string(f.st.h) + "," + std::to_string(f.st.m) + ")");
    auto y = proj.apply(f.x);
    if (s.unit()) return {y, f.st};
    auto grid = reshape(y, {f.st.l, f.st.h, f.st.m, c});
    auto pooled = pool_st(grid, s.t, s.h, s.w);
    STShape out = pooled_shape(f.st, s);
    return {reshape(pooled, {out.tokens(), c}), out};
}

} // namespace

PooledQkv pooled_qkv(const SeqFeature& f, const AttentionConfig& cfg, const BlockWeights& w) {
    return {project_pool(f, w.wq, cfg.q_stride), project_pool(f, w.wk, cfg.kv_stride),
            project_pool(f, w.wv, cfg.kv_stride)};
}

Var scaled_attention(const Var& fq, const Var& fk, const Var& fv, int64_t heads,
                     const std::vector<uint8_t>* key_mask) {
    if (fq->shape.size() != 2 || fk->shape.size() != 2 || fv->shape.size() != 2)
        throw DimError("scaled_attention: expected 2-d inputs");
    const int64_t c = fq->shape[1];
    if (fk->shape[1] != c || fv->shape[1] != c || fk->shape[0] != fv->shape[0])
        throw DimError("scaled_attention: key/value mismatch " + shape_str(fk->shape) + " vs " +
                       shape_str(fv->shape) + " vs q " + shape_str(fq->shape));
    if (c % heads)
        throw DimError("scaled_attention: C=" + std::to_string(c) +
                       " not divisible by heads=" + std::to_string(heads));
    const int64_t d = c / heads;
    const double inv_sqrt_d = 1.0 / std::sqrt(double(d));
    std::vector<Var> outs;
    outs.reserve(size_t(heads));
    for (int64_t h = 0; h < heads; ++h) {
        auto qh = slice_channels(fq, h * d, (h + 1) * d);
        auto kh = slice_channels(fk, h * d, (h + 1) * d);
        auto vh = slice_channels(fv, h * d, (h + 1) * d);
        auto scores = scale(matmul(qh, transpose2d(kh)), inv_sqrt_d);
        auto attn = key_mask ? masked_softmax_rows(scores, *key_mask) : softmax_rows(scores);
        outs.push_back(matmul(attn, vh));
    }
    return heads == 1 ? outs[0] : concat_channels(outs);
}

SeqFeature mhpa_block(const SeqFeature& f, const AttentionConfig& cfg, const BlockWeights& w,
                      const BlockAdapters& ada) {
    SeqFeature x = f;
    if (ada.temporal) x = t_ada(x, *ada.temporal);

    auto normed = SeqFeature{w.ln1.apply(x.x), x.st};
    auto qkv = pooled_qkv(normed, cfg, w);
    auto att = scaled_attention(qkv.q.x, qkv.k.x, qkv.v.x, cfg.heads);
    auto o = w.proj.apply(att);

    // residual from the pooled query path
    Var res = x.x;
    if (!cfg.q_stride.unit()) {
        auto grid = reshape(x.x, {x.st.l, x.st.h, x.st.m, cfg.channels});
        res = reshape(pool_st(grid, cfg.q_stride.t, cfg.q_stride.h, cfg.q_stride.w),
                      {qkv.q.st.tokens(), cfg.channels});
    }
    auto z = add(res, o);

    auto ffn = w.ffn2.apply(gelu(w.ffn1.apply(w.ln2.apply(z))));
    if (ada.spatial) ffn = s_ada(ffn, *ada.spatial);
    return {add(z, ffn), qkv.q.st};
}

void TrunkConfig::ensure_blocks(int64_t n_blocks) {
    if (!blocks.empty()) return;
    for (int64_t i = 0; i < n_blocks; ++i) {
        AttentionConfig b;
        b.channels = channels;
        b.heads = heads;
        // first block downsamples space, later blocks keep resolution
        b.q_stride = (i == 0) ? Stride{1, 2, 2} : Stride{1, 1, 1};
        b.kv_stride = Stride{1, 2, 2};
        blocks.push_back(b);
    }
}

TrunkWeights TrunkWeights::create(ParamRegistry& reg, const std::string& prefix,
                                  const TrunkConfig& cfg, Rng& rng) {
    TrunkWeights w;
    const int64_t patch_dim = cfg.patch_t * cfg.patch_h * cfg.patch_w * cfg.cin;
    w.embed = Linear::create(reg, prefix + ".embed", patch_dim, cfg.channels, rng);
    for (size_t i = 0; i < cfg.blocks.size(); ++i)
        w.blocks.push_back(
            BlockWeights::create(reg, prefix + ".block" + std::to_string(i), cfg.channels, rng));
    return w;
}

SeqFeature trunk_forward(const Var& clip, const TrunkConfig& cfg, const TrunkWeights& w,
                         const std::vector<BlockAdapters>& block_adapters) {
    if (clip->shape.size() != 4 || clip->shape[0] != cfg.clip_len)
        throw DataError("trunk_forward: clip shape " + shape_str(clip->shape) +
                        " does not match configured clip length " + std::to_string(cfg.clip_len));
    auto tokens = ops::patchify(clip, cfg.patch_t, cfg.patch_h, cfg.patch_w);
    SeqFeature f{w.embed.apply(tokens), cfg.token_shape()};
    for (size_t i = 0; i < w.blocks.size(); ++i) {
        BlockAdapters ada;
        if (i < block_adapters.size()) ada = block_adapters[i];
        f = mhpa_block(f, cfg.blocks[i], w.blocks[i], ada);
    }
    return f;
}

} // namespace hct
