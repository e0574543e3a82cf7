#pragma once

#include <optional>

#include "hct/adapters.hpp"
#include "hct/nn.hpp"

namespace hct {

struct AttentionConfig {
    int64_t channels = 48;
    int64_t heads = 4;
    Stride q_stride;  // s1
    Stride kv_stride; // s2

    int64_t head_dim() const {
        if (channels % heads)
            throw ConfigError("attention: C=" + std::to_string(channels) +
                              " not divisible by heads=" + std::to_string(heads));
        return channels / heads;
    }
};

struct BlockWeights {
    LayerNorm ln1;
    Linear wq, wk, wv; // C x C
    Linear proj;       // output projection
    LayerNorm ln2;
    Linear ffn1, ffn2; // C -> 4C -> C

    static BlockWeights create(ParamRegistry& reg, const std::string& prefix, int64_t c, Rng& rng);
};

// Optional adapters threaded through a block (HCT+); null means plain HCT.
struct BlockAdapters {
    const TAdapterWeights* temporal = nullptr;
    const SAdapterWeights* spatial = nullptr;
};

struct PooledQkv {
    SeqFeature q, k, v;
};

// f -> (P_q(f W_q; s1), P_k(f W_k; s2), P_v(f W_v; s2))
PooledQkv pooled_qkv(const SeqFeature& f, const AttentionConfig& cfg, const BlockWeights& w);

// Per-head softmax(q k^T / sqrt(d)) v with heads re-merged. An optional key
// mask excludes padded key/value rows from the softmax.
Var scaled_attention(const Var& fq, const Var& fk, const Var& fv, int64_t heads,
                     const std::vector<uint8_t>* key_mask = nullptr);

// Pre-norm MHPA block: LN -> pooled qkv -> attention -> proj -> residual
// from the pooled query path -> FFN with residual. Adapters slot in per
// the HCT+ wiring (temporal before the block, spatial inside the FFN).
SeqFeature mhpa_block(const SeqFeature& f, const AttentionConfig& cfg, const BlockWeights& w,
                      const BlockAdapters& ada = {});

struct TrunkConfig {
    int64_t clip_len = 16;
    int64_t frame_h = 32, frame_w = 32, cin = 3;
    int64_t patch_t = 2, patch_h = 4, patch_w = 4;
    int64_t channels = 48;
    int64_t heads = 4;
    std::vector<AttentionConfig> blocks; // populated by default_blocks if empty

    STShape token_shape() const {
        return {clip_len / patch_t, frame_h / patch_h, frame_w / patch_w};
    }
    void ensure_blocks(int64_t n_blocks);
};

struct TrunkWeights {
    Linear embed; // patch dim -> C
    std::vector<BlockWeights> blocks;

    static TrunkWeights create(ParamRegistry& reg, const std::string& prefix,
                               const TrunkConfig& cfg, Rng& rng);
};

// clip: [T,H,W,Cin] -> shared token features with their factorization.
SeqFeature trunk_forward(const Var& clip, const TrunkConfig& cfg, const TrunkWeights& w,
                         const std::vector<BlockAdapters>& block_adapters = {});

} // namespace hct
