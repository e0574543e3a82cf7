#pragma once

#include "hct/nn.hpp"

namespace hct {

// Residual bottleneck adapters. W_up is zero-initialized, so both adapters
// are exact identities until trained; with the backbone frozen, inserting
// them is loss-neutral at step 0.

struct AdapterConfig {
    double ratio = 0.25; // bottleneck width = round(ratio * C), at least 1
    int64_t kt = 3, kh = 1, kw = 1; // temporal depth-wise conv kernel

    int64_t bottleneck(int64_t c) const {
        int64_t chat = int64_t(ratio * double(c) + 0.5);
        if (chat < 1) chat = 1;
        return chat;
    }
};

// Temporal adapter: FC down -> depth-wise 3D conv -> FC up, residual.
struct TAdapterWeights {
    Linear down; // C -> Chat
    Var conv;    // [kt,kh,kw,Chat]
    Linear up;   // Chat -> C, zero-init

    static TAdapterWeights create(ParamRegistry& reg, const std::string& prefix, int64_t c,
                                  const AdapterConfig& cfg, Rng& rng);
};

// Spatial adapter: FC down -> GELU -> FC up, residual.
struct SAdapterWeights {
    Linear down;
    Linear up; // zero-init

    static SAdapterWeights create(ParamRegistry& reg, const std::string& prefix, int64_t c,
                                  const AdapterConfig& cfg, Rng& rng);
};

// f: [l,h,m,C] -> [l,h,m,C]
Var t_ada(const Var& f, const TAdapterWeights& w);
SeqFeature t_ada(const SeqFeature& f, const TAdapterWeights& w);

// F: [L,C] -> [L,C]
Var s_ada(const Var& f, const SAdapterWeights& w);

} // namespace hct
