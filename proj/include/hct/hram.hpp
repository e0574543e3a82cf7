#pragma once

#include <map>

#include "hct/attention.hpp"

namespace hct {

enum class TaskId { Phase = 0, Step = 1, Action = 2, Instrument = 3 };
const char* task_name(TaskId id);
TaskId task_from_name(const std::string& name);

struct HramConfig {
    std::vector<TaskId> tasks = {TaskId::Phase, TaskId::Step, TaskId::Action, TaskId::Instrument};
    int64_t channels = 48;
    Stride s1;           // query stride, unit by default so output shape == input shape
    Stride s2{1, 2, 2};  // key/value stride
    int64_t corr_heads = 1; // correlation attention follows the single-softmax form
    int64_t mhpa_heads = 4;
    int64_t box_dim = 256;

    int64_t n() const { return int64_t(tasks.size()); }
    int64_t secondary_width() const {
        const int64_t nn = n();
        if (nn < 2 || channels % (nn - 1))
            throw ConfigError("hram: C=" + std::to_string(channels) +
                              " must be divisible by n-1 with n=" + std::to_string(nn));
        return channels / (nn - 1);
    }
    AttentionConfig mhpa_config() const {
        AttentionConfig c;
        c.channels = channels;
        c.heads = mhpa_heads;
        c.q_stride = s1;
        c.kv_stride = s2;
        return c;
    }
};

// Per-task feature maps plus the instrument key mask (true = real box token).
struct TaskFeatures {
    std::map<TaskId, SeqFeature> maps;
    std::map<TaskId, std::vector<uint8_t>> key_masks;
};

struct PairWeights {
    Linear wq, wk, wv; // correlation projections
    Linear mlp_j;      // C -> C/(n-1)
};

struct TaskHramWeights {
    std::map<TaskId, PairWeights> pairs; // keyed by secondary task
    Linear mlp_i;  // C -> C
    Linear mlp_ij; // C -> C
    BlockWeights mhpa;
};

// Box-feature projector: linear(box_dim -> C) -> GELU -> linear(C -> C).
struct InstrumentProjector {
    Linear lin1, lin2;
    static InstrumentProjector create(ParamRegistry& reg, const std::string& prefix,
                                      int64_t box_dim, int64_t c, Rng& rng);
};

struct HramWeights {
    std::map<TaskId, TaskHramWeights> per_task;
    InstrumentProjector inst_proj;

    static HramWeights create(ParamRegistry& reg, const std::string& prefix,
                              const HramConfig& cfg, Rng& rng);
};

// Query from f_i (stride s1), key/value from f_j (stride s2):
// softmax(f_q f_k^T / sqrt(d)) f_v. key_mask excludes padded rows of f_j.
Var correlation_attention(const SeqFeature& f_i, const SeqFeature& f_j, const PairWeights& w,
                          const HramConfig& cfg,
                          const std::vector<uint8_t>* key_mask = nullptr);

// concat(MLP_j(corr) [L1 x C/(n-1)], MLP_i(self_att) [L1 x C]) channel-wise.
Var fuse_pair(const Var& corr, const Var& self_att, const PairWeights& pw, const Linear& mlp_i,
              const HramConfig& cfg);

// Projected box tokens zero-padded to L rows, with the matching key mask.
struct ProjectedInstrument {
    Var map; // [L, C]
    std::vector<uint8_t> mask;
};
ProjectedInstrument project_instrument(const Var& box_feats, int64_t tokens, int64_t channels,
                                       const InstrumentProjector& w);

// Refined task-specific features: stack the n-1 secondary slices
// MLP_j(C_{j->i}) into an L1 x C map, add MLP_i(MHPA(f_i)), apply MLP_ij,
// then optionally add the channel-slicing skip from the pooled query.
SeqFeature aggregate_task(TaskId primary, const TaskFeatures& feats, const HramConfig& cfg,
                          const HramWeights& w, bool use_slicing_skip);

} // namespace hct
