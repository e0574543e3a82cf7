#pragma once

#include "hct/adapters.hpp"
#include "hct/objectives.hpp"
#include "hct/synthdata.hpp"

namespace hct {

struct ModelConfig {
    TrunkConfig trunk;
    HramConfig hram;
    IclConfig icl;
    LossWeights lambdas;
    AdapterConfig adapter;
    TaxonomySizes sizes;
    int64_t n_blocks = 2;
    bool use_hram = true;
    bool use_icl = true;
    bool use_t_adapters = false;
    bool use_s_adapters = false;
    bool use_slicing_skip = true;
    uint64_t init_seed = 1;

    void finalize(); // fills trunk blocks, syncs channel widths
};

struct Model {
    ModelConfig cfg;
    ParamRegistry params;
    TrunkWeights trunk;
    std::vector<TAdapterWeights> t_adapters; // per block when enabled
    std::vector<SAdapterWeights> s_adapters;
    std::map<TaskId, Linear> task_proj; // trunk tokens -> task-specific map
    HramWeights hram;
    HeadSet heads;
    IclWeights icl;

    static Model create(const ModelConfig& cfg);

    std::vector<BlockAdapters> block_adapters() const;
};

struct ClipOutputs {
    Var phase_logits;      // [1, n_phases]
    Var step_logits;       // [1, n_steps]
    Var action_logits;     // [1, n_actions]
    Var instrument_logits; // [n_box, n_instruments]; null when no boxes
    std::map<TaskId, Var> embeds; // contrastive embeddings, one row each
};

ClipOutputs forward_clip(const Model& m, const Var& clip, const Var& box_feats);

// Freeze plan: a parameter is tunable iff its name matches one of the glob
// patterns ('*' wildcard). An empty plan tunes everything.
struct FreezePlan {
    std::vector<std::string> tunable_patterns;

    bool is_tunable(const std::string& name) const;
};

bool glob_match(const std::string& pattern, const std::string& name);

struct ParamCount {
    std::string variant;
    int64_t total = 0;
    int64_t tunable = 0;
    double fraction() const { return total ? double(tunable) / double(total) : 0.0; }
};

ParamCount count_params(const ParamRegistry& reg, const FreezePlan& plan,
                        const std::string& variant);

// Adapter-tuning table: full fine-tune baseline plus the three adapter
// variants where only adapters and task heads stay tunable.
std::vector<ParamCount> param_count_table(const ModelConfig& base);

} // namespace hct
