#include "hct/model.hpp"

namespace hct {

using namespace ops;

void ModelConfig::finalize() {
    trunk.ensure_blocks(n_blocks);
    hram.channels = trunk.channels;
    if (icl.proj_width <= 0) icl.proj_width = trunk.channels;
}

std::vector<BlockAdapters> Model::block_adapters() const {
    std::vector<BlockAdapters> out(cfg.trunk.blocks.size());
    for (size_t b = 0; b < out.size(); ++b) {
        if (cfg.use_t_adapters) out[b].temporal = &t_adapters[b];
        if (cfg.use_s_adapters) out[b].spatial = &s_adapters[b];
    }
    return out;
}

Model Model::create(const ModelConfig& cfg_in) {
    Model m;
    m.cfg = cfg_in;
    m.cfg.finalize();
    const auto& cfg = m.cfg;
    const int64_t c = cfg.trunk.channels;
    Rng rng(cfg.init_seed);

    m.trunk = TrunkWeights::create(m.params, "trunk", cfg.trunk, rng);
    for (size_t b = 0; b < cfg.trunk.blocks.size(); ++b) {
        const std::string bp = "trunk.block" + std::to_string(b);
        if (cfg.use_t_adapters)
            m.t_adapters.push_back(
                TAdapterWeights::create(m.params, bp + ".t_ada", c, cfg.adapter, rng));
        if (cfg.use_s_adapters)
            m.s_adapters.push_back(
                SAdapterWeights::create(m.params, bp + ".s_ada", c, cfg.adapter, rng));
    }

    for (TaskId t : cfg.hram.tasks)
        if (t != TaskId::Instrument)
            m.task_proj.emplace(
                t, Linear::create(m.params, std::string("task_proj.") + task_name(t), c, c, rng));

    if (cfg.use_hram) {
        m.hram = HramWeights::create(m.params, "hram", cfg.hram, rng);
    } else {
        // the baseline still needs the box-feature projector for the
        // instrument stream
        m.hram.inst_proj =
            InstrumentProjector::create(m.params, "hram.inst_proj", cfg.hram.box_dim, c, rng);
    }

    m.heads = HeadSet::create(m.params, "heads", c, cfg.sizes.phases, cfg.sizes.steps,
                              cfg.sizes.actions, cfg.sizes.instruments, rng);
    if (cfg.use_icl)
        m.icl = IclWeights::create(m.params, "icl", cfg.hram.tasks, c, cfg.icl.proj_width, rng);
    return m;
}

ClipOutputs forward_clip(const Model& m, const Var& clip, const Var& box_feats) {
    const auto& cfg = m.cfg;
    auto adapters = m.block_adapters();
    SeqFeature shared = trunk_forward(clip, cfg.trunk, m.trunk, adapters);
    const int64_t tokens = shared.st.tokens();
    const int64_t c = shared.channels();
    const int64_t n_box = box_feats ? box_feats->shape[0] : 0;

    TaskFeatures feats;
    for (const auto& [t, proj] : m.task_proj)
        feats.maps.emplace(t, SeqFeature{proj.apply(shared.x), shared.st});
    auto inst = project_instrument(n_box ? box_feats : zeros({0, cfg.hram.box_dim}), tokens, c,
                                   m.hram.inst_proj);
    feats.maps.emplace(TaskId::Instrument, SeqFeature{inst.map, shared.st});
    feats.key_masks.emplace(TaskId::Instrument, inst.mask);

    std::map<TaskId, SeqFeature> refined;
    if (cfg.use_hram) {
        for (TaskId t : cfg.hram.tasks)
            refined.emplace(t, aggregate_task(t, feats, cfg.hram, m.hram, cfg.use_slicing_skip));
    } else {
        refined = feats.maps;
    }

    auto pooled_row = [&](TaskId t) {
        auto v = mean_rows(refined.at(t).x); // [C]
        return reshape(v, {1, c});
    };

    ClipOutputs out;
    out.phase_logits = m.heads.phase.apply(pooled_row(TaskId::Phase));
    out.step_logits = m.heads.step.apply(pooled_row(TaskId::Step));

    // action head sees pooled action features plus the pooled real box rows
    Var inst_pool;
    const auto& f_inst = refined.at(TaskId::Instrument).x;
    if (n_box > 0)
        inst_pool = reshape(mean_rows(slice_rows(f_inst, 0, n_box)), {1, c});
    else
        inst_pool = zeros({1, c});
    out.action_logits =
        m.heads.action.apply(concat_channels({pooled_row(TaskId::Action), inst_pool}));
    if (n_box > 0)
        out.instrument_logits = m.heads.instrument.apply(slice_rows(f_inst, 0, n_box));

    if (cfg.use_icl)
        for (TaskId t : cfg.hram.tasks)
            out.embeds.emplace(t, icl_embed(refined.at(t).x, m.icl.proj.at(t)));
    return out;
}

bool glob_match(const std::string& pattern, const std::string& name) {
    // iterative '*' matcher with backtracking
    size_t p = 0, n = 0, star = std::string::npos, mark = 0;
    while (n < name.size()) {
        if (p < pattern.size() && (pattern[p] == name[n])) {
            ++p, ++n;
        } else if (p < pattern.size() && pattern[p] == '*') {
            star = p++;
            mark = n;
        } else if (star != std::string::npos) {
            p = star + 1;
            n = ++mark;
        } else {
            return false;
        }
    }
    while (p < pattern.size() && pattern[p] == '*') ++p;
    return p == pattern.size();
}

bool FreezePlan::is_tunable(const std::string& name) const {
    if (tunable_patterns.empty()) return true;
    for (const auto& pat : tunable_patterns)
        if (glob_match(pat, name)) return true;
    return false;
}

ParamCount count_params(const ParamRegistry& reg, const FreezePlan& plan,
                        const std::string& variant) {
    ParamCount pc;
    pc.variant = variant;
    for (const auto& [name, v] : reg.items()) {
        pc.total += v->numel();
        if (plan.is_tunable(name)) pc.tunable += v->numel();
    }
    return pc;
}

std::vector<ParamCount> param_count_table(const ModelConfig& base) {
    std::vector<ParamCount> rows;
    const FreezePlan adapters_only{{"*t_ada*", "*s_ada*", "heads.*"}};

    auto variant = [&](const std::string& name, bool t, bool s, const FreezePlan& plan) {
        ModelConfig cfg = base;
        cfg.use_t_adapters = t;
        cfg.use_s_adapters = s;
        Model m = Model::create(cfg);
        rows.push_back(count_params(m.params, plan, name));
    };
    variant("full_finetune", false, false, {});
    variant("s_ada", false, true, adapters_only);
    variant("t_ada", true, false, adapters_only);
    variant("st_ada", true, true, adapters_only);
    return rows;
}

} // namespace hct
