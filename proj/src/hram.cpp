#include "hct/hram.hpp"

namespace hct {

using namespace ops;

const char* task_name(TaskId id) {
    switch (id) {
        case TaskId::Phase: return "phase";
        case TaskId::Step: return "step";
        case TaskId::Action: return "action";
        case TaskId::Instrument: return "instrument";
    }
    return "?";
}

TaskId task_from_name(const std::string& name) {
    if (name == "phase") return TaskId::Phase;
    if (name == "step") return TaskId::Step;
    if (name == "action") return TaskId::Action;
    if (name == "instrument") return TaskId::Instrument;
    throw ConfigError("unknown task name: '" + name + "'");
}

InstrumentProjector InstrumentProjector::create(ParamRegistry& reg, const std::string& prefix,
                                                int64_t box_dim, int64_t c, Rng& rng) {
    InstrumentProjector p;
    p.lin1 = Linear::create(reg, prefix + ".lin1", box_dim, c, rng);
    p.lin2 = Linear::create(reg, prefix + ".lin2", c, c, rng);
    return p;
}

HramWeights HramWeights::create(ParamRegistry& reg, const std::string& prefix,
                                const HramConfig& cfg, Rng& rng) {
    const int64_t c = cfg.channels;
    const int64_t cw = cfg.secondary_width();
    HramWeights w;
    for (TaskId i : cfg.tasks) {
        TaskHramWeights tw;
        const std::string tp = prefix + "." + task_name(i);
        for (TaskId j : cfg.tasks) {
            if (j == i) continue;
            PairWeights pw;
            const std::string pp = tp + ".from_" + std::string(task_name(j));
            pw.wq = Linear::create(reg, pp + ".wq", c, c, rng);
            pw.wk = Linear::create(reg, pp + ".wk", c, c, rng);
            pw.wv = Linear::create(reg, pp + ".wv", c, c, rng);
            pw.mlp_j = Linear::create(reg, pp + ".mlp_j", c, cw, rng);
            tw.pairs.emplace(j, std::move(pw));
        }
        tw.mlp_i = Linear::create(reg, tp + ".mlp_i", c, c, rng);
        tw.mlp_ij = Linear::create(reg, tp + ".mlp_ij", c, c, rng);
        tw.mhpa = BlockWeights::create(reg, tp + ".mhpa", c, rng);
        w.per_task.emplace(i, std::move(tw));
    }
    w.inst_proj = InstrumentProjector::create(reg, prefix + ".inst_proj", cfg.box_dim, c, rng);
    return w;
}

namespace {

SeqFeature project_pool_grid(const SeqFeature& f, const Linear& proj, const Stride& s) {
    auto y = proj.apply(f.x);
    if (s.unit()) return {y, f.st};
    const int64_t c = y->shape[1];
    auto grid = reshape(y, {f.st.l, f.st.h, f.st.m, c});
    STShape out = pooled_shape(f.st, s);
    return {reshape(pool_st(grid, s.t, s.h, s.w), {out.tokens(), c}), out};
}

} // namespace

Var correlation_attention(const SeqFeature& f_i, const SeqFeature& f_j, const PairWeights& w,
                          const HramConfig& cfg, const std::vector<uint8_t>* key_mask) {
    if (f_i.channels() != f_j.channels())
        throw DimError("correlation_attention: channel mismatch " + shape_str(f_i.x->shape) +
                       " vs " + shape_str(f_j.x->shape));
    auto fq = project_pool_grid(f_i, w.wq, cfg.s1);
    // A key mask refers to raw token rows; pooling would smear it, so the
    // key/value path stays unpooled when a mask is present.
    const Stride kv = key_mask ? Stride{} : cfg.s2;
    auto fk = project_pool_grid(f_j, w.wk, kv);
    auto fv = project_pool_grid(f_j, w.wv, kv);
    return scaled_attention(fq.x, fk.x, fv.x, cfg.corr_heads, key_mask);
}

Var fuse_pair(const Var& corr, const Var& self_att, const PairWeights& pw, const Linear& mlp_i,
              const HramConfig& cfg) {
    (void)cfg.secondary_width(); // validates divisibility, names C and n
    return concat_channels({pw.mlp_j.apply(corr), mlp_i.apply(self_att)});
}

ProjectedInstrument project_instrument(const Var& box_feats, int64_t tokens, int64_t channels,
                                       const InstrumentProjector& w) {
    if (box_feats->shape.size() != 2)
        throw DimError("project_instrument: box features must be [B,box_dim], got " +
                       shape_str(box_feats->shape));
    const int64_t n_box = box_feats->shape[0];
    if (n_box > tokens)
        throw DataError("project_instrument: " + std::to_string(n_box) +
                        " boxes exceed token capacity L=" + std::to_string(tokens));
    ProjectedInstrument out;
    out.mask.assign(size_t(tokens), 0);
    for (int64_t b = 0; b < n_box; ++b) out.mask[size_t(b)] = 1;
    if (n_box == 0) {
        out.map = zeros({tokens, channels});
        return out;
    }
    auto rows = w.lin2.apply(gelu(w.lin1.apply(box_feats)));
    out.map = (n_box == tokens)
                  ? rows
                  : concat_rows({rows, zeros({tokens - n_box, channels})});
    return out;
}

SeqFeature aggregate_task(TaskId primary, const TaskFeatures& feats, const HramConfig& cfg,
                          const HramWeights& w, bool use_slicing_skip) {
    auto fit = feats.maps.find(primary);
    if (fit == feats.maps.end())
        throw UsageError(std::string("aggregate_task: primary task '") + task_name(primary) +
                         "' has no features");
    const SeqFeature& f_i = fit->second;
    const auto& tw = w.per_task.at(primary);

    std::vector<Var> slices;
    for (TaskId j : cfg.tasks) {
        if (j == primary) continue;
        auto jt = feats.maps.find(j);
        if (jt == feats.maps.end())
            throw UsageError(std::string("aggregate_task: secondary task '") + task_name(j) +
                             "' is configured but its features are missing");
        const std::vector<uint8_t>* mask = nullptr;
        auto mit = feats.key_masks.find(j);
        if (mit != feats.key_masks.end()) mask = &mit->second;
        auto corr = correlation_attention(f_i, jt->second, tw.pairs.at(j), cfg, mask);
        slices.push_back(tw.pairs.at(j).mlp_j.apply(corr));
    }

    auto self_att = mhpa_block(f_i, cfg.mhpa_config(), tw.mhpa);
    Var fused = tw.mlp_i.apply(self_att.x);
    if (!slices.empty()) {
        auto stacked = concat_channels(slices); // [L1, (n-1) * C/(n-1)] == [L1, C]
        fused = add(stacked, fused);
    }
    Var refined = tw.mlp_ij.apply(fused);

    if (use_slicing_skip) {
        // channel-slicing skip from the pooled query of the self-attention path
        auto fq = project_pool_grid({w.per_task.at(primary).mhpa.ln1.apply(f_i.x), f_i.st},
                                    tw.mhpa.wq, cfg.s1);
        refined = add(refined, slice_channels(fq.x, 0, cfg.channels));
    }
    return {refined, self_att.st};
}

} // namespace hct
