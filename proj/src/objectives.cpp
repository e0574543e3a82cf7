#include "hct/objectives.hpp"

namespace hct {

using namespace ops;

IclWeights IclWeights::create(ParamRegistry& reg, const std::string& prefix,
                              const std::vector<TaskId>& tasks, int64_t c, int64_t proj_width,
                              Rng& rng) {
    if (proj_width <= 0) proj_width = c;
    IclWeights w;
    for (TaskId t : tasks)
        w.proj.emplace(t, Linear::create(reg, prefix + "." + task_name(t) + ".proj", c, proj_width,
                                         rng));
    return w;
}

Var icl_embed(const Var& feature_map, const Linear& proj) {
    auto pooled = mean_rows(feature_map); // [C]
    auto mapped = proj.apply(reshape(pooled, {1, pooled->shape[0]}));
    auto normed = l2_normalize_rows(mapped);
    return reshape(normed, {normed->shape[1]});
}

Var icl_pair_loss(const Var& f_ci, const Var& f_cj, double tau) {
    if (f_ci->shape.size() != 2 || f_ci->shape != f_cj->shape)
        throw DimError("icl_pair_loss: expected matching [B,P] inputs, got " +
                       shape_str(f_ci->shape) + " vs " + shape_str(f_cj->shape));
    if (tau <= 0.0) throw ConfigError("icl_pair_loss: temperature must be positive");
    const int64_t b = f_ci->shape[0];
    if (b < 2) throw UsageError("icl_pair_loss: batch size " + std::to_string(b) +
                                " leaves no in-batch negatives");
    auto a = l2_normalize_rows(f_ci);
    auto c = l2_normalize_rows(f_cj);
    auto sims = scale(matmul(a, transpose2d(c)), 1.0 / tau); // [B,B], diag = positives
    auto l_ci = neg(sum(diag(log_softmax_rows(sims))));
    auto l_cj = neg(sum(diag(log_softmax_rows(transpose2d(sims)))));
    return add(l_ci, l_cj);
}

Var weighted_ce(const Var& logits, const std::vector<int64_t>& labels,
                const std::vector<double>& class_weights,
                const std::vector<std::string>* clip_ids) {
    if (logits->shape.size() != 2)
        throw DimError("weighted_ce: logits must be [B,K], got " + shape_str(logits->shape));
    const int64_t b = logits->shape[0], k = logits->shape[1];
    if (int64_t(labels.size()) != b)
        throw DimError("weighted_ce: " + std::to_string(labels.size()) + " labels for " +
                       std::to_string(b) + " rows");
    if (int64_t(class_weights.size()) != k)
        throw DimError("weighted_ce: class_weights length " + std::to_string(class_weights.size()) +
                       " vs K=" + std::to_string(k));
    for (int64_t r = 0; r < b; ++r)
        if (labels[size_t(r)] < 0 || labels[size_t(r)] >= k) {
            std::string who = clip_ids ? " (clip " + (*clip_ids)[size_t(r)] + ")" : "";
            throw DataError("weighted_ce: label " + std::to_string(labels[size_t(r)]) +
                            " out of range [0," + std::to_string(k) + ")" + who);
        }
    auto picked = gather_cols(log_softmax_rows(logits), labels); // [B]
    std::vector<double> row_w(size_t(b), 0.0);
    for (int64_t r = 0; r < b; ++r) row_w[size_t(r)] = class_weights[size_t(labels[size_t(r)])];
    auto weighted = mul(picked, make_tensor({b}, std::move(row_w)));
    return scale(sum(weighted), -1.0 / double(b));
}

Var weighted_bce(const Var& logits, const std::vector<double>& targets,
                 const std::vector<double>& class_weights) {
    const int64_t rows = logits->shape.size() == 2 ? logits->shape[0] : 1;
    return scale(bce_with_logits(logits, targets, class_weights), 1.0 / double(rows));
}

HeadSet HeadSet::create(ParamRegistry& reg, const std::string& prefix, int64_t c, int64_t n_phases,
                        int64_t n_steps, int64_t n_actions, int64_t n_instruments, Rng& rng) {
    HeadSet h;
    h.phase = Linear::create(reg, prefix + ".phase", c, n_phases, rng);
    h.step = Linear::create(reg, prefix + ".step", c, n_steps, rng);
    h.action = Linear::create(reg, prefix + ".action", 2 * c, n_actions, rng);
    h.instrument = Linear::create(reg, prefix + ".instrument", c, n_instruments, rng);
    return h;
}

Var total_loss(const std::map<TaskId, Var>& task_losses, const std::vector<Var>& icl_losses,
               const LossWeights& lw) {
    Var acc = zeros({1});
    for (const auto& [task, loss] : task_losses) acc = add(acc, scale(loss, lw.get(task)));
    for (const auto& l : icl_losses) acc = add(acc, l);
    return acc;
}

} // namespace hct
