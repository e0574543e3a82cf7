#pragma once

#include <map>
#include <optional>

#include "hct/hram.hpp"

namespace hct {

struct LossWeights {
    double phase = 0.3, step = 0.2, instrument = 0.3, action = 0.2;

    double get(TaskId id) const {
        switch (id) {
            case TaskId::Phase: return phase;
            case TaskId::Step: return step;
            case TaskId::Instrument: return instrument;
            case TaskId::Action: return action;
        }
        return 0.0;
    }
};

struct IclConfig {
    double tau = 0.07;
    std::vector<std::pair<TaskId, TaskId>> pairs = {{TaskId::Phase, TaskId::Step},
                                                    {TaskId::Instrument, TaskId::Action}};
    int64_t proj_width = 0; // 0 -> same as channel width (no bottleneck)
};

// One mapping function per task feeding the contrastive space.
struct IclWeights {
    std::map<TaskId, Linear> proj;

    static IclWeights create(ParamRegistry& reg, const std::string& prefix,
                             const std::vector<TaskId>& tasks, int64_t c, int64_t proj_width,
                             Rng& rng);
};

// Mean over the space-time tokens -> mapping function -> L2 normalization.
Var icl_embed(const Var& feature_map, const Linear& proj);

// Symmetric InfoNCE over batch-aligned embedding rows (sum reduction);
// row b of each side is the positive pair, the other rows are negatives.
Var icl_pair_loss(const Var& f_ci, const Var& f_cj, double tau);

// Weighted softmax cross-entropy, mean over rows. clip_ids, when given,
// name the offending sample in label-range errors.
Var weighted_ce(const Var& logits, const std::vector<int64_t>& labels,
                const std::vector<double>& class_weights,
                const std::vector<std::string>* clip_ids = nullptr);

// Weighted binary cross-entropy with logits: sum over classes, mean over rows.
Var weighted_bce(const Var& logits, const std::vector<double>& targets,
                 const std::vector<double>& class_weights);

struct HeadSet {
    Linear phase;      // C -> n_phases
    Linear step;       // C -> n_steps
    Linear action;     // 2C -> n_actions (pooled action ++ mean instrument features)
    Linear instrument; // C -> n_instruments, applied per box row

    static HeadSet create(ParamRegistry& reg, const std::string& prefix, int64_t c,
                          int64_t n_phases, int64_t n_steps, int64_t n_actions,
                          int64_t n_instruments, Rng& rng);
};

// L_f = sum_i lambda_i L_i + sum L_cij.
Var total_loss(const std::map<TaskId, Var>& task_losses, const std::vector<Var>& icl_losses,
               const LossWeights& lw);

} // namespace hct
