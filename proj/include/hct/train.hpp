#pragma once

#include "hct/checkpoint.hpp"
#include "hct/metrics.hpp"

namespace hct {

// Inverse-frequency class weights over the given counts, normalized so the
// weights of the present classes average to 1; absent classes get weight 1.
std::vector<double> inverse_freq_weights(const std::vector<int64_t>& counts);

struct EpochStats {
    int64_t epoch = 0;
    double lr = 0.0;
    double l_phase = 0.0, l_step = 0.0, l_action = 0.0, l_instrument = 0.0;
    double l_contrastive = 0.0;
    double l_total = 0.0;

    std::string to_json() const;
};

struct TrainResult {
    std::vector<EpochStats> history;
    MetricsReport test_metrics;
};

// Deterministic training loop. Writes train_log.jsonl and checkpoint.hctc
// under cfg.out_dir; resumes from resume_path when given. stop_after_epoch
// halts early (schedule still spans cfg.epochs), which keeps an
// interrupted-and-resumed run identical to an uninterrupted one.
TrainResult train_run(const RunConfig& cfg, const Dataset& ds, const std::string& resume_path = "",
                      bool force_resume = false, bool quiet = false,
                      int64_t stop_after_epoch = -1);

// Deterministic evaluation of a model over the given sample indices.
MetricsReport evaluate(const Model& m, const Dataset& ds, const std::vector<size_t>& indices);

// Tiny-model end-to-end gradient check; returns the max relative error.
double gradcheck_run(uint64_t seed, bool quiet = false);

} // namespace hct
