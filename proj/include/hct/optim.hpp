#pragma once

#include "hct/model.hpp"

namespace hct {

// Linear warmup from zero, then a half cosine down to zero at max_steps.
double cosine_warmup_lr(double base_lr, int64_t step, int64_t warmup_steps, int64_t max_steps);

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9, beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05;
};

// Decoupled weight decay; frozen parameters keep their values and moments.
class AdamW {
  public:
    AdamW(const ParamRegistry& reg, const AdamWConfig& cfg, FreezePlan plan = {});

    void step(double lr_override = -1.0); // applies grads, bumps t
    int64_t t() const { return t_; }

    // moment access for checkpointing
    struct Slot {
        std::string name;
        std::vector<double> m, v;
    };
    std::vector<Slot>& slots() { return slots_; }
    void set_t(int64_t t) { t_ = t; }

  private:
    const ParamRegistry& reg_;
    AdamWConfig cfg_;
    FreezePlan plan_;
    std::vector<Slot> slots_;
    std::vector<uint8_t> tunable_;
    int64_t t_ = 0;
};

} // namespace hct
