#include "hct/optim.hpp"

#include <cmath>

namespace hct {

double cosine_warmup_lr(double base_lr, int64_t step, int64_t warmup_steps, int64_t max_steps) {
    if (max_steps <= warmup_steps)
        throw ConfigError("schedule: max_steps (" + std::to_string(max_steps) +
                          ") must exceed warmup_steps (" + std::to_string(warmup_steps) + ")");
    if (step < 0 || step > max_steps)
        throw UsageError("schedule: step " + std::to_string(step) + " outside [0," +
                         std::to_string(max_steps) + "]");
    if (warmup_steps > 0 && step < warmup_steps)
        return base_lr * double(step) / double(warmup_steps);
    const double progress = double(step - warmup_steps) / double(max_steps - warmup_steps);
    return base_lr * 0.5 * (1.0 + std::cos(3.141592653589793 * progress));
}

AdamW::AdamW(const ParamRegistry& reg, const AdamWConfig& cfg, FreezePlan plan)
    : reg_(reg), cfg_(cfg), plan_(std::move(plan)) {
    for (const auto& [name, v] : reg.items()) {
        Slot s;
        s.name = name;
        s.m.assign(v->data.size(), 0.0);
        s.v.assign(v->data.size(), 0.0);
        slots_.push_back(std::move(s));
        tunable_.push_back(plan_.is_tunable(name));
    }
}

void AdamW::step(double lr_override) {
    const double lr = lr_override >= 0.0 ? lr_override : cfg_.lr;
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    const auto& items = reg_.items();
    for (size_t i = 0; i < items.size(); ++i) {
        if (!tunable_[i]) continue;
        auto& p = items[i].second;
        if (p->grad.empty()) continue;
        auto& m = slots_[i].m;
        auto& v = slots_[i].v;
        for (size_t j = 0; j < p->data.size(); ++j) {
            const double g = p->grad[j];
            if (!std::isfinite(g))
                throw NumericError("adamw: non-finite gradient in '" + items[i].first + "'");
            m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
            v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p->data[j] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                                cfg_.weight_decay * p->data[j]);
        }
    }
}

} // namespace hct
