#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "hct/tensor.hpp"

namespace hct {

// Central-difference gradient check. `forward` must rebuild the graph from
// the current contents of `leaves` and return the scalar loss. Returns the
// max over coordinates of |analytic - numeric| / max(1e-8, |numeric|).
inline double grad_check(const std::function<Var()>& forward, const std::vector<Var>& leaves,
                         double eps = 1e-5) {
    for (const auto& l : leaves) l->zero_grad();
    auto loss = forward();
    backward(loss);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(leaves.size());
    for (const auto& l : leaves) analytic.push_back(l->grad_ref());

    double max_err = 0.0;
    for (size_t li = 0; li < leaves.size(); ++li) {
        auto& leaf = *leaves[li];
        for (size_t i = 0; i < leaf.data.size(); ++i) {
            const double saved = leaf.data[i];
            leaf.data[i] = saved + eps;
            const double fp = forward()->data[0];
            leaf.data[i] = saved - eps;
            const double fm = forward()->data[0];
            leaf.data[i] = saved;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double err =
                std::abs(analytic[li][i] - numeric) / std::max(1e-8, std::abs(numeric));
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

} // namespace hct
