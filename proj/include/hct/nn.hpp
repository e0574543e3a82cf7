#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "hct/tensor.hpp"

namespace hct {

// Spatial-temporal factorization carried alongside an [L,C] token map.
struct STShape {
    int64_t l = 1, h = 1, m = 1;
    int64_t tokens() const { return l * h * m; }
    bool operator==(const STShape&) const = default;
};

struct Stride {
    int64_t t = 1, h = 1, w = 1;
    bool unit() const { return t == 1 && h == 1 && w == 1; }
};

inline STShape pooled_shape(const STShape& st, const Stride& s) {
    return {(st.l + s.t - 1) / s.t, (st.h + s.h - 1) / s.h, (st.m + s.w - 1) / s.w};
}

// Token map with its factorization; x has shape [st.tokens(), C].
struct SeqFeature {
    Var x;
    STShape st;
    int64_t channels() const { return x->shape.back(); }
};

// Ordered, named parameter store. Names are stable across runs and are the
// handles the freeze plan and checkpoints refer to.
class ParamRegistry {
  public:
    Var add(const std::string& name, Var v) {
        if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
        v->requires_grad = true;
        index_[name] = items_.size();
        items_.emplace_back(name, v);
        return v;
    }

    const std::vector<std::pair<std::string, Var>>& items() const { return items_; }

    Var find(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
        return items_[it->second].second;
    }
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    int64_t total_count() const {
        int64_t n = 0;
        for (const auto& [_, v] : items_) n += v->numel();
        return n;
    }

    void zero_grads() const {
        for (const auto& [_, v] : items_) v->zero_grad();
    }

  private:
    std::vector<std::pair<std::string, Var>> items_;
    std::map<std::string, size_t> index_;
};

struct Linear {
    Var w; // [in, out]
    Var b; // [out]

    static Linear create(ParamRegistry& reg, const std::string& prefix, int64_t in, int64_t out,
                         Rng& rng, bool zero_init = false) {
        Linear lin;
        lin.w = zero_init ? zeros({in, out}) : randn({in, out}, rng, 1.0 / std::sqrt(double(in)));
        lin.b = zeros({out});
        reg.add(prefix + ".w", lin.w);
        reg.add(prefix + ".b", lin.b);
        return lin;
    }

    Var apply(const Var& x) const { return ops::add_rowvec(ops::matmul(x, w), b); }
};

struct LayerNorm {
    Var gamma, beta;

    static LayerNorm create(ParamRegistry& reg, const std::string& prefix, int64_t c) {
        LayerNorm ln;
        ln.gamma = full({c}, 1.0);
        ln.beta = zeros({c});
        reg.add(prefix + ".gamma", ln.gamma);
        reg.add(prefix + ".beta", ln.beta);
        return ln;
    }

    Var apply(const Var& x) const { return ops::layer_norm_rows(x, gamma, beta); }
};

} // namespace hct
