#include "hct/tensor.hpp"

#include <algorithm>
#include <cblas.h>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace hct {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

Var make_tensor(Shape shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != int64_t(data.size()))
        throw DimError("tensor: shape " + shape_str(shape) + " does not match data length " +
                       std::to_string(data.size()));
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->data = std::move(data);
    t->requires_grad = requires_grad;
    return t;
}

Var zeros(const Shape& shape, bool requires_grad) {
    return make_tensor(shape, std::vector<double>(size_t(shape_numel(shape)), 0.0), requires_grad);
}

Var full(const Shape& shape, double value, bool requires_grad) {
    return make_tensor(shape, std::vector<double>(size_t(shape_numel(shape)), value), requires_grad);
}

Var randn(const Shape& shape, Rng& rng, double stddev, bool requires_grad) {
    std::vector<double> d(size_t(shape_numel(shape)));
    for (auto& v : d) v = rng.normal(0.0, stddev);
    return make_tensor(shape, std::move(d), requires_grad);
}

void check_finite(const Tensor& t, const char* where) {
    for (double v : t.data)
        if (!std::isfinite(v))
            throw NumericError(std::string("non-finite value produced by '") + where + "'");
}

namespace {

Var make_op(Shape shape, std::vector<double> data, std::vector<Var> parents,
            std::function<void(Tensor&)> bwd, const char* name) {
    auto out = make_tensor(std::move(shape), std::move(data));
    out->op_name = name;
    check_finite(*out, name);
    bool needs = false;
    for (const auto& p : parents)
        if (p->requires_grad) needs = true;
    if (needs) {
        out->requires_grad = true;
        out->parents = std::move(parents);
        out->backward_fn = std::move(bwd);
    }
    return out;
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a->shape != b->shape)
        throw DimError(std::string(op) + ": shape mismatch " + shape_str(a->shape) + " vs " +
                       shape_str(b->shape));
}

// Rows/cols view of a tensor interpreted as [R, C] with C = last extent.
std::pair<int64_t, int64_t> as_rows(const Tensor& t, const char* op) {
    if (t.shape.empty()) throw DimError(std::string(op) + ": scalar input not supported");
    const int64_t c = t.shape.back();
    return {t.numel() / c, c};
}

} // namespace

void backward(const Var& loss) {
    if (loss->numel() != 1)
        throw UsageError("backward: loss must be scalar, got shape " + shape_str(loss->shape));
    if (!loss->requires_grad) return;

    // Iterative DFS topological order; parent order makes it deterministic.
    std::vector<Tensor*> topo;
    std::unordered_set<Tensor*> visited;
    std::vector<std::pair<Tensor*, size_t>> stack;
    stack.emplace_back(loss.get(), 0);
    visited.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Tensor* p = node->parents[idx++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }

    loss->grad_ref()[0] += 1.0;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Tensor* node = *it;
        if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
    for (Tensor* node : topo) {
        if (node->parents.empty() && !node->grad.empty())
            for (double g : node->grad)
                if (!std::isfinite(g)) throw NumericError("non-finite gradient after backward");
    }
}

namespace ops {

Var add(const Var& a, const Var& b) {
    require_same_shape(a, b, "add");
    std::vector<double> d(a->data.size());
    for (size_t i = 0; i < d.size(); ++i) d[i] = a->data[i] + b->data[i];
    return make_op(
        a->shape, std::move(d), {a, b},
        [a, b](Tensor& out) {
            if (a->requires_grad) {
                auto& ga = a->grad_ref();
                for (size_t i = 0; i < ga.size(); ++i) ga[i] += out.grad[i];
            }
            if (b->requires_grad) {
                auto& gb = b->grad_ref();
                for (size_t i = 0; i < gb.size(); ++i) gb[i] += out.grad[i];
            }
        },
        "add");
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> d(a->data.size());
    for (size_t i = 0; i < d.size(); ++i) d[i] = a->data[i] - b->data[i];
    return make_op(
        a->shape, std::move(d), {a, b},
        [a, b](Tensor& out) {
            if (a->requires_grad) {
                auto& ga = a->grad_ref();
                for (size_t i = 0; i < ga.size(); ++i) ga[i] += out.grad[i];
            }
            if (b->requires_grad) {
                auto& gb = b->grad_ref();
                for (size_t i = 0; i < gb.size(); ++i) gb[i] -= out.grad[i];
            }
        },
        "sub");
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> d(a->data.size());
    for (size_t i = 0; i < d.size(); ++i) d[i] = a->data[i] * b->data[i];
    return make_op(
        a->shape, std::move(d), {a, b},
        [a, b](Tensor& out) {
            if (a->requires_grad) {
                auto& ga = a->grad_ref();
                for (size_t i = 0; i < ga.size(); ++i) ga[i] += out.grad[i] * b->data[i];
            }
            if (b->requires_grad) {
                auto& gb = b->grad_ref();
                for (size_t i = 0; i < gb.size(); ++i) gb[i] += out.grad[i] * a->data[i];
            }
        },
        "mul");
}

Var scale(const Var& a, double c) {
    std::vector<double> d(a->data.size());
    for (size_t i = 0; i < d.size(); ++i) d[i] = a->data[i] * c;
    return make_op(
        a->shape, std::move(d), {a},
        [a, c](Tensor& out) {
            auto& ga = a->grad_ref();
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += out.grad[i] * c;
        },
        "scale");
}

Var add_scalar(const Var& a, double c) {
    std::vector<double> d(a->data.size());
    for (size_t i = 0; i < d.size(); ++i) d[i] = a->data[i] + c;
    return make_op(
        a->shape, std::move(d), {a},
        [a](Tensor& out) {
            auto& ga = a->grad_ref();
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += out.grad[i];
        },
        "add_scalar");
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var add_rowvec(const Var& x, const Var& b) {
    auto [rows, cols] = as_rows(*x, "add_rowvec");
    if (b->shape.size() != 1 || b->shape[0] != cols)
        throw DimError("add_rowvec: bias " + shape_str(b->shape) + " incompatible with " +
                       shape_str(x->shape));
    std::vector<double> d(x->data.size());
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c)
            d[size_t(r * cols + c)] = x->data[size_t(r * cols + c)] + b->data[size_t(c)];
    return make_op(
        x->shape, std::move(d), {x, b},
        [x, b, rows = rows, cols = cols](Tensor& out) {
            if (x->requires_grad) {
                auto& gx = x->grad_ref();
                for (size_t i = 0; i < gx.size(); ++i) gx[i] += out.grad[i];
            }
            if (b->requires_grad) {
                auto& gb = b->grad_ref();
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t c = 0; c < cols; ++c)
                        gb[size_t(c)] += out.grad[size_t(r * cols + c)];
            }
        },
        "add_rowvec");
}

Var matmul(const Var& a, const Var& b) {
    if (a->shape.size() != 2 || b->shape.size() != 2 || a->shape[1] != b->shape[0])
        throw DimError("matmul: incompatible shapes " + shape_str(a->shape) + " x " +
                       shape_str(b->shape));
    const int64_t m = a->shape[0], k = a->shape[1], n = b->shape[1];
    std::vector<double> d(size_t(m * n), 0.0);
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, int(m), int(n), int(k), 1.0,
                a->data.data(), int(k), b->data.data(), int(n), 0.0, d.data(), int(n));
    return make_op(
        {m, n}, std::move(d), {a, b},
        [a, b, m, k, n](Tensor& out) {
            if (a->requires_grad) {
                // dA = G . B^T
                cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, int(m), int(k), int(n), 1.0,
                            out.grad.data(), int(n), b->data.data(), int(n), 1.0,
                            a->grad_ref().data(), int(k));
            }
            if (b->requires_grad) {
                // dB = A^T . G
                cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, int(k), int(n), int(m), 1.0,
                            a->data.data(), int(k), out.grad.data(), int(n), 1.0,
                            b->grad_ref().data(), int(n));
            }
        },
        "matmul");
}

Var transpose2d(const Var& a) {
    if (a->shape.size() != 2)
        throw DimError("transpose2d: expected 2-d tensor, got " + shape_str(a->shape));
    const int64_t r = a->shape[0], c = a->shape[1];
    std::vector<double> d(a->data.size());
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) d[size_t(j * r + i)] = a->data[size_t(i * c + j)];
    return make_op(
        {c, r}, std::move(d), {a},
        [a, r, c](Tensor& out) {
            auto& ga = a->grad_ref();
            for (int64_t i = 0; i < r; ++i)
                for (int64_t j = 0; j < c; ++j) ga[size_t(i * c + j)] += out.grad[size_t(j * r + i)];
        },
        "transpose2d");
}

Var sum(const Var& a) {
    double s = 0.0;
    for (double v : a->data) s += v;
    return make_op(
        {1}, {s}, {a},
        [a](Tensor& out) {
            auto& ga = a->grad_ref();
            for (auto& g : ga) g += out.grad[0];
        },
        "sum");
}

Var mean(const Var& a) {
    const double inv = 1.0 / double(a->numel());
    double s = 0.0;
    for (double v : a->data) s += v;
    return make_op(
        {1}, {s * inv}, {a},
        [a, inv](Tensor& out) {
            auto& ga = a->grad_ref();
            for (auto& g : ga) g += out.grad[0] * inv;
        },
        "mean");
}

Var mean_rows(const Var& x) {
    auto [rows, cols] = as_rows(*x, "mean_rows");
    std::vector<double> d(size_t(cols), 0.0);
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c) d[size_t(c)] += x->data[size_t(r * cols + c)];
    const double inv = 1.0 / double(rows);
    for (auto& v : d) v *= inv;
    return make_op(
        {cols}, std::move(d), {x},
        [x, rows = rows, cols = cols, inv](Tensor& out) {
            auto& gx = x->grad_ref();
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t c = 0; c < cols; ++c)
                    gx[size_t(r * cols + c)] += out.grad[size_t(c)] * inv;
        },
        "mean_rows");
}

Var softmax_rows(const Var& x) {
    auto [rows, cols] = as_rows(*x, "softmax_rows");
    std::vector<double> d(x->data.size());
    for (int64_t r = 0; r < rows; ++r) {
        const double* in = &x->data[size_t(r * cols)];
        double* out = &d[size_t(r * cols)];
        double mx = in[0];
        for (int64_t c = 1; c < cols; ++c) mx = std::max(mx, in[c]);
        double z = 0.0;
        for (int64_t c = 0; c < cols; ++c) z += (out[c] = std::exp(in[c] - mx));
        const double inv = 1.0 / z;
        for (int64_t c = 0; c < cols; ++c) out[c] *= inv;
    }
    return make_op(
        x->shape, std::move(d), {x},
        [x, rows = rows, cols = cols](Tensor& out) {
            auto& gx = x->grad_ref();
            for (int64_t r = 0; r < rows; ++r) {
                const double* y = &out.data[size_t(r * cols)];
                const double* g = &out.grad[size_t(r * cols)];
                double dot = 0.0;
                for (int64_t c = 0; c < cols; ++c) dot += y[c] * g[c];
                for (int64_t c = 0; c < cols; ++c)
                    gx[size_t(r * cols + c)] += y[c] * (g[c] - dot);
            }
        },
        "softmax_rows");
}

Var log_softmax_rows(const Var& x) {
    auto [rows, cols] = as_rows(*x, "log_softmax_rows");
    std::vector<double> d(x->data.size());
    for (int64_t r = 0; r < rows; ++r) {
        const double* in = &x->data[size_t(r * cols)];
        double* out = &d[size_t(r * cols)];
        double mx = in[0];
        for (int64_t c = 1; c < cols; ++c) mx = std::max(mx, in[c]);
        double z = 0.0;
        for (int64_t c = 0; c < cols; ++c) z += std::exp(in[c] - mx);
        const double lz = mx + std::log(z);
        for (int64_t c = 0; c < cols; ++c) out[c] = in[c] - lz;
    }
    return make_op(
        x->shape, std::move(d), {x},
        [x, rows = rows, cols = cols](Tensor& out) {
            auto& gx = x->grad_ref();
            for (int64_t r = 0; r < rows; ++r) {
                const double* y = &out.data[size_t(r * cols)];
                const double* g = &out.grad[size_t(r * cols)];
                double gs = 0.0;
                for (int64_t c = 0; c < cols; ++c) gs += g[c];
                for (int64_t c = 0; c < cols; ++c)
                    gx[size_t(r * cols + c)] += g[c] - std::exp(y[c]) * gs;
            }
        },
        "log_softmax_rows");
}

Var masked_softmax_rows(const Var& x, const std::vector<uint8_t>& mask) {
    auto [rows, cols] = as_rows(*x, "masked_softmax_rows");
    if (int64_t(mask.size()) != cols)
        throw DimError("masked_softmax_rows: mask length " + std::to_string(mask.size()) +
                       " vs last extent " + std::to_string(cols));
    std::vector<double> d(x->data.size(), 0.0);
    bool any = false;
    for (auto m : mask) any = any || m;
    if (any) {
        for (int64_t r = 0; r < rows; ++r) {
            const double* in = &x->data[size_t(r * cols)];
            double* out = &d[size_t(r * cols)];
            double mx = -1e300;
            for (int64_t c = 0; c < cols; ++c)
                if (mask[size_t(c)]) mx = std::max(mx, in[c]);
            double z = 0.0;
            for (int64_t c = 0; c < cols; ++c)
                if (mask[size_t(c)]) z += (out[c] = std::exp(in[c] - mx));
            const double inv = 1.0 / z;
            for (int64_t c = 0; c < cols; ++c) out[c] *= inv;
        }
    }
    return make_op(
        x->shape, std::move(d), {x},
        [x, rows = rows, cols = cols](Tensor& out) {
            auto& gx = x->grad_ref();
            for (int64_t r = 0; r < rows; ++r) {
                const double* y = &out.data[size_t(r * cols)];
                const double* g = &out.grad[size_t(r * cols)];
                double dot = 0.0;
                for (int64_t c = 0; c < cols; ++c) dot += y[c] * g[c];
                for (int64_t c = 0; c < cols; ++c)
                    gx[size_t(r * cols + c)] += y[c] * (g[c] - dot);
            }
        },
        "masked_softmax_rows");
}

namespace {
// tanh-approximation constants: sqrt(2/pi) and the cubic coefficient 0.044715.
constexpr double kGeluC = 0.7978845608028654;
constexpr double kGeluA = 0.044715;
} // namespace

Var gelu(const Var& x) {
    std::vector<double> d(x->data.size());
    for (size_t i = 0; i < d.size(); ++i) {
        const double v = x->data[i];
        d[i] = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
    }
    return make_op(
        x->shape, std::move(d), {x},
        [x](Tensor& out) {
            auto& gx = x->grad_ref();
            for (size_t i = 0; i < gx.size(); ++i) {
                const double v = x->data[i];
                const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
                const double du = kGeluC * (1.0 + 3.0 * kGeluA * v * v);
                gx[i] += out.grad[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
            }
        },
        "gelu");
}

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps) {
    auto [rows, cols] = as_rows(*x, "layer_norm_rows");
    if (gamma->shape != Shape{cols} || beta->shape != Shape{cols})
        throw DimError("layer_norm_rows: scale/shift must be [" + std::to_string(cols) + "]");
    std::vector<double> d(x->data.size());
    std::vector<double> inv_sigma(size_t(rows), 0.0);
    std::vector<double> xhat(x->data.size());
    for (int64_t r = 0; r < rows; ++r) {
        const double* in = &x->data[size_t(r * cols)];
        double mu = 0.0;
        for (int64_t c = 0; c < cols; ++c) mu += in[c];
        mu /= double(cols);
        double var = 0.0;
        for (int64_t c = 0; c < cols; ++c) var += (in[c] - mu) * (in[c] - mu);
        var /= double(cols);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_sigma[size_t(r)] = is;
        for (int64_t c = 0; c < cols; ++c) {
            const double xh = (in[c] - mu) * is;
            xhat[size_t(r * cols + c)] = xh;
            d[size_t(r * cols + c)] = xh * gamma->data[size_t(c)] + beta->data[size_t(c)];
        }
    }
    return make_op(
        x->shape, std::move(d), {x, gamma, beta},
        [x, gamma, beta, rows = rows, cols = cols, inv_sigma = std::move(inv_sigma),
         xhat = std::move(xhat)](Tensor& out) {
            for (int64_t r = 0; r < rows; ++r) {
                const double* g = &out.grad[size_t(r * cols)];
                const double* xh = &xhat[size_t(r * cols)];
                if (gamma->requires_grad) {
                    auto& gg = gamma->grad_ref();
                    for (int64_t c = 0; c < cols; ++c) gg[size_t(c)] += g[c] * xh[c];
                }
                if (beta->requires_grad) {
                    auto& gb = beta->grad_ref();
                    for (int64_t c = 0; c < cols; ++c) gb[size_t(c)] += g[c];
                }
                if (x->requires_grad) {
                    auto& gx = x->grad_ref();
                    double m1 = 0.0, m2 = 0.0;
                    for (int64_t c = 0; c < cols; ++c) {
                        const double gg = g[c] * gamma->data[size_t(c)];
                        m1 += gg;
                        m2 += gg * xh[c];
                    }
                    m1 /= double(cols);
                    m2 /= double(cols);
                    const double is = inv_sigma[size_t(r)];
                    for (int64_t c = 0; c < cols; ++c) {
                        const double gg = g[c] * gamma->data[size_t(c)];
                        gx[size_t(r * cols + c)] += is * (gg - m1 - xh[c] * m2);
                    }
                }
            }
        },
        "layer_norm_rows");
}

Var depthwise_conv3d(const Var& x, const Var& kernel) {
    if (x->shape.size() != 4)
        throw DimError("depthwise_conv3d: input must be [T,H,W,C], got " + shape_str(x->shape));
    if (kernel->shape.size() != 4)
        throw DimError("depthwise_conv3d: kernel must be [kt,kh,kw,C], got " +
                       shape_str(kernel->shape));
    const int64_t T = x->shape[0], H = x->shape[1], W = x->shape[2], C = x->shape[3];
    const int64_t kt = kernel->shape[0], kh = kernel->shape[1], kw = kernel->shape[2];
    if (kernel->shape[3] != C)
        throw DimError("depthwise_conv3d: channel mismatch " + shape_str(x->shape) + " vs " +
                       shape_str(kernel->shape));
    if (kt % 2 == 0 || kh % 2 == 0 || kw % 2 == 0)
        throw ConfigError("depthwise_conv3d: kernel extents must be odd, got " +
                          shape_str(kernel->shape));
    const int64_t rt = kt / 2, rh = kh / 2, rw = kw / 2;
    auto xi = [=](int64_t t, int64_t h, int64_t w, int64_t c) {
        return size_t(((t * H + h) * W + w) * C + c);
    };
    auto ki = [=](int64_t a, int64_t b, int64_t g, int64_t c) {
        return size_t(((a * kh + b) * kw + g) * C + c);
    };
    std::vector<double> d(x->data.size(), 0.0);
    for (int64_t t = 0; t < T; ++t)
        for (int64_t h = 0; h < H; ++h)
            for (int64_t w = 0; w < W; ++w)
                for (int64_t a = 0; a < kt; ++a) {
                    const int64_t ts = t + a - rt;
                    if (ts < 0 || ts >= T) continue;
                    for (int64_t b = 0; b < kh; ++b) {
                        const int64_t hs = h + b - rh;
                        if (hs < 0 || hs >= H) continue;
                        for (int64_t g = 0; g < kw; ++g) {
                            const int64_t ws = w + g - rw;
                            if (ws < 0 || ws >= W) continue;
                            for (int64_t c = 0; c < C; ++c)
                                d[xi(t, h, w, c)] +=
                                    x->data[xi(ts, hs, ws, c)] * kernel->data[ki(a, b, g, c)];
                        }
                    }
                }
    return make_op(
        x->shape, std::move(d), {x, kernel},
        [x, kernel, T, H, W, C, kt, kh, kw, rt, rh, rw, xi, ki](Tensor& out) {
            for (int64_t t = 0; t < T; ++t)
                for (int64_t h = 0; h < H; ++h)
                    for (int64_t w = 0; w < W; ++w)
                        for (int64_t a = 0; a < kt; ++a) {
                            const int64_t ts = t + a - rt;
                            if (ts < 0 || ts >= T) continue;
                            for (int64_t b = 0; b < kh; ++b) {
                                const int64_t hs = h + b - rh;
                                if (hs < 0 || hs >= H) continue;
                                for (int64_t g = 0; g < kw; ++g) {
                                    const int64_t ws = w + g - rw;
                                    if (ws < 0 || ws >= W) continue;
                                    for (int64_t c = 0; c < C; ++c) {
                                        const double go = out.grad[xi(t, h, w, c)];
                                        if (x->requires_grad)
                                            x->grad_ref()[xi(ts, hs, ws, c)] +=
                                                go * kernel->data[ki(a, b, g, c)];
                                        if (kernel->requires_grad)
                                            kernel->grad_ref()[ki(a, b, g, c)] +=
                                                go * x->data[xi(ts, hs, ws, c)];
                                    }
                                }
                            }
                        }
        },
        "depthwise_conv3d");
}

Var pool_st(const Var& x, int64_t st, int64_t sh, int64_t sm) {
    if (x->shape.size() != 4)
        throw DimError("pool_st: input must be [l,h,m,C], got " + shape_str(x->shape));
    if (st < 1 || sh < 1 || sm < 1) throw ConfigError("pool_st: strides must be >= 1");
    const int64_t L = x->shape[0], H = x->shape[1], M = x->shape[2], C = x->shape[3];
    const int64_t Lo = (L + st - 1) / st, Ho = (H + sh - 1) / sh, Mo = (M + sm - 1) / sm;
    auto xi = [=](int64_t t, int64_t h, int64_t w, int64_t c) {
        return size_t(((t * H + h) * M + w) * C + c);
    };
    auto oi = [=](int64_t t, int64_t h, int64_t w, int64_t c) {
        return size_t(((t * Ho + h) * Mo + w) * C + c);
    };
    std::vector<double> d(size_t(Lo * Ho * Mo * C), 0.0);
    std::vector<double> counts(size_t(Lo * Ho * Mo), 0.0);
    for (int64_t t = 0; t < Lo; ++t)
        for (int64_t h = 0; h < Ho; ++h)
            for (int64_t w = 0; w < Mo; ++w) {
                const int64_t t1 = std::min(L, (t + 1) * st), h1 = std::min(H, (h + 1) * sh),
                              w1 = std::min(M, (w + 1) * sm);
                int64_t cnt = 0;
                for (int64_t tt = t * st; tt < t1; ++tt)
                    for (int64_t hh = h * sh; hh < h1; ++hh)
                        for (int64_t ww = w * sm; ww < w1; ++ww) {
                            ++cnt;
                            for (int64_t c = 0; c < C; ++c)
                                d[oi(t, h, w, c)] += x->data[xi(tt, hh, ww, c)];
                        }
                const double inv = 1.0 / double(cnt);
                counts[size_t((t * Ho + h) * Mo + w)] = inv;
                for (int64_t c = 0; c < C; ++c) d[oi(t, h, w, c)] *= inv;
            }
    return make_op(
        {Lo, Ho, Mo, C}, std::move(d), {x},
        [x, st, sh, sm, L, H, M, C, Lo, Ho, Mo, xi, oi, counts = std::move(counts)](Tensor& out) {
            auto& gx = x->grad_ref();
            for (int64_t t = 0; t < Lo; ++t)
                for (int64_t h = 0; h < Ho; ++h)
                    for (int64_t w = 0; w < Mo; ++w) {
                        const double inv = counts[size_t((t * Ho + h) * Mo + w)];
                        const int64_t t1 = std::min(L, (t + 1) * st),
                                      h1 = std::min(H, (h + 1) * sh), w1 = std::min(M, (w + 1) * sm);
                        for (int64_t tt = t * st; tt < t1; ++tt)
                            for (int64_t hh = h * sh; hh < h1; ++hh)
                                for (int64_t ww = w * sm; ww < w1; ++ww)
                                    for (int64_t c = 0; c < C; ++c)
                                        gx[xi(tt, hh, ww, c)] += out.grad[oi(t, h, w, c)] * inv;
                    }
        },
        "pool_st");
}

Var concat_channels(const std::vector<Var>& xs) {
    if (xs.empty()) throw UsageError("concat_channels: empty input list");
    Shape lead(xs[0]->shape.begin(), xs[0]->shape.end() - 1);
    int64_t ctot = 0;
    for (const auto& x : xs) {
        Shape l(x->shape.begin(), x->shape.end() - 1);
        if (l != lead)
            throw DimError("concat_channels: non-channel extents differ: " +
                           shape_str(xs[0]->shape) + " vs " + shape_str(x->shape));
        ctot += x->shape.back();
    }
    const int64_t rows = shape_numel(lead);
    Shape oshape = lead;
    oshape.push_back(ctot);
    std::vector<double> d(size_t(rows * ctot));
    int64_t off = 0;
    for (const auto& x : xs) {
        const int64_t c = x->shape.back();
        for (int64_t r = 0; r < rows; ++r)
            std::copy_n(&x->data[size_t(r * c)], size_t(c), &d[size_t(r * ctot + off)]);
        off += c;
    }
    std::vector<Var> parents = xs;
    return make_op(
        std::move(oshape), std::move(d), std::move(parents),
        [xs, rows, ctot](Tensor& out) {
            int64_t off = 0;
            for (const auto& x : xs) {
                const int64_t c = x->shape.back();
                if (x->requires_grad) {
                    auto& gx = x->grad_ref();
                    for (int64_t r = 0; r < rows; ++r)
                        for (int64_t j = 0; j < c; ++j)
                            gx[size_t(r * c + j)] += out.grad[size_t(r * ctot + off + j)];
                }
                off += c;
            }
        },
        "concat_channels");
}

Var slice_channels(const Var& x, int64_t lo, int64_t hi) {
    auto [rows, cols] = as_rows(*x, "slice_channels");
    if (lo < 0 || hi <= lo || hi > cols)
        throw DimError("slice_channels: range [" + std::to_string(lo) + "," + std::to_string(hi) +
                       ") out of bounds for C=" + std::to_string(cols));
    const int64_t c = hi - lo;
    Shape oshape = x->shape;
    oshape.back() = c;
    std::vector<double> d(size_t(rows * c));
    for (int64_t r = 0; r < rows; ++r)
        std::copy_n(&x->data[size_t(r * cols + lo)], size_t(c), &d[size_t(r * c)]);
    return make_op(
        std::move(oshape), std::move(d), {x},
        [x, lo, rows = rows, cols = cols, c](Tensor& out) {
            auto& gx = x->grad_ref();
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t j = 0; j < c; ++j)
                    gx[size_t(r * cols + lo + j)] += out.grad[size_t(r * c + j)];
        },
        "slice_channels");
}

Var concat_rows(const std::vector<Var>& xs) {
    if (xs.empty()) throw UsageError("concat_rows: empty input list");
    Shape tail(xs[0]->shape.begin() + 1, xs[0]->shape.end());
    int64_t rtot = 0;
    for (const auto& x : xs) {
        Shape t(x->shape.begin() + 1, x->shape.end());
        if (t != tail)
            throw DimError("concat_rows: trailing extents differ: " + shape_str(xs[0]->shape) +
                           " vs " + shape_str(x->shape));
        rtot += x->shape[0];
    }
    const int64_t stride = shape_numel(tail);
    Shape oshape = {rtot};
    oshape.insert(oshape.end(), tail.begin(), tail.end());
    std::vector<double> d;
    d.reserve(size_t(rtot * stride));
    for (const auto& x : xs) d.insert(d.end(), x->data.begin(), x->data.end());
    std::vector<Var> parents = xs;
    return make_op(
        std::move(oshape), std::move(d), std::move(parents),
        [xs](Tensor& out) {
            size_t off = 0;
            for (const auto& x : xs) {
                if (x->requires_grad) {
                    auto& gx = x->grad_ref();
                    for (size_t i = 0; i < gx.size(); ++i) gx[i] += out.grad[off + i];
                }
                off += x->data.size();
            }
        },
        "concat_rows");
}

Var slice_rows(const Var& x, int64_t lo, int64_t hi) {
    if (x->shape.empty() || lo < 0 || hi <= lo || hi > x->shape[0])
        throw DimError("slice_rows: range [" + std::to_string(lo) + "," + std::to_string(hi) +
                       ") out of bounds for " + shape_str(x->shape));
    const int64_t stride = x->numel() / x->shape[0];
    Shape oshape = x->shape;
    oshape[0] = hi - lo;
    std::vector<double> d(x->data.begin() + lo * stride, x->data.begin() + hi * stride);
    return make_op(
        std::move(oshape), std::move(d), {x},
        [x, lo, stride](Tensor& out) {
            auto& gx = x->grad_ref();
            for (size_t i = 0; i < out.grad.size(); ++i) gx[size_t(lo * stride) + i] += out.grad[i];
        },
        "slice_rows");
}

Var reshape(const Var& x, Shape new_shape) {
    if (shape_numel(new_shape) != x->numel())
        throw DimError("reshape: cannot view " + shape_str(x->shape) + " as " +
                       shape_str(new_shape));
    return make_op(
        std::move(new_shape), x->data, {x},
        [x](Tensor& out) {
            auto& gx = x->grad_ref();
            for (size_t i = 0; i < gx.size(); ++i) gx[i] += out.grad[i];
        },
        "reshape");
}

Var patchify(const Var& x, int64_t pt, int64_t ph, int64_t pw) {
    if (x->shape.size() != 4)
        throw DimError("patchify: input must be [T,H,W,C], got " + shape_str(x->shape));
    const int64_t T = x->shape[0], H = x->shape[1], W = x->shape[2], C = x->shape[3];
    if (pt < 1 || ph < 1 || pw < 1 || T % pt || H % ph || W % pw)
        throw DimError("patchify: patch (" + std::to_string(pt) + "," + std::to_string(ph) + "," +
                       std::to_string(pw) + ") does not divide " + shape_str(x->shape));
    const int64_t nt = T / pt, nh = H / ph, nw = W / pw;
    const int64_t L = nt * nh * nw, D = pt * ph * pw * C;
    // permutation source index for each output element
    std::vector<int64_t> src(size_t(L * D));
    int64_t o = 0;
    for (int64_t a = 0; a < nt; ++a)
        for (int64_t b = 0; b < nh; ++b)
            for (int64_t g = 0; g < nw; ++g)
                for (int64_t dt = 0; dt < pt; ++dt)
                    for (int64_t dh = 0; dh < ph; ++dh)
                        for (int64_t dw = 0; dw < pw; ++dw)
                            for (int64_t c = 0; c < C; ++c)
                                src[size_t(o++)] =
                                    (((a * pt + dt) * H + b * ph + dh) * W + g * pw + dw) * C + c;
    std::vector<double> d(size_t(L * D));
    for (size_t i = 0; i < d.size(); ++i) d[i] = x->data[size_t(src[i])];
    return make_op(
        {L, D}, std::move(d), {x},
        [x, src = std::move(src)](Tensor& out) {
            auto& gx = x->grad_ref();
            for (size_t i = 0; i < out.grad.size(); ++i) gx[size_t(src[i])] += out.grad[i];
        },
        "patchify");
}

Var l2_normalize_rows(const Var& x, double eps) {
    auto [rows, cols] = as_rows(*x, "l2_normalize_rows");
    std::vector<double> d(x->data.size());
    std::vector<double> norms(size_t(rows), 0.0);
    for (int64_t r = 0; r < rows; ++r) {
        const double* in = &x->data[size_t(r * cols)];
        double n2 = 0.0;
        for (int64_t c = 0; c < cols; ++c) n2 += in[c] * in[c];
        const double n = std::sqrt(n2);
        if (n <= eps)
            throw NumericError("l2_normalize_rows: degenerate (near-zero) row " + std::to_string(r));
        norms[size_t(r)] = n;
        for (int64_t c = 0; c < cols; ++c) d[size_t(r * cols + c)] = in[c] / n;
    }
    return make_op(
        x->shape, std::move(d), {x},
        [x, rows = rows, cols = cols, norms = std::move(norms)](Tensor& out) {
            auto& gx = x->grad_ref();
            for (int64_t r = 0; r < rows; ++r) {
                const double* y = &out.data[size_t(r * cols)];
                const double* g = &out.grad[size_t(r * cols)];
                double dot = 0.0;
                for (int64_t c = 0; c < cols; ++c) dot += y[c] * g[c];
                const double inv = 1.0 / norms[size_t(r)];
                for (int64_t c = 0; c < cols; ++c)
                    gx[size_t(r * cols + c)] += inv * (g[c] - y[c] * dot);
            }
        },
        "l2_normalize_rows");
}

Var cosine_sim(const Var& x, const Var& y, double eps) {
    if (x->shape.size() != 1 || x->shape != y->shape)
        throw DimError("cosine_sim: expected equal 1-d vectors, got " + shape_str(x->shape) +
                       " vs " + shape_str(y->shape));
    auto xr = reshape(x, {1, x->shape[0]});
    auto yr = reshape(y, {1, y->shape[0]});
    auto xn = l2_normalize_rows(xr, eps);
    auto yn = l2_normalize_rows(yr, eps);
    return sum(mul(xn, yn));
}

Var diag(const Var& x) {
    if (x->shape.size() != 2 || x->shape[0] != x->shape[1])
        throw DimError("diag: expected square matrix, got " + shape_str(x->shape));
    const int64_t n = x->shape[0];
    std::vector<double> d(size_t(n), 0.0);
    for (int64_t i = 0; i < n; ++i) d[size_t(i)] = x->data[size_t(i * n + i)];
    return make_op(
        {n}, std::move(d), {x},
        [x, n](Tensor& out) {
            auto& gx = x->grad_ref();
            for (int64_t i = 0; i < n; ++i) gx[size_t(i * n + i)] += out.grad[size_t(i)];
        },
        "diag");
}

Var gather_cols(const Var& x, const std::vector<int64_t>& idx) {
    auto [rows, cols] = as_rows(*x, "gather_cols");
    if (int64_t(idx.size()) != rows)
        throw DimError("gather_cols: index count " + std::to_string(idx.size()) + " vs rows " +
                       std::to_string(rows));
    std::vector<double> d(size_t(rows), 0.0);
    for (int64_t r = 0; r < rows; ++r) {
        if (idx[size_t(r)] < 0 || idx[size_t(r)] >= cols)
            throw DataError("gather_cols: index " + std::to_string(idx[size_t(r)]) +
                            " out of range for K=" + std::to_string(cols));
        d[size_t(r)] = x->data[size_t(r * cols + idx[size_t(r)])];
    }
    return make_op(
        {rows}, std::move(d), {x},
        [x, idx, rows = rows, cols = cols](Tensor& out) {
            auto& gx = x->grad_ref();
            for (int64_t r = 0; r < rows; ++r)
                gx[size_t(r * cols + idx[size_t(r)])] += out.grad[size_t(r)];
        },
        "gather_cols");
}

Var bce_with_logits(const Var& logits, const std::vector<double>& targets,
                    const std::vector<double>& class_weights) {
    auto [rows, cols] = as_rows(*logits, "bce_with_logits");
    if (targets.size() != logits->data.size())
        throw DimError("bce_with_logits: targets length " + std::to_string(targets.size()) +
                       " vs logits " + shape_str(logits->shape));
    if (int64_t(class_weights.size()) != cols)
        throw DimError("bce_with_logits: class_weights length " +
                       std::to_string(class_weights.size()) + " vs K=" + std::to_string(cols));
    double loss = 0.0;
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c) {
            const size_t i = size_t(r * cols + c);
            const double z = logits->data[i], t = targets[i];
            // stable: max(z,0) - z*t + log(1+exp(-|z|))
            loss += class_weights[size_t(c)] *
                    (std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z))));
        }
    return make_op(
        {1}, {loss}, {logits},
        [logits, targets, class_weights, rows = rows, cols = cols](Tensor& out) {
            auto& gx = logits->grad_ref();
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t c = 0; c < cols; ++c) {
                    const size_t i = size_t(r * cols + c);
                    const double z = logits->data[i];
                    const double sig = 1.0 / (1.0 + std::exp(-z));
                    gx[i] += out.grad[0] * class_weights[size_t(c)] * (sig - targets[i]);
                }
        },
        "bce_with_logits");
}

} // namespace ops

} // namespace hct
