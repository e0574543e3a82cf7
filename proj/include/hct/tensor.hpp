#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "hct/errors.hpp"
#include "hct/rng.hpp"

namespace hct {

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

struct Tensor;
using Var = std::shared_ptr<Tensor>;

// Dense float64 tensor, node of the autodiff tape. Parents and backward_fn
// are populated only on nodes that participate in a gradient path.
struct Tensor {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad; // empty until first touched
    bool requires_grad = false;

    std::vector<Var> parents;
    std::function<void(Tensor&)> backward_fn;
    const char* op_name = "leaf";

    int64_t numel() const { return int64_t(data.size()); }

    std::vector<double>& grad_ref() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
        return grad;
    }
    void zero_grad() { grad.clear(); }
};

Var make_tensor(Shape shape, std::vector<double> data, bool requires_grad = false);
Var zeros(const Shape& shape, bool requires_grad = false);
Var full(const Shape& shape, double value, bool requires_grad = false);
Var randn(const Shape& shape, Rng& rng, double stddev = 1.0, bool requires_grad = true);

// Reverse-mode backward from a scalar loss. Visits the tape in reverse
// topological order; gradients accumulate (no implicit zeroing).
void backward(const Var& loss);

// Finite-ness guard; throws NumericError naming the offending op.
void check_finite(const Tensor& t, const char* where);

namespace ops {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var neg(const Var& a);

// y = x + row broadcast of b over the leading dims; x: [..,C], b: [C].
Var add_rowvec(const Var& x, const Var& b);

Var matmul(const Var& a, const Var& b); // [M,K]x[K,N]
Var transpose2d(const Var& a);

Var sum(const Var& a);  // -> scalar [1]
Var mean(const Var& a); // -> scalar [1]
Var mean_rows(const Var& x); // [R,C] -> [C], mean over rows

Var softmax_rows(const Var& x);     // softmax over last dim
Var log_softmax_rows(const Var& x); // log-softmax over last dim
// Masked softmax over the last dim; mask[k] == false excludes key k.
// A fully-masked row yields an all-zero row.
Var masked_softmax_rows(const Var& x, const std::vector<uint8_t>& mask);

Var gelu(const Var& x); // tanh approximation

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

// Depth-wise 3D convolution, same zero padding, odd kernel extents.
// x: [T,H,W,C], kernel: [kt,kh,kw,C].
Var depthwise_conv3d(const Var& x, const Var& kernel);

// Average pooling with window == stride (ceil division shape law).
// Boundary windows average over the in-bounds entries only.
Var pool_st(const Var& x, int64_t st, int64_t sh, int64_t sm);

Var concat_channels(const std::vector<Var>& xs);
Var slice_channels(const Var& x, int64_t lo, int64_t hi);
Var concat_rows(const std::vector<Var>& xs);
Var slice_rows(const Var& x, int64_t lo, int64_t hi);

Var reshape(const Var& x, Shape new_shape);

// Non-overlapping space-time patch extraction: [T,H,W,C] with patch
// (pt,ph,pw) -> [(T/pt)*(H/ph)*(W/pw), pt*ph*pw*C]. Extents must divide.
Var patchify(const Var& x, int64_t pt, int64_t ph, int64_t pw);

// Row-wise L2 normalization; a row with norm <= eps is a degenerate input.
Var l2_normalize_rows(const Var& x, double eps = 1e-12);
Var cosine_sim(const Var& x, const Var& y, double eps = 1e-12); // [C],[C] -> scalar

Var diag(const Var& x); // [B,B] -> [B]

// Picks x[b, idx[b]] -> [B].
Var gather_cols(const Var& x, const std::vector<int64_t>& idx);

// Sum-reduced weighted binary cross-entropy with logits.
// targets, class_weights broadcast over rows of logits [..,K].
Var bce_with_logits(const Var& logits, const std::vector<double>& targets,
                    const std::vector<double>& class_weights);

} // namespace ops

} // namespace hct
