#pragma once

#include <vector>

#include "cryda/graph.hpp"

namespace cryda::ad {

// Batch-norm layer state, owned by the caller (the tape only references it).
// Normalization uses the biased batch variance; running stats follow
// new = (1 - momentum) * old + momentum * batch with the same convention.
struct BNState {
    Tensor gamma;                    // [F]
    Tensor beta;                     // [F]
    std::vector<float> run_mean;     // [F]
    std::vector<float> run_var;      // [F]
    float momentum = 0.1f;
    float eps = 1e-5f;

    static BNState init(int features, float momentum = 0.1f, float eps = 1e-5f);
    int features() const { return int(run_mean.size()); }
};

enum class BNMode {
    Train,      // normalize by batch stats, update running stats, train gamma/beta
    Eval,       // normalize by running stats, nothing updated
    StatsOnly,  // output as Eval, running stats updated, no gradients anywhere
};

// y = x * w + b          x:[B,I] w:[I,O] b:[O] -> [B,O]
Value linear(const Value& x, const Value& w, const Value& b);

// Cross-correlation with zero padding.  x:[B,C,H,W] k:[F,C,kh,kw] -> [B,F,H',W']
Value conv2d(const Value& x, const Value& k, int stride = 1, int padding = 0);

// x:[B,F] or [B,C,H,W] (per-channel over B*H*W).
Value batchnorm(const Value& x, BNState& state, BNMode mode);

// Mean over the batch of -log softmax(logits)[label]; max-subtraction stable.
Value softmax_cross_entropy(const Value& logits, const std::vector<int>& labels);

// Row-wise softmax over the last dimension of a [B,K] tensor.
Value softmax(const Value& logits);

// Mean over the batch of -sum_k p_k ln p_k, with 0 ln 0 = 0. Rows must sum
// to 1 within 1e-5.
Value entropy(const Value& probs);

enum class NormPenalty { Hard, Stepwise };

// Hard: mean_i (||f_i|| - R)^2. Stepwise: mean_i (||f_i|| - (sg||f_i|| + dr))^2
// where sg blocks the gradient through the target norm.
Value feature_norm_penalty(const Value& f, NormPenalty variant, float r_or_dr);

// Forward identity (bit-identical); backward multiplies upstream by -lambda.
Value grad_reverse(const Value& x, float lambda);

Value relu(const Value& x);
Value maxpool2x2(const Value& x);        // [B,C,H,W] -> [B,C,H/2,W/2]
Value global_mean_pool(const Value& x);  // [B,C,H,W] -> [B,C]
Value reshape(const Value& x, Shape new_shape);

Value add(const Value& a, const Value& b);    // same shape
Value scale(const Value& x, float alpha);
Value concat_cols(const Value& a, const Value& b);        // [B,K1],[B,K2] -> [B,K1+K2]
Value slice_cols(const Value& x, int lo, int hi);         // [B,K] -> [B,hi-lo]
Value sum_cols(const Value& x);                           // [B,K] -> [B]
Value gather_cols(const Value& x, const std::vector<int>& idx);  // [B,K] -> [B]
Value log_vec(const Value& x);                            // elementwise ln
Value mean_vec(const Value& x);                           // [N] -> scalar

// Mean L2 norm of the rows of a [B,D] tensor, as a plain number (no tape).
float mean_row_norm(const Tensor& f);

namespace detail {
// Row-major C[m,n] = A[m,k] * B[k,n] (+= when accumulate). Backed by Eigen.
void gemm(bool accumulate, int m, int k, int n, const float* a, bool trans_a,
          const float* b, bool trans_b, float* c);
}  // namespace detail

}  // namespace cryda::ad
