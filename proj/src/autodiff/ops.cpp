#include "cryda/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

namespace cryda::ad {

namespace detail {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

void gemm(bool accumulate, int m, int k, int n, const float* a, bool trans_a,
          const float* b, bool trans_b, float* c) {
    MutMap C(c, m, n);
    auto run = [&](const auto& A, const auto& B) {
        if (accumulate)
            C.noalias() += A * B;
        else
            C.noalias() = A * B;
    };
    if (!trans_a && !trans_b)
        run(ConstMap(a, m, k), ConstMap(b, k, n));
    else if (trans_a && !trans_b)
        run(ConstMap(a, k, m).transpose(), ConstMap(b, k, n));
    else if (!trans_a && trans_b)
        run(ConstMap(a, m, k), ConstMap(b, n, k).transpose());
    else
        run(ConstMap(a, k, m).transpose(), ConstMap(b, n, k).transpose());
}

}  // namespace detail

namespace {

bool needs(Graph& g, int id) { return g.node(id).requires_grad; }

void check_rank(const Tensor& t, int rank, const char* op, const char* arg) {
    if (t.rank() != rank)
        throw ShapeError(std::string(op) + ": " + arg + " must have rank " + std::to_string(rank) +
                         ", got shape " + shape_str(t.shape));
}

// Fills col[(C*kh*kw) x (OH*OW)] for one sample, zero-padding out-of-range taps.
void im2col(const float* x, int C, int H, int W, int kh, int kw, int stride, int pad,
            int OH, int OW, float* col) {
    const int hw = OH * OW;
    for (int c = 0; c < C; ++c) {
        const float* xc = x + std::size_t(c) * H * W;
        for (int r = 0; r < kh; ++r) {
            for (int s = 0; s < kw; ++s) {
                float* row = col + std::size_t((c * kh + r) * kw + s) * hw;
                for (int oh = 0; oh < OH; ++oh) {
                    const int ih = oh * stride - pad + r;
                    if (ih < 0 || ih >= H) {
                        std::fill(row + oh * OW, row + (oh + 1) * OW, 0.0f);
                        continue;
                    }
                    const float* xr = xc + std::size_t(ih) * W;
                    for (int ow = 0; ow < OW; ++ow) {
                        const int iw = ow * stride - pad + s;
                        row[oh * OW + ow] = (iw < 0 || iw >= W) ? 0.0f : xr[iw];
                    }
                }
            }
        }
    }
}

// Accumulates dcol (same layout as im2col) back into dx.
void col2im(const float* dcol, int C, int H, int W, int kh, int kw, int stride, int pad,
            int OH, int OW, float* dx) {
    const int hw = OH * OW;
    for (int c = 0; c < C; ++c) {
        float* xc = dx + std::size_t(c) * H * W;
        for (int r = 0; r < kh; ++r) {
            for (int s = 0; s < kw; ++s) {
                const float* row = dcol + std::size_t((c * kh + r) * kw + s) * hw;
                for (int oh = 0; oh < OH; ++oh) {
                    const int ih = oh * stride - pad + r;
                    if (ih < 0 || ih >= H) continue;
                    float* xr = xc + std::size_t(ih) * W;
                    for (int ow = 0; ow < OW; ++ow) {
                        const int iw = ow * stride - pad + s;
                        if (iw >= 0 && iw < W) xr[iw] += row[oh * OW + ow];
                    }
                }
            }
        }
    }
}

}  // namespace

Value linear(const Value& xv, const Value& wv, const Value& bv) {
    const Tensor& x = xv.tensor();
    const Tensor& w = wv.tensor();
    const Tensor& b = bv.tensor();
    check_rank(x, 2, "linear", "x");
    check_rank(w, 2, "linear", "w");
    check_rank(b, 1, "linear", "b");
    if (x.dim(1) != w.dim(0) || w.dim(1) != b.dim(0))
        throw ShapeError("linear: shapes do not conform: x" + shape_str(x.shape) + " w" +
                         shape_str(w.shape) + " b" + shape_str(b.shape));
    const int B = x.dim(0), I = x.dim(1), O = w.dim(1);

    Tensor out = Tensor::zeros({B, O});
    detail::gemm(false, B, I, O, x.data.data(), false, w.data.data(), false, out.data.data());
    for (int i = 0; i < B; ++i)
        for (int j = 0; j < O; ++j) out.data[std::size_t(i) * O + j] += b.data[std::size_t(j)];

    Graph& g = *xv.graph;
    const bool rg = needs(g, xv.id) || needs(g, wv.id) || needs(g, bv.id);
    return g.make(std::move(out), {xv, wv, bv}, rg, [B, I, O](Graph& gg, Graph::Node& n) {
        const float* dy = n.grad.data();
        const int xid = n.inputs[0], wid = n.inputs[1], bid = n.inputs[2];
        if (needs(gg, xid)) {
            const Tensor& w2 = gg.node(wid).val();
            detail::gemm(true, B, O, I, dy, false, w2.data.data(), true, gg.grad_buffer(xid));
        }
        if (needs(gg, wid)) {
            const Tensor& x2 = gg.node(xid).val();
            detail::gemm(true, I, B, O, x2.data.data(), true, dy, false, gg.grad_buffer(wid));
        }
        if (needs(gg, bid)) {
            float* db = gg.grad_buffer(bid);
            for (int i = 0; i < B; ++i)
                for (int j = 0; j < O; ++j) db[j] += dy[std::size_t(i) * O + j];
        }
    });
}

Value conv2d(const Value& xv, const Value& kv, int stride, int padding) {
    const Tensor& x = xv.tensor();
    const Tensor& k = kv.tensor();
    check_rank(x, 4, "conv2d", "x");
    check_rank(k, 4, "conv2d", "k");
    if (stride < 1) throw ParamError("conv2d: stride must be >= 1");
    if (padding < 0) throw ParamError("conv2d: padding must be >= 0");
    if (x.dim(1) != k.dim(1))
        throw ShapeError("conv2d: channel mismatch: x" + shape_str(x.shape) + " k" +
                         shape_str(k.shape));
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int F = k.dim(0), kh = k.dim(2), kw = k.dim(3);
    if (kh > H + 2 * padding || kw > W + 2 * padding)
        throw ShapeError("conv2d: kernel " + shape_str(k.shape) + " larger than padded input " +
                         shape_str(x.shape) + " (padding " + std::to_string(padding) + ")");
    const int OH = (H + 2 * padding - kh) / stride + 1;
    const int OW = (W + 2 * padding - kw) / stride + 1;
    const int ckk = C * kh * kw, hw = OH * OW;

    Tensor out = Tensor::zeros({B, F, OH, OW});
    std::vector<float> col(std::size_t(ckk) * hw);
    for (int b = 0; b < B; ++b) {
        im2col(x.data.data() + std::size_t(b) * C * H * W, C, H, W, kh, kw, stride, padding, OH,
               OW, col.data());
        detail::gemm(false, F, ckk, hw, k.data.data(), false, col.data(), false,
                     out.data.data() + std::size_t(b) * F * hw);
    }

    Graph& g = *xv.graph;
    const bool rg = needs(g, xv.id) || needs(g, kv.id);
    auto fn = [B, C, H, W, F, kh, kw, stride, padding, OH, OW, ckk, hw](Graph& gg,
                                                                       Graph::Node& n) {
        const float* dy = n.grad.data();
        const int xid = n.inputs[0], kid = n.inputs[1];
        std::vector<float> buf(std::size_t(ckk) * hw);
        if (needs(gg, xid)) {
            const Tensor& k2 = gg.node(kid).val();
            float* dx = gg.grad_buffer(xid);
            for (int b = 0; b < B; ++b) {
                detail::gemm(false, ckk, F, hw, k2.data.data(), true,
                             dy + std::size_t(b) * F * hw, false, buf.data());
                col2im(buf.data(), C, H, W, kh, kw, stride, padding, OH, OW,
                       dx + std::size_t(b) * C * H * W);
            }
        }
        if (needs(gg, kid)) {
            const Tensor& x2 = gg.node(xid).val();
            float* dk = gg.grad_buffer(kid);
            for (int b = 0; b < B; ++b) {
                im2col(x2.data.data() + std::size_t(b) * C * H * W, C, H, W, kh, kw, stride,
                       padding, OH, OW, buf.data());
                detail::gemm(true, F, hw, ckk, dy + std::size_t(b) * F * hw, false, buf.data(),
                             true, dk);
            }
        }
    };
    return g.make(std::move(out), {xv, kv}, rg, std::move(fn));
}

BNState BNState::init(int features, float momentum, float eps) {
    BNState s;
    s.gamma = Tensor::full({features}, 1.0f);
    s.beta = Tensor::zeros({features});
    s.run_mean.assign(std::size_t(features), 0.0f);
    s.run_var.assign(std::size_t(features), 1.0f);
    s.momentum = momentum;
    s.eps = eps;
    return s;
}

Value batchnorm(const Value& xv, BNState& state, BNMode mode) {
    const Tensor& x = xv.tensor();
    if (x.rank() != 2 && x.rank() != 4)
        throw ShapeError("batchnorm: input must be [B,F] or [B,C,H,W], got " +
                         shape_str(x.shape));
    const int B = x.dim(0);
    const int F = x.dim(1);
    const int S = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
    if (F != state.features())
        throw ShapeError("batchnorm: state has " + std::to_string(state.features()) +
                         " features, input " + shape_str(x.shape));
    const bool update_stats = mode == BNMode::Train || mode == BNMode::StatsOnly;
    if (update_stats && B < 2)
        throw ValueError("batchnorm: batch size must be >= 2 when updating statistics, got " +
                         std::to_string(B));

    const std::int64_t count = std::int64_t(B) * S;
    std::vector<float> mean(std::size_t(F), 0.0f);
    std::vector<float> invstd(std::size_t(F), 0.0f);
    // Eval-style normalization always uses the running stats as they were on
    // entry, even when this very call updates them.
    const std::vector<float> entry_mean = state.run_mean;
    const std::vector<float> entry_var = state.run_var;
    auto elem = [&](const std::vector<float>& v, int b, int f, int s) -> float {
        return v[std::size_t((std::int64_t(b) * F + f) * S + s)];
    };

    if (update_stats) {
        for (int f = 0; f < F; ++f) {
            double sum = 0.0, sq = 0.0;
            for (int b = 0; b < B; ++b)
                for (int s = 0; s < S; ++s) {
                    const double v = elem(x.data, b, f, s);
                    sum += v;
                    sq += v * v;
                }
            const double m = sum / double(count);
            const double var = std::max(0.0, sq / double(count) - m * m);
            mean[std::size_t(f)] = float(m);
            invstd[std::size_t(f)] = float(1.0 / std::sqrt(var + state.eps));
            state.run_mean[std::size_t(f)] =
                (1.0f - state.momentum) * state.run_mean[std::size_t(f)] +
                state.momentum * float(m);
            state.run_var[std::size_t(f)] =
                (1.0f - state.momentum) * state.run_var[std::size_t(f)] +
                state.momentum * float(var);
        }
    }
    const bool use_batch_stats = mode == BNMode::Train;
    if (!use_batch_stats) {
        for (int f = 0; f < F; ++f) {
            mean[std::size_t(f)] = entry_mean[std::size_t(f)];
            invstd[std::size_t(f)] =
                float(1.0 / std::sqrt(double(entry_var[std::size_t(f)]) + state.eps));
        }
    }

    Tensor out = Tensor::zeros(x.shape);
    for (int b = 0; b < B; ++b)
        for (int f = 0; f < F; ++f) {
            const float m = mean[std::size_t(f)], is = invstd[std::size_t(f)];
            const float ga = state.gamma.data[std::size_t(f)], be = state.beta.data[std::size_t(f)];
            const float* src = x.data.data() + (std::int64_t(b) * F + f) * S;
            float* dst = out.data.data() + (std::int64_t(b) * F + f) * S;
            for (int s = 0; s < S; ++s) dst[s] = ga * ((src[s] - m) * is) + be;
        }

    Graph& g = *xv.graph;
    if (mode == BNMode::StatsOnly) {
        // Frozen-affine contract: no gradient flows through a stats-only pass.
        return g.make(std::move(out), {xv}, false, nullptr);
    }

    Value gv = g.leaf(state.gamma);
    Value bv = g.leaf(state.beta);
    const bool rg = needs(g, xv.id) || needs(g, gv.id) || needs(g, bv.id);
    BNState* st = &state;
    auto fn = [B, F, S, count, mean, invstd, st, use_batch_stats](Graph& gg, Graph::Node& n) {
        const float* dy = n.grad.data();
        const int xid = n.inputs[0], gid = n.inputs[1], bid = n.inputs[2];
        const Tensor& x2 = gg.node(xid).val();
        std::vector<float> dgamma(std::size_t(F), 0.0f), dbeta(std::size_t(F), 0.0f);
        const bool want_dx = needs(gg, xid);
        float* dx = want_dx ? gg.grad_buffer(xid) : nullptr;
        for (int f = 0; f < F; ++f) {
            const float m = mean[std::size_t(f)], is = invstd[std::size_t(f)];
            const float ga = st->gamma.data[std::size_t(f)];
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (int b = 0; b < B; ++b) {
                const float* xp = x2.data.data() + (std::int64_t(b) * F + f) * S;
                const float* dp = dy + (std::int64_t(b) * F + f) * S;
                for (int s = 0; s < S; ++s) {
                    const float xhat = (xp[s] - m) * is;
                    sum_dy += dp[s];
                    sum_dy_xhat += double(dp[s]) * xhat;
                }
            }
            dbeta[std::size_t(f)] = float(sum_dy);
            dgamma[std::size_t(f)] = float(sum_dy_xhat);
            if (!want_dx) continue;
            if (use_batch_stats) {
                const float mean_dy = float(sum_dy / double(count));
                const float mean_dy_xhat = float(sum_dy_xhat / double(count));
                for (int b = 0; b < B; ++b) {
                    const float* xp = x2.data.data() + (std::int64_t(b) * F + f) * S;
                    const float* dp = dy + (std::int64_t(b) * F + f) * S;
                    float* dq = dx + (std::int64_t(b) * F + f) * S;
                    for (int s = 0; s < S; ++s) {
                        const float xhat = (xp[s] - m) * is;
                        dq[s] += ga * is * (dp[s] - mean_dy - xhat * mean_dy_xhat);
                    }
                }
            } else {
                for (int b = 0; b < B; ++b) {
                    const float* dp = dy + (std::int64_t(b) * F + f) * S;
                    float* dq = dx + (std::int64_t(b) * F + f) * S;
                    for (int s = 0; s < S; ++s) dq[s] += ga * is * dp[s];
                }
            }
        }
        gg.accumulate(gid, dgamma.data(), F);
        gg.accumulate(bid, dbeta.data(), F);
    };
    return g.make(std::move(out), {xv, gv, bv}, rg, std::move(fn));
}

Value softmax(const Value& xv) {
    const Tensor& x = xv.tensor();
    check_rank(x, 2, "softmax", "logits");
    const int B = x.dim(0), K = x.dim(1);
    Tensor out = Tensor::zeros(x.shape);
    for (int b = 0; b < B; ++b) {
        const float* z = x.data.data() + std::size_t(b) * K;
        float* p = out.data.data() + std::size_t(b) * K;
        float m = z[0];
        for (int k = 1; k < K; ++k) m = std::max(m, z[k]);
        double sum = 0.0;
        for (int k = 0; k < K; ++k) {
            p[k] = std::exp(z[k] - m);
            sum += p[k];
        }
        const float inv = float(1.0 / sum);
        for (int k = 0; k < K; ++k) p[k] *= inv;
    }
    Graph& g = *xv.graph;
    return g.make(std::move(out), {xv}, needs(g, xv.id), [B, K](Graph& gg, Graph::Node& n) {
        const float* dy = n.grad.data();
        const float* y = n.value.data.data();
        float* dx = gg.grad_buffer(n.inputs[0]);
        for (int b = 0; b < B; ++b) {
            const float* yr = y + std::size_t(b) * K;
            const float* dr = dy + std::size_t(b) * K;
            double dot = 0.0;
            for (int k = 0; k < K; ++k) dot += double(dr[k]) * yr[k];
            for (int k = 0; k < K; ++k)
                dx[std::size_t(b) * K + k] += yr[k] * (dr[k] - float(dot));
        }
    });
}

Value softmax_cross_entropy(const Value& logitsv, const std::vector<int>& labels) {
    const Tensor& z = logitsv.tensor();
    check_rank(z, 2, "softmax_cross_entropy", "logits");
    const int B = z.dim(0), K = z.dim(1);
    if (int(labels.size()) != B)
        throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for batch of " + std::to_string(B));
    for (int b = 0; b < B; ++b)
        if (labels[std::size_t(b)] < 0 || labels[std::size_t(b)] >= K)
            throw ValueError("softmax_cross_entropy: label " +
                             std::to_string(labels[std::size_t(b)]) + " out of range [0," +
                             std::to_string(K) + ") at row " + std::to_string(b));

    double total = 0.0;
    for (int b = 0; b < B; ++b) {
        const float* zr = z.data.data() + std::size_t(b) * K;
        float m = zr[0];
        for (int k = 1; k < K; ++k) m = std::max(m, zr[k]);
        double sum = 0.0;
        for (int k = 0; k < K; ++k) sum += std::exp(double(zr[k]) - m);
        total += m + std::log(sum) - zr[labels[std::size_t(b)]];
    }
    Tensor out = Tensor::scalar(float(total / B));

    Graph& g = *logitsv.graph;
    auto fn = [B, K, labels](Graph& gg, Graph::Node& n) {
        const float up = n.grad[0];
        const Tensor& z2 = gg.node(n.inputs[0]).val();
        float* dz = gg.grad_buffer(n.inputs[0]);
        for (int b = 0; b < B; ++b) {
            const float* zr = z2.data.data() + std::size_t(b) * K;
            float m = zr[0];
            for (int k = 1; k < K; ++k) m = std::max(m, zr[k]);
            double sum = 0.0;
            for (int k = 0; k < K; ++k) sum += std::exp(double(zr[k]) - m);
            for (int k = 0; k < K; ++k) {
                float p = float(std::exp(double(zr[k]) - m) / sum);
                if (k == labels[std::size_t(b)]) p -= 1.0f;
                dz[std::size_t(b) * K + k] += up * p / float(B);
            }
        }
    };
    return g.make(std::move(out), {logitsv}, needs(g, logitsv.id), std::move(fn));
}

Value entropy(const Value& probsv) {
    const Tensor& p = probsv.tensor();
    check_rank(p, 2, "entropy", "probs");
    const int B = p.dim(0), K = p.dim(1);
    double total = 0.0;
    for (int b = 0; b < B; ++b) {
        const float* pr = p.data.data() + std::size_t(b) * K;
        double sum = 0.0, h = 0.0;
        for (int k = 0; k < K; ++k) {
            const double v = pr[k];
            if (v < 0.0)
                throw ValueError("entropy: negative probability at row " + std::to_string(b));
            sum += v;
            if (v > 0.0) h -= v * std::log(v);
        }
        if (std::abs(sum - 1.0) > 1e-5)
            throw ValueError("entropy: row " + std::to_string(b) + " sums to " +
                             std::to_string(sum) + ", expected 1 within 1e-5");
        total += h;
    }
    Tensor out = Tensor::scalar(float(total / B));
    Graph& g = *probsv.graph;
    return g.make(std::move(out), {probsv}, needs(g, probsv.id),
                  [B, K](Graph& gg, Graph::Node& n) {
                      const float up = n.grad[0];
                      const Tensor& p2 = gg.node(n.inputs[0]).val();
                      float* dp = gg.grad_buffer(n.inputs[0]);
                      for (std::int64_t i = 0; i < std::int64_t(B) * K; ++i) {
                          const float v = p2.data[std::size_t(i)];
                          if (v > 0.0f)
                              dp[i] += up * (-(std::log(v) + 1.0f)) / float(B);
                      }
                  });
}

Value feature_norm_penalty(const Value& fv, NormPenalty variant, float r_or_dr) {
    const Tensor& f = fv.tensor();
    check_rank(f, 2, "feature_norm_penalty", "f");
    if (r_or_dr <= 0.0f)
        throw ParamError(variant == NormPenalty::Hard
                             ? "feature_norm_penalty: R must be > 0"
                             : "feature_norm_penalty: delta_r must be > 0");
    const int B = f.dim(0), D = f.dim(1);
    std::vector<float> norms(std::size_t(B), 0.0f);
    double total = 0.0;
    for (int b = 0; b < B; ++b) {
        double sq = 0.0;
        const float* row = f.data.data() + std::size_t(b) * D;
        for (int d = 0; d < D; ++d) sq += double(row[d]) * row[d];
        const double nb = std::sqrt(sq);
        norms[std::size_t(b)] = float(nb);
        // Stepwise target is sg(norm) + dr, so the residual is exactly -dr.
        const double resid = variant == NormPenalty::Hard ? nb - r_or_dr : -double(r_or_dr);
        total += resid * resid;
    }
    Tensor out = Tensor::scalar(float(total / B));
    Graph& g = *fv.graph;
    auto fn = [B, D, variant, r_or_dr, norms](Graph& gg, Graph::Node& n) {
        const float up = n.grad[0];
        const Tensor& f2 = gg.node(n.inputs[0]).val();
        float* df = gg.grad_buffer(n.inputs[0]);
        for (int b = 0; b < B; ++b) {
            const float nb = norms[std::size_t(b)];
            if (nb < 1e-12f) continue;
            const float resid =
                variant == NormPenalty::Hard ? nb - r_or_dr : -r_or_dr;
            const float coef = up * 2.0f * resid / (float(B) * nb);
            const float* row = f2.data.data() + std::size_t(b) * D;
            for (int d = 0; d < D; ++d) df[std::size_t(b) * D + d] += coef * row[d];
        }
    };
    return g.make(std::move(out), {fv}, needs(g, fv.id), std::move(fn));
}

Value grad_reverse(const Value& xv, float lambda) {
    if (lambda < 0.0f) throw ParamError("grad_reverse: lambda must be >= 0");
    const Tensor& x = xv.tensor();
    Tensor out;
    out.shape = x.shape;
    out.data = x.data;  // bit-identical forward
    Graph& g = *xv.graph;
    return g.make(std::move(out), {xv}, needs(g, xv.id),
                  [lambda](Graph& gg, Graph::Node& n) {
                      float* dx = gg.grad_buffer(n.inputs[0]);
                      for (std::size_t i = 0; i < n.grad.size(); ++i)
                          dx[i] += -lambda * n.grad[i];
                  });
}

Value relu(const Value& xv) {
    const Tensor& x = xv.tensor();
    Tensor out = Tensor::zeros(x.shape);
    for (std::size_t i = 0; i < x.data.size(); ++i) out.data[i] = std::max(0.0f, x.data[i]);
    Graph& g = *xv.graph;
    return g.make(std::move(out), {xv}, needs(g, xv.id), [](Graph& gg, Graph::Node& n) {
        const float* y = n.value.data.data();
        float* dx = gg.grad_buffer(n.inputs[0]);
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            if (y[i] > 0.0f) dx[i] += n.grad[i];
    });
}

Value maxpool2x2(const Value& xv) {
    const Tensor& x = xv.tensor();
    check_rank(x, 4, "maxpool2x2", "x");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H < 2 || W < 2)
        throw ShapeError("maxpool2x2: spatial dims must be >= 2, got " + shape_str(x.shape));
    const int OH = H / 2, OW = W / 2;
    Tensor out = Tensor::zeros({B, C, OH, OW});
    std::vector<std::int32_t> argmax(out.data.size());
    for (int bc = 0; bc < B * C; ++bc) {
        const float* src = x.data.data() + std::size_t(bc) * H * W;
        float* dst = out.data.data() + std::size_t(bc) * OH * OW;
        std::int32_t* am = argmax.data() + std::size_t(bc) * OH * OW;
        for (int oh = 0; oh < OH; ++oh)
            for (int ow = 0; ow < OW; ++ow) {
                int best = (2 * oh) * W + 2 * ow;
                float bv = src[best];
                const int cand[3] = {(2 * oh) * W + 2 * ow + 1, (2 * oh + 1) * W + 2 * ow,
                                     (2 * oh + 1) * W + 2 * ow + 1};
                for (int idx : cand)
                    if (src[idx] > bv) {
                        bv = src[idx];
                        best = idx;
                    }
                dst[oh * OW + ow] = bv;
                am[oh * OW + ow] = best;
            }
    }
    Graph& g = *xv.graph;
    auto fn = [B, C, H, W, OH, OW, argmax = std::move(argmax)](Graph& gg, Graph::Node& n) {
        float* dx = gg.grad_buffer(n.inputs[0]);
        const float* dy = n.grad.data();
        for (int bc = 0; bc < B * C; ++bc) {
            float* dst = dx + std::size_t(bc) * H * W;
            const float* dyp = dy + std::size_t(bc) * OH * OW;
            const std::int32_t* am = argmax.data() + std::size_t(bc) * OH * OW;
            for (int i = 0; i < OH * OW; ++i) dst[am[i]] += dyp[i];
        }
    };
    return g.make(std::move(out), {xv}, needs(g, xv.id), std::move(fn));
}

Value global_mean_pool(const Value& xv) {
    const Tensor& x = xv.tensor();
    check_rank(x, 4, "global_mean_pool", "x");
    const int B = x.dim(0), C = x.dim(1), S = x.dim(2) * x.dim(3);
    Tensor out = Tensor::zeros({B, C});
    for (int bc = 0; bc < B * C; ++bc) {
        const float* src = x.data.data() + std::size_t(bc) * S;
        double sum = 0.0;
        for (int s = 0; s < S; ++s) sum += src[s];
        out.data[std::size_t(bc)] = float(sum / S);
    }
    Graph& g = *xv.graph;
    return g.make(std::move(out), {xv}, needs(g, xv.id), [B, C, S](Graph& gg, Graph::Node& n) {
        float* dx = gg.grad_buffer(n.inputs[0]);
        for (int bc = 0; bc < B * C; ++bc) {
            const float d = n.grad[std::size_t(bc)] / float(S);
            float* dst = dx + std::size_t(bc) * S;
            for (int s = 0; s < S; ++s) dst[s] += d;
        }
    });
}

Value reshape(const Value& xv, Shape new_shape) {
    const Tensor& x = xv.tensor();
    if (numel(new_shape) != x.size())
        throw ShapeError("reshape: cannot view " + shape_str(x.shape) + " as " +
                         shape_str(new_shape));
    Tensor out;
    out.shape = std::move(new_shape);
    out.data = x.data;
    Graph& g = *xv.graph;
    return g.make(std::move(out), {xv}, needs(g, xv.id), [](Graph& gg, Graph::Node& n) {
        gg.accumulate(n.inputs[0], n.grad.data(), std::int64_t(n.grad.size()));
    });
}

Value add(const Value& av, const Value& bv) {
    const Tensor& a = av.tensor();
    const Tensor& b = bv.tensor();
    if (a.shape != b.shape)
        throw ShapeError("add: shape mismatch " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
    Tensor out = Tensor::zeros(a.shape);
    for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] + b.data[i];
    Graph& g = *av.graph;
    return g.make(std::move(out), {av, bv}, needs(g, av.id) || needs(g, bv.id),
                  [](Graph& gg, Graph::Node& n) {
                      gg.accumulate(n.inputs[0], n.grad.data(), std::int64_t(n.grad.size()));
                      gg.accumulate(n.inputs[1], n.grad.data(), std::int64_t(n.grad.size()));
                  });
}

Value scale(const Value& xv, float alpha) {
    const Tensor& x = xv.tensor();
    Tensor out = Tensor::zeros(x.shape);
    for (std::size_t i = 0; i < x.data.size(); ++i) out.data[i] = alpha * x.data[i];
    Graph& g = *xv.graph;
    return g.make(std::move(out), {xv}, needs(g, xv.id), [alpha](Graph& gg, Graph::Node& n) {
        float* dx = gg.grad_buffer(n.inputs[0]);
        for (std::size_t i = 0; i < n.grad.size(); ++i) dx[i] += alpha * n.grad[i];
    });
}

Value concat_cols(const Value& av, const Value& bv) {
    const Tensor& a = av.tensor();
    const Tensor& b = bv.tensor();
    check_rank(a, 2, "concat_cols", "a");
    check_rank(b, 2, "concat_cols", "b");
    if (a.dim(0) != b.dim(0))
        throw ShapeError("concat_cols: batch mismatch " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
    const int B = a.dim(0), K1 = a.dim(1), K2 = b.dim(1);
    Tensor out = Tensor::zeros({B, K1 + K2});
    for (int i = 0; i < B; ++i) {
        std::memcpy(out.data.data() + std::size_t(i) * (K1 + K2),
                    a.data.data() + std::size_t(i) * K1, std::size_t(K1) * sizeof(float));
        std::memcpy(out.data.data() + std::size_t(i) * (K1 + K2) + K1,
                    b.data.data() + std::size_t(i) * K2, std::size_t(K2) * sizeof(float));
    }
    Graph& g = *av.graph;
    return g.make(std::move(out), {av, bv}, needs(g, av.id) || needs(g, bv.id),
                  [B, K1, K2](Graph& gg, Graph::Node& n) {
                      const float* dy = n.grad.data();
                      if (needs(gg, n.inputs[0])) {
                          float* da = gg.grad_buffer(n.inputs[0]);
                          for (int i = 0; i < B; ++i)
                              for (int k = 0; k < K1; ++k)
                                  da[std::size_t(i) * K1 + k] +=
                                      dy[std::size_t(i) * (K1 + K2) + k];
                      }
                      if (needs(gg, n.inputs[1])) {
                          float* db = gg.grad_buffer(n.inputs[1]);
                          for (int i = 0; i < B; ++i)
                              for (int k = 0; k < K2; ++k)
                                  db[std::size_t(i) * K2 + k] +=
                                      dy[std::size_t(i) * (K1 + K2) + K1 + k];
                      }
                  });
}

Value slice_cols(const Value& xv, int lo, int hi) {
    const Tensor& x = xv.tensor();
    check_rank(x, 2, "slice_cols", "x");
    const int B = x.dim(0), K = x.dim(1);
    if (lo < 0 || hi > K || lo >= hi)
        throw ShapeError("slice_cols: bad range [" + std::to_string(lo) + "," +
                         std::to_string(hi) + ") for " + shape_str(x.shape));
    const int Kn = hi - lo;
    Tensor out = Tensor::zeros({B, Kn});
    for (int i = 0; i < B; ++i)
        std::memcpy(out.data.data() + std::size_t(i) * Kn,
                    x.data.data() + std::size_t(i) * K + lo, std::size_t(Kn) * sizeof(float));
    Graph& g = *xv.graph;
    return g.make(std::move(out), {xv}, needs(g, xv.id),
                  [B, K, lo, Kn](Graph& gg, Graph::Node& n) {
                      float* dx = gg.grad_buffer(n.inputs[0]);
                      for (int i = 0; i < B; ++i)
                          for (int k = 0; k < Kn; ++k)
                              dx[std::size_t(i) * K + lo + k] += n.grad[std::size_t(i) * Kn + k];
                  });
}

Value sum_cols(const Value& xv) {
    const Tensor& x = xv.tensor();
    check_rank(x, 2, "sum_cols", "x");
    const int B = x.dim(0), K = x.dim(1);
    Tensor out = Tensor::zeros({B});
    for (int i = 0; i < B; ++i) {
        double s = 0.0;
        for (int k = 0; k < K; ++k) s += x.data[std::size_t(i) * K + k];
        out.data[std::size_t(i)] = float(s);
    }
    Graph& g = *xv.graph;
    return g.make(std::move(out), {xv}, needs(g, xv.id), [B, K](Graph& gg, Graph::Node& n) {
        float* dx = gg.grad_buffer(n.inputs[0]);
        for (int i = 0; i < B; ++i)
            for (int k = 0; k < K; ++k) dx[std::size_t(i) * K + k] += n.grad[std::size_t(i)];
    });
}

Value gather_cols(const Value& xv, const std::vector<int>& idx) {
    const Tensor& x = xv.tensor();
    check_rank(x, 2, "gather_cols", "x");
    const int B = x.dim(0), K = x.dim(1);
    if (int(idx.size()) != B)
        throw ShapeError("gather_cols: " + std::to_string(idx.size()) + " indices for batch " +
                         std::to_string(B));
    for (int i = 0; i < B; ++i)
        if (idx[std::size_t(i)] < 0 || idx[std::size_t(i)] >= K)
            throw ValueError("gather_cols: index " + std::to_string(idx[std::size_t(i)]) +
                             " out of range [0," + std::to_string(K) + ")");
    Tensor out = Tensor::zeros({B});
    for (int i = 0; i < B; ++i)
        out.data[std::size_t(i)] = x.data[std::size_t(i) * K + idx[std::size_t(i)]];
    Graph& g = *xv.graph;
    return g.make(std::move(out), {xv}, needs(g, xv.id), [B, K, idx](Graph& gg, Graph::Node& n) {
        float* dx = gg.grad_buffer(n.inputs[0]);
        for (int i = 0; i < B; ++i)
            dx[std::size_t(i) * K + idx[std::size_t(i)]] += n.grad[std::size_t(i)];
    });
}

Value log_vec(const Value& xv) {
    const Tensor& x = xv.tensor();
    Tensor out = Tensor::zeros(x.shape);
    // Floor keeps -log(sum of softmax terms) finite if a sum underflows.
    for (std::size_t i = 0; i < x.data.size(); ++i)
        out.data[i] = std::log(std::max(x.data[i], 1e-12f));
    Graph& g = *xv.graph;
    return g.make(std::move(out), {xv}, needs(g, xv.id), [](Graph& gg, Graph::Node& n) {
        const Tensor& x2 = gg.node(n.inputs[0]).val();
        float* dx = gg.grad_buffer(n.inputs[0]);
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            dx[i] += n.grad[i] / std::max(x2.data[i], 1e-12f);
    });
}

Value mean_vec(const Value& xv) {
    const Tensor& x = xv.tensor();
    const std::int64_t N = x.size();
    if (N == 0) throw ShapeError("mean_vec: empty input");
    double s = 0.0;
    for (float v : x.data) s += v;
    Tensor out = Tensor::scalar(float(s / double(N)));
    Graph& g = *xv.graph;
    return g.make(std::move(out), {xv}, needs(g, xv.id), [N](Graph& gg, Graph::Node& n) {
        float* dx = gg.grad_buffer(n.inputs[0]);
        const float d = n.grad[0] / float(N);
        for (std::int64_t i = 0; i < N; ++i) dx[i] += d;
    });
}

float mean_row_norm(const Tensor& f) {
    if (f.rank() != 2) throw ShapeError("mean_row_norm: expected [B,D], got " + shape_str(f.shape));
    const int B = f.dim(0), D = f.dim(1);
    double total = 0.0;
    for (int b = 0; b < B; ++b) {
        double sq = 0.0;
        for (int d = 0; d < D; ++d) {
            const double v = f.data[std::size_t(b) * D + d];
            sq += v * v;
        }
        total += std::sqrt(sq);
    }
    return float(total / B);
}

}  // namespace cryda::ad
