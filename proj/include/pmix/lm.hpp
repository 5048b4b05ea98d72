// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <vector>

#include "pmix/kernels.hpp"
#include "pmix/model.hpp"
#include "pmix/parallel.hpp"

// Forward pass, exact sequence NLL and hand-derived reverse-mode backward
// for the decoder-only LM: RMS pre-norm (gain only), rotary attention,
// tanh-GELU feedforward, no biases. Works on a batch of equal-length
// sequences; a length-m prefix forward is exactly the first m rows of the
// full forward because attention is causal.

namespace pmix {

inline constexpr double kNormEps = 1e-6;

template <class T>
struct Workspace {
    ModelConfig cfg;
    std::size_t max_batch = 0;

    // call state
    std::size_t batch = 0;
    std::size_t len = 0;
    const std::uint32_t* ids = nullptr;

    std::vector<T> rope_cos, rope_sin;  // [S, Dh/2]

    struct LayerCache {
        std::vector<T> x_in;     // [n, H]
        std::vector<T> inv_rms1; // [n]
        std::vector<T> xn1;      // [n, H]
        std::vector<T> q, k, v;  // [b, A, len, Dh]
        std::vector<T> probs;    // [b, A, len, len]
        std::vector<T> ctx;      // [b, A, len, Dh]
        std::vector<T> xmid;     // [n, H]
        std::vector<T> inv_rms2; // [n]
        std::vector<T> xn2;      // [n, H]
        std::vector<T> ffn_pre;  // [n, F]
        std::vector<T> ffn_act;  // [n, F]
    };
    std::vector<LayerCache> layer;

    std::vector<T> x;          // [n, H] residual stream (holds final output after forward)
    std::vector<T> inv_rms_f;  // [n]
    std::vector<T> xfn;        // [n, H]
    std::vector<T> logp;       // [n, V]; normalized rows t < len-1, doubles as dlogits

    // scratch
    std::vector<T> sa, sb, sc;       // [n, H]
    std::vector<T> sf;               // [n, F]
    std::vector<T> dq, dk, dv;       // [b, A, len, Dh]
    std::vector<T> dscores;          // [b, A, len, len]

    Workspace() = default;
    Workspace(const ModelConfig& c, std::size_t max_b) { init(c, max_b); }

    void init(const ModelConfig& c, std::size_t max_b) {
        c.validate();
        cfg = c;
        max_batch = max_b;
        const std::size_t n = max_b * c.seq_len;
        const std::size_t H = c.hidden, F = c.ffn, V = c.vocab, S = c.seq_len;
        const std::size_t hd2 = c.head_dim() / 2;

        rope_cos.resize(S * hd2);
        rope_sin.resize(S * hd2);
        for (std::size_t t = 0; t < S; ++t) {
            for (std::size_t i = 0; i < hd2; ++i) {
                double angle = static_cast<double>(t) *
                               std::pow(cfg.rope_base, -2.0 * static_cast<double>(i) /
                                                           static_cast<double>(2 * hd2));
                rope_cos[t * hd2 + i] = static_cast<T>(std::cos(angle));
                rope_sin[t * hd2 + i] = static_cast<T>(std::sin(angle));
            }
        }

        layer.resize(c.layers);
        for (auto& lc : layer) {
            lc.x_in.resize(n * H);
            lc.inv_rms1.resize(n);
            lc.xn1.resize(n * H);
            lc.q.resize(n * H);
            lc.k.resize(n * H);
            lc.v.resize(n * H);
            lc.probs.resize(max_b * c.heads * S * S);
            lc.ctx.resize(n * H);
            lc.xmid.resize(n * H);
            lc.inv_rms2.resize(n);
            lc.xn2.resize(n * H);
            lc.ffn_pre.resize(n * F);
            lc.ffn_act.resize(n * F);
        }
        x.resize(n * H);
        inv_rms_f.resize(n);
        xfn.resize(n * H);
        logp.resize(n * V);
        sa.resize(n * H);
        sb.resize(n * H);
        sc.resize(n * H);
        sf.resize(n * F);
        dq.resize(n * H);
        dk.resize(n * H);
        dv.resize(n * H);
        dscores.resize(max_b * c.heads * S * S);
    }
};

namespace detail {

template <class T>
void rmsnorm_rows(const T* x, const T* gain, T* out, T* inv_rms, std::size_t rows,
                  std::size_t cols) {
    parallel_for(rows, 64, [&](std::size_t r0, std::size_t r1) {
        for (std::size_t r = r0; r < r1; ++r) {
            const T* xr = x + r * cols;
            T ms = T(0);
            for (std::size_t j = 0; j < cols; ++j) ms += xr[j] * xr[j];
            T inv = T(1) / std::sqrt(ms / static_cast<T>(cols) + static_cast<T>(kNormEps));
            inv_rms[r] = inv;
            T* orow = out + r * cols;
            for (std::size_t j = 0; j < cols; ++j) orow[j] = xr[j] * inv * gain[j];
        }
    });
}

// dx += contribution through the norm; dgain accumulated in a column pass
template <class T>
void rmsnorm_backward(const T* x, const T* gain, const T* inv_rms, const T* dy, T* dx,
                      T* dgain, std::size_t rows, std::size_t cols, bool accumulate_dx) {
    parallel_for(rows, 64, [&](std::size_t r0, std::size_t r1) {
        for (std::size_t r = r0; r < r1; ++r) {
            const T* xr = x + r * cols;
            const T* dyr = dy + r * cols;
            T* dxr = dx + r * cols;
            T inv = inv_rms[r];
            T dot = T(0);
            for (std::size_t j = 0; j < cols; ++j) dot += dyr[j] * gain[j] * xr[j];
            T coef = inv * inv * inv * dot / static_cast<T>(cols);
            for (std::size_t j = 0; j < cols; ++j) {
                T g = gain[j] * inv * dyr[j] - xr[j] * coef;
                dxr[j] = accumulate_dx ? dxr[j] + g : g;
            }
        }
    });
    parallel_for(cols, 32, [&](std::size_t j0, std::size_t j1) {
        for (std::size_t j = j0; j < j1; ++j) {
            T acc = T(0);
            for (std::size_t r = 0; r < rows; ++r)
                acc += dy[r * cols + j] * x[r * cols + j] * inv_rms[r];
            dgain[j] += acc;
        }
    });
}

// split [n, H] -> [b, A, len, Dh], optionally applying rotary embedding
template <class T>
void split_heads(const Workspace<T>& ws, const T* flat, T* heads, bool rope) {
    const std::size_t A = ws.cfg.heads, H = ws.cfg.hidden, Dh = ws.cfg.head_dim();
    const std::size_t len = ws.len, hd2 = Dh / 2;
    parallel_for(ws.batch * A, 1, [&](std::size_t i0, std::size_t i1) {
        for (std::size_t bh = i0; bh < i1; ++bh) {
            std::size_t b = bh / A, h = bh % A;
            for (std::size_t t = 0; t < len; ++t) {
                const T* src = flat + (b * len + t) * H + h * Dh;
                T* dst = heads + (bh * len + t) * Dh;
                if (!rope) {
                    std::memcpy(dst, src, Dh * sizeof(T));
                    continue;
                }
                const T* ct = ws.rope_cos.data() + t * hd2;
                const T* st = ws.rope_sin.data() + t * hd2;
                for (std::size_t i = 0; i < hd2; ++i) {
                    T x0 = src[2 * i], x1 = src[2 * i + 1];
                    dst[2 * i] = x0 * ct[i] - x1 * st[i];
                    dst[2 * i + 1] = x0 * st[i] + x1 * ct[i];
                }
            }
        }
    });
}

// merge [b, A, len, Dh] -> [n, H], optionally un-rotating gradients first
template <class T>
void merge_heads(const Workspace<T>& ws, const T* heads, T* flat, bool unrope) {
    const std::size_t A = ws.cfg.heads, H = ws.cfg.hidden, Dh = ws.cfg.head_dim();
    const std::size_t len = ws.len, hd2 = Dh / 2;
    parallel_for(ws.batch * A, 1, [&](std::size_t i0, std::size_t i1) {
        for (std::size_t bh = i0; bh < i1; ++bh) {
            std::size_t b = bh / A, h = bh % A;
            for (std::size_t t = 0; t < len; ++t) {
                const T* src = heads + (bh * len + t) * Dh;
                T* dst = flat + (b * len + t) * H + h * Dh;
                if (!unrope) {
                    std::memcpy(dst, src, Dh * sizeof(T));
                    continue;
                }
                const T* ct = ws.rope_cos.data() + t * hd2;
                const T* st = ws.rope_sin.data() + t * hd2;
                for (std::size_t i = 0; i < hd2; ++i) {
                    T g0 = src[2 * i], g1 = src[2 * i + 1];
                    dst[2 * i] = g0 * ct[i] + g1 * st[i];
                    dst[2 * i + 1] = -g0 * st[i] + g1 * ct[i];
                }
            }
        }
    });
}

template <class T>
void add_rows(const T* a, const T* b, T* out, std::size_t n) {
    parallel_for(n, 1 << 14, [&](std::size_t i0, std::size_t i1) {
        for (std::size_t i = i0; i < i1; ++i) out[i] = a[i] + b[i];
    });
}

}  // namespace detail

// Forward over a batch of equal-length sequences (row-major ids[batch*len]).
// Fills caches and normalized log-probability rows t in [0, len-1) per
// sequence. len must be in [2, seq_len].
template <class T>
void forward_batch(const ModelParams<T>& p, const std::uint32_t* ids, std::size_t batch,
                   std::size_t len, Workspace<T>& ws) {
    const ModelConfig& cfg = p.config;
    if (batch == 0 || batch > ws.max_batch) throw std::invalid_argument("forward: bad batch");
    if (len < 2 || len > cfg.seq_len) throw std::invalid_argument("forward: bad length");
    const std::size_t n = batch * len;
    const std::size_t H = cfg.hidden, F = cfg.ffn, V = cfg.vocab, A = cfg.heads;
    const std::size_t Dh = cfg.head_dim();
    for (std::size_t i = 0; i < n; ++i) {
        if (ids[i] >= V) throw std::invalid_argument("forward: token id out of range");
    }
    ws.batch = batch;
    ws.len = len;
    ws.ids = ids;

    const T scale = T(1) / std::sqrt(static_cast<T>(Dh));

    // embedding lookup
    parallel_for(n, 1024, [&](std::size_t i0, std::size_t i1) {
        for (std::size_t i = i0; i < i1; ++i)
            std::memcpy(ws.x.data() + i * H, p.embed() + ids[i] * H, H * sizeof(T));
    });

    for (std::uint32_t l = 0; l < cfg.layers; ++l) {
        auto& lc = ws.layer[l];
        std::memcpy(lc.x_in.data(), ws.x.data(), n * H * sizeof(T));
        detail::rmsnorm_rows(lc.x_in.data(), p.layer_tensor(l, 6), lc.xn1.data(),
                             lc.inv_rms1.data(), n, H);

        // projections, head split, rotary
        kernels::gemm_nn(lc.xn1.data(), p.layer_tensor(l, 0), ws.sa.data(), n, H, H, false);
        detail::split_heads(ws, ws.sa.data(), lc.q.data(), true);
        kernels::gemm_nn(lc.xn1.data(), p.layer_tensor(l, 1), ws.sa.data(), n, H, H, false);
        detail::split_heads(ws, ws.sa.data(), lc.k.data(), true);
        kernels::gemm_nn(lc.xn1.data(), p.layer_tensor(l, 2), ws.sa.data(), n, H, H, false);
        detail::split_heads(ws, ws.sa.data(), lc.v.data(), false);

        // attention per (sequence, head)
        parallel_for(batch * A, 1, [&](std::size_t i0, std::size_t i1) {
            for (std::size_t bh = i0; bh < i1; ++bh) {
                const T* q = lc.q.data() + bh * len * Dh;
                const T* k = lc.k.data() + bh * len * Dh;
                const T* v = lc.v.data() + bh * len * Dh;
                T* pr = lc.probs.data() + bh * len * len;
                kernels::gemm_nt(q, k, pr, len, len, Dh, false);
                for (std::size_t t = 0; t < len; ++t) {
                    T* row = pr + t * len;
                    for (std::size_t u = 0; u <= t; ++u) row[u] *= scale;
                    kernels::softmax_row(row, t + 1);
                    for (std::size_t u = t + 1; u < len; ++u) row[u] = T(0);
                }
                kernels::gemm_nn(pr, v, lc.ctx.data() + bh * len * Dh, len, Dh, len, false);
            }
        });

        // output projection + residual
        detail::merge_heads(ws, lc.ctx.data(), ws.sa.data(), false);
        kernels::gemm_nn(ws.sa.data(), p.layer_tensor(l, 3), ws.sb.data(), n, H, H, false);
        detail::add_rows(lc.x_in.data(), ws.sb.data(), lc.xmid.data(), n * H);

        // feedforward + residual
        detail::rmsnorm_rows(lc.xmid.data(), p.layer_tensor(l, 7), lc.xn2.data(),
                             lc.inv_rms2.data(), n, H);
        kernels::gemm_nn(lc.xn2.data(), p.layer_tensor(l, 4), lc.ffn_pre.data(), n, F, H, false);
        parallel_for(n, 16, [&](std::size_t i0, std::size_t i1) {
            kernels::gelu_forward(lc.ffn_pre.data() + i0 * F, lc.ffn_act.data() + i0 * F,
                                  (i1 - i0) * F);
        });
        kernels::gemm_nn(lc.ffn_act.data(), p.layer_tensor(l, 5), ws.sb.data(), n, H, F, false);
        detail::add_rows(lc.xmid.data(), ws.sb.data(), ws.x.data(), n * H);
    }

    detail::rmsnorm_rows(ws.x.data(), p.g_final(), ws.xfn.data(), ws.inv_rms_f.data(), n, H);
    kernels::gemm_nn(ws.xfn.data(), p.w_out(), ws.logp.data(), n, V, H, false);

    // normalize counted rows in place (log-softmax)
    parallel_for(batch * (len - 1), 8, [&](std::size_t i0, std::size_t i1) {
        for (std::size_t i = i0; i < i1; ++i) {
            std::size_t b = i / (len - 1), t = i % (len - 1);
            T* row = ws.logp.data() + (b * len + t) * V;
            T lse = kernels::lse_row(row, V);
            for (std::size_t j = 0; j < V; ++j) row[j] -= lse;
        }
    });
}

// Total NLL (natural log, 64-bit accumulation) of sequence b in the last
// forward batch.
template <class T>
double sequence_nll(const Workspace<T>& ws, std::size_t b) {
    const std::size_t V = ws.cfg.vocab, len = ws.len;
    double total = 0.0;
    for (std::size_t t = 0; t + 1 < len; ++t) {
        std::uint32_t target = ws.ids[b * len + t + 1];
        total -= static_cast<double>(ws.logp[(b * len + t) * V + target]);
    }
    return total;
}

// Backward of mean per-sequence total NLL over the batch; accumulates into
// grad (flat, same layout as params). Call immediately after forward_batch.
template <class T>
void backward_batch(const ModelParams<T>& p, Workspace<T>& ws, T* grad) {
    const ModelConfig& cfg = p.config;
    const std::size_t batch = ws.batch, len = ws.len, n = batch * len;
    const std::size_t H = cfg.hidden, F = cfg.ffn, V = cfg.vocab, A = cfg.heads;
    const std::size_t Dh = cfg.head_dim();
    const T scale = T(1) / std::sqrt(static_cast<T>(Dh));
    const T w = T(1) / static_cast<T>(batch);

    // dlogits overwrites logp: softmax - onehot on counted rows, zero elsewhere
    parallel_for(batch * len, 8, [&](std::size_t i0, std::size_t i1) {
        for (std::size_t i = i0; i < i1; ++i) {
            std::size_t b = i / len, t = i % len;
            T* row = ws.logp.data() + i * V;
            if (t + 1 >= len) {
                std::memset(row, 0, V * sizeof(T));
                continue;
            }
            for (std::size_t j = 0; j < V; ++j) row[j] = std::exp(row[j]) * w;
            row[ws.ids[b * len + t + 1]] -= w;
        }
    });

    auto gptr = [&](std::size_t off) { return grad + off; };

    // output projection
    kernels::gemm_tn(ws.xfn.data(), ws.logp.data(), gptr(p.w_out_offset()), H, V, n, true);
    kernels::gemm_nt(ws.logp.data(), p.w_out(), ws.sa.data(), n, H, V, false);

    // final norm: dx goes into sb
    detail::rmsnorm_backward(ws.x.data(), p.g_final(), ws.inv_rms_f.data(), ws.sa.data(),
                             ws.sb.data(), gptr(p.g_final_offset()), n, H, false);

    // sb = gradient wrt residual stream entering from below
    for (std::uint32_t li = cfg.layers; li-- > 0;) {
        auto& lc = ws.layer[li];

        // FFN block: d(out) = sb
        kernels::gemm_tn(lc.ffn_act.data(), ws.sb.data(), gptr(p.offset_of(li, 5)), F, H, n,
                         true);
        kernels::gemm_nt(ws.sb.data(), p.layer_tensor(li, 5), ws.sf.data(), n, F, H, false);
        parallel_for(n, 16, [&](std::size_t i0, std::size_t i1) {
            kernels::gelu_backward(lc.ffn_pre.data() + i0 * F, ws.sf.data() + i0 * F,
                                   ws.sf.data() + i0 * F, (i1 - i0) * F);
        });
        kernels::gemm_tn(lc.xn2.data(), ws.sf.data(), gptr(p.offset_of(li, 4)), H, F, n, true);
        kernels::gemm_nt(ws.sf.data(), p.layer_tensor(li, 4), ws.sa.data(), n, H, F, false);

        // through ffn pre-norm; sb(residual) + norm path -> sb = d(xmid)
        detail::rmsnorm_backward(lc.xmid.data(), p.layer_tensor(li, 7), lc.inv_rms2.data(),
                                 ws.sa.data(), ws.sb.data(), gptr(p.offset_of(li, 7)), n, H,
                                 true);

        // attention output projection
        detail::merge_heads(ws, lc.ctx.data(), ws.sa.data(), false);
        kernels::gemm_tn(ws.sa.data(), ws.sb.data(), gptr(p.offset_of(li, 3)), H, H, n, true);
        kernels::gemm_nt(ws.sb.data(), p.layer_tensor(li, 3), ws.sa.data(), n, H, H, false);
        detail::split_heads(ws, ws.sa.data(), ws.dv.data(), false);  // dv = dctx for now

        // attention core per (sequence, head); dv doubles as the dctx input,
        // so dV is staged through sc and copied back at the end.
        parallel_for(batch * A, 1, [&](std::size_t i0, std::size_t i1) {
            for (std::size_t bh = i0; bh < i1; ++bh) {
                const T* q = lc.q.data() + bh * len * Dh;
                const T* k = lc.k.data() + bh * len * Dh;
                const T* v = lc.v.data() + bh * len * Dh;
                const T* pr = lc.probs.data() + bh * len * len;
                T* dctx = ws.dv.data() + bh * len * Dh;
                T* ds = ws.dscores.data() + bh * len * len;
                T* dq = ws.dq.data() + bh * len * Dh;
                T* dk = ws.dk.data() + bh * len * Dh;

                kernels::gemm_nt(dctx, v, ds, len, len, Dh, false);  // dP
                for (std::size_t t = 0; t < len; ++t) {
                    T* dsrow = ds + t * len;
                    const T* prow = pr + t * len;
                    kernels::softmax_backward_row(prow, dsrow, dsrow, t + 1);
                    for (std::size_t u = 0; u <= t; ++u) dsrow[u] *= scale;
                    std::memset(dsrow + t + 1, 0, (len - t - 1) * sizeof(T));
                }
                kernels::gemm_nn(ds, k, dq, len, Dh, len, false);    // dQ
                kernels::gemm_tn(ds, q, dk, len, Dh, len, false);    // dK = dS^T Q
                T* dvv = ws.sc.data() + bh * len * Dh;
                kernels::gemm_tn(pr, dctx, dvv, len, Dh, len, false);  // dV = P^T dctx
                std::memcpy(dctx, dvv, len * Dh * sizeof(T));
            }
        });

        // merge head grads (un-rotating q,k), accumulate projection grads
        detail::merge_heads(ws, ws.dq.data(), ws.sa.data(), true);
        kernels::gemm_tn(lc.xn1.data(), ws.sa.data(), gptr(p.offset_of(li, 0)), H, H, n, true);
        kernels::gemm_nt(ws.sa.data(), p.layer_tensor(li, 0), ws.sc.data(), n, H, H, false);

        detail::merge_heads(ws, ws.dk.data(), ws.sa.data(), true);
        kernels::gemm_tn(lc.xn1.data(), ws.sa.data(), gptr(p.offset_of(li, 1)), H, H, n, true);
        kernels::gemm_nt(ws.sa.data(), p.layer_tensor(li, 1), ws.sc.data(), n, H, H, true);

        detail::merge_heads(ws, ws.dv.data(), ws.sa.data(), false);
        kernels::gemm_tn(lc.xn1.data(), ws.sa.data(), gptr(p.offset_of(li, 2)), H, H, n, true);
        kernels::gemm_nt(ws.sa.data(), p.layer_tensor(li, 2), ws.sc.data(), n, H, H, true);

        // through attention pre-norm; residual sb + norm path -> next sb
        detail::rmsnorm_backward(lc.x_in.data(), p.layer_tensor(li, 6), lc.inv_rms1.data(),
                                 ws.sc.data(), ws.sb.data(), gptr(p.offset_of(li, 6)), n, H,
                                 true);
    }

    // embedding gradient (serial scatter: ids repeat across the batch)
    T* gembed = gptr(0);
    for (std::size_t i = 0; i < n; ++i) {
        const T* src = ws.sb.data() + i * H;
        T* dst = gembed + ws.ids[i] * H;
        for (std::size_t j = 0; j < H; ++j) dst[j] += src[j];
    }
}

// ---- single-sequence convenience API ----

// Per-position next-token log-probabilities, rows t in [0, len-1).
template <class T>
std::vector<T> forward_logprobs(const ModelParams<T>& p, const std::uint32_t* ids,
                                std::size_t len) {
    Workspace<T> ws(p.config, 1);
    forward_batch(p, ids, 1, len, ws);
    const std::size_t V = p.config.vocab;
    std::vector<T> out((len - 1) * V);
    std::memcpy(out.data(), ws.logp.data(), (len - 1) * V * sizeof(T));
    return out;
}

template <class T>
double nll(const ModelParams<T>& p, const std::uint32_t* ids, std::size_t len) {
    Workspace<T> ws(p.config, 1);
    forward_batch(p, ids, 1, len, ws);
    return sequence_nll(ws, 0);
}

template <class T>
double prefix_nll(const ModelParams<T>& p, const std::uint32_t* ids, std::size_t len,
                  std::size_t m) {
    if (m < 2 || m > len) throw std::invalid_argument("prefix_nll: M out of range");
    return nll(p, ids, m);
}

}  // namespace pmix
