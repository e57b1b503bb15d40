#pragma once

#include <vector>

#include "seglm/attention.hpp"

namespace seglm {

// Softmax over one logical row spread across several matrices (the active
// branches' logits). -inf entries are masked; fully masked rows become zero.
template <typename T>
void joint_row_softmax(const std::vector<Mat<T>*>& parts) {
    const idx n = parts[0]->rows();
    for (idx i = 0; i < n; ++i) {
        T mx = neg_inf<T>;
        for (Mat<T>* p : parts) {
            const T* row = p->row(i);
            for (idx j = 0; j < p->cols(); ++j)
                if (row[j] > mx) mx = row[j];
        }
        if (mx == neg_inf<T>) {
            for (Mat<T>* p : parts)
                std::fill(p->row(i), p->row(i) + p->cols(), T(0));
            continue;
        }
        T sum = T(0);
        for (Mat<T>* p : parts) {
            T* row = p->row(i);
            for (idx j = 0; j < p->cols(); ++j) {
                row[j] = row[j] == neg_inf<T> ? T(0) : std::exp(row[j] - mx);
                sum += row[j];
            }
        }
        const T inv = T(1) / sum;
        for (Mat<T>* p : parts) {
            T* row = p->row(i);
            for (idx j = 0; j < p->cols(); ++j) row[j] *= inv;
        }
    }
}

// Backward of joint_row_softmax. d_parts may alias dw_parts.
template <typename T>
void joint_row_softmax_backward(const std::vector<const Mat<T>*>& w_parts,
                                const std::vector<Mat<T>*>& dw_parts) {
    const idx n = w_parts[0]->rows();
    for (idx i = 0; i < n; ++i) {
        T dot = T(0);
        for (std::size_t p = 0; p < w_parts.size(); ++p) {
            const T* w = w_parts[p]->row(i);
            const T* dw = dw_parts[p]->row(i);
            for (idx j = 0; j < w_parts[p]->cols(); ++j) dot += w[j] * dw[j];
        }
        for (std::size_t p = 0; p < w_parts.size(); ++p) {
            const T* w = w_parts[p]->row(i);
            T* dw = dw_parts[p]->row(i);
            for (idx j = 0; j < w_parts[p]->cols(); ++j) dw[j] = w[j] * (dw[j] - dot);
        }
    }
}

// Everything one head retains from its forward pass for the backward pass and
// for diagnostics.
template <typename T>
struct HeadActs {
    Mat<T> q, k, v;  // n x d_k

    Mat<T> short_w;  // n x 2w, normalized per aggregation mode
    Mat<T> p_long;   // n x c
    Mat<T> kbar_l, vbar_l;  // r x d_k
    Mat<T> long_w;   // n x r

    Mat<T> p_overlap;
    Mat<T> kbar_o, vbar_o;
    Mat<T> overlap_w;

    Mat<T> long_sel_w;  // branch-local long softmax driving segment selection
    Mat<T> avg_mag;     // m x n_s
    SegmentSelection sel;
    CacheKV<T> cache;
    Mat<T> cache_w;  // n x k*u*s
};

// Full four-branch head attention. q/k/v are consumed. When `pinned` is given
// the segment selection is taken as-is instead of being recomputed (used by
// the finite-difference gradient check, where the selection indices are held
// fixed).
template <typename T>
Mat<T> head_attention_forward(Mat<T> q, Mat<T> k, Mat<T> v, const Mat<T>& wp, const Mat<T>& wpo,
                              const ModelConfig& cfg, HeadActs<T>& acts,
                              const SegmentSelection* pinned = nullptr) {
    acts.q = std::move(q);
    acts.k = std::move(k);
    acts.v = std::move(v);

    acts.short_w = short_logits(acts.q, acts.k, cfg);

    ProjResult<T> pl = dynamic_projection(acts.k, wp, false, cfg);
    acts.p_long = std::move(pl.P);
    acts.kbar_l = std::move(pl.projected);
    acts.vbar_l = apply_projection(acts.p_long, acts.v, false, cfg);
    acts.long_w = long_logits(acts.q, acts.kbar_l, false, cfg);

    if (cfg.overlap_enabled) {
        ProjResult<T> po = dynamic_projection(acts.k, wpo, true, cfg);
        acts.p_overlap = std::move(po.P);
        acts.kbar_o = std::move(po.projected);
        acts.vbar_o = apply_projection(acts.p_overlap, acts.v, true, cfg);
        acts.overlap_w = long_logits(acts.q, acts.kbar_o, true, cfg);
    }

    if (cfg.cache_enabled) {
        acts.long_sel_w = acts.long_w;
        row_softmax_masked(acts.long_sel_w);
        const SegmentVectors<T> seg = segment_attention_vectors(acts.long_sel_w, cfg);
        acts.avg_mag = block_average(rms_magnitudes(seg), cfg);
        acts.sel = pinned ? *pinned : select_topk_segments(lag_block_rows(acts.avg_mag), cfg);
        acts.cache = gather_cache_kv(acts.k, acts.v, acts.sel, cfg);
        acts.cache_w = cache_logits(acts.q, acts.cache, cfg);
    }

    if (cfg.aggregation_mode == AggregationMode::joint_softmax) {
        std::vector<Mat<T>*> parts{&acts.short_w, &acts.long_w};
        if (cfg.overlap_enabled) parts.push_back(&acts.overlap_w);
        if (cfg.cache_enabled) parts.push_back(&acts.cache_w);
        joint_row_softmax(parts);
    } else {
        row_softmax_masked(acts.short_w);
        row_softmax_masked(acts.long_w);
        if (cfg.overlap_enabled) row_softmax_masked(acts.overlap_w);
        if (cfg.cache_enabled) row_softmax_masked(acts.cache_w);
    }

    Mat<T> out(cfg.n, cfg.d_k);
    short_apply_values(acts.short_w, acts.v, cfg, out);
    matmul(out, acts.long_w, acts.vbar_l, false, false, T(1), T(1));
    if (cfg.overlap_enabled) matmul(out, acts.overlap_w, acts.vbar_o, false, false, T(1), T(1));
    if (cfg.cache_enabled) cache_apply_values(acts.cache_w, acts.cache, cfg, out);
    return out;
}

template <typename T>
void head_attention_backward(const Mat<T>& d_out, const HeadActs<T>& acts, const Mat<T>& wp,
                             const Mat<T>& wpo, const ModelConfig& cfg, Mat<T>& dq, Mat<T>& dk,
                             Mat<T>& dv, Mat<T>& dwp, Mat<T>& dwpo) {
    // value-application backward: branch weight grads and value-source grads
    Mat<T> d_short_w(cfg.n, 2 * cfg.w);
    short_apply_values_backward(d_out, acts.short_w, acts.v, cfg, d_short_w, dv);

    Mat<T> d_long_w(cfg.n, cfg.r);
    Mat<T> d_vbar_l(cfg.r, cfg.d_k);
    matmul(d_long_w, d_out, acts.vbar_l, false, true);
    matmul(d_vbar_l, acts.long_w, d_out, true, false);

    Mat<T> d_overlap_w, d_vbar_o;
    if (cfg.overlap_enabled) {
        d_overlap_w = Mat<T>(cfg.n, cfg.r);
        d_vbar_o = Mat<T>(cfg.r, cfg.d_k);
        matmul(d_overlap_w, d_out, acts.vbar_o, false, true);
        matmul(d_vbar_o, acts.overlap_w, d_out, true, false);
    }

    Mat<T> d_cache_w, d_kc, d_vc;
    if (cfg.cache_enabled) {
        d_cache_w = Mat<T>(cfg.n, acts.cache.width);
        d_vc = Mat<T>(acts.cache.vc.rows(), cfg.d_k);
        cache_apply_values_backward(d_out, acts.cache_w, acts.cache, cfg, d_cache_w, d_vc);
    }

    // softmax backward turns the weight grads into logit grads in place
    if (cfg.aggregation_mode == AggregationMode::joint_softmax) {
        std::vector<const Mat<T>*> w_parts{&acts.short_w, &acts.long_w};
        std::vector<Mat<T>*> dw_parts{&d_short_w, &d_long_w};
        if (cfg.overlap_enabled) {
            w_parts.push_back(&acts.overlap_w);
            dw_parts.push_back(&d_overlap_w);
        }
        if (cfg.cache_enabled) {
            w_parts.push_back(&acts.cache_w);
            dw_parts.push_back(&d_cache_w);
        }
        joint_row_softmax_backward(w_parts, dw_parts);
    } else {
        row_softmax_backward(acts.short_w, d_short_w, d_short_w);
        row_softmax_backward(acts.long_w, d_long_w, d_long_w);
        if (cfg.overlap_enabled) row_softmax_backward(acts.overlap_w, d_overlap_w, d_overlap_w);
        if (cfg.cache_enabled) row_softmax_backward(acts.cache_w, d_cache_w, d_cache_w);
    }

    // logit backward into q, k and the compressed/gathered sources
    short_logits_backward(d_short_w, acts.q, acts.k, cfg, dq, dk);

    Mat<T> d_kbar_l(cfg.r, cfg.d_k);
    long_logits_backward(d_long_w, acts.q, acts.kbar_l, cfg, dq, d_kbar_l);
    dynamic_projection_pair_backward(d_kbar_l, d_vbar_l, acts.p_long, acts.k, acts.v, wp, false,
                                     cfg, dk, dv, dwp);

    if (cfg.overlap_enabled) {
        Mat<T> d_kbar_o(cfg.r, cfg.d_k);
        long_logits_backward(d_overlap_w, acts.q, acts.kbar_o, cfg, dq, d_kbar_o);
        dynamic_projection_pair_backward(d_kbar_o, d_vbar_o, acts.p_overlap, acts.k, acts.v, wpo,
                                         true, cfg, dk, dv, dwpo);
    }

    if (cfg.cache_enabled) {
        d_kc = Mat<T>(acts.cache.kc.rows(), cfg.d_k);
        cache_logits_backward(d_cache_w, acts.q, acts.cache, cfg, dq, d_kc);
        gather_cache_kv_backward(d_kc, d_vc, acts.sel, cfg, dk, dv);
    }
}

// ---------------------------------------------------------------------------
// Diagnostic bundle: per-branch logits and weights plus the aggregated matrix
// [short | long (+ overlap) | cache] and the head output.
// ---------------------------------------------------------------------------

template <typename T>
struct AttentionBundle {
    Mat<T> short_logits, short_weights;      // n x 2w
    Mat<T> long_logits, long_weights;        // n x r
    Mat<T> overlap_logits, overlap_weights;  // n x r, empty when disabled
    Mat<T> cache_logits, cache_weights;      // n x k*u*s, empty when disabled
    Mat<T> aggregated;                       // n x (2w + r [+ k*u*s])
    Mat<T> head_output;                      // n x d_k
};

template <typename T>
AttentionBundle<T> aggregate_heads(Mat<T> short_lg, Mat<T> long_lg, Mat<T> overlap_lg,
                                   Mat<T> cache_lg, const Mat<T>& v, const Mat<T>& vbar_l,
                                   const Mat<T>& vbar_o, const CacheKV<T>* cache,
                                   const ModelConfig& cfg) {
    if (cfg.overlap_enabled == overlap_lg.empty())
        throw std::invalid_argument("aggregate_heads: overlap logits do not match config");
    if (cfg.cache_enabled == cache_lg.empty())
        throw std::invalid_argument("aggregate_heads: cache logits do not match config");

    AttentionBundle<T> out;
    out.short_logits = std::move(short_lg);
    out.long_logits = std::move(long_lg);
    out.overlap_logits = std::move(overlap_lg);
    out.cache_logits = std::move(cache_lg);

    out.short_weights = out.short_logits;
    out.long_weights = out.long_logits;
    out.overlap_weights = out.overlap_logits;
    out.cache_weights = out.cache_logits;

    if (cfg.aggregation_mode == AggregationMode::joint_softmax) {
        std::vector<Mat<T>*> parts{&out.short_weights, &out.long_weights};
        if (cfg.overlap_enabled) parts.push_back(&out.overlap_weights);
        if (cfg.cache_enabled) parts.push_back(&out.cache_weights);
        joint_row_softmax(parts);
    } else {
        row_softmax_masked(out.short_weights);
        row_softmax_masked(out.long_weights);
        if (cfg.overlap_enabled) row_softmax_masked(out.overlap_weights);
        if (cfg.cache_enabled) row_softmax_masked(out.cache_weights);
    }

    out.head_output = Mat<T>(cfg.n, cfg.d_k);
    short_apply_values(out.short_weights, v, cfg, out.head_output);
    matmul(out.head_output, out.long_weights, vbar_l, false, false, T(1), T(1));
    if (cfg.overlap_enabled)
        matmul(out.head_output, out.overlap_weights, vbar_o, false, false, T(1), T(1));
    if (cfg.cache_enabled) cache_apply_values(out.cache_weights, *cache, cfg, out.head_output);

    const idx cache_cols = cfg.cache_enabled ? cfg.k * cfg.u * cfg.s : 0;
    out.aggregated = Mat<T>(cfg.n, 2 * cfg.w + cfg.r + cache_cols);
    for (idx i = 0; i < cfg.n; ++i) {
        T* row = out.aggregated.row(i);
        std::copy(out.short_weights.row(i), out.short_weights.row(i) + 2 * cfg.w, row);
        T* lo = row + 2 * cfg.w;
        const T* lw = out.long_weights.row(i);
        for (idx j = 0; j < cfg.r; ++j) lo[j] = lw[j];
        if (cfg.overlap_enabled) {
            const T* ow = out.overlap_weights.row(i);
            for (idx j = 0; j < cfg.r; ++j) lo[j] += ow[j];
        }
        if (cfg.cache_enabled)
            std::copy(out.cache_weights.row(i), out.cache_weights.row(i) + cache_cols,
                      row + 2 * cfg.w + cfg.r);
    }
    return out;
}

// Convenience wrapper: runs every branch from raw q/k/v and builds the bundle.
// Used by the attention dump and by tests; the training path keeps the leaner
// HeadActs form.
template <typename T>
struct HeadDiagnostics {
    AttentionBundle<T> bundle;
    Mat<T> avg_mag;  // m x n_s, empty when cache disabled
    SegmentSelection sel;
};

template <typename T>
HeadDiagnostics<T> head_attention_diagnostic(const Mat<T>& q, const Mat<T>& k, const Mat<T>& v,
                                             const Mat<T>& wp, const Mat<T>& wpo,
                                             const ModelConfig& cfg) {
    HeadDiagnostics<T> diag;
    Mat<T> short_lg = short_logits(q, k, cfg);

    ProjResult<T> pl = dynamic_projection(k, wp, false, cfg);
    Mat<T> vbar_l = apply_projection(pl.P, v, false, cfg);
    Mat<T> long_lg = long_logits(q, pl.projected, false, cfg);

    Mat<T> overlap_lg, vbar_o;
    if (cfg.overlap_enabled) {
        ProjResult<T> po = dynamic_projection(k, wpo, true, cfg);
        vbar_o = apply_projection(po.P, v, true, cfg);
        overlap_lg = long_logits(q, po.projected, true, cfg);
    }

    Mat<T> cache_lg;
    CacheKV<T> cache;
    if (cfg.cache_enabled) {
        Mat<T> sel_w = long_lg;
        row_softmax_masked(sel_w);
        diag.avg_mag = block_average(rms_magnitudes(segment_attention_vectors(sel_w, cfg)), cfg);
        diag.sel = select_topk_segments(lag_block_rows(diag.avg_mag), cfg);
        cache = gather_cache_kv(k, v, diag.sel, cfg);
        cache_lg = cache_logits(q, cache, cfg);
    }

    diag.bundle = aggregate_heads(std::move(short_lg), std::move(long_lg), std::move(overlap_lg),
                                  std::move(cache_lg), v, vbar_l, vbar_o,
                                  cfg.cache_enabled ? &cache : nullptr, cfg);
    return diag;
}

}  // namespace seglm
