#pragma once

#include <cmath>
#include <stdexcept>

#include "seglm/config.hpp"
#include "seglm/linalg.hpp"
#include "seglm/mat.hpp"
#include "seglm/selection.hpp"

namespace seglm {

// ---------------------------------------------------------------------------
// Short branch: segment-wise sliding window. Token t in home segment g sees
// all w tokens of segment g-1 (columns [0,w), absent for g=0) and the tokens
// of segment g up to t (columns [w,2w)).
// ---------------------------------------------------------------------------

template <typename T>
Mat<T> short_logits(const Mat<T>& q, const Mat<T>& k, const ModelConfig& cfg) {
    const idx n = cfg.n, w = cfg.w, d_k = cfg.d_k;
    if (q.rows() != n || k.rows() != n || q.cols() != d_k || k.cols() != d_k)
        throw std::invalid_argument("short_logits: shape mismatch");
    const T scale = T(1) / std::sqrt(T(d_k));
    Mat<T> logits(n, 2 * w);
    const idx segs = n / w;
    for (idx g = 0; g < segs; ++g) {
        T* block = logits.row(g * w);
        if (g > 0) {
            gemm_raw<T>(false, true, w, w, d_k, scale, q.row(g * w), d_k, k.row((g - 1) * w), d_k,
                        T(0), block, 2 * w);
        }
        gemm_raw<T>(false, true, w, w, d_k, scale, q.row(g * w), d_k, k.row(g * w), d_k, T(0),
                    block + w, 2 * w);
        for (idx i = 0; i < w; ++i) {
            T* row = logits.row(g * w + i);
            if (g == 0)
                for (idx j = 0; j < w; ++j) row[j] = neg_inf<T>;
            for (idx j = i + 1; j < w; ++j) row[w + j] = neg_inf<T>;
        }
    }
    return logits;
}

template <typename T>
void short_logits_backward(const Mat<T>& d_logits, const Mat<T>& q, const Mat<T>& k,
                           const ModelConfig& cfg, Mat<T>& dq, Mat<T>& dk) {
    const idx w = cfg.w, d_k = cfg.d_k;
    const T scale = T(1) / std::sqrt(T(d_k));
    const idx segs = cfg.n / w;
    for (idx g = 0; g < segs; ++g) {
        const T* block = d_logits.row(g * w);
        if (g > 0) {
            gemm_raw<T>(false, false, w, d_k, w, scale, block, 2 * w, k.row((g - 1) * w), d_k, T(1),
                        dq.row(g * w), d_k);
            gemm_raw<T>(true, false, w, d_k, w, scale, block, 2 * w, q.row(g * w), d_k, T(1),
                        dk.row((g - 1) * w), d_k);
        }
        gemm_raw<T>(false, false, w, d_k, w, scale, block + w, 2 * w, k.row(g * w), d_k, T(1),
                    dq.row(g * w), d_k);
        gemm_raw<T>(true, false, w, d_k, w, scale, block + w, 2 * w, q.row(g * w), d_k, T(1),
                    dk.row(g * w), d_k);
    }
}

// out += weights * gathered V rows
template <typename T>
void short_apply_values(const Mat<T>& weights, const Mat<T>& v, const ModelConfig& cfg,
                        Mat<T>& out) {
    const idx w = cfg.w, d_k = cfg.d_k;
    const idx segs = cfg.n / w;
    for (idx g = 0; g < segs; ++g) {
        const T* block = weights.row(g * w);
        if (g > 0)
            gemm_raw<T>(false, false, w, d_k, w, T(1), block, 2 * w, v.row((g - 1) * w), d_k, T(1),
                        out.row(g * w), d_k);
        gemm_raw<T>(false, false, w, d_k, w, T(1), block + w, 2 * w, v.row(g * w), d_k, T(1),
                    out.row(g * w), d_k);
    }
}

template <typename T>
void short_apply_values_backward(const Mat<T>& d_out, const Mat<T>& weights, const Mat<T>& v,
                                 const ModelConfig& cfg, Mat<T>& d_weights, Mat<T>& dv) {
    const idx w = cfg.w, d_k = cfg.d_k;
    const idx segs = cfg.n / w;
    for (idx g = 0; g < segs; ++g) {
        T* dblock = d_weights.row(g * w);
        const T* wblock = weights.row(g * w);
        if (g > 0) {
            gemm_raw<T>(false, true, w, w, d_k, T(1), d_out.row(g * w), d_k, v.row((g - 1) * w),
                        d_k, T(1), dblock, 2 * w);
            gemm_raw<T>(true, false, w, d_k, w, T(1), wblock, 2 * w, d_out.row(g * w), d_k, T(1),
                        dv.row((g - 1) * w), d_k);
        }
        gemm_raw<T>(false, true, w, w, d_k, T(1), d_out.row(g * w), d_k, v.row(g * w), d_k, T(1),
                    dblock + w, 2 * w);
        gemm_raw<T>(true, false, w, d_k, w, T(1), wblock + w, 2 * w, d_out.row(g * w), d_k, T(1),
                    dv.row(g * w), d_k);
    }
}

// Spec-surface short attention: logits -> masked softmax -> weighted V gather.
template <typename T>
struct BranchResult {
    Mat<T> logits;
    Mat<T> weights;
    Mat<T> output;
};

template <typename T>
BranchResult<T> short_attention(const Mat<T>& q, const Mat<T>& k, const Mat<T>& v,
                                const ModelConfig& cfg) {
    BranchResult<T> res;
    res.logits = short_logits(q, k, cfg);
    res.weights = res.logits;
    row_softmax_masked(res.weights);
    res.output = Mat<T>(cfg.n, cfg.d_k);
    short_apply_values(res.weights, v, cfg, res.output);
    return res;
}

// ---------------------------------------------------------------------------
// Dynamic projection: each length-s segment is compressed to c rows through a
// per-segment column softmax. With overlap, segment j covers source rows
// [j*s - s/2, j*s + s/2), zero-padded at the front.
// ---------------------------------------------------------------------------

template <typename T>
struct ProjResult {
    Mat<T> projected;  // r x d_k
    Mat<T> P;          // n x c; row t belongs to segment t/s (slot position)
};

namespace detail {

// Copies the (possibly shifted and zero-padded) segment into seg (s x d_k).
template <typename T>
void load_segment(const Mat<T>& input, idx seg_index, bool overlap, const ModelConfig& cfg,
                  Mat<T>& seg) {
    const idx s = cfg.s, d_k = cfg.d_k;
    const idx shift = overlap ? s / 2 : 0;
    for (idx t = 0; t < s; ++t) {
        const idx src = seg_index * s + t - shift;
        if (src < 0) {
            std::fill(seg.row(t), seg.row(t) + d_k, T(0));
        } else {
            std::copy(input.row(src), input.row(src) + d_k, seg.row(t));
        }
    }
}

template <typename T>
void scatter_segment_grad(const Mat<T>& d_seg, idx seg_index, bool overlap, const ModelConfig& cfg,
                          Mat<T>& d_input) {
    const idx s = cfg.s, d_k = cfg.d_k;
    const idx shift = overlap ? s / 2 : 0;
    for (idx t = 0; t < s; ++t) {
        const idx src = seg_index * s + t - shift;
        if (src < 0) continue;  // padding rows have no source
        const T* dr = d_seg.row(t);
        T* out = d_input.row(src);
        for (idx j = 0; j < d_k; ++j) out[j] += dr[j];
    }
}

// softmax over the segment-length axis, one distribution per projection column
template <typename T>
void column_softmax(Mat<T>& z) {
    for (idx q = 0; q < z.cols(); ++q) {
        T mx = z(0, q);
        for (idx t = 1; t < z.rows(); ++t) mx = std::max(mx, z(t, q));
        T sum = T(0);
        for (idx t = 0; t < z.rows(); ++t) {
            z(t, q) = std::exp(z(t, q) - mx);
            sum += z(t, q);
        }
        const T inv = T(1) / sum;
        for (idx t = 0; t < z.rows(); ++t) z(t, q) *= inv;
    }
}

}  // namespace detail

template <typename T>
ProjResult<T> dynamic_projection(const Mat<T>& input, const Mat<T>& w_proj, bool overlap,
                                 const ModelConfig& cfg) {
    const idx s = cfg.s, c = cfg.c, d_k = cfg.d_k, n_s = cfg.n_s;
    if (input.rows() != cfg.n || input.cols() != d_k)
        throw std::invalid_argument("dynamic_projection: input must be n x d_k");
    if (w_proj.rows() != d_k || w_proj.cols() != c)
        throw std::invalid_argument("dynamic_projection: w_proj must be d_k x c");

    ProjResult<T> res;
    res.projected = Mat<T>(cfg.r, d_k);
    res.P = Mat<T>(cfg.n, c);
    Mat<T> seg(s, d_k), z(s, c);
    for (idx j = 0; j < n_s; ++j) {
        detail::load_segment(input, j, overlap, cfg, seg);
        matmul(z, seg, w_proj);
        detail::column_softmax(z);
        for (idx t = 0; t < s; ++t)
            std::copy(z.row(t), z.row(t) + c, res.P.row(j * s + t));
        gemm_raw<T>(true, false, c, d_k, s, T(1), z.data(), c, seg.data(), d_k, T(0),
                    res.projected.row(j * c), d_k);
    }
    return res;
}

// Applies an existing per-segment projection (built from K) to another stream
// (V), producing its compressed rows.
template <typename T>
Mat<T> apply_projection(const Mat<T>& P, const Mat<T>& input, bool overlap,
                        const ModelConfig& cfg) {
    const idx s = cfg.s, c = cfg.c, d_k = cfg.d_k;
    Mat<T> out(cfg.r, d_k);
    Mat<T> seg(s, d_k);
    for (idx j = 0; j < cfg.n_s; ++j) {
        detail::load_segment(input, j, overlap, cfg, seg);
        gemm_raw<T>(true, false, c, d_k, s, T(1), P.row(j * s), c, seg.data(), d_k, T(0),
                    out.row(j * c), d_k);
    }
    return out;
}

// Joint backward through k_bar = P^T K_seg and v_bar = P^T V_seg where
// P = column_softmax(K_seg W). Accumulates into dk, dv, dw_proj.
template <typename T>
void dynamic_projection_pair_backward(const Mat<T>& d_kbar, const Mat<T>& d_vbar, const Mat<T>& P,
                                      const Mat<T>& k_in, const Mat<T>& v_in, const Mat<T>& w_proj,
                                      bool overlap, const ModelConfig& cfg, Mat<T>& dk, Mat<T>& dv,
                                      Mat<T>& dw_proj) {
    const idx s = cfg.s, c = cfg.c, d_k = cfg.d_k;
    Mat<T> kseg(s, d_k), vseg(s, d_k), dkseg(s, d_k), dvseg(s, d_k);
    Mat<T> dP(s, c), dz(s, c);
    for (idx j = 0; j < cfg.n_s; ++j) {
        detail::load_segment(k_in, j, overlap, cfg, kseg);
        detail::load_segment(v_in, j, overlap, cfg, vseg);
        const T* pj = P.row(j * s);

        // dP accumulates from both projected streams
        gemm_raw<T>(false, true, s, c, d_k, T(1), kseg.data(), d_k, d_kbar.row(j * c), d_k, T(0),
                    dP.data(), c);
        gemm_raw<T>(false, true, s, c, d_k, T(1), vseg.data(), d_k, d_vbar.row(j * c), d_k, T(1),
                    dP.data(), c);

        // dSeg from the P^T * seg products
        gemm_raw<T>(false, false, s, d_k, c, T(1), pj, c, d_kbar.row(j * c), d_k, T(0),
                    dkseg.data(), d_k);
        gemm_raw<T>(false, false, s, d_k, c, T(1), pj, c, d_vbar.row(j * c), d_k, T(0),
                    dvseg.data(), d_k);

        // column softmax backward
        for (idx q = 0; q < c; ++q) {
            T dot = T(0);
            for (idx t = 0; t < s; ++t) dot += pj[t * c + q] * dP(t, q);
            for (idx t = 0; t < s; ++t) dz(t, q) = pj[t * c + q] * (dP(t, q) - dot);
        }

        // z = kseg * w_proj
        gemm_raw<T>(false, true, s, d_k, c, T(1), dz.data(), c, w_proj.data(), c, T(1),
                    dkseg.data(), d_k);
        gemm_raw<T>(true, false, d_k, c, s, T(1), kseg.data(), d_k, dz.data(), c, T(1),
                    dw_proj.data(), c);

        detail::scatter_segment_grad(dkseg, j, overlap, cfg, dk);
        detail::scatter_segment_grad(dvseg, j, overlap, cfg, dv);
    }
}

// ---------------------------------------------------------------------------
// Long branch over compressed rows. A compressed segment is visible to token
// t only when all positions it covers precede t's home segment start.
// ---------------------------------------------------------------------------

inline bool long_segment_visible(idx seg, idx home_segment, bool overlap, const ModelConfig& cfg) {
    const idx home_start = home_segment * cfg.s;
    if (overlap) return seg * cfg.s + cfg.s / 2 <= home_start;
    return (seg + 1) * cfg.s <= home_start;
}

template <typename T>
Mat<T> long_logits(const Mat<T>& q, const Mat<T>& k_bar, bool overlap, const ModelConfig& cfg) {
    if (k_bar.rows() != cfg.r || k_bar.cols() != cfg.d_k)
        throw std::invalid_argument("long_logits: k_bar must be r x d_k");
    const T scale = T(1) / std::sqrt(T(cfg.d_k));
    Mat<T> logits(cfg.n, cfg.r);
    matmul(logits, q, k_bar, false, true, scale);
    for (idx g = 0; g < cfg.n_s; ++g) {
        // find first masked segment for this home segment; visibility is a prefix
        for (idx j = 0; j < cfg.n_s; ++j) {
            if (long_segment_visible(j, g, overlap, cfg)) continue;
            for (idx i = g * cfg.s; i < (g + 1) * cfg.s; ++i) {
                T* row = logits.row(i);
                for (idx col = j * cfg.c; col < cfg.r; ++col) row[col] = neg_inf<T>;
            }
            break;
        }
    }
    return logits;
}

template <typename T>
void long_logits_backward(const Mat<T>& d_logits, const Mat<T>& q, const Mat<T>& k_bar,
                          const ModelConfig& cfg, Mat<T>& dq, Mat<T>& d_kbar) {
    const T scale = T(1) / std::sqrt(T(cfg.d_k));
    matmul(dq, d_logits, k_bar, false, false, scale, T(1));
    matmul(d_kbar, d_logits, q, true, false, scale, T(1));
}

template <typename T>
BranchResult<T> long_attention(const Mat<T>& q, const Mat<T>& k_bar, const Mat<T>& v_bar,
                               const ModelConfig& cfg, bool overlap) {
    BranchResult<T> res;
    res.logits = long_logits(q, k_bar, overlap, cfg);
    res.weights = res.logits;
    row_softmax_masked(res.weights);
    res.output = Mat<T>(cfg.n, cfg.d_k);
    matmul(res.output, res.weights, v_bar);
    return res;
}

// ---------------------------------------------------------------------------
// Cache branch: per averaged block, attention over the block's gathered
// uncompressed segments. The per-block K_c/V_c broadcast to the block's p_avg
// query rows.
// ---------------------------------------------------------------------------

template <typename T>
Mat<T> cache_logits(const Mat<T>& q, const CacheKV<T>& cache, const ModelConfig& cfg) {
    const idx width = cache.width;
    const T scale = T(1) / std::sqrt(T(cfg.d_k));
    Mat<T> logits(cfg.n, width);
    for (idx b = 0; b < cfg.m; ++b) {
        gemm_raw<T>(false, true, cfg.p_avg, width, cfg.d_k, scale, q.row(b * cfg.p_avg), cfg.d_k,
                    cache.kc.row(b * width), cfg.d_k, T(0), logits.row(b * cfg.p_avg), width);
        const std::uint8_t* mask = cache.col_mask.data() + b * width;
        for (idx i = b * cfg.p_avg; i < (b + 1) * cfg.p_avg; ++i) {
            T* row = logits.row(i);
            for (idx col = 0; col < width; ++col)
                if (!mask[col]) row[col] = neg_inf<T>;
        }
    }
    return logits;
}

template <typename T>
void cache_logits_backward(const Mat<T>& d_logits, const Mat<T>& q, const CacheKV<T>& cache,
                           const ModelConfig& cfg, Mat<T>& dq, Mat<T>& d_kc) {
    const idx width = cache.width;
    const T scale = T(1) / std::sqrt(T(cfg.d_k));
    for (idx b = 0; b < cfg.m; ++b) {
        gemm_raw<T>(false, false, cfg.p_avg, cfg.d_k, width, scale, d_logits.row(b * cfg.p_avg),
                    width, cache.kc.row(b * width), cfg.d_k, T(1), dq.row(b * cfg.p_avg), cfg.d_k);
        gemm_raw<T>(true, false, width, cfg.d_k, cfg.p_avg, scale, d_logits.row(b * cfg.p_avg),
                    width, q.row(b * cfg.p_avg), cfg.d_k, T(1), d_kc.row(b * width), cfg.d_k);
    }
}

template <typename T>
void cache_apply_values(const Mat<T>& weights, const CacheKV<T>& cache, const ModelConfig& cfg,
                        Mat<T>& out) {
    for (idx b = 0; b < cfg.m; ++b)
        gemm_raw<T>(false, false, cfg.p_avg, cfg.d_k, cache.width, T(1),
                    weights.row(b * cfg.p_avg), cache.width, cache.vc.row(b * cache.width),
                    cfg.d_k, T(1), out.row(b * cfg.p_avg), cfg.d_k);
}

template <typename T>
void cache_apply_values_backward(const Mat<T>& d_out, const Mat<T>& weights,
                                 const CacheKV<T>& cache, const ModelConfig& cfg,
                                 Mat<T>& d_weights, Mat<T>& d_vc) {
    for (idx b = 0; b < cfg.m; ++b) {
        gemm_raw<T>(false, true, cfg.p_avg, cache.width, cfg.d_k, T(1), d_out.row(b * cfg.p_avg),
                    cfg.d_k, cache.vc.row(b * cache.width), cfg.d_k, T(1),
                    d_weights.row(b * cfg.p_avg), cache.width);
        gemm_raw<T>(true, false, cache.width, cfg.d_k, cfg.p_avg, T(1),
                    weights.row(b * cfg.p_avg), cache.width, d_out.row(b * cfg.p_avg), cfg.d_k,
                    T(1), d_vc.row(b * cache.width), cfg.d_k);
    }
}

template <typename T>
BranchResult<T> cache_attention(const Mat<T>& q, const CacheKV<T>& cache, const ModelConfig& cfg) {
    BranchResult<T> res;
    res.logits = cache_logits(q, cache, cfg);
    res.weights = res.logits;
    row_softmax_masked(res.weights);
    res.output = Mat<T>(cfg.n, cfg.d_k);
    cache_apply_values(res.weights, cache, cfg, res.output);
    return res;
}

}  // namespace seglm
