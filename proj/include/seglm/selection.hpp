#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "seglm/config.hpp"
#include "seglm/mat.hpp"

namespace seglm {

// Per-block choice of uncompressed segments for the cache branch. Each row
// holds k*u segment indices sorted ascending with SegmentSelection::kNone
// sentinels trailing. Block 0 is always all-sentinel.
struct SegmentSelection {
    static constexpr std::int32_t kNone = -1;

    idx blocks = 0;
    idx row_width = 0;                    // k * u
    std::vector<std::int32_t> per_block;  // blocks * row_width
    std::vector<std::int32_t> max_allowed;

    std::int32_t at(idx block, idx slot) const { return per_block[block * row_width + slot]; }
};

// Row-wise view of the long attention as n_s vectors of length c per token.
template <typename T>
struct SegmentVectors {
    Mat<T> data;  // n x r, same layout as the long weights
    idx n_s = 0;
    idx c = 0;

    T at(idx i, idx j, idx q) const { return data(i, j * c + q); }
};

template <typename T>
SegmentVectors<T> segment_attention_vectors(const Mat<T>& long_weights, const ModelConfig& cfg) {
    if (long_weights.cols() != cfg.n_s * cfg.c)
        throw std::invalid_argument("segment_attention_vectors: width != n_s*c");
    return SegmentVectors<T>{long_weights, cfg.n_s, cfg.c};
}

// out[i][j] = sqrt(mean_q seg[i][j][q]^2)
template <typename T>
Mat<T> rms_magnitudes(const SegmentVectors<T>& seg) {
    Mat<T> out(seg.data.rows(), seg.n_s);
    for (idx i = 0; i < seg.data.rows(); ++i) {
        const T* row = seg.data.row(i);
        for (idx j = 0; j < seg.n_s; ++j) {
            T acc = T(0);
            for (idx q = 0; q < seg.c; ++q) {
                const T v = row[j * seg.c + q];
                acc += v * v;
            }
            out(i, j) = std::sqrt(acc / T(seg.c));
        }
    }
    return out;
}

// out[b][j] = mean of magnitudes rows b*p_avg .. (b+1)*p_avg - 1
template <typename T>
Mat<T> block_average(const Mat<T>& magnitudes, const ModelConfig& cfg) {
    if (magnitudes.rows() != cfg.m * cfg.p_avg)
        throw std::invalid_argument("block_average: rows != m*p_avg");
    Mat<T> out(cfg.m, magnitudes.cols());
    const T inv = T(1) / T(cfg.p_avg);
    for (idx b = 0; b < cfg.m; ++b) {
        T* orow = out.row(b);
        for (idx t = 0; t < cfg.p_avg; ++t) {
            const T* irow = magnitudes.row(b * cfg.p_avg + t);
            for (idx j = 0; j < magnitudes.cols(); ++j) orow[j] += irow[j];
        }
        for (idx j = 0; j < magnitudes.cols(); ++j) orow[j] *= inv;
    }
    return out;
}

// Shifts block statistics one block into the past: row b of the result is row
// b-1 of the input, row 0 zero. The selection a block's queries share must not
// depend on the block's own rows (some of which sit after a given query), so
// ranking uses the most recent fully-past block.
template <typename T>
Mat<T> lag_block_rows(const Mat<T>& avg) {
    Mat<T> out(avg.rows(), avg.cols());
    for (idx b = 1; b < avg.rows(); ++b)
        std::copy(avg.row(b - 1), avg.row(b - 1) + avg.cols(), out.row(b));
    return out;
}

// Top-k segments per block by averaged magnitude, expanded with (u-1)/2
// neighbors on each side, then repaired: out-of-range / future / duplicate
// candidates are dropped and the row is refilled with the allowed segment
// closest to one already selected (lower index on ties) until it holds
// min(k*u, pool) unique indices. A block may only use segments that wholly
// precede its first token.
template <typename T>
SegmentSelection select_topk_segments(const Mat<T>& avg, const ModelConfig& cfg) {
    if (avg.rows() != cfg.m || avg.cols() != cfg.n_s)
        throw std::invalid_argument("select_topk_segments: expected m x n_s input");

    SegmentSelection sel;
    sel.blocks = cfg.m;
    sel.row_width = cfg.k * cfg.u;
    sel.per_block.assign(static_cast<std::size_t>(sel.blocks * sel.row_width),
                         SegmentSelection::kNone);
    sel.max_allowed.resize(static_cast<std::size_t>(sel.blocks));

    const idx half = (cfg.u - 1) / 2;
    std::vector<std::uint8_t> chosen(static_cast<std::size_t>(cfg.n_s));
    std::vector<idx> order(static_cast<std::size_t>(cfg.n_s));

    for (idx b = 0; b < cfg.m; ++b) {
        const idx max_allowed = (b * cfg.p_avg) / cfg.s - 1;
        sel.max_allowed[static_cast<std::size_t>(b)] = static_cast<std::int32_t>(max_allowed);
        if (max_allowed < 0) continue;  // block 0: nothing in the past

        const idx pool = max_allowed + 1;
        const idx target = std::min(sel.row_width, pool);

        // Rank allowed segments by magnitude, lower index winning ties.
        order.resize(static_cast<std::size_t>(pool));
        std::iota(order.begin(), order.end(), idx(0));
        const T* mag = avg.row(b);
        std::stable_sort(order.begin(), order.end(),
                         [&](idx a, idx b2) { return mag[a] > mag[b2]; });

        std::fill(chosen.begin(), chosen.begin() + pool, 0);
        idx count = 0;
        const idx anchors = std::min(cfg.k, pool);
        for (idx a = 0; a < anchors; ++a) {
            const idx center = order[static_cast<std::size_t>(a)];
            for (idx off = -half; off <= half; ++off) {
                const idx cand = center + off;
                if (cand < 0 || cand > max_allowed) continue;
                if (!chosen[static_cast<std::size_t>(cand)]) {
                    chosen[static_cast<std::size_t>(cand)] = 1;
                    ++count;
                }
            }
        }

        // Refill dropped candidates with segments contiguous to the current
        // selection: smallest distance to any chosen index, then lowest index.
        while (count < target) {
            idx best = -1;
            idx best_dist = cfg.n_s + 1;
            idx run_dist = cfg.n_s + 1;  // distance to nearest chosen at current j
            for (idx j = 0; j <= max_allowed; ++j) {
                run_dist = chosen[static_cast<std::size_t>(j)] ? 0 : run_dist + 1;
                if (!chosen[static_cast<std::size_t>(j)]) {
                    // forward distance found later; first record backward run
                    if (run_dist < best_dist) {
                        best_dist = run_dist;
                        best = j;
                    }
                }
            }
            // second sweep for distance to a chosen index on the right
            run_dist = cfg.n_s + 1;
            for (idx j = max_allowed; j >= 0; --j) {
                run_dist = chosen[static_cast<std::size_t>(j)] ? 0 : run_dist + 1;
                if (!chosen[static_cast<std::size_t>(j)] &&
                    (run_dist < best_dist || (run_dist == best_dist && j < best))) {
                    best_dist = run_dist;
                    best = j;
                }
            }
            chosen[static_cast<std::size_t>(best)] = 1;
            ++count;
        }

        idx slot = 0;
        std::int32_t* row = sel.per_block.data() + b * sel.row_width;
        for (idx j = 0; j <= max_allowed; ++j)
            if (chosen[static_cast<std::size_t>(j)]) row[slot++] = static_cast<std::int32_t>(j);
    }
    return sel;
}

// Uncompressed K/V rows for the selected segments, blocks stacked. Row layout:
// block b occupies rows [b*k*u*s, (b+1)*k*u*s); slot q within a block holds
// the s rows of its segment (ascending segment order). Sentinel slots stay
// zero and are recorded in col_mask (0 = masked).
template <typename T>
struct CacheKV {
    Mat<T> kc;  // (m * k*u*s) x d_k
    Mat<T> vc;
    std::vector<std::uint8_t> col_mask;  // m * k*u*s
    idx blocks = 0;
    idx width = 0;  // k*u*s
};

template <typename T>
CacheKV<T> gather_cache_kv(const Mat<T>& k_full, const Mat<T>& v_full,
                           const SegmentSelection& sel, const ModelConfig& cfg) {
    if (k_full.rows() != cfg.n || v_full.rows() != cfg.n)
        throw std::invalid_argument("gather_cache_kv: K/V must have n rows");
    CacheKV<T> out;
    out.blocks = cfg.m;
    out.width = cfg.k * cfg.u * cfg.s;
    out.kc = Mat<T>(cfg.m * out.width, cfg.d_k);
    out.vc = Mat<T>(cfg.m * out.width, cfg.d_k);
    out.col_mask.assign(static_cast<std::size_t>(cfg.m * out.width), 0);

    for (idx b = 0; b < cfg.m; ++b) {
        for (idx slot = 0; slot < sel.row_width; ++slot) {
            const std::int32_t seg = sel.at(b, slot);
            if (seg == SegmentSelection::kNone) continue;
            const idx dst = b * out.width + slot * cfg.s;
            const idx src = static_cast<idx>(seg) * cfg.s;
            for (idx t = 0; t < cfg.s; ++t) {
                std::copy(k_full.row(src + t), k_full.row(src + t) + cfg.d_k, out.kc.row(dst + t));
                std::copy(v_full.row(src + t), v_full.row(src + t) + cfg.d_k, out.vc.row(dst + t));
                out.col_mask[static_cast<std::size_t>(dst + t)] = 1;
            }
        }
    }
    return out;
}

// Scatters gradients of the gathered rows back to the source K/V rows.
template <typename T>
void gather_cache_kv_backward(const Mat<T>& d_kc, const Mat<T>& d_vc, const SegmentSelection& sel,
                              const ModelConfig& cfg, Mat<T>& d_k_full, Mat<T>& d_v_full) {
    const idx width = cfg.k * cfg.u * cfg.s;
    for (idx b = 0; b < cfg.m; ++b) {
        for (idx slot = 0; slot < sel.row_width; ++slot) {
            const std::int32_t seg = sel.at(b, slot);
            if (seg == SegmentSelection::kNone) continue;
            const idx src_row = b * width + slot * cfg.s;
            const idx dst_row = static_cast<idx>(seg) * cfg.s;
            for (idx t = 0; t < cfg.s; ++t) {
                const T* dk = d_kc.row(src_row + t);
                const T* dv = d_vc.row(src_row + t);
                T* ok = d_k_full.row(dst_row + t);
                T* ov = d_v_full.row(dst_row + t);
                for (idx j = 0; j < cfg.d_k; ++j) {
                    ok[j] += dk[j];
                    ov[j] += dv[j];
                }
            }
        }
    }
}

}  // namespace seglm
