#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "seglm/config.hpp"
#include "seglm/mat.hpp"
#include "seglm/model.hpp"
#include "seglm/selection.hpp"

// Independent reference implementations used by tests, the `check` subcommand
// and the scaling benchmark. Nothing here calls into the attention or model
// code paths it is used to verify; everything is written as plain loops.

namespace seglm::oracle {

// Full causal attention, triple-loop reference.
template <typename T>
struct DenseResult {
    Mat<T> weights;  // n x n
    Mat<T> output;   // n x d_k
};

template <typename T>
DenseResult<T> dense_causal_oracle(const Mat<T>& q, const Mat<T>& k, const Mat<T>& v) {
    const idx n = q.rows(), d_k = q.cols();
    DenseResult<T> res;
    res.weights = Mat<T>(n, n);
    res.output = Mat<T>(n, d_k);
    const T scale = T(1) / std::sqrt(T(d_k));
    std::vector<T> row(static_cast<std::size_t>(n));
    for (idx t = 0; t < n; ++t) {
        T mx = -std::numeric_limits<T>::infinity();
        for (idx j = 0; j <= t; ++j) {
            T dot = T(0);
            for (idx e = 0; e < d_k; ++e) dot += q(t, e) * k(j, e);
            row[static_cast<std::size_t>(j)] = dot * scale;
            if (row[static_cast<std::size_t>(j)] > mx) mx = row[static_cast<std::size_t>(j)];
        }
        T sum = T(0);
        for (idx j = 0; j <= t; ++j) {
            row[static_cast<std::size_t>(j)] = std::exp(row[static_cast<std::size_t>(j)] - mx);
            sum += row[static_cast<std::size_t>(j)];
        }
        for (idx j = 0; j <= t; ++j) {
            const T wv = row[static_cast<std::size_t>(j)] / sum;
            res.weights(t, j) = wv;
            for (idx e = 0; e < d_k; ++e) res.output(t, e) += wv * v(j, e);
        }
    }
    return res;
}

// Hand-loop masked softmax over compressed columns; the visibility rule is
// restated here rather than shared.
template <typename T>
Mat<T> long_attention_loop_oracle(const Mat<T>& q, const Mat<T>& k_bar, bool overlap,
                                  const ModelConfig& cfg) {
    const idx n = cfg.n, r = cfg.r, d_k = cfg.d_k;
    Mat<T> weights(n, r);
    const T scale = T(1) / std::sqrt(T(d_k));
    std::vector<T> logits(static_cast<std::size_t>(r));
    std::vector<bool> visible(static_cast<std::size_t>(r));
    for (idx t = 0; t < n; ++t) {
        const idx home_start = (t / cfg.s) * cfg.s;
        bool any = false;
        for (idx col = 0; col < r; ++col) {
            const idx seg = col / cfg.c;
            const idx seg_last = overlap ? seg * cfg.s + cfg.s / 2 : (seg + 1) * cfg.s;
            visible[static_cast<std::size_t>(col)] = seg_last <= home_start;
            if (!visible[static_cast<std::size_t>(col)]) continue;
            any = true;
            T dot = T(0);
            for (idx e = 0; e < d_k; ++e) dot += q(t, e) * k_bar(col, e);
            logits[static_cast<std::size_t>(col)] = dot * scale;
        }
        if (!any) continue;  // fully masked row stays zero
        T mx = -std::numeric_limits<T>::infinity();
        for (idx col = 0; col < r; ++col)
            if (visible[static_cast<std::size_t>(col)])
                mx = std::max(mx, logits[static_cast<std::size_t>(col)]);
        T sum = T(0);
        for (idx col = 0; col < r; ++col)
            if (visible[static_cast<std::size_t>(col)]) {
                logits[static_cast<std::size_t>(col)] =
                    std::exp(logits[static_cast<std::size_t>(col)] - mx);
                sum += logits[static_cast<std::size_t>(col)];
            }
        for (idx col = 0; col < r; ++col)
            if (visible[static_cast<std::size_t>(col)])
                weights(t, col) = logits[static_cast<std::size_t>(col)] / sum;
    }
    return weights;
}

// Per-segment compression reference: softmax column weights computed with
// explicit loops, convex combination of the segment rows.
template <typename T>
Mat<T> projection_loop_oracle(const Mat<T>& input, const Mat<T>& w_proj, const ModelConfig& cfg) {
    const idx s = cfg.s, c = cfg.c, d_k = cfg.d_k;
    Mat<T> out(cfg.r, d_k);
    for (idx seg = 0; seg < cfg.n_s; ++seg) {
        for (idx q = 0; q < c; ++q) {
            std::vector<T> z(static_cast<std::size_t>(s));
            T mx = -std::numeric_limits<T>::infinity();
            for (idx t = 0; t < s; ++t) {
                T dot = T(0);
                for (idx e = 0; e < d_k; ++e) dot += input(seg * s + t, e) * w_proj(e, q);
                z[static_cast<std::size_t>(t)] = dot;
                mx = std::max(mx, dot);
            }
            T sum = T(0);
            for (idx t = 0; t < s; ++t) {
                z[static_cast<std::size_t>(t)] = std::exp(z[static_cast<std::size_t>(t)] - mx);
                sum += z[static_cast<std::size_t>(t)];
            }
            for (idx e = 0; e < d_k; ++e) {
                T acc = T(0);
                for (idx t = 0; t < s; ++t)
                    acc += z[static_cast<std::size_t>(t)] / sum * input(seg * s + t, e);
                out(seg * c + q, e) = acc;
            }
        }
    }
    return out;
}

// Direct simulation of the selection rules: rank by magnitude (lower index on
// ties), expand neighbors, drop illegal candidates, then repeatedly add the
// allowed segment closest to the current set (lower index on ties).
template <typename T>
SegmentSelection selection_oracle(const Mat<T>& avg, const ModelConfig& cfg) {
    SegmentSelection sel;
    sel.blocks = cfg.m;
    sel.row_width = cfg.k * cfg.u;
    sel.per_block.assign(static_cast<std::size_t>(sel.blocks * sel.row_width),
                         SegmentSelection::kNone);
    sel.max_allowed.resize(static_cast<std::size_t>(sel.blocks));

    for (idx b = 0; b < cfg.m; ++b) {
        const idx max_allowed = b * cfg.p_avg / cfg.s - 1;
        sel.max_allowed[static_cast<std::size_t>(b)] = static_cast<std::int32_t>(max_allowed);
        if (max_allowed < 0) continue;

        std::vector<idx> picked;
        auto contains = [&](idx j) {
            for (idx x : picked)
                if (x == j) return true;
            return false;
        };

        // anchors: k largest magnitudes among the allowed pool
        std::vector<idx> anchors;
        std::vector<bool> used(static_cast<std::size_t>(max_allowed + 1), false);
        for (idx a = 0; a < cfg.k && a <= max_allowed; ++a) {
            idx arg = -1;
            for (idx j = 0; j <= max_allowed; ++j) {
                if (used[static_cast<std::size_t>(j)]) continue;
                if (arg < 0 || avg(b, j) > avg(b, arg)) arg = j;
            }
            used[static_cast<std::size_t>(arg)] = true;
            anchors.push_back(arg);
        }

        for (idx a : anchors)
            for (idx off = -(cfg.u - 1) / 2; off <= (cfg.u - 1) / 2; ++off) {
                const idx cand = a + off;
                if (cand < 0 || cand > max_allowed || contains(cand)) continue;
                picked.push_back(cand);
            }

        const idx target = std::min<idx>(sel.row_width, max_allowed + 1);
        while (static_cast<idx>(picked.size()) < target) {
            idx best = -1, best_dist = -1;
            for (idx j = 0; j <= max_allowed; ++j) {
                if (contains(j)) continue;
                idx dist = cfg.n_s + 1;
                for (idx x : picked) dist = std::min<idx>(dist, std::abs(j - x));
                if (best < 0 || dist < best_dist) {
                    best = j;
                    best_dist = dist;
                }
            }
            picked.push_back(best);
        }

        std::sort(picked.begin(), picked.end());
        for (std::size_t i = 0; i < picked.size(); ++i)
            sel.per_block[static_cast<std::size_t>(b * sel.row_width) + i] =
                static_cast<std::int32_t>(picked[i]);
    }
    return sel;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check (double precision). The segment selection
// observed in the base forward pass is pinned during the probes, matching the
// non-differentiable-selection semantics of the analytic backward pass.
// ---------------------------------------------------------------------------

struct GradCheckEntry {
    std::string name;
    double rel_err = 0.0;      // ||analytic - numeric|| / max(||a|| + ||n||, eps)
    double max_abs_diff = 0.0;
    std::int64_t checked = 0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> params;
    double max_rel_err = 0.0;
    std::string worst_param;
    bool pass = false;
};

// `sample_cap`: entries checked per tensor (whole tensor when it fits).
// `corrupt_param`: test fixture; adds a constant to that tensor's analytic
// gradient so the comparison must flag it.
GradCheckReport grad_check(const ModelConfig& cfg, std::uint64_t seed, double tolerance,
                           std::int64_t sample_cap = 1 << 20,
                           const std::string& corrupt_param = "");

}  // namespace seglm::oracle
