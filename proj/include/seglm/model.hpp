#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "seglm/head.hpp"
#include "seglm/linalg.hpp"
#include "seglm/rng.hpp"

namespace seglm {

struct ModelError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

template <typename T>
struct HeadWeights {
    Mat<T> wq, wk, wv;  // d x d_k
    Mat<T> wp;          // d_k x c
    Mat<T> wpo;         // d_k x c, allocated only when overlap is enabled
};

template <typename T>
struct LayerWeights {
    std::vector<HeadWeights<T>> heads;
    Mat<T> wo;  // d x d
    Mat<T> ln1_g, ln1_b, ln2_g, ln2_b;
    Mat<T> ff_w1, ff_b1;  // d x 4d, 1 x 4d
    Mat<T> ff_w2, ff_b2;  // 4d x d, 1 x d
};

template <typename T>
struct LanguageModel {
    ModelConfig cfg;
    Mat<T> tok_emb;  // vocab x d
    Mat<T> pos_emb;  // n x d, learned absolute positions
    std::vector<LayerWeights<T>> layers;
    Mat<T> lnf_g, lnf_b;
    Mat<T> cls_w;  // d x vocab; empty when tie_embeddings
    Mat<T> cls_b;  // 1 x vocab
};

template <typename T>
LanguageModel<T> make_model(const ModelConfig& cfg) {
    if (!cfg.validated) throw ModelError("make_model: config must be validated");
    LanguageModel<T> model;
    model.cfg = cfg;
    model.tok_emb = Mat<T>(cfg.vocab, cfg.d);
    model.pos_emb = Mat<T>(cfg.n, cfg.d);
    model.layers.resize(static_cast<std::size_t>(cfg.layers));
    for (auto& layer : model.layers) {
        layer.heads.resize(static_cast<std::size_t>(cfg.h));
        for (auto& head : layer.heads) {
            head.wq = Mat<T>(cfg.d, cfg.d_k);
            head.wk = Mat<T>(cfg.d, cfg.d_k);
            head.wv = Mat<T>(cfg.d, cfg.d_k);
            head.wp = Mat<T>(cfg.d_k, cfg.c);
            if (cfg.overlap_enabled) head.wpo = Mat<T>(cfg.d_k, cfg.c);
        }
        layer.wo = Mat<T>(cfg.d, cfg.d);
        layer.ln1_g = Mat<T>(1, cfg.d);
        layer.ln1_b = Mat<T>(1, cfg.d);
        layer.ln2_g = Mat<T>(1, cfg.d);
        layer.ln2_b = Mat<T>(1, cfg.d);
        if (cfg.ff_enabled) {
            layer.ff_w1 = Mat<T>(cfg.d, 4 * cfg.d);
            layer.ff_b1 = Mat<T>(1, 4 * cfg.d);
            layer.ff_w2 = Mat<T>(4 * cfg.d, cfg.d);
            layer.ff_b2 = Mat<T>(1, cfg.d);
        }
    }
    model.lnf_g = Mat<T>(1, cfg.d);
    model.lnf_b = Mat<T>(1, cfg.d);
    if (!cfg.tie_embeddings) model.cls_w = Mat<T>(cfg.d, cfg.vocab);
    model.cls_b = Mat<T>(1, cfg.vocab);
    return model;
}

// Visits every parameter tensor in a stable order with its checkpoint name.
template <typename T, typename F>
void visit_params(LanguageModel<T>& model, F&& f) {
    f("tok_emb", model.tok_emb);
    f("pos_emb", model.pos_emb);
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        auto& layer = model.layers[l];
        const std::string prefix = "layers." + std::to_string(l) + ".";
        for (std::size_t i = 0; i < layer.heads.size(); ++i) {
            auto& head = layer.heads[i];
            const std::string hp = prefix + "heads." + std::to_string(i) + ".";
            f(hp + "wq", head.wq);
            f(hp + "wk", head.wk);
            f(hp + "wv", head.wv);
            f(hp + "wp", head.wp);
            if (!head.wpo.empty()) f(hp + "wpo", head.wpo);
        }
        f(prefix + "wo", layer.wo);
        f(prefix + "ln1.gain", layer.ln1_g);
        f(prefix + "ln1.bias", layer.ln1_b);
        f(prefix + "ln2.gain", layer.ln2_g);
        f(prefix + "ln2.bias", layer.ln2_b);
        if (!layer.ff_w1.empty()) {
            f(prefix + "ff.w1", layer.ff_w1);
            f(prefix + "ff.b1", layer.ff_b1);
            f(prefix + "ff.w2", layer.ff_w2);
            f(prefix + "ff.b2", layer.ff_b2);
        }
    }
    f("ln_f.gain", model.lnf_g);
    f("ln_f.bias", model.lnf_b);
    if (!model.cls_w.empty()) f("cls.w", model.cls_w);
    f("cls.b", model.cls_b);
}

template <typename T, typename F>
void visit_params(const LanguageModel<T>& model, F&& f) {
    visit_params(const_cast<LanguageModel<T>&>(model),
                 [&](const std::string& name, Mat<T>& m) { f(name, const_cast<const Mat<T>&>(m)); });
}

template <typename T>
std::int64_t param_count(const LanguageModel<T>& model) {
    std::int64_t total = 0;
    visit_params(model, [&](const std::string&, const Mat<T>& m) { total += m.size(); });
    return total;
}

template <typename T>
void init_model(LanguageModel<T>& model, std::uint64_t seed, double stddev = 0.02) {
    Rng rng(seed);
    visit_params(model, [&](const std::string& name, Mat<T>& m) {
        const bool is_gain = name.size() >= 4 && name.compare(name.size() - 4, 4, "gain") == 0;
        const bool is_bias = name.compare(name.size() - 4, 4, "bias") == 0 ||
                             (name.find(".b") != std::string::npos &&
                              (name.ends_with(".b1") || name.ends_with(".b2") || name == "cls.b"));
        if (is_gain) {
            m.fill(T(1));
        } else if (is_bias) {
            m.zero();
        } else {
            rng.fill_normal(m, 0.0, stddev);
        }
    });
}

template <typename T>
LanguageModel<T> make_zero_like(const LanguageModel<T>& model) {
    LanguageModel<T> grads = make_model<T>(model.cfg);
    return grads;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

template <typename T>
struct LayerActs {
    Mat<T> x_in;  // residual stream entering the layer
    LayerNormCache<T> ln1_cache;
    Mat<T> ln1_out;
    std::vector<HeadActs<T>> heads;
    Mat<T> concat;  // n x d
    Mat<T> x_mid;   // after attention residual
    LayerNormCache<T> ln2_cache;
    Mat<T> ln2_out;
    Mat<T> ff_pre, ff_act;  // n x 4d
};

template <typename T>
struct ForwardActs {
    std::vector<std::int32_t> tokens;
    Mat<T> emb;  // n x d
    std::vector<LayerActs<T>> layers;
    Mat<T> x_last;
    LayerNormCache<T> lnf_cache;
    Mat<T> lnf_out;
    Mat<T> logits;  // n x vocab
};

struct ForwardOptions {
    // [layer][head] selections to use instead of recomputing (gradient check)
    const std::vector<std::vector<SegmentSelection>>* pinned_selections = nullptr;
    // when set, records each head's selection here
    std::vector<std::vector<SegmentSelection>>* record_selections = nullptr;
};

template <typename T>
const Mat<T>& forward(std::span<const std::int32_t> tokens, const LanguageModel<T>& model,
                      ForwardActs<T>& acts, const ForwardOptions& opts = {}) {
    const ModelConfig& cfg = model.cfg;
    if (static_cast<idx>(tokens.size()) != cfg.n)
        throw ModelError("forward: expected " + std::to_string(cfg.n) + " tokens");
    for (auto t : tokens)
        if (t < 0 || t >= cfg.vocab)
            throw ModelError("forward: token id out of range: " + std::to_string(t));

    acts.tokens.assign(tokens.begin(), tokens.end());
    acts.emb = Mat<T>(cfg.n, cfg.d);
    for (idx t = 0; t < cfg.n; ++t) {
        const T* tok_row = model.tok_emb.row(tokens[static_cast<std::size_t>(t)]);
        const T* pos_row = model.pos_emb.row(t);
        T* out = acts.emb.row(t);
        for (idx j = 0; j < cfg.d; ++j) out[j] = tok_row[j] + pos_row[j];
    }
    if (opts.record_selections) {
        opts.record_selections->assign(static_cast<std::size_t>(cfg.layers),
                                       std::vector<SegmentSelection>(static_cast<std::size_t>(cfg.h)));
    }

    acts.layers.assign(static_cast<std::size_t>(cfg.layers), LayerActs<T>{});
    Mat<T> x = acts.emb;
    for (std::size_t l = 0; l < acts.layers.size(); ++l) {
        LayerActs<T>& la = acts.layers[l];
        const LayerWeights<T>& lw = model.layers[l];
        la.x_in = std::move(x);
        la.ln1_out = Mat<T>(cfg.n, cfg.d);
        layernorm_forward(la.x_in, lw.ln1_g, lw.ln1_b, la.ln1_out, la.ln1_cache);

        la.heads.assign(static_cast<std::size_t>(cfg.h), HeadActs<T>{});
        la.concat = Mat<T>(cfg.n, cfg.d);
        for (std::size_t i = 0; i < la.heads.size(); ++i) {
            const HeadWeights<T>& hw = lw.heads[i];
            Mat<T> q(cfg.n, cfg.d_k), k(cfg.n, cfg.d_k), v(cfg.n, cfg.d_k);
            matmul(q, la.ln1_out, hw.wq);
            matmul(k, la.ln1_out, hw.wk);
            matmul(v, la.ln1_out, hw.wv);
            const SegmentSelection* pinned =
                opts.pinned_selections ? &(*opts.pinned_selections)[l][i] : nullptr;
            Mat<T> head_out = head_attention_forward(std::move(q), std::move(k), std::move(v),
                                                     hw.wp, hw.wpo, cfg, la.heads[i], pinned);
            if (opts.record_selections) (*opts.record_selections)[l][i] = la.heads[i].sel;
            for (idx t = 0; t < cfg.n; ++t)
                std::copy(head_out.row(t), head_out.row(t) + cfg.d_k,
                          la.concat.row(t) + static_cast<idx>(i) * cfg.d_k);
        }

        la.x_mid = la.x_in;
        matmul(la.x_mid, la.concat, lw.wo, false, false, T(1), T(1));

        if (cfg.ff_enabled) {
            la.ln2_out = Mat<T>(cfg.n, cfg.d);
            layernorm_forward(la.x_mid, lw.ln2_g, lw.ln2_b, la.ln2_out, la.ln2_cache);
            la.ff_pre = Mat<T>(cfg.n, 4 * cfg.d);
            matmul(la.ff_pre, la.ln2_out, lw.ff_w1);
            for (idx t = 0; t < cfg.n; ++t) {
                T* row = la.ff_pre.row(t);
                for (idx j = 0; j < 4 * cfg.d; ++j) row[j] += lw.ff_b1(0, j);
            }
            la.ff_act = la.ff_pre;
            for (idx t = 0; t < cfg.n; ++t) {
                T* row = la.ff_act.row(t);
                for (idx j = 0; j < 4 * cfg.d; ++j) row[j] = gelu(row[j]);
            }
            x = la.x_mid;
            matmul(x, la.ff_act, lw.ff_w2, false, false, T(1), T(1));
            for (idx t = 0; t < cfg.n; ++t) {
                T* row = x.row(t);
                for (idx j = 0; j < cfg.d; ++j) row[j] += lw.ff_b2(0, j);
            }
        } else {
            x = la.x_mid;
        }
    }

    acts.x_last = std::move(x);
    acts.lnf_out = Mat<T>(cfg.n, cfg.d);
    layernorm_forward(acts.x_last, model.lnf_g, model.lnf_b, acts.lnf_out, acts.lnf_cache);
    acts.logits = Mat<T>(cfg.n, cfg.vocab);
    if (cfg.tie_embeddings) {
        matmul(acts.logits, acts.lnf_out, model.tok_emb, false, true);
    } else {
        matmul(acts.logits, acts.lnf_out, model.cls_w);
    }
    for (idx t = 0; t < cfg.n; ++t) {
        T* row = acts.logits.row(t);
        for (idx j = 0; j < cfg.vocab; ++j) row[j] += model.cls_b(0, j);
    }
    return acts.logits;
}

struct Metrics {
    double cross_entropy_nats = 0.0;
    double perplexity = 0.0;
    double bpc = 0.0;
};

template <typename T>
Metrics loss_and_metrics(const Mat<T>& logits, std::span<const std::int32_t> targets) {
    if (static_cast<idx>(targets.size()) != logits.rows())
        throw ModelError("loss_and_metrics: logits/targets length mismatch");
    double total = 0.0;
    for (idx t = 0; t < logits.rows(); ++t) {
        const T* row = logits.row(t);
        double mx = row[0];
        for (idx j = 1; j < logits.cols(); ++j) mx = std::max<double>(mx, row[j]);
        double sum = 0.0;
        for (idx j = 0; j < logits.cols(); ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
        const double logit = static_cast<double>(row[targets[static_cast<std::size_t>(t)]]);
        total += mx + std::log(sum) - logit;
    }
    Metrics out;
    out.cross_entropy_nats = total / static_cast<double>(logits.rows());
    out.perplexity = std::exp(out.cross_entropy_nats);
    out.bpc = out.cross_entropy_nats / std::log(2.0);
    return out;
}

// dL/dlogits for the mean cross entropy, scaled by `scale` (1/batch for
// batched accumulation).
template <typename T>
Mat<T> loss_backward(const Mat<T>& logits, std::span<const std::int32_t> targets, T scale = T(1)) {
    Mat<T> d(logits.rows(), logits.cols());
    const T inv_n = scale / static_cast<T>(logits.rows());
    for (idx t = 0; t < logits.rows(); ++t) {
        const T* row = logits.row(t);
        T* dr = d.row(t);
        T mx = row[0];
        for (idx j = 1; j < logits.cols(); ++j) mx = std::max(mx, row[j]);
        T sum = T(0);
        for (idx j = 0; j < logits.cols(); ++j) {
            dr[j] = std::exp(row[j] - mx);
            sum += dr[j];
        }
        const T inv = T(1) / sum;
        for (idx j = 0; j < logits.cols(); ++j) dr[j] *= inv * inv_n;
        dr[targets[static_cast<std::size_t>(t)]] -= inv_n;
    }
    return d;
}

namespace detail {

template <typename T>
void add_col_sums(const Mat<T>& src, Mat<T>& dst) {
    for (idx i = 0; i < src.rows(); ++i) {
        const T* row = src.row(i);
        for (idx j = 0; j < src.cols(); ++j) dst(0, j) += row[j];
    }
}

}  // namespace detail

// Accumulates parameter gradients for one sequence into `grads`. The top-k
// segment selection is non-differentiable; gradients flow through the gathered
// K/V rows and Q only.
template <typename T>
void backward(const Mat<T>& d_logits, const LanguageModel<T>& model, const ForwardActs<T>& acts,
              LanguageModel<T>& grads) {
    const ModelConfig& cfg = model.cfg;

    // classifier
    Mat<T> d_lnf_out(cfg.n, cfg.d);
    if (cfg.tie_embeddings) {
        matmul(d_lnf_out, d_logits, model.tok_emb);
        matmul(grads.tok_emb, d_logits, acts.lnf_out, true, false, T(1), T(1));
    } else {
        matmul(d_lnf_out, d_logits, model.cls_w, false, true);
        matmul(grads.cls_w, acts.lnf_out, d_logits, true, false, T(1), T(1));
    }
    detail::add_col_sums(d_logits, grads.cls_b);

    Mat<T> dx(cfg.n, cfg.d);
    layernorm_backward(acts.x_last, model.lnf_g, acts.lnf_cache, d_lnf_out, dx, grads.lnf_g,
                       grads.lnf_b);

    for (std::size_t li = acts.layers.size(); li-- > 0;) {
        const LayerActs<T>& la = acts.layers[li];
        const LayerWeights<T>& lw = model.layers[li];
        LayerWeights<T>& gw = grads.layers[li];

        Mat<T> d_x_mid = dx;
        if (cfg.ff_enabled) {
            // dx is the gradient of x_out = x_mid + ff(ln2(x_mid))
            Mat<T> d_ff_act(cfg.n, 4 * cfg.d);
            matmul(d_ff_act, dx, lw.ff_w2, false, true);
            matmul(gw.ff_w2, la.ff_act, dx, true, false, T(1), T(1));
            detail::add_col_sums(dx, gw.ff_b2);
            for (idx t = 0; t < cfg.n; ++t) {
                T* row = d_ff_act.row(t);
                const T* pre = la.ff_pre.row(t);
                for (idx j = 0; j < 4 * cfg.d; ++j) row[j] *= gelu_grad(pre[j]);
            }
            Mat<T> d_ln2_out(cfg.n, cfg.d);
            matmul(d_ln2_out, d_ff_act, lw.ff_w1, false, true);
            matmul(gw.ff_w1, la.ln2_out, d_ff_act, true, false, T(1), T(1));
            detail::add_col_sums(d_ff_act, gw.ff_b1);
            layernorm_backward(la.x_mid, lw.ln2_g, la.ln2_cache, d_ln2_out, d_x_mid, gw.ln2_g,
                               gw.ln2_b);
        }

        // x_mid = x_in + concat * wo
        Mat<T> d_concat(cfg.n, cfg.d);
        matmul(d_concat, d_x_mid, lw.wo, false, true);
        matmul(gw.wo, la.concat, d_x_mid, true, false, T(1), T(1));

        Mat<T> d_ln1_out(cfg.n, cfg.d);
        for (std::size_t i = 0; i < la.heads.size(); ++i) {
            const HeadWeights<T>& hw = lw.heads[i];
            HeadWeights<T>& gh = gw.heads[i];
            Mat<T> d_head(cfg.n, cfg.d_k);
            for (idx t = 0; t < cfg.n; ++t)
                std::copy(d_concat.row(t) + static_cast<idx>(i) * cfg.d_k,
                          d_concat.row(t) + static_cast<idx>(i + 1) * cfg.d_k, d_head.row(t));
            Mat<T> dq(cfg.n, cfg.d_k), dk(cfg.n, cfg.d_k), dv(cfg.n, cfg.d_k);
            head_attention_backward(d_head, la.heads[i], hw.wp, hw.wpo, cfg, dq, dk, dv, gh.wp,
                                    gh.wpo);
            matmul(d_ln1_out, dq, hw.wq, false, true, T(1), T(1));
            matmul(d_ln1_out, dk, hw.wk, false, true, T(1), T(1));
            matmul(d_ln1_out, dv, hw.wv, false, true, T(1), T(1));
            matmul(gh.wq, la.ln1_out, dq, true, false, T(1), T(1));
            matmul(gh.wk, la.ln1_out, dk, true, false, T(1), T(1));
            matmul(gh.wv, la.ln1_out, dv, true, false, T(1), T(1));
        }

        Mat<T> d_x_in = d_x_mid;  // residual
        layernorm_backward(la.x_in, lw.ln1_g, la.ln1_cache, d_ln1_out, d_x_in, gw.ln1_g, gw.ln1_b);
        dx = std::move(d_x_in);
    }

    // embeddings
    for (idx t = 0; t < cfg.n; ++t) {
        const T* dr = dx.row(t);
        T* te = grads.tok_emb.row(acts.tokens[static_cast<std::size_t>(t)]);
        T* pe = grads.pos_emb.row(t);
        for (idx j = 0; j < cfg.d; ++j) {
            te[j] += dr[j];
            pe[j] += dr[j];
        }
    }
}

}  // namespace seglm
