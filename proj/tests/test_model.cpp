#include <doctest.h>

#include <cmath>

#include "seglm/model.hpp"
#include "seglm/oracle.hpp"
#include "seglm/rng.hpp"

using namespace seglm;

namespace {

ModelConfig small_cfg() {
    ModelConfig cfg;
    cfg.n = 64;
    cfg.d = 32;
    cfg.h = 2;
    cfg.w = 16;
    cfg.s = 8;
    cfg.r = 16;
    cfg.k = 2;
    cfg.u = 1;
    cfg.p_avg = 16;
    cfg.layers = 2;
    cfg.vocab = 17;
    return cfg;
}

std::vector<std::int32_t> random_tokens(const ModelConfig& cfg, Rng& rng) {
    std::vector<std::int32_t> tokens(static_cast<std::size_t>(cfg.n));
    for (auto& t : tokens) t = static_cast<std::int32_t>(rng.uniform_int(0, cfg.vocab - 1));
    return tokens;
}

}  // namespace

TEST_SUITE("transformer_lm") {

TEST_CASE("forward produces n x vocab logits and rejects bad token ids") {
    const ModelConfig cfg = validate(small_cfg());
    LanguageModel<float> model = make_model<float>(cfg);
    init_model(model, 1);
    Rng rng(41);
    const auto tokens = random_tokens(cfg, rng);
    ForwardActs<float> acts;
    const Mat<float>& logits = forward<float>(tokens, model, acts);
    CHECK(logits.rows() == cfg.n);
    CHECK(logits.cols() == cfg.vocab);

    auto bad = tokens;
    bad[3] = static_cast<std::int32_t>(cfg.vocab);
    CHECK_THROWS_WITH_AS(forward<float>(bad, model, acts), doctest::Contains("out of range"),
                         ModelError);
}

TEST_CASE("forward is deterministic for fixed parameters and input") {
    const ModelConfig cfg = validate(small_cfg());
    LanguageModel<float> model = make_model<float>(cfg);
    init_model(model, 2);
    Rng rng(42);
    const auto tokens = random_tokens(cfg, rng);
    ForwardActs<float> a1, a2;
    const Mat<float>& l1 = forward<float>(tokens, model, a1);
    const Mat<float>& l2 = forward<float>(tokens, model, a2);
    for (idx t = 0; t < cfg.n; ++t)
        for (idx j = 0; j < cfg.vocab; ++j) CHECK(l1(t, j) == l2(t, j));
}

TEST_CASE("causality: flipping later tokens never changes earlier logits") {
    Rng rng(43);
    for (const AggregationMode mode :
         {AggregationMode::joint_softmax, AggregationMode::literal_branch}) {
        for (const bool cache : {true, false}) {
            ModelConfig cfg = small_cfg();
            cfg.aggregation_mode = mode;
            cfg.cache_enabled = cache;
            cfg.layers = 1;
            const ModelConfig v = validate(cfg);
            LanguageModel<float> model = make_model<float>(v);
            init_model(model, 44 + static_cast<std::uint64_t>(cache));

            auto tokens = random_tokens(v, rng);
            ForwardActs<float> acts;
            const Mat<float> base = forward<float>(tokens, model, acts);

            const idx t = rng.uniform_int(0, v.n - 2);
            for (idx pos = t + 1; pos < v.n; ++pos)
                tokens[static_cast<std::size_t>(pos)] =
                    static_cast<std::int32_t>((tokens[static_cast<std::size_t>(pos)] + 1 +
                                               rng.uniform_int(0, v.vocab - 2)) %
                                              v.vocab);
            const Mat<float>& flipped = forward<float>(tokens, model, acts);
            for (idx pos = 0; pos <= t; ++pos)
                for (idx j = 0; j < v.vocab; ++j)
                    CHECK(std::abs(base(pos, j) - flipped(pos, j)) <= 1e-6f);
        }
    }
}

TEST_CASE("degenerate single-segment model matches a hand-built dense transformer") {
    ModelConfig cfg;
    cfg.n = 32;
    cfg.d = 16;
    cfg.h = 1;
    cfg.w = 32;  // window covers the whole sequence
    cfg.s = 32;  // one long segment: every compressed column masked
    cfg.r = 1;
    cfg.k = 1;
    cfg.u = 1;
    cfg.p_avg = 32;
    cfg.layers = 1;
    cfg.vocab = 11;
    cfg.cache_enabled = false;
    cfg.overlap_enabled = false;
    cfg.ff_enabled = false;
    const ModelConfig v = validate(cfg);

    LanguageModel<double> model = make_model<double>(v);
    init_model(model, 7);
    Rng rng(45);
    const auto tokens = random_tokens(v, rng);
    ForwardActs<double> acts;
    const Mat<double>& got = forward<double>(tokens, model, acts);

    // hand-built reference: embedding + layernorm + dense causal head + W^o
    // residual + final layernorm + classifier, all plain loops
    const idx n = v.n, d = v.d;
    Mat<double> x(n, d);
    for (idx t = 0; t < n; ++t)
        for (idx j = 0; j < d; ++j)
            x(t, j) = model.tok_emb(tokens[static_cast<std::size_t>(t)], j) + model.pos_emb(t, j);

    auto layernorm_ref = [&](const Mat<double>& in, const Mat<double>& gain,
                             const Mat<double>& bias) {
        Mat<double> out(in.rows(), in.cols());
        for (idx t = 0; t < in.rows(); ++t) {
            double mu = 0.0;
            for (idx j = 0; j < in.cols(); ++j) mu += in(t, j);
            mu /= static_cast<double>(in.cols());
            double var = 0.0;
            for (idx j = 0; j < in.cols(); ++j) var += (in(t, j) - mu) * (in(t, j) - mu);
            var /= static_cast<double>(in.cols());
            const double rstd = 1.0 / std::sqrt(var + 1e-5);
            for (idx j = 0; j < in.cols(); ++j)
                out(t, j) = (in(t, j) - mu) * rstd * gain(0, j) + bias(0, j);
        }
        return out;
    };

    const LayerWeights<double>& lw = model.layers[0];
    const Mat<double> ln1 = layernorm_ref(x, lw.ln1_g, lw.ln1_b);
    Mat<double> q(n, v.d_k), k(n, v.d_k), val(n, v.d_k);
    for (idx t = 0; t < n; ++t)
        for (idx e = 0; e < v.d_k; ++e) {
            double aq = 0, ak = 0, av = 0;
            for (idx j = 0; j < d; ++j) {
                aq += ln1(t, j) * lw.heads[0].wq(j, e);
                ak += ln1(t, j) * lw.heads[0].wk(j, e);
                av += ln1(t, j) * lw.heads[0].wv(j, e);
            }
            q(t, e) = aq;
            k(t, e) = ak;
            val(t, e) = av;
        }
    const auto dense = oracle::dense_causal_oracle(q, k, val);
    Mat<double> x2(n, d);
    for (idx t = 0; t < n; ++t)
        for (idx j = 0; j < d; ++j) {
            double acc = 0.0;
            for (idx e = 0; e < v.d_k; ++e) acc += dense.output(t, e) * lw.wo(e, j);
            x2(t, j) = x(t, j) + acc;
        }
    const Mat<double> lnf = layernorm_ref(x2, model.lnf_g, model.lnf_b);
    for (idx t = 0; t < n; ++t)
        for (idx j = 0; j < v.vocab; ++j) {
            double acc = model.cls_b(0, j);
            for (idx e = 0; e < d; ++e) acc += lnf(t, e) * model.cls_w(e, j);
            CHECK(got(t, j) == doctest::Approx(acc).epsilon(1e-9));
        }
}

TEST_CASE("loss metrics: uniform logits give perplexity=vocab and bpc=8 for vocab 256") {
    Mat<float> logits(4, 256);
    logits.fill(0.37f);
    std::vector<std::int32_t> targets{0, 17, 101, 255};
    const Metrics m = loss_and_metrics(logits, targets);
    CHECK(m.perplexity == doctest::Approx(256.0).epsilon(1e-6));
    CHECK(m.bpc == doctest::Approx(8.0).epsilon(1e-9));
}

TEST_CASE("loss metrics: confident correct prediction gives loss ~0, perplexity ~1") {
    Mat<float> logits(3, 5);
    std::vector<std::int32_t> targets{1, 4, 0};
    for (idx t = 0; t < 3; ++t) logits(t, targets[static_cast<std::size_t>(t)]) = 60.0f;
    const Metrics m = loss_and_metrics(logits, targets);
    CHECK(m.cross_entropy_nats < 1e-9);
    CHECK(m.perplexity == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("loss metrics: three-step toy distribution matches hand arithmetic") {
    Mat<double> logits(3, 3);
    // row 0: (0,0,0), target 2 -> ln 3
    // row 1: (1,1,1), target 0 -> ln 3
    // row 2: (0, ln 2, 0), target 1 -> ln 2
    logits(1, 0) = logits(1, 1) = logits(1, 2) = 1.0;
    logits(2, 1) = std::log(2.0);
    std::vector<std::int32_t> targets{2, 0, 1};
    const Metrics m = loss_and_metrics(logits, targets);
    const double expect = (2.0 * std::log(3.0) + std::log(2.0)) / 3.0;
    CHECK(m.cross_entropy_nats == doctest::Approx(expect).epsilon(1e-12));
    CHECK(m.perplexity == doctest::Approx(2.6207413942088964).epsilon(1e-12));  // cbrt(18)
}

TEST_CASE("parameter count: cache toggling never changes it; overlap adds exactly W_Po") {
    ModelConfig base = small_cfg();
    base.cache_enabled = true;
    const std::int64_t with_cache = param_count(make_model<float>(validate(base)));
    base.cache_enabled = false;
    const std::int64_t without_cache = param_count(make_model<float>(validate(base)));
    CHECK(with_cache == without_cache);

    ModelConfig no_overlap = small_cfg();
    no_overlap.overlap_enabled = false;
    const ModelConfig vo = validate(small_cfg());
    const std::int64_t with_overlap = param_count(make_model<float>(vo));
    const std::int64_t without_overlap = param_count(make_model<float>(validate(no_overlap)));
    CHECK(with_overlap - without_overlap == vo.layers * vo.h * vo.d_k * vo.c);
}

TEST_CASE("tied embeddings drop the classifier matrix from the parameter count") {
    ModelConfig cfg = small_cfg();
    const std::int64_t untied = param_count(make_model<float>(validate(cfg)));
    cfg.tie_embeddings = true;
    const ModelConfig v = validate(cfg);
    const std::int64_t tied = param_count(make_model<float>(v));
    CHECK(untied - tied == v.d * v.vocab);

    // tied forward still works
    LanguageModel<float> model = make_model<float>(v);
    init_model(model, 3);
    Rng rng(46);
    const auto tokens = random_tokens(v, rng);
    ForwardActs<float> acts;
    const Mat<float>& logits = forward<float>(tokens, model, acts);
    CHECK(logits.cols() == v.vocab);
}

}  // TEST_SUITE
