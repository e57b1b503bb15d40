#include <doctest.h>

#include <cmath>

#include "seglm/model.hpp"
#include "seglm/oracle.hpp"
#include "seglm/rng.hpp"

using namespace seglm;

namespace {

ModelConfig grad_cfg(AggregationMode mode) {
    ModelConfig cfg;
    cfg.n = 32;
    cfg.d = 16;
    cfg.h = 2;
    cfg.w = 8;
    cfg.s = 4;
    cfg.r = 8;
    cfg.k = 2;
    cfg.u = 1;
    cfg.p_avg = 8;
    cfg.layers = 1;
    cfg.vocab = 17;
    cfg.aggregation_mode = mode;
    return cfg;
}

}  // namespace

TEST_SUITE("gradients") {

TEST_CASE("all gradients are finite on random input") {
    const ModelConfig cfg = validate(grad_cfg(AggregationMode::joint_softmax));
    LanguageModel<double> model = make_model<double>(cfg);
    init_model(model, 11);
    Rng rng(51);
    std::vector<std::int32_t> tokens(static_cast<std::size_t>(cfg.n)),
        targets(static_cast<std::size_t>(cfg.n));
    for (auto& t : tokens) t = static_cast<std::int32_t>(rng.uniform_int(0, cfg.vocab - 1));
    for (auto& t : targets) t = static_cast<std::int32_t>(rng.uniform_int(0, cfg.vocab - 1));

    ForwardActs<double> acts;
    forward<double>(tokens, model, acts);
    LanguageModel<double> grads = make_model<double>(cfg);
    backward(loss_backward(acts.logits, std::span<const std::int32_t>(targets)), model, acts,
             grads);
    visit_params(grads, [&](const std::string&, const Mat<double>& g) {
        for (idx i = 0; i < g.size(); ++i) REQUIRE(std::isfinite(g.data()[i]));
    });
}

TEST_CASE("finite differences agree with backward in both aggregation modes") {
    for (const AggregationMode mode :
         {AggregationMode::joint_softmax, AggregationMode::literal_branch}) {
        const auto report = oracle::grad_check(grad_cfg(mode), 12, 1e-4, 24);
        INFO("mode ", mode == AggregationMode::joint_softmax ? "joint" : "literal",
             " worst param: ", report.worst_param);
        CHECK(report.pass);
        CHECK(report.max_rel_err < 1e-4);
    }
}

TEST_CASE("a deliberately corrupted gradient is flagged") {
    const auto report =
        oracle::grad_check(grad_cfg(AggregationMode::joint_softmax), 12, 1e-4, 24, "cls.b");
    CHECK(!report.pass);
    bool found = false;
    for (const auto& entry : report.params)
        if (entry.name == "cls.b" && entry.rel_err > 1e-4) found = true;
    CHECK(found);
}

TEST_CASE("saturated correct prediction pushes the classifier gradient to ~0") {
    ModelConfig cfg = grad_cfg(AggregationMode::joint_softmax);
    cfg.vocab = 2;
    const ModelConfig v = validate(cfg);
    LanguageModel<double> model = make_model<double>(v);
    init_model(model, 13);
    // force logit 0 >> logit 1 regardless of input
    model.cls_b(0, 0) = 60.0;
    model.cls_b(0, 1) = -60.0;
    std::vector<std::int32_t> tokens(static_cast<std::size_t>(v.n), 1);
    std::vector<std::int32_t> targets(static_cast<std::size_t>(v.n), 0);

    ForwardActs<double> acts;
    forward<double>(tokens, model, acts);
    const Metrics m = loss_and_metrics(acts.logits, std::span<const std::int32_t>(targets));
    CHECK(m.cross_entropy_nats < 1e-9);

    LanguageModel<double> grads = make_model<double>(v);
    backward(loss_backward(acts.logits, std::span<const std::int32_t>(targets)), model, acts,
             grads);
    double norm = 0.0;
    for (idx i = 0; i < grads.cls_w.size(); ++i)
        norm += grads.cls_w.data()[i] * grads.cls_w.data()[i];
    for (idx i = 0; i < grads.cls_b.size(); ++i)
        norm += grads.cls_b.data()[i] * grads.cls_b.data()[i];
    CHECK(std::sqrt(norm) < 1e-6);
}

TEST_CASE("unreferenced embedding rows stay at zero gradient (frozen path)") {
    const ModelConfig v = validate(grad_cfg(AggregationMode::joint_softmax));
    LanguageModel<double> model = make_model<double>(v);
    init_model(model, 14);
    // only ids 0..3 occur; rows 4.. are disconnected from the loss
    std::vector<std::int32_t> tokens(static_cast<std::size_t>(v.n));
    std::vector<std::int32_t> targets(static_cast<std::size_t>(v.n));
    Rng rng(52);
    for (auto& t : tokens) t = static_cast<std::int32_t>(rng.uniform_int(0, 3));
    for (auto& t : targets) t = static_cast<std::int32_t>(rng.uniform_int(0, 3));

    ForwardActs<double> acts;
    forward<double>(tokens, model, acts);
    LanguageModel<double> grads = make_model<double>(v);
    backward(loss_backward(acts.logits, std::span<const std::int32_t>(targets)), model, acts,
             grads);
    for (idx row = 4; row < v.vocab; ++row)
        for (idx j = 0; j < v.d; ++j) CHECK(grads.tok_emb(row, j) == 0.0);

    // numeric probe on one frozen entry is ~0 as well
    const double saved = model.tok_emb(10, 0);
    ForwardActs<double> probe;
    model.tok_emb(10, 0) = saved + 1e-4;
    forward<double>(tokens, model, probe);
    const double up = loss_and_metrics(probe.logits, std::span<const std::int32_t>(targets))
                          .cross_entropy_nats;
    model.tok_emb(10, 0) = saved - 1e-4;
    forward<double>(tokens, model, probe);
    const double down = loss_and_metrics(probe.logits, std::span<const std::int32_t>(targets))
                            .cross_entropy_nats;
    model.tok_emb(10, 0) = saved;
    CHECK(std::abs(up - down) / 2e-4 < 1e-9);
}

TEST_CASE("gradient check passes with overlap disabled and with tied embeddings") {
    ModelConfig cfg = grad_cfg(AggregationMode::joint_softmax);
    cfg.overlap_enabled = false;
    CHECK(oracle::grad_check(cfg, 15, 1e-4, 16).pass);

    ModelConfig tied = grad_cfg(AggregationMode::joint_softmax);
    tied.tie_embeddings = true;
    CHECK(oracle::grad_check(tied, 16, 1e-4, 16).pass);
}

}  // TEST_SUITE
