#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "seglm/trainer.hpp"

using namespace seglm;

namespace {

ModelConfig train_cfg() {
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
    cfg.layers = 1;
    cfg.vocab = 256;
    return cfg;
}

Corpus pattern_corpus(std::size_t repeats) {
    // repeating 64-byte pattern
    const char* pattern = "the quick brown fox jumps over the lazy dog 0123456789 abcdefg\n\n";
    REQUIRE(std::strlen(pattern) == 64);
    Corpus corpus;
    for (std::size_t i = 0; i < repeats; ++i)
        corpus.bytes.insert(corpus.bytes.end(), pattern, pattern + 64);
    corpus.train_end = corpus.bytes.size() * 90 / 100;
    corpus.valid_end = corpus.bytes.size() * 95 / 100;
    return corpus;
}

std::string temp_dir(const char* tag) {
    const auto dir = std::filesystem::temp_directory_path() / (std::string("seglm_") + tag);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir.string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_SUITE("training_harness") {

TEST_CASE("windows shift targets by one byte") {
    Corpus corpus;
    corpus.bytes = {'a', 'b', 'c', 'd'};
    corpus.train_end = 4;
    corpus.valid_end = 4;
    WindowBatcher batcher(corpus, Split::train, 3, 1);
    CHECK(batcher.windows_per_epoch() == 1);
    std::vector<std::int32_t> input, target;
    batcher.next(input, target);
    CHECK(input == std::vector<std::int32_t>{'a', 'b', 'c'});
    CHECK(target == std::vector<std::int32_t>{'b', 'c', 'd'});
}

TEST_CASE("same seed gives the same batch sequence") {
    const Corpus corpus = pattern_corpus(64);
    WindowBatcher b1(corpus, Split::train, 16, 9);
    WindowBatcher b2(corpus, Split::train, 16, 9);
    std::vector<std::int32_t> i1, t1, i2, t2;
    for (int step = 0; step < 50; ++step) {
        b1.next(i1, t1);
        b2.next(i2, t2);
        REQUIRE(i1 == i2);
        REQUIRE(t1 == t2);
    }
}

TEST_CASE("one epoch covers every stride-n window exactly once") {
    const Corpus corpus = pattern_corpus(64);  // train split: 3686 bytes
    const std::int64_t n = 16;
    WindowBatcher batcher(corpus, Split::train, n, 5);
    const std::int64_t windows = batcher.windows_per_epoch();
    CHECK(windows == static_cast<std::int64_t>((corpus.train_end - 1) / 16));

    // counting oracle: each window start must appear exactly once per epoch
    std::vector<int> seen(static_cast<std::size_t>(windows), 0);
    std::vector<std::int32_t> input, target;
    for (std::int64_t i = 0; i < windows; ++i) {
        batcher.next(input, target);
        // identify the window by matching its bytes against the corpus
        bool matched = false;
        for (std::int64_t start = 0; start < windows; ++start) {
            bool equal = true;
            for (std::int64_t j = 0; j < n && equal; ++j)
                equal = corpus.bytes[static_cast<std::size_t>(start * n + j)] ==
                        static_cast<std::uint8_t>(input[static_cast<std::size_t>(j)]);
            if (equal && !seen[static_cast<std::size_t>(start)]) {
                seen[static_cast<std::size_t>(start)] = 1;
                matched = true;
                break;
            }
        }
        REQUIRE(matched);
    }
    for (std::int64_t i = 0; i < windows; ++i) CHECK(seen[static_cast<std::size_t>(i)] == 1);
}

TEST_CASE("learning rate zero leaves parameters untouched") {
    const ModelConfig cfg = validate(train_cfg());
    const Corpus corpus = pattern_corpus(64);
    TrainPlan plan;
    plan.steps = 5;
    plan.batch_size = 2;
    plan.learning_rate = 0.0;
    plan.warmup_steps = 0;
    plan.eval_every = 5;
    plan.checkpoint_every = 100;
    plan.seed = 3;
    plan.eval_windows = 2;

    const std::string dir = temp_dir("lr0");
    const TrainResult result = train(cfg, plan, corpus, dir, "", nullptr);

    LanguageModel<float> trained = make_model<float>([&] {
        ModelConfig c = cfg;
        c.cache_enabled = false;
        return validate(c);
    }());
    load_train_checkpoint(result.final_checkpoint, trained, nullptr);
    LanguageModel<float> fresh = make_model<float>(trained.cfg);
    init_model(fresh, plan.seed);
    bool all_equal = true;
    visit_params(fresh, [&](const std::string& name, const Mat<float>& init_mat) {
        visit_params(trained, [&](const std::string& n2, const Mat<float>& got) {
            if (n2 != name) return;
            for (idx i = 0; i < got.size(); ++i)
                if (got.data()[i] != init_mat.data()[i]) all_equal = false;
        });
    });
    CHECK(all_equal);
}

TEST_CASE("a tiny model memorizes a repeating 64-byte pattern (train bpc < 1)") {
    const ModelConfig cfg = validate(train_cfg());
    const Corpus corpus = pattern_corpus(128);
    TrainPlan plan;
    plan.steps = 200;
    plan.batch_size = 4;
    plan.learning_rate = 3e-3;
    plan.warmup_steps = 10;
    plan.eval_every = 20;
    plan.checkpoint_every = 1000;
    plan.seed = 4;
    plan.eval_windows = 2;

    const std::string dir = temp_dir("memorize");
    train(cfg, plan, corpus, dir, "", nullptr);

    // last train row of the metric log (mean over the final eval window)
    const std::string log = slurp(dir + "/metrics.csv");
    double train_bpc = 1e9;
    std::istringstream lines(log);
    std::string line;
    while (std::getline(lines, line)) {
        if (line.find(",train,") == std::string::npos) continue;
        const auto last_comma = line.rfind(',');
        const auto bpc_start = line.rfind(',', last_comma - 1);
        train_bpc = std::stod(line.substr(bpc_start + 1, last_comma - bpc_start - 1));
    }
    CHECK(train_bpc < 1.0);
}

TEST_CASE("phase switch preserves the parameter count exactly") {
    const ModelConfig cfg = validate(train_cfg());
    ModelConfig pre = cfg;
    pre.cache_enabled = false;
    ModelConfig fin = cfg;
    fin.cache_enabled = true;
    CHECK(param_count(make_model<float>(validate(pre))) ==
          param_count(make_model<float>(validate(fin))));
}

TEST_CASE("checkpoint round-trip reproduces logits exactly") {
    const ModelConfig cfg = validate(train_cfg());
    LanguageModel<float> model = make_model<float>(cfg);
    init_model(model, 21);
    const std::string dir = temp_dir("roundtrip");
    save_train_checkpoint(dir + "/m.ckpt", model, nullptr, Phase::finetune_with_cache);

    LanguageModel<float> loaded = make_model<float>(cfg);
    CHECK(load_train_checkpoint(dir + "/m.ckpt", loaded, nullptr) ==
          Phase::finetune_with_cache);

    std::vector<std::int32_t> tokens(static_cast<std::size_t>(cfg.n));
    Rng rng(61);
    for (auto& t : tokens) t = static_cast<std::int32_t>(rng.uniform_int(0, cfg.vocab - 1));
    ForwardActs<float> a1, a2;
    const Mat<float>& l1 = forward<float>(tokens, model, a1);
    const Mat<float>& l2 = forward<float>(tokens, loaded, a2);
    for (idx t = 0; t < cfg.n; ++t)
        for (idx j = 0; j < cfg.vocab; ++j) CHECK(l1(t, j) == l2(t, j));
}

TEST_CASE("finetune requires a pretrain checkpoint") {
    const ModelConfig cfg = validate(train_cfg());
    const Corpus corpus = pattern_corpus(64);
    TrainPlan plan;
    plan.phase = Phase::finetune_with_cache;
    plan.steps = 1;
    const std::string dir = temp_dir("needckpt");
    CHECK_THROWS_WITH_AS(train(cfg, plan, corpus, dir, "", nullptr),
                         doctest::Contains("pretrain checkpoint"), TrainError);
}

TEST_CASE("non-finite loss aborts with a diagnostics dump") {
    const ModelConfig cfg = validate(train_cfg());
    const Corpus corpus = pattern_corpus(64);

    // poison a checkpoint with a NaN parameter, then resume from it
    ModelConfig pre = cfg;
    pre.cache_enabled = false;
    const ModelConfig vpre = validate(pre);
    LanguageModel<float> poisoned = make_model<float>(vpre);
    init_model(poisoned, 31);
    poisoned.pos_emb(0, 0) = std::numeric_limits<float>::quiet_NaN();
    const std::string dir = temp_dir("nanabort");
    save_train_checkpoint(dir + "/bad.ckpt", poisoned, nullptr, Phase::pretrain_no_cache);

    TrainPlan plan;
    plan.steps = 3;
    plan.batch_size = 2;
    plan.eval_every = 1;
    plan.seed = 5;
    plan.eval_windows = 1;
    CHECK_THROWS_WITH_AS(train(cfg, plan, corpus, dir, dir + "/bad.ckpt", nullptr),
                         doctest::Contains("non-finite"), TrainError);
    CHECK(std::filesystem::exists(dir + "/diagnostics.txt"));
}

TEST_CASE("validation evaluation does not mutate parameters") {
    const ModelConfig cfg = validate(train_cfg());
    const Corpus corpus = pattern_corpus(64);
    LanguageModel<float> model = make_model<float>(cfg);
    init_model(model, 41);
    std::vector<float> before;
    visit_params(model, [&](const std::string&, const Mat<float>& m) {
        before.insert(before.end(), m.data(), m.data() + m.size());
    });
    const Metrics m1 = evaluate_split(model, corpus, Split::valid, 2);
    const Metrics m2 = evaluate_split(model, corpus, Split::valid, 2);
    CHECK(m1.cross_entropy_nats == m2.cross_entropy_nats);
    std::size_t at = 0;
    bool unchanged = true;
    visit_params(model, [&](const std::string&, const Mat<float>& m) {
        for (idx i = 0; i < m.size(); ++i)
            if (m.data()[i] != before[at++]) unchanged = false;
    });
    CHECK(unchanged);
}

TEST_CASE("multi-thread batching reproduces the single-thread metric log") {
    const ModelConfig cfg = validate(train_cfg());
    const Corpus corpus = pattern_corpus(64);
    TrainPlan plan;
    plan.steps = 6;
    plan.batch_size = 4;
    plan.eval_every = 3;
    plan.checkpoint_every = 100;
    plan.seed = 6;
    plan.eval_windows = 2;

    const std::string d1 = temp_dir("seq");
    train(cfg, plan, corpus, d1, "", nullptr);
    plan.threads = 3;
    const std::string d2 = temp_dir("par");
    train(cfg, plan, corpus, d2, "", nullptr);
    CHECK(slurp(d1 + "/metrics.csv") == slurp(d2 + "/metrics.csv"));
}

}  // TEST_SUITE
