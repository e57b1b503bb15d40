#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "seglm/checks.hpp"
#include "seglm/diagnostics.hpp"
#include "seglm/runtime.hpp"
#include "seglm/trainer.hpp"

namespace {

using namespace seglm;

struct Invocation {
    std::string subcommand;
    std::string config_path;
    std::string out_dir = "out";
    std::string ckpt_path;
    std::vector<std::string> overrides;
};

struct Parsed {
    ModelConfig model;
    TrainPlan plan;
};

Parsed load_configuration(const Invocation& inv) {
    ConfigFile file = ConfigFile::parse_file(inv.config_path);
    for (const std::string& kv : inv.overrides) {
        const std::size_t eq = kv.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--set expects KEY=VALUE, got '" + kv + "'");
        file.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    Parsed parsed;
    file.apply(parsed.model, parsed.plan);
    parsed.model = validate(parsed.model);
    return parsed;
}

void print_metrics_row(std::ostream& out, std::int64_t step, Phase phase, const std::string& split,
                       const Metrics& m) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%lld,%s,%s,%.6f,%.6f,%.6f,%.6f\n",
                  static_cast<long long>(step), phase_name(phase), split.c_str(),
                  m.cross_entropy_nats, m.perplexity, m.bpc, 0.0);
    out << "step,phase,split,loss_nats,perplexity,bpc,tokens_per_second\n" << buf;
}

int cmd_train(const Invocation& inv, Parsed parsed) {
    if (parsed.plan.data_path.empty()) throw ConfigError("train requires data_path in the config");
    const Corpus corpus = load_corpus(parsed.plan.data_path, parsed.model.n);
    const TrainResult result =
        train(parsed.model, parsed.plan, corpus, inv.out_dir, inv.ckpt_path, &std::cout);
    std::cout << "final checkpoint: " << result.final_checkpoint << "\n";
    std::cout << "final valid bpc: " << result.final_valid.bpc << "\n";
    LanguageModel<float> model = make_model<float>([&] {
        ModelConfig cfg = parsed.model;
        cfg.cache_enabled = parsed.plan.phase == Phase::finetune_with_cache;
        return validate(cfg);
    }());
    std::cout << "parameters: " << param_count(model) << "\n";
    return 0;
}

int cmd_eval(const Invocation& inv, Parsed parsed) {
    if (inv.ckpt_path.empty()) throw TrainError("eval requires --ckpt");
    if (parsed.plan.data_path.empty()) throw ConfigError("eval requires data_path in the config");
    const Corpus corpus = load_corpus(parsed.plan.data_path, parsed.model.n);

    // the checkpoint's phase decides whether the cache branch is active
    const CheckpointFile file = CheckpointFile::read(inv.ckpt_path);
    ModelConfig cfg = parsed.model;
    cfg.cache_enabled = file.manifest_value("phase") == "finetune_with_cache";
    cfg = validate(cfg);
    LanguageModel<float> model = make_model<float>(cfg);
    const Phase phase = load_train_checkpoint(inv.ckpt_path, model, nullptr);

    const Metrics m = evaluate_split(model, corpus, split_from_name(parsed.plan.split),
                                     parsed.plan.eval_windows);
    const std::string opt_step = file.manifest_value("opt_step");
    print_metrics_row(std::cout, opt_step.empty() ? 0 : std::stoll(opt_step), phase,
                      parsed.plan.split, m);
    return 0;
}

int cmd_dump(const Invocation& inv, Parsed parsed) {
    ModelConfig cfg = parsed.model;
    LanguageModel<float> model = make_model<float>(cfg);
    if (!inv.ckpt_path.empty()) {
        const CheckpointFile file = CheckpointFile::read(inv.ckpt_path);
        cfg.cache_enabled = file.manifest_value("phase") == "finetune_with_cache";
        cfg = validate(cfg);
        model = make_model<float>(cfg);
        load_train_checkpoint(inv.ckpt_path, model, nullptr);
    } else {
        init_model(model, parsed.plan.seed);
    }

    std::vector<std::int32_t> tokens(static_cast<std::size_t>(cfg.n));
    if (!parsed.plan.data_path.empty()) {
        const Corpus corpus = load_corpus(parsed.plan.data_path, cfg.n);
        WindowBatcher batcher(corpus, Split::valid, cfg.n, 0);
        std::vector<std::int32_t> target;
        batcher.window_at(0, tokens, target);
    } else {
        Rng rng(parsed.plan.seed);
        for (auto& t : tokens) t = static_cast<std::int32_t>(rng.uniform_int(0, cfg.vocab - 1));
    }

    dump_attention(model, tokens, parsed.plan.dump_layer, parsed.plan.dump_head,
                   inv.out_dir + "/dumps");
    std::cout << "wrote dumps to " << inv.out_dir << "/dumps\n";
    return 0;
}

int cmd_bench(const Invocation& inv, Parsed parsed) {
    std::vector<std::int64_t> ns;
    std::string list = parsed.plan.bench_ns;
    while (!list.empty()) {
        const std::size_t comma = list.find(',');
        ns.push_back(std::stoll(list.substr(0, comma)));
        if (comma == std::string::npos) break;
        list.erase(0, comma + 1);
    }
    const ScalingReport report = scaling_bench(ns, parsed.model, 5, parsed.plan.seed);
    std::filesystem::create_directories(inv.out_dir);
    write_scaling_csv(inv.out_dir + "/scaling.csv", report);
    std::cout << "dense slope: " << report.dense_slope << "\n";
    std::cout << "enhanced slope: " << report.enhanced_slope << "\n";
    std::cout << "wrote " << inv.out_dir << "/scaling.csv\n";
    return 0;
}

int cmd_check(const Invocation&, Parsed parsed) {
    const bool ok = run_check_suite(parsed.model, parsed.plan.seed, std::cout);
    std::cout << (ok ? "check suite: all passed\n" : "check suite: FAILURES\n");
    return ok ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
    seglm::init_runtime();

    CLI::App app{"seglm: byte-level language model with combined short/long/overlap/cache attention"};
    app.require_subcommand(1);

    Invocation inv;
    for (const char* name : {"train", "eval", "dump", "bench", "check"}) {
        CLI::App* sub = app.add_subcommand(name);
        sub->add_option("--config", inv.config_path, "config file (key=value lines)")->required();
        sub->add_option("--out", inv.out_dir, "output directory");
        sub->add_option("--ckpt", inv.ckpt_path, "checkpoint path");
        sub->add_option("--set", inv.overrides, "override KEY=VALUE (repeatable)");
        sub->callback([&inv, name] { inv.subcommand = name; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        Parsed parsed = load_configuration(inv);
        if (inv.subcommand == "train") return cmd_train(inv, std::move(parsed));
        if (inv.subcommand == "eval") return cmd_eval(inv, std::move(parsed));
        if (inv.subcommand == "dump") return cmd_dump(inv, std::move(parsed));
        if (inv.subcommand == "bench") return cmd_bench(inv, std::move(parsed));
        if (inv.subcommand == "check") return cmd_check(inv, std::move(parsed));
        std::cerr << "unknown subcommand\n";
        return 1;
    } catch (const seglm::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
