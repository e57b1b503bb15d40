#include "seglm/trainer.hpp"

#include <cblas.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "seglm/runtime.hpp"

namespace seglm {

void init_runtime() { openblas_set_num_threads(1); }

double scheduled_lr(const TrainPlan& plan, std::int64_t step) {
    const std::int64_t warmup = plan.effective_warmup();
    if (warmup > 0 && step <= warmup)
        return plan.learning_rate * static_cast<double>(step) / static_cast<double>(warmup);
    const std::int64_t decay_span = plan.steps - warmup;
    if (decay_span <= 0) return plan.learning_rate;
    const double progress =
        static_cast<double>(step - warmup) / static_cast<double>(decay_span);
    const double pi = 3.14159265358979323846;
    return plan.learning_rate * 0.5 * (1.0 + std::cos(pi * std::min(progress, 1.0)));
}

namespace {

bool decays(const std::string& name) {
    return !(name.ends_with(".gain") || name.ends_with(".bias") || name.ends_with(".b1") ||
             name.ends_with(".b2") || name.ends_with("cls.b"));
}

struct ParamRef {
    std::string name;
    Mat<float>* mat;
};

std::vector<ParamRef> collect_params(LanguageModel<float>& model) {
    std::vector<ParamRef> out;
    visit_params(model, [&](const std::string& name, Mat<float>& m) {
        out.push_back({name, &m});
    });
    return out;
}

double global_grad_norm(LanguageModel<float>& grads) {
    double sq = 0.0;
    visit_params(grads, [&](const std::string&, Mat<float>& g) {
        const float* p = g.data();
        for (idx i = 0; i < g.size(); ++i) sq += static_cast<double>(p[i]) * p[i];
    });
    return std::sqrt(sq);
}

void format_row(std::string& out, std::int64_t step, Phase phase, const char* split,
                const Metrics& m, double tps) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%lld,%s,%s,%.6f,%.6f,%.6f,%.6f\n",
                  static_cast<long long>(step), phase_name(phase), split, m.cross_entropy_nats,
                  m.perplexity, m.bpc, tps);
    out += buf;
}

}  // namespace

void adamw_step(LanguageModel<float>& model, LanguageModel<float>& grads, AdamState& state,
                const TrainPlan& plan) {
    state.step += 1;
    const double lr = scheduled_lr(plan, state.step);
    const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));

    if (plan.grad_clip > 0.0) {
        const double norm = global_grad_norm(grads);
        if (norm > plan.grad_clip) {
            const float scale = static_cast<float>(plan.grad_clip / norm);
            visit_params(grads, [&](const std::string&, Mat<float>& g) {
                float* p = g.data();
                for (idx i = 0; i < g.size(); ++i) p[i] *= scale;
            });
        }
    }

    const auto ws = collect_params(model);
    const auto gs = collect_params(grads);
    const auto ms = collect_params(state.m);
    const auto vs = collect_params(state.v);
    for (std::size_t p = 0; p < ws.size(); ++p) {
        const double wd = decays(ws[p].name) ? plan.weight_decay : 0.0;
        float* pw = ws[p].mat->data();
        float* pg = gs[p].mat->data();
        float* pm = ms[p].mat->data();
        float* pv = vs[p].mat->data();
        for (idx i = 0; i < ws[p].mat->size(); ++i) {
            const double g = pg[i];
            const double m = beta1 * pm[i] + (1.0 - beta1) * g;
            const double v = beta2 * pv[i] + (1.0 - beta2) * g * g;
            pm[i] = static_cast<float>(m);
            pv[i] = static_cast<float>(v);
            const double update = (m / bc1) / (std::sqrt(v / bc2) + eps) + wd * pw[i];
            pw[i] = static_cast<float>(pw[i] - lr * update);
        }
    }
}

Metrics evaluate_split(const LanguageModel<float>& model, const Corpus& corpus, Split split,
                       std::int64_t max_windows) {
    WindowBatcher batcher(corpus, split, model.cfg.n, 0);
    std::int64_t count = batcher.windows_per_epoch();
    if (max_windows >= 0) count = std::min(count, max_windows);
    if (count == 0) throw TrainError("evaluate_split: no full windows in split");

    std::vector<std::int32_t> input, target;
    ForwardActs<float> acts;
    double total_nats = 0.0;
    for (std::int64_t i = 0; i < count; ++i) {
        batcher.window_at(i, input, target);
        const Mat<float>& logits = forward<float>(input, model, acts);
        total_nats += loss_and_metrics(logits, target).cross_entropy_nats;
    }
    Metrics out;
    out.cross_entropy_nats = total_nats / static_cast<double>(count);
    out.perplexity = std::exp(out.cross_entropy_nats);
    out.bpc = out.cross_entropy_nats / std::log(2.0);
    return out;
}

void save_train_checkpoint(const std::string& path, const LanguageModel<float>& model,
                           const AdamState* adam, Phase phase) {
    CheckpointFile file;
    std::istringstream cfg_text(model_config_text(model.cfg));
    std::string line;
    while (std::getline(cfg_text, line)) {
        const std::size_t eq = line.find('=');
        file.set_manifest(line.substr(0, eq), line.substr(eq + 1));
    }
    file.set_manifest("phase", phase_name(phase));
    file.set_manifest("opt_step", std::to_string(adam ? adam->step : 0));
    pack_model(file, model);
    if (adam) {
        pack_model_prefixed(file, adam->m, "adam.m.");
        pack_model_prefixed(file, adam->v, "adam.v.");
    }
    file.write(path);
}

Phase load_train_checkpoint(const std::string& path, LanguageModel<float>& model,
                            AdamState* adam) {
    const CheckpointFile file = CheckpointFile::read(path);
    check_structural_match(file, model.cfg);
    unpack_model(file, model);
    if (adam) {
        unpack_model(file, adam->m, "adam.m.");
        unpack_model(file, adam->v, "adam.v.");
        const std::string step = file.manifest_value("opt_step");
        adam->step = step.empty() ? 0 : std::stoll(step);
    }
    const std::string phase = file.manifest_value("phase");
    return phase == "finetune_with_cache" ? Phase::finetune_with_cache
                                          : Phase::pretrain_no_cache;
}

namespace {

struct WorkerCtx {
    ForwardActs<float> acts;
};

void write_diagnostics(const std::string& out_dir, std::int64_t step, double loss, double lr,
                       const LanguageModel<float>& model) {
    std::ofstream diag(out_dir + "/diagnostics.txt");
    diag << "non-finite loss at step " << step << "\n";
    diag << "loss_nats=" << loss << "\n";
    diag << "lr=" << lr << "\n";
    visit_params(model, [&](const std::string& name, const Mat<float>& m) {
        double mx = 0.0;
        bool finite = true;
        for (idx i = 0; i < m.size(); ++i) {
            const float v = m.data()[i];
            if (!std::isfinite(v)) finite = false;
            mx = std::max(mx, std::abs(static_cast<double>(v)));
        }
        diag << name << " max_abs=" << mx << (finite ? "" : " NON-FINITE") << "\n";
    });
}

}  // namespace

TrainResult train(const ModelConfig& base_cfg, const TrainPlan& plan, const Corpus& corpus,
                  const std::string& out_dir, const std::string& init_checkpoint,
                  std::ostream* progress) {
    ModelConfig cfg = base_cfg;
    cfg.cache_enabled = plan.phase == Phase::finetune_with_cache;
    cfg = validate(cfg);

    if (plan.phase == Phase::finetune_with_cache && init_checkpoint.empty())
        throw TrainError("finetune_with_cache requires a pretrain checkpoint (--ckpt)");

    std::filesystem::create_directories(out_dir);
    std::filesystem::create_directories(out_dir + "/checkpoints");

    LanguageModel<float> model = make_model<float>(cfg);
    if (!init_checkpoint.empty()) {
        load_train_checkpoint(init_checkpoint, model, nullptr);
    } else {
        init_model(model, plan.seed);
    }

    AdamState adam{make_model<float>(cfg), make_model<float>(cfg), 0};
    LanguageModel<float> total_grads = make_model<float>(cfg);

    const std::int64_t threads = std::max<std::int64_t>(1, plan.threads);
    std::vector<WorkerCtx> workers(static_cast<std::size_t>(threads));
    const auto total_refs = collect_params(total_grads);

    // gradients accumulate per batch element and reduce in element order, so
    // the result is independent of the thread count
    std::vector<LanguageModel<float>> elem_grads;
    std::vector<double> elem_loss(static_cast<std::size_t>(plan.batch_size), 0.0);
    for (std::int64_t e = 0; e < plan.batch_size; ++e) elem_grads.push_back(make_model<float>(cfg));
    std::vector<std::vector<ParamRef>> elem_refs;
    for (auto& grads : elem_grads) elem_refs.push_back(collect_params(grads));

    WindowBatcher batcher(corpus, Split::train, cfg.n, plan.seed);
    std::vector<std::vector<std::int32_t>> inputs(static_cast<std::size_t>(plan.batch_size));
    std::vector<std::vector<std::int32_t>> targets(static_cast<std::size_t>(plan.batch_size));

    std::string metrics_log = "step,phase,split,loss_nats,perplexity,bpc,tokens_per_second\n";
    const std::string metrics_path = out_dir + "/metrics.csv";

    double running_nats = 0.0;
    std::int64_t running_count = 0;
    auto window_start = std::chrono::steady_clock::now();
    std::int64_t window_tokens = 0;

    Metrics last_valid;
    for (std::int64_t step = 1; step <= plan.steps; ++step) {
        for (std::int64_t e = 0; e < plan.batch_size; ++e)
            batcher.next(inputs[static_cast<std::size_t>(e)], targets[static_cast<std::size_t>(e)]);

        const float inv_batch = 1.0f / static_cast<float>(plan.batch_size);
        auto run_range = [&](std::int64_t t, std::int64_t lo, std::int64_t hi) {
            WorkerCtx& ctx = workers[static_cast<std::size_t>(t)];
            for (std::int64_t e = lo; e < hi; ++e) {
                const auto& in = inputs[static_cast<std::size_t>(e)];
                const auto& tg = targets[static_cast<std::size_t>(e)];
                for (auto& ref : elem_refs[static_cast<std::size_t>(e)]) ref.mat->zero();
                const Mat<float>& logits = forward<float>(in, model, ctx.acts);
                elem_loss[static_cast<std::size_t>(e)] =
                    loss_and_metrics(logits, tg).cross_entropy_nats;
                Mat<float> d_logits = loss_backward(logits, std::span<const std::int32_t>(tg),
                                                    inv_batch);
                backward(d_logits, model, ctx.acts, elem_grads[static_cast<std::size_t>(e)]);
            }
        };

        if (threads == 1) {
            run_range(0, 0, plan.batch_size);
        } else {
            const std::int64_t per = (plan.batch_size + threads - 1) / threads;
            std::vector<std::thread> pool;
            for (std::int64_t t = 0; t < threads; ++t) {
                const std::int64_t lo = t * per;
                const std::int64_t hi = std::min(plan.batch_size, lo + per);
                if (lo >= hi) break;
                pool.emplace_back(run_range, t, lo, hi);
            }
            for (auto& th : pool) th.join();
        }

        // element-order reduction keeps results independent of the thread count
        for (auto& ref : total_refs) ref.mat->zero();
        double batch_nats = 0.0;
        for (std::int64_t e = 0; e < plan.batch_size; ++e) {
            batch_nats += elem_loss[static_cast<std::size_t>(e)];
            const auto& src = elem_refs[static_cast<std::size_t>(e)];
            for (std::size_t p = 0; p < total_refs.size(); ++p)
                add_inplace(*total_refs[p].mat, *src[p].mat);
        }
        batch_nats /= static_cast<double>(plan.batch_size);
        window_tokens += plan.batch_size * cfg.n;

        if (!std::isfinite(batch_nats)) {
            write_diagnostics(out_dir, step, batch_nats, scheduled_lr(plan, step), model);
            std::ofstream(metrics_path) << metrics_log;
            throw TrainError("non-finite loss at step " + std::to_string(step) +
                             "; diagnostics written to " + out_dir + "/diagnostics.txt");
        }

        adamw_step(model, total_grads, adam, plan);
        running_nats += batch_nats;
        running_count += 1;

        const bool log_now = step % plan.eval_every == 0 || step == plan.steps;
        if (log_now) {
            Metrics train_m;
            train_m.cross_entropy_nats = running_nats / static_cast<double>(running_count);
            train_m.perplexity = std::exp(train_m.cross_entropy_nats);
            train_m.bpc = train_m.cross_entropy_nats / std::log(2.0);
            double tps = 0.0;
            if (plan.log_throughput) {
                const double secs = std::chrono::duration<double>(
                                        std::chrono::steady_clock::now() - window_start)
                                        .count();
                tps = secs > 0 ? static_cast<double>(window_tokens) / secs : 0.0;
            }
            format_row(metrics_log, step, plan.phase, "train", train_m, tps);
            last_valid = evaluate_split(model, corpus, Split::valid, plan.eval_windows);
            format_row(metrics_log, step, plan.phase, "valid", last_valid, 0.0);
            if (progress)
                (*progress) << "step " << step << "/" << plan.steps << " train_bpc "
                            << train_m.bpc << " valid_bpc " << last_valid.bpc << "\n";
            running_nats = 0.0;
            running_count = 0;
            window_start = std::chrono::steady_clock::now();
            window_tokens = 0;
        }
        if (plan.checkpoint_every > 0 && step % plan.checkpoint_every == 0 && step != plan.steps) {
            char name[64];
            std::snprintf(name, sizeof(name), "/checkpoints/step_%06lld.ckpt",
                          static_cast<long long>(step));
            save_train_checkpoint(out_dir + name, model, &adam, plan.phase);
        }
    }

    const std::string final_path = out_dir + "/checkpoints/final.ckpt";
    save_train_checkpoint(final_path, model, &adam, plan.phase);
    std::ofstream(metrics_path) << metrics_log;

    TrainResult result;
    result.steps = plan.steps;
    result.final_valid = last_valid;
    result.final_checkpoint = final_path;
    return result;
}

}  // namespace seglm
