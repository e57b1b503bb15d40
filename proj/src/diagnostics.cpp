#include "seglm/diagnostics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "seglm/csv.hpp"
#include "seglm/head.hpp"
#include "seglm/oracle.hpp"
#include "seglm/rng.hpp"

namespace seglm {

void dump_attention(const LanguageModel<float>& model, std::span<const std::int32_t> tokens,
                    std::int64_t layer, std::int64_t head, const std::string& out_dir) {
    const ModelConfig& cfg = model.cfg;
    if (layer < 0 || layer >= cfg.layers)
        throw ModelError("dump_attention: layer index out of range: " + std::to_string(layer));
    if (head < 0 || head >= cfg.h)
        throw ModelError("dump_attention: head index out of range: " + std::to_string(head));

    ForwardActs<float> acts;
    forward<float>(tokens, model, acts);
    const LayerActs<float>& la = acts.layers[static_cast<std::size_t>(layer)];
    const HeadWeights<float>& hw = model.layers[static_cast<std::size_t>(layer)]
                                       .heads[static_cast<std::size_t>(head)];

    // rebuild this head's q/k/v from the recorded layer input
    Mat<float> q(cfg.n, cfg.d_k), k(cfg.n, cfg.d_k), v(cfg.n, cfg.d_k);
    matmul(q, la.ln1_out, hw.wq);
    matmul(k, la.ln1_out, hw.wk);
    matmul(v, la.ln1_out, hw.wv);
    HeadDiagnostics<float> diag = head_attention_diagnostic(q, k, v, hw.wp, hw.wpo, cfg);

    std::filesystem::create_directories(out_dir);
    const AttentionBundle<float>& bundle = diag.bundle;
    write_matrix_csv(out_dir + "/weights_short.csv", bundle.short_weights);
    write_matrix_csv(out_dir + "/weights_long.csv", bundle.long_weights);
    if (cfg.overlap_enabled)
        write_matrix_csv(out_dir + "/weights_overlap.csv", bundle.overlap_weights);
    if (cfg.cache_enabled) write_matrix_csv(out_dir + "/weights_cache.csv", bundle.cache_weights);
    write_matrix_csv(out_dir + "/weights_aggregated.csv", bundle.aggregated);

    if (cfg.cache_enabled) {
        write_matrix_csv(out_dir + "/avg_magnitudes.csv", diag.avg_mag);

        std::ofstream trace(out_dir + "/segment_trace.csv", std::ios::binary);
        trace << "block,word_start,word_end,max_allowed,segments\n";
        for (idx b = 0; b < cfg.m; ++b) {
            std::string segs = "[";
            for (idx slot = 0; slot < diag.sel.row_width; ++slot) {
                if (slot) segs += ", ";
                segs += std::to_string(diag.sel.at(b, slot));
            }
            segs += "]";
            trace << b << "," << b * cfg.p_avg << "," << (b + 1) * cfg.p_avg - 1 << ","
                  << diag.sel.max_allowed[static_cast<std::size_t>(b)] << "," << csv_escape(segs)
                  << "\n";
        }
    }
}

ModelConfig bench_config_for_n(const ModelConfig& tmpl, std::int64_t n) {
    ModelConfig cfg = tmpl;
    cfg.n = n;
    // keep the segment count (and so r and c) fixed; s and p_avg scale with n
    const std::int64_t n_s = tmpl.n / tmpl.s;
    cfg.s = n / n_s;
    cfg.p_avg = cfg.s * (tmpl.p_avg / tmpl.s);
    return validate(cfg);
}

namespace {

double median(std::vector<double> xs) {
    std::sort(xs.begin(), xs.end());
    return xs[xs.size() / 2];
}

void do_not_optimize(float& value) { asm volatile("" : "+m"(value)); }

double fit_slope(const std::vector<std::pair<double, double>>& pts) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double count = static_cast<double>(pts.size());
    for (auto [x, y] : pts) {
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    return (count * sxy - sx * sy) / (count * sxx - sx * sx);
}

}  // namespace

ScalingReport scaling_bench(const std::vector<std::int64_t>& ns, const ModelConfig& tmpl,
                            int reps, std::uint64_t seed) {
    reps = std::max(reps, 5);
    ScalingReport report;
    std::vector<std::pair<double, double>> dense_pts, enhanced_pts;
    Rng rng(seed);

    for (std::int64_t n : ns) {
        const ModelConfig cfg = bench_config_for_n(tmpl, n);
        Mat<float> q(cfg.n, cfg.d_k), k(cfg.n, cfg.d_k), v(cfg.n, cfg.d_k);
        rng.fill_normal(q, 0.0, 1.0);
        rng.fill_normal(k, 0.0, 1.0);
        rng.fill_normal(v, 0.0, 1.0);
        Mat<float> wp(cfg.d_k, cfg.c), wpo(cfg.d_k, cfg.c);
        rng.fill_normal(wp, 0.0, 0.02);
        rng.fill_normal(wpo, 0.0, 0.02);

        for (const char* variant : {"dense", "enhanced"}) {
            std::vector<double> times;
            std::size_t peak = 0;
            float sink = 0.0f;
            for (int rep = 0; rep < reps; ++rep) {
                MemStats::reset_peak();
                const auto t0 = std::chrono::steady_clock::now();
                if (variant[0] == 'd') {
                    auto res = oracle::dense_causal_oracle(q, k, v);
                    sink += res.output(0, 0);
                    do_not_optimize(sink);
                } else {
                    HeadActs<float> acts;
                    Mat<float> out = head_attention_forward(q, k, v, wp, wpo, cfg, acts);
                    sink += out(0, 0);
                    do_not_optimize(sink);
                }
                const auto t1 = std::chrono::steady_clock::now();
                times.push_back(std::chrono::duration<double>(t1 - t0).count());
                peak = std::max(peak, MemStats::peak.load());
            }
            ScalingRow row;
            row.n = n;
            row.variant = variant;
            row.median_seconds = median(times);
            row.peak_bytes = peak;
            report.rows.push_back(row);
            auto& pts = variant[0] == 'd' ? dense_pts : enhanced_pts;
            pts.emplace_back(std::log(static_cast<double>(n)), std::log(row.median_seconds));
        }
    }
    report.dense_slope = fit_slope(dense_pts);
    report.enhanced_slope = fit_slope(enhanced_pts);
    return report;
}

void write_scaling_csv(const std::string& path, const ScalingReport& report) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "n,variant,median_seconds,peak_bytes,slope\n";
    char buf[64];
    for (const ScalingRow& row : report.rows) {
        const double slope = row.variant == "dense" ? report.dense_slope : report.enhanced_slope;
        std::snprintf(buf, sizeof(buf), "%.9f", row.median_seconds);
        out << row.n << "," << row.variant << "," << buf << "," << row.peak_bytes << ",";
        std::snprintf(buf, sizeof(buf), "%.4f", slope);
        out << buf << "\n";
    }
}

}  // namespace seglm
