#pragma once

#include <string>
#include <vector>

#include "seglm/model.hpp"

namespace seglm {

// Writes, for one layer/head on one input: the m x n_s averaged magnitude
// matrix, the per-block selected-segment trace, and the per-branch weight
// matrices plus the aggregated matrix, all as CSV under out_dir.
void dump_attention(const LanguageModel<float>& model, std::span<const std::int32_t> tokens,
                    std::int64_t layer, std::int64_t head, const std::string& out_dir);

struct ScalingRow {
    std::int64_t n = 0;
    std::string variant;  // "dense" or "enhanced"
    double median_seconds = 0.0;
    std::size_t peak_bytes = 0;
};

struct ScalingReport {
    std::vector<ScalingRow> rows;
    double dense_slope = 0.0;
    double enhanced_slope = 0.0;
};

// Times attention-only forward passes (from q/k/v to the head output) for the
// dense reference and the combined branches over a sweep of sequence lengths.
// Each configuration is measured `reps` (>= 5) times and the median reported;
// slopes are least-squares fits of log(time) against log(n). The config
// template fixes d, h, w, r, c, k, u and the p_avg/s ratio; s scales with n so
// the compressed width r stays constant.
ScalingReport scaling_bench(const std::vector<std::int64_t>& ns, const ModelConfig& tmpl,
                            int reps = 5, std::uint64_t seed = 1);

void write_scaling_csv(const std::string& path, const ScalingReport& report);

// Builds the benchmark config for one sequence length from the template.
ModelConfig bench_config_for_n(const ModelConfig& tmpl, std::int64_t n);

}  // namespace seglm
