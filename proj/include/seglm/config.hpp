#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>

namespace seglm {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class AggregationMode { joint_softmax, literal_branch };

// All model hyperparameters plus the derived dimension algebra. Field names
// double as the config-file keys.
struct ModelConfig {
    std::int64_t n = 0;      // sequence length (tokens)
    std::int64_t d = 0;      // embedding dimension
    std::int64_t h = 0;      // number of heads
    std::int64_t w = 0;      // short-attention segment/window size
    std::int64_t s = 0;      // long-attention segment size
    std::int64_t r = 0;      // compressed projection target length
    std::int64_t k = 0;      // top-k attentive segments
    std::int64_t u = 1;      // neighbor expansion count, odd; u-1 neighbors per segment
    std::int64_t p_avg = 0;  // consecutive rows averaged per selection block
    std::int64_t layers = 0;
    std::int64_t vocab = 0;
    AggregationMode aggregation_mode = AggregationMode::joint_softmax;
    bool cache_enabled = true;
    bool overlap_enabled = true;
    bool ff_enabled = true;
    bool tie_embeddings = false;

    // Derived by validate().
    std::int64_t d_k = 0;  // per-head dimension, d / h
    std::int64_t n_s = 0;  // number of long segments, n / s
    std::int64_t c = 0;    // per-segment compressed size, r / n_s
    std::int64_t m = 0;    // number of averaged blocks, n / p_avg
    std::int64_t f = 0;    // aggregated diagnostic column count, 2w + r + k*u*s
    bool validated = false;
};

// Fills derived fields and checks every invariant. Throws ConfigError naming
// the violated relation. Idempotent.
ModelConfig validate(const ModelConfig& cfg);

enum class Phase { pretrain_no_cache, finetune_with_cache };

const char* phase_name(Phase p);
const char* aggregation_mode_name(AggregationMode m);

struct TrainPlan {
    Phase phase = Phase::pretrain_no_cache;
    std::int64_t steps = 1000;
    std::int64_t batch_size = 8;
    double learning_rate = 3e-4;
    std::int64_t warmup_steps = -1;  // -1: 5% of steps
    double weight_decay = 0.01;
    double grad_clip = 1.0;
    std::int64_t eval_every = 100;
    std::int64_t checkpoint_every = 500;
    std::uint64_t seed = 1;
    std::string data_path;           // file path or synth:<bytes>[:<seed>]
    std::string split = "valid";     // eval split
    std::int64_t eval_windows = 32;  // windows per in-training eval; -1: full split
    std::int64_t threads = 1;
    bool log_throughput = false;  // keeps metrics.csv byte-reproducible when off
    std::int64_t dump_layer = 0;
    std::int64_t dump_head = 0;
    std::string bench_ns = "512,1024,2048,4096,8192";

    std::int64_t effective_warmup() const { return warmup_steps >= 0 ? warmup_steps : steps / 20; }
};

// Flat key=value text, one pair per line, '#' comments. Unknown keys are
// errors; later assignments override earlier ones.
struct ConfigFile {
    std::map<std::string, std::string> values;

    static ConfigFile parse_text(const std::string& text);
    static ConfigFile parse_file(const std::string& path);

    void set(const std::string& key, const std::string& value);

    // Splits the pairs into the two structs; throws ConfigError for a key
    // neither recognizes or a value that does not parse.
    void apply(ModelConfig& model, TrainPlan& plan) const;
};

// Serialized key=value block (model keys only), used in checkpoint manifests.
std::string model_config_text(const ModelConfig& cfg);

}  // namespace seglm
