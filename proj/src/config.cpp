#include "seglm/config.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

namespace seglm {

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
}

void check_divides(std::int64_t num, std::int64_t den, const char* num_name, const char* den_name) {
    require(den > 0 && num % den == 0, std::string(num_name) + " must be divisible by " + den_name +
                                           " (" + std::to_string(num) + " % " + std::to_string(den) +
                                           " != 0)");
}

}  // namespace

const char* phase_name(Phase p) {
    return p == Phase::pretrain_no_cache ? "pretrain_no_cache" : "finetune_with_cache";
}

const char* aggregation_mode_name(AggregationMode m) {
    return m == AggregationMode::joint_softmax ? "joint_softmax" : "literal_branch";
}

ModelConfig validate(const ModelConfig& in) {
    ModelConfig cfg = in;
    require(cfg.n > 0, "n must be positive");
    require(cfg.d > 0, "d must be positive");
    require(cfg.h > 0, "h must be positive");
    require(cfg.w > 0, "w must be positive");
    require(cfg.s > 0, "s must be positive");
    require(cfg.r > 0, "r must be positive");
    require(cfg.k > 0, "k must be positive");
    require(cfg.u > 0, "u must be positive");
    require(cfg.p_avg > 0, "p_avg must be positive");
    require(cfg.layers > 0, "layers must be positive");
    require(cfg.vocab > 0, "vocab must be positive");
    require(cfg.u % 2 == 1, "u must be odd (u-1 neighbors split evenly before/after), got " +
                                std::to_string(cfg.u));

    check_divides(cfg.d, cfg.h, "d", "h");
    check_divides(cfg.n, cfg.s, "n", "s");
    check_divides(cfg.n, cfg.p_avg, "n", "p_avg");
    check_divides(cfg.n, cfg.w, "n", "w");
    check_divides(cfg.p_avg, cfg.s, "p_avg", "s");

    cfg.d_k = cfg.d / cfg.h;
    cfg.n_s = cfg.n / cfg.s;
    check_divides(cfg.r, cfg.n_s, "r", "n_s");
    cfg.c = cfg.r / cfg.n_s;
    cfg.m = cfg.n / cfg.p_avg;
    cfg.f = 2 * cfg.w + cfg.r + cfg.k * cfg.u * cfg.s;

    if (cfg.cache_enabled)
        require(cfg.k * cfg.u <= cfg.n_s - 1,
                "k*u exceeds available past segments: k*u = " + std::to_string(cfg.k * cfg.u) +
                    " > n/s - 1 = " + std::to_string(cfg.n_s - 1));
    if (cfg.overlap_enabled)
        require(cfg.s % 2 == 0, "s must be even when overlap_enabled (segments shift by s/2)");

    cfg.validated = true;
    return cfg;
}

namespace {

std::int64_t parse_int(const std::string& key, const std::string& v) {
    std::int64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
        throw ConfigError("invalid integer for key '" + key + "': " + v);
    return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
        throw ConfigError("invalid unsigned integer for key '" + key + "': " + v);
    return out;
}

double parse_real(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        double out = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("invalid real for key '" + key + "': " + v);
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("invalid boolean for key '" + key + "': " + v);
}

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace

ConfigFile ConfigFile::parse_text(const std::string& text) {
    ConfigFile out;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected key=value, got '" +
                              line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
        out.values[key] = value;
    }
    return out;
}

ConfigFile ConfigFile::parse_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_text(ss.str());
}

void ConfigFile::set(const std::string& key, const std::string& value) { values[key] = value; }

void ConfigFile::apply(ModelConfig& model, TrainPlan& plan) const {
    for (const auto& [key, v] : values) {
        if (key == "n") model.n = parse_int(key, v);
        else if (key == "d") model.d = parse_int(key, v);
        else if (key == "h") model.h = parse_int(key, v);
        else if (key == "w") model.w = parse_int(key, v);
        else if (key == "s") model.s = parse_int(key, v);
        else if (key == "r") model.r = parse_int(key, v);
        else if (key == "k") model.k = parse_int(key, v);
        else if (key == "u") model.u = parse_int(key, v);
        else if (key == "p_avg") model.p_avg = parse_int(key, v);
        else if (key == "layers") model.layers = parse_int(key, v);
        else if (key == "vocab") model.vocab = parse_int(key, v);
        else if (key == "aggregation_mode") {
            if (v == "joint_softmax") model.aggregation_mode = AggregationMode::joint_softmax;
            else if (v == "literal_branch") model.aggregation_mode = AggregationMode::literal_branch;
            else throw ConfigError("invalid aggregation_mode: " + v);
        }
        else if (key == "cache_enabled") model.cache_enabled = parse_bool(key, v);
        else if (key == "overlap_enabled") model.overlap_enabled = parse_bool(key, v);
        else if (key == "ff_enabled") model.ff_enabled = parse_bool(key, v);
        else if (key == "tie_embeddings") model.tie_embeddings = parse_bool(key, v);
        else if (key == "phase") {
            if (v == "pretrain_no_cache") plan.phase = Phase::pretrain_no_cache;
            else if (v == "finetune_with_cache") plan.phase = Phase::finetune_with_cache;
            else throw ConfigError("invalid phase: " + v);
        }
        else if (key == "steps") plan.steps = parse_int(key, v);
        else if (key == "batch_size") plan.batch_size = parse_int(key, v);
        else if (key == "learning_rate") plan.learning_rate = parse_real(key, v);
        else if (key == "warmup_steps") plan.warmup_steps = parse_int(key, v);
        else if (key == "weight_decay") plan.weight_decay = parse_real(key, v);
        else if (key == "grad_clip") plan.grad_clip = parse_real(key, v);
        else if (key == "eval_every") plan.eval_every = parse_int(key, v);
        else if (key == "checkpoint_every") plan.checkpoint_every = parse_int(key, v);
        else if (key == "seed") plan.seed = parse_uint(key, v);
        else if (key == "data_path") plan.data_path = v;
        else if (key == "split") plan.split = v;
        else if (key == "eval_windows") plan.eval_windows = parse_int(key, v);
        else if (key == "threads") plan.threads = parse_int(key, v);
        else if (key == "log_throughput") plan.log_throughput = parse_bool(key, v);
        else if (key == "dump_layer") plan.dump_layer = parse_int(key, v);
        else if (key == "dump_head") plan.dump_head = parse_int(key, v);
        else if (key == "bench_ns") plan.bench_ns = v;
        else throw ConfigError("unknown config key: " + key);
    }
}

std::string model_config_text(const ModelConfig& cfg) {
    std::ostringstream out;
    out << "n=" << cfg.n << "\n";
    out << "d=" << cfg.d << "\n";
    out << "h=" << cfg.h << "\n";
    out << "w=" << cfg.w << "\n";
    out << "s=" << cfg.s << "\n";
    out << "r=" << cfg.r << "\n";
    out << "k=" << cfg.k << "\n";
    out << "u=" << cfg.u << "\n";
    out << "p_avg=" << cfg.p_avg << "\n";
    out << "layers=" << cfg.layers << "\n";
    out << "vocab=" << cfg.vocab << "\n";
    out << "aggregation_mode=" << aggregation_mode_name(cfg.aggregation_mode) << "\n";
    out << "cache_enabled=" << (cfg.cache_enabled ? "true" : "false") << "\n";
    out << "overlap_enabled=" << (cfg.overlap_enabled ? "true" : "false") << "\n";
    out << "ff_enabled=" << (cfg.ff_enabled ? "true" : "false") << "\n";
    out << "tie_embeddings=" << (cfg.tie_embeddings ? "true" : "false") << "\n";
    return out.str();
}

}  // namespace seglm
