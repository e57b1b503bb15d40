#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

using std::filesystem::path;

namespace {

const char* kBin = SEGLM_BIN;

struct RunResult {
    int exit_code = -1;
    std::string output;
};

RunResult run_cli(const std::string& args, const std::string& tag) {
    const path out_file = std::filesystem::temp_directory_path() / ("seglm_cli_" + tag + ".log");
    const std::string cmd = std::string(kBin) + " " + args + " > " + out_file.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    RunResult result;
    result.exit_code = WEXITSTATUS(status);
    std::ifstream in(out_file);
    std::ostringstream ss;
    ss << in.rdbuf();
    result.output = ss.str();
    return result;
}

std::string fresh_dir(const char* tag) {
    const path dir = std::filesystem::temp_directory_path() / (std::string("seglm_out_") + tag);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir.string();
}

std::string write_config(const char* tag, const std::string& extra) {
    const path file =
        std::filesystem::temp_directory_path() / (std::string("seglm_cfg_") + tag + ".conf");
    std::ofstream out(file);
    out << "n=64\nd=32\nh=2\nw=16\ns=8\nr=16\nk=2\nu=1\np_avg=16\nlayers=1\nvocab=256\n"
        << "steps=20\nbatch_size=2\nlearning_rate=0.002\nwarmup_steps=2\neval_every=10\n"
        << "checkpoint_every=100\nseed=11\ndata_path=synth:40960\neval_windows=2\n"
        << extra;
    return file.string();
}

std::string slurp(const std::string& file) {
    std::ifstream in(file, std::ios::binary);
    REQUIRE(in.good());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("unknown override key exits 1 and names the key") {
    const std::string cfg = write_config("badkey", "");
    const RunResult r = run_cli("train --config " + cfg + " --set frobnicate=3", "badkey");
    CHECK(r.exit_code == 1);
    CHECK(r.output.find("frobnicate") != std::string::npos);
}

TEST_CASE("missing checkpoint for eval exits 2") {
    const std::string cfg = write_config("nockpt", "");
    const RunResult r = run_cli("eval --config " + cfg, "nockpt");
    CHECK(r.exit_code == 2);
}

TEST_CASE("train writes fixed-layout outputs; eval reproduces the final valid metrics") {
    const std::string cfg = write_config("trainef", "");
    const std::string out = fresh_dir("trainef");
    const RunResult r = run_cli("train --config " + cfg + " --out " + out, "trainef");
    REQUIRE(r.exit_code == 0);
    REQUIRE(std::filesystem::exists(out + "/metrics.csv"));
    REQUIRE(std::filesystem::exists(out + "/checkpoints/final.ckpt"));

    // final valid row of metrics.csv
    std::istringstream lines(slurp(out + "/metrics.csv"));
    std::string line, last_valid;
    while (std::getline(lines, line))
        if (line.find(",valid,") != std::string::npos) last_valid = line;
    REQUIRE(!last_valid.empty());

    const RunResult ev = run_cli(
        "eval --config " + cfg + " --ckpt " + out + "/checkpoints/final.ckpt", "trainef_eval");
    REQUIRE(ev.exit_code == 0);

    // compare loss_nats/perplexity/bpc fields
    auto fields = [](const std::string& row) {
        std::vector<std::string> out_fields;
        std::istringstream ss(row);
        std::string field;
        while (std::getline(ss, field, ',')) out_fields.push_back(field);
        return out_fields;
    };
    std::istringstream ev_lines(ev.output);
    std::string ev_row;
    std::getline(ev_lines, ev_row);  // header
    std::getline(ev_lines, ev_row);
    const auto want = fields(last_valid);
    const auto got = fields(ev_row);
    REQUIRE(want.size() == 7);
    REQUIRE(got.size() == 7);
    for (int i = 3; i < 6; ++i)
        CHECK(std::abs(std::stod(got[static_cast<std::size_t>(i)]) -
                       std::stod(want[static_cast<std::size_t>(i)])) <= 1e-6);
}

TEST_CASE("identical seeds give byte-identical metrics.csv") {
    const std::string cfg = write_config("det", "");
    const std::string out1 = fresh_dir("det1");
    const std::string out2 = fresh_dir("det2");
    REQUIRE(run_cli("train --config " + cfg + " --out " + out1, "det1").exit_code == 0);
    REQUIRE(run_cli("train --config " + cfg + " --out " + out2, "det2").exit_code == 0);
    CHECK(slurp(out1 + "/metrics.csv") == slurp(out2 + "/metrics.csv"));
}

TEST_CASE("dump writes the trace and magnitude artifacts with causal bounds") {
    const std::string cfg = write_config("dump", "");
    const std::string out = fresh_dir("dump");
    const RunResult r = run_cli("dump --config " + cfg + " --out " + out, "dump");
    REQUIRE(r.exit_code == 0);
    REQUIRE(std::filesystem::exists(out + "/dumps/segment_trace.csv"));
    REQUIRE(std::filesystem::exists(out + "/dumps/avg_magnitudes.csv"));
    REQUIRE(std::filesystem::exists(out + "/dumps/weights_short.csv"));
    REQUIRE(std::filesystem::exists(out + "/dumps/weights_aggregated.csv"));

    // averaged magnitude matrix is m x n_s (here 4 x 8) plus a header row
    {
        std::istringstream mag(slurp(out + "/dumps/avg_magnitudes.csv"));
        std::string row;
        int rows = 0;
        int cols = 0;
        while (std::getline(mag, row)) {
            if (rows == 0) cols = static_cast<int>(std::count(row.begin(), row.end(), ',')) + 1;
            ++rows;
        }
        CHECK(rows == 5);
        CHECK(cols == 8);
    }

    std::istringstream lines(slurp(out + "/dumps/segment_trace.csv"));
    std::string line;
    std::getline(lines, line);  // header
    bool first_block = true;
    while (std::getline(lines, line)) {
        std::istringstream ss(line);
        std::string block, start, end, max_allowed, segments;
        std::getline(ss, block, ',');
        std::getline(ss, start, ',');
        std::getline(ss, end, ',');
        std::getline(ss, max_allowed, ',');
        std::getline(ss, segments);
        const int bound = std::stoi(max_allowed);
        if (first_block) {
            CHECK(segments.find("-1") != std::string::npos);  // sentinels render as -1
            first_block = false;
        }
        // every listed index obeys the bound
        std::string cleaned = segments;
        for (char& ch : cleaned)
            if (ch == '"' || ch == '[' || ch == ']' || ch == ',') ch = ' ';
        std::istringstream seg_stream(cleaned);
        int seg = 0;
        while (seg_stream >> seg)
            if (seg >= 0) CHECK(seg <= bound);
    }
}

TEST_CASE("check subcommand passes on the shipped tiny config") {
    const RunResult r = run_cli(
        "check --config " + std::string(SEGLM_SRC) + "/configs/tiny.conf", "check");
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("FAIL") == std::string::npos);
}

}  // TEST_SUITE
