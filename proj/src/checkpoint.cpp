#include "seglm/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace seglm {

namespace {

void write_u64(std::ostream& out, std::uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64(std::istream& in) {
    unsigned char buf[8];
    in.read(reinterpret_cast<char*>(buf), 8);
    if (!in) throw CheckpointError("checkpoint truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
}

}  // namespace

void CheckpointFile::write(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot open checkpoint for writing: " + path);
    std::string mtext;
    for (const auto& [k, v] : manifest) mtext += k + "=" + v + "\n";
    write_u64(out, mtext.size());
    out.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));
    for (const auto& [name, rec] : tensors) {
        write_u64(out, name.size());
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u64(out, rec.dims.size());
        for (std::int64_t d : rec.dims) write_u64(out, static_cast<std::uint64_t>(d));
        out.write(reinterpret_cast<const char*>(rec.data.data()),
                  static_cast<std::streamsize>(rec.data.size() * sizeof(float)));
    }
    if (!out) throw CheckpointError("write failed: " + path);
}

CheckpointFile CheckpointFile::read(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint: " + path);
    CheckpointFile file;
    const std::uint64_t mlen = read_u64(in);
    std::string mtext(mlen, '\0');
    in.read(mtext.data(), static_cast<std::streamsize>(mlen));
    if (!in) throw CheckpointError("checkpoint truncated in manifest");
    std::istringstream ms(mtext);
    std::string line;
    while (std::getline(ms, line)) {
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) throw CheckpointError("malformed manifest line: " + line);
        file.manifest.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    }
    while (true) {
        in.peek();
        if (in.eof()) break;
        const std::uint64_t name_len = read_u64(in);
        std::string name(name_len, '\0');
        in.read(name.data(), static_cast<std::streamsize>(name_len));
        const std::uint64_t ndim = read_u64(in);
        TensorRecord rec;
        rec.dims.resize(ndim);
        std::uint64_t count = 1;
        for (std::uint64_t i = 0; i < ndim; ++i) {
            rec.dims[i] = static_cast<std::int64_t>(read_u64(in));
            count *= static_cast<std::uint64_t>(rec.dims[i]);
        }
        rec.data.resize(count);
        in.read(reinterpret_cast<char*>(rec.data.data()),
                static_cast<std::streamsize>(count * sizeof(float)));
        if (!in) throw CheckpointError("checkpoint truncated in tensor: " + name);
        file.tensors.emplace_back(std::move(name), std::move(rec));
    }
    return file;
}

const TensorRecord* CheckpointFile::find(const std::string& name) const {
    for (const auto& [n, rec] : tensors)
        if (n == name) return &rec;
    return nullptr;
}

std::string CheckpointFile::manifest_value(const std::string& key) const {
    for (const auto& [k, v] : manifest)
        if (k == key) return v;
    return "";
}

void CheckpointFile::set_manifest(const std::string& key, const std::string& value) {
    for (auto& [k, v] : manifest) {
        if (k == key) {
            v = value;
            return;
        }
    }
    manifest.emplace_back(key, value);
}

void check_structural_match(const CheckpointFile& file, const ModelConfig& cfg) {
    const auto want = [&](const char* key, std::int64_t v) {
        const std::string got = file.manifest_value(key);
        if (!got.empty() && got != std::to_string(v))
            throw CheckpointError(std::string("checkpoint config mismatch for ") + key +
                                  ": checkpoint has " + got + ", config has " + std::to_string(v));
    };
    want("n", cfg.n);
    want("d", cfg.d);
    want("h", cfg.h);
    want("w", cfg.w);
    want("s", cfg.s);
    want("r", cfg.r);
    want("k", cfg.k);
    want("u", cfg.u);
    want("p_avg", cfg.p_avg);
    want("layers", cfg.layers);
    want("vocab", cfg.vocab);
    const auto want_flag = [&](const char* key, bool v) {
        const std::string got = file.manifest_value(key);
        if (!got.empty() && got != (v ? "true" : "false"))
            throw CheckpointError(std::string("checkpoint config mismatch for ") + key);
    };
    want_flag("overlap_enabled", cfg.overlap_enabled);
    want_flag("ff_enabled", cfg.ff_enabled);
    want_flag("tie_embeddings", cfg.tie_embeddings);
}

}  // namespace seglm
