#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "seglm/model.hpp"

namespace seglm {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TensorRecord {
    std::vector<std::int64_t> dims;
    std::vector<float> data;
};

// Flat archive of named float32 tensors with a leading text manifest.
// Layout (all integers little-endian u64):
//   manifest_len, manifest bytes (key=value lines),
//   then per tensor: name_len, name bytes (UTF-8), ndim, dims[ndim],
//   row-major float32 payload.
struct CheckpointFile {
    std::vector<std::pair<std::string, std::string>> manifest;  // ordered key=value
    std::vector<std::pair<std::string, TensorRecord>> tensors;

    void write(const std::string& path) const;
    static CheckpointFile read(const std::string& path);

    const TensorRecord* find(const std::string& name) const;
    std::string manifest_value(const std::string& key) const;  // "" when absent
    void set_manifest(const std::string& key, const std::string& value);
};

template <typename T>
void pack_model(CheckpointFile& file, const LanguageModel<T>& model) {
    visit_params(model, [&](const std::string& name, const Mat<T>& m) {
        TensorRecord rec;
        rec.dims = {m.rows(), m.cols()};
        rec.data.resize(static_cast<std::size_t>(m.size()));
        for (idx i = 0; i < m.size(); ++i) rec.data[static_cast<std::size_t>(i)] =
            static_cast<float>(m.data()[i]);
        file.tensors.emplace_back(name, std::move(rec));
    });
}

template <typename T>
void unpack_model(const CheckpointFile& file, LanguageModel<T>& model,
                  const std::string& prefix = "") {
    visit_params(model, [&](const std::string& name, Mat<T>& m) {
        const TensorRecord* rec = file.find(prefix + name);
        if (!rec) throw CheckpointError("checkpoint missing tensor: " + prefix + name);
        if (rec->dims.size() != 2 || rec->dims[0] != m.rows() || rec->dims[1] != m.cols())
            throw CheckpointError("checkpoint tensor shape mismatch for " + prefix + name);
        for (idx i = 0; i < m.size(); ++i)
            m.data()[i] = static_cast<T>(rec->data[static_cast<std::size_t>(i)]);
    });
}

template <typename T>
void pack_model_prefixed(CheckpointFile& file, const LanguageModel<T>& model,
                         const std::string& prefix) {
    visit_params(model, [&](const std::string& name, const Mat<T>& m) {
        TensorRecord rec;
        rec.dims = {m.rows(), m.cols()};
        rec.data.resize(static_cast<std::size_t>(m.size()));
        for (idx i = 0; i < m.size(); ++i) rec.data[static_cast<std::size_t>(i)] =
            static_cast<float>(m.data()[i]);
        file.tensors.emplace_back(prefix + name, std::move(rec));
    });
}

// Shape-relevant config keys must agree between a checkpoint and the active
// config; cache_enabled may differ (the two-phase schedule flips it).
void check_structural_match(const CheckpointFile& file, const ModelConfig& cfg);

}  // namespace seglm
