#pragma once

#include <fstream>
#include <stdexcept>
#include <string>

#include "seglm/mat.hpp"

namespace seglm {

// RFC-4180-style field quoting, LF line endings.
inline std::string csv_escape(const std::string& field) {
    if (field.find_first_of(",\"\n") == std::string::npos) return field;
    std::string out = "\"";
    for (char ch : field) {
        if (ch == '"') out += '"';
        out += ch;
    }
    out += '"';
    return out;
}

// One matrix per file: header row of column indices, then %.8g values.
template <typename T>
void write_matrix_csv(const std::string& path, const Mat<T>& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    for (idx j = 0; j < m.cols(); ++j) out << (j ? "," : "") << j;
    out << "\n";
    char buf[32];
    for (idx i = 0; i < m.rows(); ++i) {
        for (idx j = 0; j < m.cols(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.8g", static_cast<double>(m(i, j)));
            out << (j ? "," : "") << buf;
        }
        out << "\n";
    }
}

}  // namespace seglm
