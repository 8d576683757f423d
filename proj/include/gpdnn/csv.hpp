#pragma once

// Minimal CSV output: fixed numeric formatting so repeated runs are byte-identical.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "gpdnn/error.hpp"

namespace gpdnn {

inline std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

inline std::string format_number(std::size_t v) { return std::to_string(v); }
inline std::string format_number(int v) { return std::to_string(v); }
inline std::string format_number(const std::string& v) { return v; }
inline std::string format_number(const char* v) { return v; }
inline std::string format_number(bool v) { return v ? "1" : "0"; }

class CsvTable {
public:
    explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

    template <class... Ts>
    void add(const Ts&... fields) {
        if (sizeof...(Ts) != header_.size()) throw ContractError("csv: row width does not match header");
        rows_.push_back({format_number(fields)...});
    }

    const std::vector<std::string>& header() const { return header_; }
    std::size_t rows() const { return rows_.size(); }

    std::string str() const {
        std::string out;
        auto line = [&out](const std::vector<std::string>& cells) {
            for (std::size_t i = 0; i < cells.size(); ++i) {
                if (i) out += ',';
                out += cells[i];
            }
            out += '\n';
        };
        line(header_);
        for (const auto& r : rows_) line(r);
        return out;
    }

    void write(const std::string& path) const {
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        if (!f) throw DataError("cannot write '" + path + "'");
        f << str();
        if (!f) throw DataError("failed writing '" + path + "'");
    }

private:
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

}  // namespace gpdnn
