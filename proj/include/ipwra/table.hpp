#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "ipwra/errors.hpp"

namespace ipwra {

// 4 significant digits, the granularity used in the human-readable tables
inline std::string format_sig4(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

// Minimal aligned text table: first column left-aligned, the rest
// right-aligned, two spaces between columns.
struct TextTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    void add_row(std::vector<std::string> r) {
        if (r.size() != header.size())
            throw ShapeError("text table: row width " + std::to_string(r.size()) +
                             " != header width " + std::to_string(header.size()));
        rows.push_back(std::move(r));
    }

    std::string to_string() const {
        const size_t k = header.size();
        std::vector<size_t> width(k);
        for (size_t j = 0; j < k; ++j) width[j] = header[j].size();
        for (const auto& r : rows)
            for (size_t j = 0; j < k; ++j) width[j] = std::max(width[j], r[j].size());
        std::string out;
        auto emit = [&](const std::vector<std::string>& r) {
            for (size_t j = 0; j < k; ++j) {
                const size_t pad = width[j] - r[j].size();
                if (j == 0) {
                    out += r[j];
                    out.append(pad, ' ');
                } else {
                    out.append(pad, ' ');
                    out += r[j];
                }
                if (j + 1 < k) out += "  ";
            }
            out += '\n';
        };
        emit(header);
        size_t total = 0;
        for (size_t j = 0; j < k; ++j) total += width[j] + (j + 1 < k ? 2 : 0);
        out.append(total, '-');
        out += '\n';
        for (const auto& r : rows) emit(r);
        return out;
    }
};

} // namespace ipwra
