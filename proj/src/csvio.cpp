#include "bilevelmp/csvio.hpp"

#include <cstdio>

namespace bilevelmp {

std::string config_digest(const std::string& config_text) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : config_text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)h);
    return buf;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

CsvWriter::CsvWriter(const std::string& path, std::uint64_t seed, const std::string& digest)
    : out_(path, std::ios::binary) {
    out_ << "# bilevelmp " << kVersion << " seed=" << seed << " config=" << digest << "\n";
}

void CsvWriter::header(const std::vector<std::string>& cols) { raw_row(cols); }

void CsvWriter::row(const std::vector<double>& vals) {
    for (size_t i = 0; i < vals.size(); ++i) {
        if (i) out_ << ',';
        out_ << format_double(vals[i]);
    }
    out_ << '\n';
}

void CsvWriter::raw_row(const std::vector<std::string>& cells) {
    for (size_t i = 0; i < cells.size(); ++i) {
        if (i) out_ << ',';
        out_ << cells[i];
    }
    out_ << '\n';
}

}  // namespace bilevelmp
