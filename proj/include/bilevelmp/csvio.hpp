#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

namespace bilevelmp {

inline constexpr const char* kVersion = "1.0.0";

// FNV-1a over the canonical config text, hex encoded; identical configs give
// identical digests so output files are comparable byte for byte.
std::string config_digest(const std::string& config_text);

// %.17g so doubles round-trip exactly.
std::string format_double(double v);

// CSV file with a mandatory metadata first line:
//   # bilevelmp <version> seed=<seed> config=<digest>
class CsvWriter {
public:
    CsvWriter(const std::string& path, std::uint64_t seed, const std::string& digest);

    void header(const std::vector<std::string>& cols);
    void row(const std::vector<double>& vals);
    void raw_row(const std::vector<std::string>& cells);
    bool good() const { return out_.good(); }

private:
    std::ofstream out_;
};

}  // namespace bilevelmp
