#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace bilevelmp {

// One master seed per run; modules fork their own engines by tag so that
// schedules stay reproducible independently of each other.
class RngForker {
public:
    explicit RngForker(std::uint64_t master) : master_(master) {}

    std::mt19937_64 fork(std::string_view tag) const {
        std::uint64_t h = 1469598103934665603ull;  // FNV-1a
        for (char c : tag) {
            h ^= static_cast<std::uint8_t>(c);
            h *= 1099511628211ull;
        }
        std::seed_seq seq{master_, h};
        return std::mt19937_64(seq);
    }

    std::uint64_t master() const { return master_; }

private:
    std::uint64_t master_;
};

}  // namespace bilevelmp
