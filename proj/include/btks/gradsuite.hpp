#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace btks {

// Finite-difference checks at 64-bit over the named blocks, one fresh random
// instance per seed.
struct GradBlockResult {
    std::string name;
    std::size_t seeds = 0;
    double max_relative_error = 0;
    std::uint64_t worst_seed = 0;
    std::size_t coordinates = 0; // summed over seeds
    std::size_t kinks = 0;       // probes skipped at non-smooth points, summed over seeds
    double seconds = 0;
    bool passed = false;
};

const std::vector<std::string>& gradcheck_blocks();

// Seeds first_seed .. first_seed + seeds - 1. Passes when the worst relative
// error is below `tolerance` and at most 5% of probes were skipped as kinks.
// Unknown name: ConfigError.
GradBlockResult run_gradcheck_block(const std::string& name, std::size_t seeds, std::uint64_t first_seed,
                                    double tolerance = 1e-4);

nlohmann::json to_json(const GradBlockResult& r);

} // namespace btks
