#pragma once

#include "btks/config.hpp"
#include "btks/synthdata.hpp"
#include "btks/traineval.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

namespace btks {

// Effective configuration of one CLI run. `seed` drives data generation,
// model initialisation and training; the nested seeds follow it.
struct RunConfig {
    ModelConfig model = mini_preset();
    GeneratorConfig generator;
    std::filesystem::path data_root;
    std::filesystem::path checkpoint;
    TrainConfig train;
    std::uint64_t seed = 0;

    void validate() const;
};

// Sections: seed, model (may name a "preset"), data {root, generator}, train, checkpoint.
nlohmann::json to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);

// "256x128" -> {256, 128}; ConfigError otherwise.
Extent parse_extent(const std::string& text);

// Exit codes: 0 ok, 1 configuration or usage error, 2 input or data error,
// 3 verification failure.
int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace btks
