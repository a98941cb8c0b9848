#pragma once

#include <nlohmann/json.hpp>

#include <cstddef>
#include <string>
#include <vector>

namespace btks {

struct Extent {
    std::size_t height = 0;
    std::size_t width = 0;
    bool operator==(const Extent&) const = default;
};

enum class BlockKind { basic, bottleneck };

struct StemSpec {
    std::size_t kernel = 7;
    std::size_t stride = 2;
    std::size_t channels = 64;
    bool max_pool = true; // 3x3, stride 2, padding 1
};

struct StageSpec {
    std::size_t blocks = 1;
    std::size_t channels = 64;
    std::size_t stride = 1;
};

// ResNet-style staged extractor. stage index s in 1..4 maps to stages[s - 1].
struct BackboneConfig {
    std::size_t in_channels = 3;
    StemSpec stem;
    std::vector<StageSpec> stages;
    bool last_downsample_removed = true;
    BlockKind block = BlockKind::bottleneck;

    void validate() const;
    std::size_t stage_stride(std::size_t stage) const;
    std::size_t stage_channels(std::size_t stage) const;
    // Channel count entering a stage (stem output for stage 1).
    std::size_t stage_input_channels(std::size_t stage) const;
    Extent stem_output(Extent input) const;
    // Spatial extent after `stage` (0 = after the stem).
    Extent stage_output(Extent input, std::size_t stage) const;
};

enum class Similarity { cosine, dot };

struct DaoConfig {
    bool enabled = true;
    std::size_t stage = 3;
    Similarity similarity = Similarity::cosine;
    double residual_gain = 1.0;
};

struct TksConfig {
    bool enabled = true;
    std::size_t k = 2;
    std::size_t grid_h = 4;
    std::size_t grid_w = 2;
    std::vector<std::size_t> stages{2};
    bool fixed_fusion = false;
};

struct ModelConfig {
    BackboneConfig backbone;
    std::size_t alpha = 3;        // small frames per big frame; 0 = single full-resolution branch
    std::size_t segment_len = 8;  // N
    std::size_t branches = 2;
    std::vector<std::size_t> csp_stages{1, 2, 3};
    DaoConfig dao;
    TksConfig tks;
    Extent input{256, 128};       // big-frame resolution

    void validate() const;

    bool two_branch() const { return alpha > 0; }
    std::size_t big_frames() const { return segment_len / (1 + alpha); }
    std::size_t small_frames() const { return segment_len - big_frames(); }
    Extent small_input() const { return {input.height / 2, input.width / 2}; }
    bool tks_at(std::size_t stage) const;
    bool csp_at(std::size_t stage) const;
};

ModelConfig resnet50_preset();
ModelConfig mini_preset();
// "resnet50" or "mini"; throws ConfigError otherwise.
ModelConfig model_preset(const std::string& name);

nlohmann::json to_json(const ModelConfig& cfg);
// Missing keys keep the values of `base`.
ModelConfig model_config_from_json(const nlohmann::json& j, const ModelConfig& base);
ModelConfig model_config_from_json(const nlohmann::json& j);

} // namespace btks
