#include "btks/config.hpp"

#include "btks/errors.hpp"

#include <algorithm>

namespace btks {

namespace {

Extent conv_extent(Extent in, std::size_t kernel, std::size_t stride, std::size_t padding) {
    if (in.height + 2 * padding < kernel || in.width + 2 * padding < kernel)
        throw ConfigError("input " + std::to_string(in.height) + "x" + std::to_string(in.width) +
                          " too small for kernel " + std::to_string(kernel));
    return {(in.height + 2 * padding - kernel) / stride + 1, (in.width + 2 * padding - kernel) / stride + 1};
}

} // namespace

void BackboneConfig::validate() const {
    if (stages.size() != 4)
        throw ConfigError("backbone needs exactly 4 stages, got " + std::to_string(stages.size()));
    if (in_channels == 0 || stem.channels == 0 || stem.kernel == 0 || stem.stride == 0)
        throw ConfigError("backbone stem has a zero extent");
    for (std::size_t i = 0; i < stages.size(); ++i) {
        const auto& s = stages[i];
        if (s.blocks == 0 || s.channels == 0 || s.stride == 0)
            throw ConfigError("stage " + std::to_string(i + 1) + " has a zero extent");
        if (block == BlockKind::bottleneck && s.channels % 4 != 0)
            throw ConfigError("bottleneck stage channels must be divisible by 4");
    }
}

std::size_t BackboneConfig::stage_stride(std::size_t stage) const {
    if (stage < 1 || stage > stages.size()) throw ConfigError("stage index out of range: " + std::to_string(stage));
    if (stage == 4 && last_downsample_removed) return 1;
    return stages[stage - 1].stride;
}

std::size_t BackboneConfig::stage_channels(std::size_t stage) const {
    if (stage < 1 || stage > stages.size()) throw ConfigError("stage index out of range: " + std::to_string(stage));
    return stages[stage - 1].channels;
}

std::size_t BackboneConfig::stage_input_channels(std::size_t stage) const {
    return stage == 1 ? stem.channels : stage_channels(stage - 1);
}

Extent BackboneConfig::stem_output(Extent input) const {
    Extent e = conv_extent(input, stem.kernel, stem.stride, stem.kernel / 2);
    if (stem.max_pool) e = conv_extent(e, 3, 2, 1);
    return e;
}

Extent BackboneConfig::stage_output(Extent input, std::size_t stage) const {
    Extent e = stem_output(input);
    for (std::size_t s = 1; s <= stage; ++s) e = conv_extent(e, 3, stage_stride(s), 1);
    return e;
}

bool ModelConfig::tks_at(std::size_t stage) const {
    return tks.enabled && std::find(tks.stages.begin(), tks.stages.end(), stage) != tks.stages.end();
}

bool ModelConfig::csp_at(std::size_t stage) const {
    return two_branch() && std::find(csp_stages.begin(), csp_stages.end(), stage) != csp_stages.end();
}

void ModelConfig::validate() const {
    backbone.validate();
    if (branches == 0 || branches > 2)
        throw ConfigError("only one or two branches are supported, got " + std::to_string(branches));
    if (branches == 1 && alpha != 0) throw ConfigError("a single-branch model requires alpha = 0");
    if (branches == 2 && alpha == 0) throw ConfigError("a two-branch model requires alpha >= 1");
    if (segment_len == 0) throw ConfigError("segment length must be positive");
    if (segment_len % (1 + alpha) != 0)
        throw ConfigError("segment length " + std::to_string(segment_len) + " is not divisible by 1 + alpha = " +
                          std::to_string(1 + alpha));
    if (input.height == 0 || input.width == 0) throw ConfigError("input resolution must be positive");
    if (two_branch() && (input.height % 2 != 0 || input.width % 2 != 0))
        throw ConfigError("two-branch input resolution must be even");
    for (auto s : csp_stages) {
        if (s < 1 || s > 4) throw ConfigError("csp stage out of range: " + std::to_string(s));
        if (!two_branch()) continue;
        const Extent d = backbone.stage_output(input, s);
        const Extent c = backbone.stage_output(small_input(), s);
        if (d.height % 2 != 0 || d.width % 2 != 0 || c.height * 2 != d.height || c.width * 2 != d.width)
            throw ConfigError("cross-scale path at stage " + std::to_string(s) +
                              " needs context maps of exactly half the detail extent");
    }
    if (dao.enabled && (dao.stage < 1 || dao.stage > 4))
        throw ConfigError("dao stage out of range: " + std::to_string(dao.stage));
    if (tks.enabled) {
        if (tks.k == 0) throw ConfigError("tks.k must be at least 1");
        if (tks.grid_h == 0 || tks.grid_w == 0) throw ConfigError("tks grid must be positive");
        for (auto s : tks.stages) {
            if (s < 1 || s > 4) throw ConfigError("tks stage out of range: " + std::to_string(s));
            std::vector<Extent> extents{backbone.stage_output(input, s)};
            if (two_branch()) extents.push_back(backbone.stage_output(small_input(), s));
            for (const auto& e : extents)
                if (e.height % tks.grid_h != 0 || e.width % tks.grid_w != 0)
                    throw ConfigError("tks grid " + std::to_string(tks.grid_h) + "x" + std::to_string(tks.grid_w) +
                                      " does not divide stage " + std::to_string(s) + " maps of " +
                                      std::to_string(e.height) + "x" + std::to_string(e.width));
        }
    }
}

ModelConfig resnet50_preset() {
    ModelConfig cfg;
    cfg.backbone.block = BlockKind::bottleneck;
    cfg.backbone.stem = {7, 2, 64, true};
    cfg.backbone.stages = {{3, 256, 1}, {4, 512, 2}, {6, 1024, 2}, {3, 2048, 2}};
    cfg.backbone.last_downsample_removed = true;
    cfg.input = {256, 128};
    return cfg;
}

ModelConfig mini_preset() {
    ModelConfig cfg;
    cfg.backbone.block = BlockKind::basic;
    cfg.backbone.stem = {3, 2, 16, true};
    cfg.backbone.stages = {{1, 16, 1}, {1, 32, 2}, {1, 64, 2}, {1, 128, 2}};
    cfg.backbone.last_downsample_removed = true;
    cfg.input = {64, 32};
    return cfg;
}

ModelConfig model_preset(const std::string& name) {
    if (name == "resnet50") return resnet50_preset();
    if (name == "mini") return mini_preset();
    throw ConfigError("unknown model preset '" + name + "' (expected resnet50 or mini)");
}

nlohmann::json to_json(const ModelConfig& cfg) {
    using nlohmann::json;
    json stages = json::array();
    for (const auto& s : cfg.backbone.stages)
        stages.push_back({{"blocks", s.blocks}, {"channels", s.channels}, {"stride", s.stride}});
    return {
        {"backbone",
         {{"block", cfg.backbone.block == BlockKind::basic ? "basic" : "bottleneck"},
          {"in_channels", cfg.backbone.in_channels},
          {"stem",
           {{"kernel", cfg.backbone.stem.kernel},
            {"stride", cfg.backbone.stem.stride},
            {"channels", cfg.backbone.stem.channels},
            {"max_pool", cfg.backbone.stem.max_pool}}},
          {"stages", stages},
          {"last_downsample_removed", cfg.backbone.last_downsample_removed}}},
        {"alpha", cfg.alpha},
        {"segment_len", cfg.segment_len},
        {"branches", cfg.branches},
        {"csp_stages", cfg.csp_stages},
        {"dao_stage", cfg.dao.stage},
        {"dao",
         {{"enabled", cfg.dao.enabled},
          {"similarity", cfg.dao.similarity == Similarity::cosine ? "cosine" : "dot"},
          {"residual_gain", cfg.dao.residual_gain}}},
        {"tks",
         {{"enabled", cfg.tks.enabled},
          {"k", cfg.tks.k},
          {"grid_h", cfg.tks.grid_h},
          {"grid_w", cfg.tks.grid_w},
          {"stages", cfg.tks.stages},
          {"fixed_fusion", cfg.tks.fixed_fusion}}},
        {"input", {{"height", cfg.input.height}, {"width", cfg.input.width}}},
    };
}

ModelConfig model_config_from_json(const nlohmann::json& j, const ModelConfig& base) {
    ModelConfig cfg = j.contains("preset") ? model_preset(j.at("preset").get<std::string>()) : base;
    try {
        if (j.contains("backbone")) {
            const auto& b = j.at("backbone");
            auto& bb = cfg.backbone;
            if (b.contains("block")) {
                const auto kind = b.at("block").get<std::string>();
                if (kind == "basic") bb.block = BlockKind::basic;
                else if (kind == "bottleneck") bb.block = BlockKind::bottleneck;
                else throw ConfigError("unknown block kind '" + kind + "'");
            }
            bb.in_channels = b.value("in_channels", bb.in_channels);
            if (b.contains("stem")) {
                const auto& s = b.at("stem");
                bb.stem.kernel = s.value("kernel", bb.stem.kernel);
                bb.stem.stride = s.value("stride", bb.stem.stride);
                bb.stem.channels = s.value("channels", bb.stem.channels);
                bb.stem.max_pool = s.value("max_pool", bb.stem.max_pool);
            }
            if (b.contains("stages")) {
                bb.stages.clear();
                for (const auto& s : b.at("stages"))
                    bb.stages.push_back({s.at("blocks").get<std::size_t>(), s.at("channels").get<std::size_t>(),
                                         s.at("stride").get<std::size_t>()});
            }
            bb.last_downsample_removed = b.value("last_downsample_removed", bb.last_downsample_removed);
        }
        cfg.alpha = j.value("alpha", cfg.alpha);
        cfg.segment_len = j.value("segment_len", cfg.segment_len);
        cfg.branches = j.value("branches", cfg.alpha == 0 ? std::size_t{1} : std::size_t{2});
        if (j.contains("csp_stages")) cfg.csp_stages = j.at("csp_stages").get<std::vector<std::size_t>>();
        cfg.dao.stage = j.value("dao_stage", cfg.dao.stage);
        if (j.contains("dao")) {
            const auto& d = j.at("dao");
            cfg.dao.enabled = d.value("enabled", cfg.dao.enabled);
            cfg.dao.stage = d.value("stage", cfg.dao.stage);
            if (d.contains("similarity")) {
                const auto sim = d.at("similarity").get<std::string>();
                if (sim == "cosine") cfg.dao.similarity = Similarity::cosine;
                else if (sim == "dot") cfg.dao.similarity = Similarity::dot;
                else throw ConfigError("unknown similarity '" + sim + "'");
            }
            cfg.dao.residual_gain = d.value("residual_gain", cfg.dao.residual_gain);
        }
        if (j.contains("tks")) {
            const auto& t = j.at("tks");
            cfg.tks.enabled = t.value("enabled", cfg.tks.enabled);
            cfg.tks.k = t.value("k", cfg.tks.k);
            cfg.tks.grid_h = t.value("grid_h", cfg.tks.grid_h);
            cfg.tks.grid_w = t.value("grid_w", cfg.tks.grid_w);
            if (t.contains("stages")) cfg.tks.stages = t.at("stages").get<std::vector<std::size_t>>();
            cfg.tks.fixed_fusion = t.value("fixed_fusion", cfg.tks.fixed_fusion);
        }
        if (j.contains("input")) {
            cfg.input.height = j.at("input").value("height", cfg.input.height);
            cfg.input.width = j.at("input").value("width", cfg.input.width);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
    return cfg;
}

ModelConfig model_config_from_json(const nlohmann::json& j) { return model_config_from_json(j, mini_preset()); }

} // namespace btks
