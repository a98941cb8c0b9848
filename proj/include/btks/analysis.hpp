#pragma once

#include "btks/config.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace btks {

// Static cost model. MACs are counted as FLOPs; normalization, activations,
// pooling and residual additions are free. Normalization does count toward
// parameters (gamma and beta).

struct CostItem {
    std::string name;   // matches the parameter prefix, e.g. "stage2.block0.conv1"
    std::string module; // stem, stage1..stage4, csp, dao, tks
    std::uint64_t params = 0;
    std::uint64_t macs = 0; // per frame in count_flops, per segment in count_params
};

struct ModuleCost {
    std::uint64_t params = 0;
    std::uint64_t macs = 0;
};

// Per-frame average over a segment, in MACs.
struct FrameCost {
    double backbone = 0;
    double csp = 0;
    double dao = 0;
    double tks = 0;
    double total() const { return backbone + csp + dao + tks; }
    double overhead() const { return csp + dao + tks; }
};

struct CostReport {
    Extent resolution;
    std::vector<CostItem> items;
    std::uint64_t total_params = 0;
    std::uint64_t total_macs = 0;
    FrameCost avg_per_frame;
    double cost_fraction_vs_baseline = 1.0;
    std::vector<std::string> notes;

    std::map<std::string, ModuleCost> modules() const;
    double gflops() const { return double(total_macs) * 1e-9; }
};

// k x k convolution plus normalization on an `in` map.
CostItem conv_cost(const std::string& name, const std::string& module, Extent in, std::size_t kernel,
                   std::size_t in_channels, std::size_t out_channels, std::size_t stride = 1, std::size_t padding = 0);

// Backbone only, one frame at `resolution`.
CostReport count_flops(const BackboneConfig& config, Extent resolution);
CostReport count_flops(const ModelConfig& config, Extent resolution);

// Whole model at config.input: backbone, csp, dao and tks items (classifier excluded).
// MACs cover one segment, so total_macs / N equals avg_per_frame.total().
CostReport count_params(const ModelConfig& config);

// Retained share of single-branch cost: (4 + alpha) / (4 (1 + alpha)).
double cost_fraction(std::size_t alpha);

// Backbone term is (p_big + alpha p_small) / (1 + alpha); overheads for the
// modules enabled in `config` are itemized. `alpha` overrides config.alpha and
// need not divide the segment length.
FrameCost avg_flops_per_frame(const ModelConfig& config, std::size_t alpha);

nlohmann::json to_json(const CostReport& report);
// Plain-text table: one row per module, then totals.
std::string format_table(const CostReport& report);

} // namespace btks
