#include "btks/analysis.hpp"

#include "btks/errors.hpp"

#include <cstdio>
#include <sstream>

namespace btks {

namespace {

std::uint64_t area(Extent e) { return std::uint64_t(e.height) * e.width; }

Extent conv_out(Extent in, std::size_t k, std::size_t stride, std::size_t pad) {
    return {(in.height + 2 * pad - k) / stride + 1, (in.width + 2 * pad - k) / stride + 1};
}

struct Builder {
    CostReport& report;

    Extent conv_bn(const std::string& name, const std::string& module, Extent in, std::size_t k, std::size_t cin,
                   std::size_t cout, std::size_t stride, std::size_t pad) {
        report.items.push_back(conv_cost(name, module, in, k, cin, cout, stride, pad));
        return conv_out(in, k, stride, pad);
    }
};

void add_backbone(CostReport& report, const BackboneConfig& cfg, Extent input) {
    cfg.validate();
    Builder b{report};
    Extent e = b.conv_bn("stem", "stem", input, cfg.stem.kernel, cfg.in_channels, cfg.stem.channels,
                         cfg.stem.stride, cfg.stem.kernel / 2);
    if (cfg.stem.max_pool) e = conv_out(e, 3, 2, 1);
    for (std::size_t s = 1; s <= 4; ++s) {
        const std::string module = "stage" + std::to_string(s);
        std::size_t cin = cfg.stage_input_channels(s);
        const std::size_t cout = cfg.stage_channels(s);
        for (std::size_t blk = 0; blk < cfg.stages[s - 1].blocks; ++blk) {
            const std::string prefix = module + ".block" + std::to_string(blk) + ".";
            const std::size_t stride = blk == 0 ? cfg.stage_stride(s) : 1;
            Extent out;
            if (cfg.block == BlockKind::basic) {
                out = b.conv_bn(prefix + "conv1", module, e, 3, cin, cout, stride, 1);
                b.conv_bn(prefix + "conv2", module, out, 3, cout, cout, 1, 1);
            } else {
                const std::size_t width = cout / 4;
                b.conv_bn(prefix + "conv1", module, e, 1, cin, width, 1, 0);
                out = b.conv_bn(prefix + "conv2", module, e, 3, width, width, stride, 1);
                b.conv_bn(prefix + "conv3", module, out, 1, width, cout, 1, 0);
            }
            if (stride != 1 || cin != cout) b.conv_bn(prefix + "downsample", module, e, 1, cin, cout, stride, 0);
            e = out;
            cin = cout;
        }
    }
}

void finish(CostReport& report) {
    report.total_params = 0;
    report.total_macs = 0;
    for (const auto& item : report.items) {
        report.total_params += item.params;
        report.total_macs += item.macs;
    }
}

std::uint64_t backbone_macs(const BackboneConfig& cfg, Extent resolution) {
    return count_flops(cfg, resolution).total_macs;
}

// learned attention map: 1x1 channel compression, then an HW x HW embedding
std::uint64_t dao_module_macs(std::size_t channels, Extent e) {
    return std::uint64_t(channels) * area(e) + area(e) * area(e);
}

std::uint64_t dao_module_params(std::size_t channels, Extent e) {
    return std::uint64_t(channels) + area(e) * area(e) + area(e);
}

std::uint64_t tks_path_macs(const TksConfig& tks, std::size_t channels) {
    return std::uint64_t(tks.k) * channels * channels * 3 * tks.grid_h * tks.grid_w;
}

std::uint64_t tks_select_macs(const TksConfig& tks, std::size_t channels) {
    return std::uint64_t(tks.k) * channels * channels;
}

} // namespace

CostItem conv_cost(const std::string& name, const std::string& module, Extent in, std::size_t kernel,
                   std::size_t in_channels, std::size_t out_channels, std::size_t stride, std::size_t padding) {
    if (stride == 0 || in.height + 2 * padding < kernel || in.width + 2 * padding < kernel)
        throw ConfigError("conv_cost: " + std::to_string(kernel) + "x" + std::to_string(kernel) + " kernel on " +
                          std::to_string(in.height) + "x" + std::to_string(in.width));
    const Extent out = conv_out(in, kernel, stride, padding);
    const std::uint64_t weights = std::uint64_t(kernel) * kernel * in_channels * out_channels;
    return {name, module, weights + 2 * out_channels, weights * area(out)};
}

std::map<std::string, ModuleCost> CostReport::modules() const {
    std::map<std::string, ModuleCost> out;
    for (const auto& item : items) {
        auto& m = out[item.module];
        m.params += item.params;
        m.macs += item.macs;
    }
    return out;
}

CostReport count_flops(const BackboneConfig& config, Extent resolution) {
    CostReport report;
    report.resolution = resolution;
    add_backbone(report, config, resolution);
    finish(report);
    return report;
}

CostReport count_flops(const ModelConfig& config, Extent resolution) { return count_flops(config.backbone, resolution); }

double cost_fraction(std::size_t alpha) {
    const double a = double(alpha);
    return (4.0 + a) / (4.0 * (1.0 + a));
}

FrameCost avg_flops_per_frame(const ModelConfig& config, std::size_t alpha) {
    const auto& bb = config.backbone;
    const double a = double(alpha);
    const double n = double(config.segment_len);
    const double big_share = 1.0 / (1.0 + a);
    const double m = n * big_share;     // big frames per segment
    const double small_m = n - m;       // small frames per segment
    const Extent small{config.input.height / 2, config.input.width / 2};

    FrameCost cost;
    const double p_big = double(backbone_macs(bb, config.input));
    cost.backbone = alpha == 0 ? p_big : (p_big + a * double(backbone_macs(bb, small))) / (1.0 + a);

    if (alpha > 0)
        for (std::size_t s : config.csp_stages) {
            const Extent pooled{bb.stage_output(config.input, s).height / 2, bb.stage_output(config.input, s).width / 2};
            const double c = double(bb.stage_channels(s));
            cost.csp += big_share * a * c * c * double(area(pooled));
        }

    if (config.dao.enabled) {
        const std::size_t s = config.dao.stage, c = bb.stage_channels(s);
        if (m > 1) cost.dao += (m - 1) * double(dao_module_macs(c, bb.stage_output(config.input, s))) / n;
        if (alpha > 0 && small_m > 1)
            cost.dao += (small_m - 1) * double(dao_module_macs(c, bb.stage_output(small, s))) / n;
    }

    if (config.tks.enabled)
        for (std::size_t s : config.tks.stages) {
            const std::size_t c = bb.stage_channels(s);
            const double clips = alpha > 0 ? 2.0 : 1.0; // one gate computation per branch and segment
            cost.tks += double(tks_path_macs(config.tks, c)) + clips * double(tks_select_macs(config.tks, c)) / n;
        }
    return cost;
}

CostReport count_params(const ModelConfig& config) {
    config.validate();
    CostReport report;
    report.resolution = config.input;
    const auto& bb = config.backbone;
    const std::size_t m = config.big_frames(), small_m = config.small_frames();
    // shared layers run on every frame of the segment, at either resolution
    add_backbone(report, bb, config.input);
    for (auto& item : report.items) item.macs *= m;
    if (config.two_branch()) {
        const auto small = count_flops(bb, config.small_input());
        for (std::size_t i = 0; i < report.items.size(); ++i) report.items[i].macs += small_m * small.items[i].macs;
    }

    if (config.two_branch())
        for (std::size_t s = 1; s <= 4; ++s) {
            if (!config.csp_at(s)) continue;
            const std::uint64_t c = bb.stage_channels(s);
            const Extent d = bb.stage_output(config.input, s);
            const std::uint64_t weights = config.alpha * c * c;
            report.items.push_back({"csp.stage" + std::to_string(s), "csp", weights,
                                    weights * (d.height / 2) * (d.width / 2) * m});
        }

    if (config.dao.enabled) {
        const std::size_t s = config.dao.stage, c = bb.stage_channels(s);
        auto add_branch = [&](const std::string& branch, Extent e, std::size_t frames) {
            for (std::size_t k = 1; k < frames; ++k)
                report.items.push_back({"dao." + branch + ".module" + std::to_string(k), "dao",
                                        dao_module_params(c, e), dao_module_macs(c, e)});
        };
        add_branch("detail", bb.stage_output(config.input, s), m);
        if (config.two_branch()) add_branch("context", bb.stage_output(config.small_input(), s), small_m);
    }

    if (config.tks.enabled)
        for (std::size_t s : config.tks.stages) {
            const std::uint64_t c = bb.stage_channels(s);
            const std::uint64_t path = 3 * c * c, sel = c * c;
            const std::uint64_t clips = config.two_branch() ? 2 : 1;
            const std::uint64_t frames = config.segment_len;
            const std::string prefix = "tks.stage" + std::to_string(s);
            for (std::size_t i = 1; i <= config.tks.k; ++i) {
                report.items.push_back({prefix + ".path" + std::to_string(i), "tks", path,
                                        path * config.tks.grid_h * config.tks.grid_w * frames});
                report.items.push_back({prefix + ".select" + std::to_string(i), "tks", sel, sel * clips});
            }
            if (c == 512 && config.tks.k == 2) {
                char buf[160];
                std::snprintf(buf, sizeof buf,
                              "%s: %.2fM parameters from K C x C x 3 paths and K C x C selectors; the reference "
                              "model total leaves about 1.6M for this module",
                              prefix.c_str(), double(config.tks.k * (path + sel)) * 1e-6);
                report.notes.emplace_back(buf);
            }
        }

    finish(report);
    report.avg_per_frame = avg_flops_per_frame(config, config.alpha);
    report.cost_fraction_vs_baseline = cost_fraction(config.alpha);
    return report;
}

nlohmann::json to_json(const CostReport& report) {
    nlohmann::json items = nlohmann::json::array();
    for (const auto& it : report.items)
        items.push_back({{"name", it.name}, {"module", it.module}, {"params", it.params}, {"macs", it.macs}});
    nlohmann::json modules = nlohmann::json::object();
    for (const auto& [name, m] : report.modules()) modules[name] = {{"params", m.params}, {"macs", m.macs}};
    const auto& f = report.avg_per_frame;
    return {{"resolution", {report.resolution.height, report.resolution.width}},
            {"items", items},
            {"modules", modules},
            {"total_params", report.total_params},
            {"total_macs", report.total_macs},
            {"gflops", report.gflops()},
            {"avg_flops_per_frame",
             {{"backbone", f.backbone * 1e-9},
              {"csp", f.csp * 1e-9},
              {"dao", f.dao * 1e-9},
              {"tks", f.tks * 1e-9},
              {"total", f.total() * 1e-9}}},
            {"cost_fraction_vs_baseline", report.cost_fraction_vs_baseline},
            {"notes", report.notes}};
}

std::string format_table(const CostReport& report) {
    std::ostringstream out;
    char line[128];
    std::snprintf(line, sizeof line, "%-10s %14s %12s\n", "module", "MACs", "params(M)");
    out << line;
    for (const auto& [name, m] : report.modules()) {
        std::snprintf(line, sizeof line, "%-10s %14llu %12.3f\n", name.c_str(), (unsigned long long)m.macs,
                      double(m.params) * 1e-6);
        out << line;
    }
    std::snprintf(line, sizeof line, "%-10s %14llu %12.3f\n", "total", (unsigned long long)report.total_macs,
                  double(report.total_params) * 1e-6);
    out << line;
    const auto& f = report.avg_per_frame;
    if (f.total() > 0) {
        std::snprintf(line, sizeof line, "GFLOPs/frame %.3f (backbone %.3f, csp %.4f, dao %.4f, tks %.4f)\n",
                      f.total() * 1e-9, f.backbone * 1e-9, f.csp * 1e-9, f.dao * 1e-9, f.tks * 1e-9);
        out << line;
        std::snprintf(line, sizeof line, "cost fraction vs single branch %.4f\n", report.cost_fraction_vs_baseline);
        out << line;
    }
    for (const auto& note : report.notes) out << "note: " << note << '\n';
    return out.str();
}

} // namespace btks
