#include "btks/gradsuite.hpp"

#include "btks/bicnet.hpp"
#include "btks/dao.hpp"
#include "btks/errors.hpp"
#include "btks/gradcheck.hpp"
#include "btks/ops.hpp"
#include "btks/random.hpp"
#include "btks/tks.hpp"

#include <algorithm>
#include <chrono>
#include <functional>
#include <map>

namespace btks {
namespace {

using D = Tensor<double>;

D random(Shape shape, Rng& rng, double scale = 1.0) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.normal() * scale;
    return D(std::move(shape), std::move(v));
}

// Projects onto a fixed random direction so every output coordinate matters.
D project(const D& y, std::uint64_t seed) {
    Rng rng(seed ^ 0x5eedULL);
    return sum(mul(y, random(y.shape(), rng)));
}

GradCheckResult conv_block(std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t k = rng.bernoulli(0.5) ? 3 : 1, stride = 1 + rng.below(2), pad = k == 3 ? rng.below(2) : 0;
    const std::size_t cin = 1 + rng.below(3), cout = 1 + rng.below(3);
    auto x = random({2, cin, 5, 4}, rng), w = random({cout, cin, k, k}, rng);
    return grad_check([&](const std::vector<D>& p) { return project(conv2d(p[0], p[1], stride, pad), seed); },
                      {x, w});
}

GradCheckResult temporal_block(std::uint64_t seed) {
    GradCheckResult worst;
    for (std::size_t dilation = 1; dilation <= 3; ++dilation) {
        Rng rng(seed * 3 + dilation);
        const std::size_t c = 1 + rng.below(3);
        auto x = random({8, c, 2, 2}, rng), w = random({c, c, 3}, rng);
        auto r = grad_check(
            [&](const std::vector<D>& p) { return project(temporal_conv1d(p[0], p[1], dilation, 4), seed); }, {x, w});
        const auto coords = worst.coordinates + r.coordinates;
        if (r.max_relative_error >= worst.max_relative_error) worst = r;
        worst.coordinates = coords;
    }
    return worst;
}

GradCheckResult softmax_block(std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t axis = rng.below(3);
    auto x = random({2 + rng.below(2), 3, 2 + rng.below(3)}, rng, 2.0);
    return grad_check([&](const std::vector<D>& p) { return project(softmax(p[0], axis), seed); }, {x});
}

GradCheckResult csp_block(std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t alpha = 1 + rng.below(3), c = 1 + rng.below(3), m = 1 + rng.below(2);
    auto d = random({m, c, 4, 2}, rng), ctx = random({m * alpha, c, 2, 1}, rng), w = random({alpha * c, c, 1, 1}, rng);
    return grad_check(
        [&](const std::vector<D>& p) { return project(add(p[1], csp_transform(p[0], p[2], alpha)), seed); },
        {d, ctx, w});
}

GradCheckResult dao_block(std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t m = 2 + rng.below(2), c = 1 + rng.below(3), h = 2, w = 1 + rng.below(2), hw = h * w;
    std::vector<D> points{random({2 * m, c, h, w}, rng)};
    for (std::size_t k = 1; k < m; ++k) {
        points.push_back(random({1, c, 1, 1}, rng));
        points.push_back(random({hw, hw}, rng, 0.5));
        points.push_back(random({hw}, rng, 0.5));
    }
    return grad_check(
        [&](const std::vector<D>& p) {
            std::vector<AttentionModuleParams<double>> modules;
            for (std::size_t k = 0; k + 1 < m; ++k) modules.push_back({p[1 + 3 * k], p[2 + 3 * k], p[3 + 3 * k]});
            auto out = dao_forward<double>(p[0], m, modules, Similarity::cosine, 1.0);
            return add(project(out.features, seed), mul_scalar(out.loss, 2.0));
        },
        points);
}

GradCheckResult tks_block(std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t kernels = 1 + rng.below(3), c = 2 + rng.below(4), frames = 2 + rng.below(3);
    const std::size_t gh = 1 + rng.below(2), gw = 1 + rng.below(2);
    std::vector<D> points{random({2 * frames, c, 2 * gh, gw}, rng)};
    for (std::size_t k = 0; k < kernels; ++k) points.push_back(random({c, c, 3}, rng, 0.3));
    for (std::size_t k = 0; k < kernels; ++k) points.push_back(random({c, c}, rng, 0.3));
    return grad_check(
        [&](const std::vector<D>& p) {
            TksParams<double> q;
            for (std::size_t k = 0; k < kernels; ++k) {
                q.path_weights.push_back(p[1 + k]);
                q.select_weights.push_back(p[1 + kernels + k]);
            }
            return project(tks_forward(p[0], frames, gh, gw, q).features, seed);
        },
        points);
}

GradCheckResult bicnet_block(std::uint64_t seed) {
    auto cfg = mini_preset();
    cfg.segment_len = 4;
    cfg.alpha = 1;
    BiCnetModel<double> model(cfg, seed);
    model.set_training(false);
    Rng rng(seed + 1000);
    // Parameters only: individual input pixels can carry gradients below the
    // finite-difference noise floor. The larger step keeps rounding noise on
    // small gradients under the tolerance; kinks fall back to smaller steps.
    const auto input = random({1, 4, 3, cfg.input.height, cfg.input.width}, rng);
    return grad_check(
        [&](const std::vector<D>&) {
            auto out = model.forward(input);
            return add(project(out.video, seed), out.divergence);
        },
        model.store().trainable(), 1e-4, 4, seed);
}

const std::map<std::string, std::function<GradCheckResult(std::uint64_t)>>& registry() {
    static const std::map<std::string, std::function<GradCheckResult(std::uint64_t)>> blocks{
        {"conv2d", conv_block},       {"temporal_conv1d", temporal_block}, {"softmax", softmax_block},
        {"csp_transform", csp_block}, {"dao", dao_block},                  {"tks", tks_block},
        {"bicnet_tks", bicnet_block},
    };
    return blocks;
}

} // namespace

const std::vector<std::string>& gradcheck_blocks() {
    static const std::vector<std::string> names{"conv2d", "temporal_conv1d", "softmax", "csp_transform",
                                                "dao",    "tks",             "bicnet_tks"};
    return names;
}

GradBlockResult run_gradcheck_block(const std::string& name, std::size_t seeds, std::uint64_t first_seed,
                                    double tolerance) {
    auto it = registry().find(name);
    if (it == registry().end()) throw ConfigError("unknown gradcheck block: " + name);
    GradBlockResult out;
    out.name = name;
    out.seeds = seeds;
    const auto start = std::chrono::steady_clock::now();
    for (std::uint64_t s = first_seed; s < first_seed + seeds; ++s) {
        const auto r = it->second(s);
        out.coordinates += r.coordinates;
        out.kinks += r.kinks;
        if (r.max_relative_error > out.max_relative_error || s == first_seed) {
            out.max_relative_error = r.max_relative_error;
            out.worst_seed = s;
        }
    }
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out.passed = out.max_relative_error < tolerance && 20 * out.kinks <= out.coordinates + out.kinks;
    return out;
}

nlohmann::json to_json(const GradBlockResult& r) {
    return {{"block", r.name},
            {"seeds", r.seeds},
            {"max_relative_error", r.max_relative_error},
            {"worst_seed", r.worst_seed},
            {"coordinates", r.coordinates},
            {"kinks", r.kinks},
            {"seconds", r.seconds},
            {"passed", r.passed}};
}

} // namespace btks
