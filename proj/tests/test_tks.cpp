#include "doctest.h"

#include "btks/errors.hpp"
#include "btks/gradcheck.hpp"
#include "btks/ops.hpp"
#include "btks/tks.hpp"
#include "test_util.hpp"

#include <algorithm>
#include <cmath>

using namespace btks;
using btks::testing::max_abs_diff;
using btks::testing::random_tensor;
using btks::testing::weighted_sum;

namespace {

TksParams<double> random_params(std::size_t c, std::size_t k, Rng& rng, double scale = 0.5) {
    TksParams<double> p;
    for (std::size_t i = 0; i < k; ++i) p.path_weights.push_back(random_tensor<double>({c, c, 3}, rng, scale));
    for (std::size_t i = 0; i < k; ++i) p.select_weights.push_back(random_tensor<double>({c, c}, rng, scale));
    return p;
}

// Gates recomputed from the definition for one clip: u[c] = mean of sum_i Y_i, logits_i = W_i u.
std::vector<std::vector<double>> gate_oracle(const std::vector<Tensor<double>>& paths, const TksParams<double>& p,
                                             std::size_t clip, std::size_t frames) {
    const std::size_t c = paths[0].dim(1), cells = paths[0].dim(2) * paths[0].dim(3), k = paths.size();
    std::vector<double> u(c, 0.0);
    for (const auto& y : paths)
        for (std::size_t t = 0; t < frames; ++t)
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t q = 0; q < cells; ++q)
                    u[ch] += y.values()[(((clip * frames + t) * c) + ch) * cells + q];
    for (auto& v : u) v /= double(frames * cells);
    std::vector<std::vector<double>> logits(k, std::vector<double>(c, 0.0));
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t o = 0; o < c; ++o)
            for (std::size_t j = 0; j < c; ++j) logits[i][o] += p.select_weights[i].at({o, j}) * u[j];
    auto g = logits;
    for (std::size_t o = 0; o < c; ++o) {
        double z = 0;
        for (std::size_t i = 0; i < k; ++i) z += std::exp(logits[i][o]);
        for (std::size_t i = 0; i < k; ++i) g[i][o] = std::exp(logits[i][o]) / z;
    }
    return g;
}

} // namespace

TEST_CASE("partition examples") {
    Rng rng(21);
    auto f = random_tensor<double>({2, 3, 4, 2}, rng);
    CHECK(partition(f, 4, 2).values() == f.values());
    auto constant = partition(Tensor<double>::full({2, 3, 8, 4}, -0.5), 4, 2);
    for (double v : constant.values()) CHECK(v == -0.5);

    auto big = random_tensor<double>({1, 2, 16, 8}, rng);
    auto x = partition(big, 4, 2);
    CHECK(x.shape() == Shape{1, 2, 4, 2});
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 2; ++j) {
                double s = 0;
                for (std::size_t y = 4 * i; y < 4 * i + 4; ++y)
                    for (std::size_t xx = 4 * j; xx < 4 * j + 4; ++xx) s += big.at({0, c, y, xx});
                CHECK(std::abs(x.at({0, c, i, j}) - s / 16.0) < 1e-12);
            }
    CHECK_THROWS_AS(partition(big, 3, 2), ConfigError);
}

TEST_CASE("select examples") {
    Rng rng(22);
    const std::size_t c = 3, t = 4;
    auto x = random_tensor<double>({2 * t, c, 2, 2}, rng);
    SUBCASE("equal selection weights give the fixed-fusion average") {
        auto p = random_params(c, 2, rng);
        p.select_weights[1] = p.select_weights[0];
        auto s = select(x, t, p);
        for (double g : s.gates.values()) CHECK(g == 0.5);
        auto avg = mul_scalar(add(s.paths[0], s.paths[1]), 0.5);
        CHECK(max_abs_diff(s.fused.values(), avg.values()) < 1e-12);
        auto fixed = select(x, t, p, true);
        CHECK(fixed.fused.values() == s.fused.values());
    }
    SUBCASE("K = 1 passes the single path through") {
        auto p = random_params(c, 1, rng);
        auto s = select(x, t, p);
        for (double g : s.gates.values()) CHECK(g == 1.0);
        CHECK(max_abs_diff(s.fused.values(), temporal_conv1d(x, p.path_weights[0], 1, t).values()) < 1e-12);
    }
    SUBCASE("gates match a direct computation and lie on the simplex") {
        for (std::size_t k : {2, 3}) {
            auto p = random_params(c, k, rng);
            auto s = select(x, t, p);
            CHECK(s.gates.shape() == Shape{2, k, c});
            for (std::size_t clip = 0; clip < 2; ++clip) {
                auto g = gate_oracle(s.paths, p, clip, t);
                for (std::size_t ch = 0; ch < c; ++ch) {
                    double total = 0;
                    for (std::size_t i = 0; i < k; ++i) {
                        const double v = s.gates.at({clip, i, ch});
                        CHECK(std::abs(v - g[i][ch]) < 1e-12);
                        CHECK(v >= 0.0);
                        total += v;
                    }
                    CHECK(std::abs(total - 1.0) < 1e-6);
                }
            }
        }
    }
    SUBCASE("path i uses dilation i") {
        auto p = random_params(c, 3, rng);
        auto s = select(x, t, p);
        for (std::size_t i = 0; i < 3; ++i)
            CHECK(max_abs_diff(s.paths[i].values(), temporal_conv1d(x, p.path_weights[i], i + 1, t).values()) <
                  1e-12);
    }
    SUBCASE("path outputs scale linearly, gates do not") {
        auto p = random_params(c, 2, rng, 1.5);
        auto a = select(x, t, p), b = select(mul_scalar(x, 3.0), t, p);
        for (std::size_t i = 0; i < 2; ++i)
            CHECK(max_abs_diff(b.paths[i].values(), mul_scalar(a.paths[i], 3.0).values()) < 1e-10);
        CHECK(max_abs_diff(a.gates.values(), b.gates.values()) > 1e-6);
    }
    SUBCASE("channel mismatch") {
        auto p = random_params(c + 1, 2, rng);
        CHECK_THROWS_AS(select(x, t, p), ConfigError);
    }
}

TEST_CASE("excite examples") {
    Rng rng(23);
    auto f = random_tensor<double>({6, 4, 8, 4}, rng);
    CHECK(excite(f, Tensor<double>({6, 4, 4, 2})).values() == f.values());
    CHECK(excite(f, random_tensor<double>({6, 4, 4, 2}, rng)).shape() == f.shape());

    auto single = random_tensor<double>({1, 1, 4, 2}, rng);
    auto e = excite(single, Tensor<double>({1, 1, 1, 1}, std::vector<double>{0.75}));
    for (std::size_t i = 0; i < single.numel(); ++i) CHECK(e.values()[i] == single.values()[i] + 0.75);

    CHECK_THROWS_AS(excite(f, Tensor<double>({6, 4, 3, 2})), ConfigError);
}

TEST_CASE("tks_forward") {
    Rng rng(24);
    SUBCASE("zero weights give the identity") {
        TksParams<double> p{{Tensor<double>({3, 3, 3}), Tensor<double>({3, 3, 3})},
                            {Tensor<double>({3, 3}), Tensor<double>({3, 3})}};
        auto f = random_tensor<double>({4, 3, 8, 4}, rng);
        CHECK(tks_forward(f, 4, 4, 2, p).features.values() == f.values());
    }
    SUBCASE("shape preserved for valid configs") {
        for (int trial = 0; trial < 20; ++trial) {
            const std::size_t gh = 1 + rng.below(3), gw = 1 + rng.below(2);
            const std::size_t h = gh * (1 + rng.below(3)), w = gw * (1 + rng.below(3));
            const std::size_t c = 1 + rng.below(4), t = 1 + rng.below(4), clips = 1 + rng.below(2);
            auto f = random_tensor<double>({clips * t, c, h, w}, rng);
            auto p = random_params(c, 1 + rng.below(3), rng);
            CHECK(tks_forward(f, t, gh, gw, p).features.shape() == f.shape());
        }
    }
    SUBCASE("gradient check on [4,8,4,2] and [4,8,8,4]") {
        for (Shape s : {Shape{4, 8, 4, 2}, Shape{4, 8, 8, 4}}) {
            auto f = random_tensor<double>(s, rng);
            auto p = random_params(8, 2, rng, 0.3);
            auto r = grad_check(
                [](const std::vector<Tensor<double>>& x) {
                    TksParams<double> q{{x[1], x[2]}, {x[3], x[4]}};
                    return weighted_sum(tks_forward(x[0], 4, 4, 2, q).features, 7);
                },
                {f, p.path_weights[0], p.path_weights[1], p.select_weights[0], p.select_weights[1]});
            CHECK(r.max_relative_error < 1e-4);
        }
    }
}

TEST_CASE("gates respond to a temporal shift after a few training steps") {
    // The same moving blob, entering the clip two frames later in the second input.
    const std::size_t t = 6, c = 4, h = 8, w = 4;
    auto clip = [&](std::size_t start) {
        Tensor<double> f({t, c, h, w});
        for (std::size_t i = start; i < std::min(t, start + 3); ++i) {
            const std::size_t y = 2 * (i - start);
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t x = 0; x < w; ++x) f.data()[((i * c + ch) * h + y) * w + x] = 1.0 + double(ch);
        }
        return f;
    };
    ParameterStore<double> store;
    Rng rng(25);
    TemporalKernelSelection<double> tks(store, "tks", c, TksConfig{}, rng);
    auto early = clip(0), late = clip(2);
    for (int step = 0; step < 5; ++step) {
        store.zero_grad();
        auto loss = sub(weighted_sum(tks(early, t).features, 1), weighted_sum(tks(late, t).features, 1));
        loss.backward();
        for (auto p : store.trainable())
            for (std::size_t i = 0; i < p.numel(); ++i) p.data()[i] -= 0.05 * p.grad()[i];
    }
    auto a = tks(early, t).gates, b = tks(late, t).gates;
    CHECK(max_abs_diff(a.values(), b.values()) > 1e-4);
}

TEST_CASE("TemporalKernelSelection registers its weights") {
    ParameterStore<float> store;
    Rng rng(26);
    TemporalKernelSelection<float> tks(store, "tks.stage2", 8, TksConfig{}, rng);
    CHECK(store.contains("tks.stage2.path1.weight"));
    CHECK(store.contains("tks.stage2.path2.weight"));
    CHECK(store.contains("tks.stage2.select1.weight"));
    CHECK(store.contains("tks.stage2.select2.weight"));
    CHECK(store.trainable_count() == 2 * 8 * 8 * 3 + 2 * 8 * 8);
    TksConfig bad;
    bad.k = 0;
    CHECK_THROWS_AS(TemporalKernelSelection<float>(store, "x", 8, bad, rng), ConfigError);
}
