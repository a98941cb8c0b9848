#include "doctest.h"

#include "btks/bicnet.hpp"
#include "btks/errors.hpp"
#include "btks/gradcheck.hpp"
#include "btks/ops.hpp"
#include "test_util.hpp"

#include <cmath>
#include <filesystem>

using namespace btks;
using btks::testing::max_abs_diff;
using btks::testing::random_tensor;
using btks::testing::weighted_sum;

namespace {

ModelConfig mini(std::size_t n, std::size_t alpha) {
    auto cfg = mini_preset();
    cfg.segment_len = n;
    cfg.alpha = alpha;
    cfg.branches = alpha == 0 ? 1 : 2;
    return cfg;
}

} // namespace

TEST_CASE("split_segment examples") {
    Rng rng(41);
    auto seg = random_tensor<double>({8, 3, 8, 4}, rng);
    auto s3 = split_segment(seg, 3);
    CHECK(s3.m == 2);
    CHECK(s3.big_frames.shape() == Shape{2, 3, 8, 4});
    CHECK(s3.small_frames.shape() == Shape{6, 3, 4, 2});
    auto s1 = split_segment(seg, 1);
    CHECK(s1.big_frames.shape() == Shape{4, 3, 8, 4});
    CHECK(s1.small_frames.shape() == Shape{4, 3, 4, 2});
    CHECK_THROWS_AS(split_segment(seg, 2), InputError);
    CHECK_THROWS_AS(split_segment(random_tensor<double>({4, 3, 7, 4}, rng), 1), InputError);

    // order preserved: big frames are the leading frames, small ones the 2x2 means of the rest
    for (std::size_t i = 0; i < 2 * 3 * 8 * 4; ++i) CHECK(s3.big_frames.values()[i] == seg.values()[i]);
    for (std::size_t f = 0; f < 6; ++f)
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t y = 0; y < 4; ++y)
                for (std::size_t x = 0; x < 2; ++x) {
                    double mean = 0;
                    for (std::size_t dy = 0; dy < 2; ++dy)
                        for (std::size_t dx = 0; dx < 2; ++dx) mean += seg.at({f + 2, c, 2 * y + dy, 2 * x + dx});
                    CHECK(std::abs(s3.small_frames.at({f, c, y, x}) - mean / 4) < 1e-12);
                }

    auto batch = split_segment(random_tensor<double>({3, 8, 3, 8, 4}, rng), 3);
    CHECK(batch.segments == 3);
    CHECK(batch.big_frames.dim(0) == 6);
    CHECK(batch.small_frames.dim(0) == 18);
}

TEST_CASE("resize_bilinear keeps constants and interpolates") {
    auto c = resize_bilinear(Tensor<double>::full({1, 1, 6, 4}, 2.5), 3, 7);
    for (double v : c.values()) CHECK(std::abs(v - 2.5) < 1e-12);
    // 1x2 -> 1x4: samples at source 0, 0.25, 0.75, 1 (clamped)
    auto r = resize_bilinear(Tensor<double>({1, 1, 1, 2}, std::vector<double>{0, 4}), 1, 4);
    CHECK(max_abs_diff(r.values(), {0, 1, 3, 4}) < 1e-12);
}

TEST_CASE("csp_transform examples") {
    Rng rng(42);
    auto fd = random_tensor<double>({2, 64, 16, 8}, rng);
    auto w = random_tensor<double>({192, 64, 1, 1}, rng);
    CHECK(csp_transform(fd, w, 3).shape() == Shape{6, 64, 8, 4});
    auto zero = csp_transform(fd, Tensor<double>({192, 64, 1, 1}), 3);
    for (double v : zero.values()) CHECK(v == 0.0);
    auto fc = random_tensor<double>({6, 64, 8, 4}, rng);
    CHECK(add(fc, zero).values() == fc.values());
    CHECK_THROWS_AS(csp_transform(fd, random_tensor<double>({192, 32, 1, 1}, rng), 3), ConfigError);
    CHECK_THROWS_AS(csp_transform(fd, w, 2), ConfigError);

    SUBCASE("gradient check through transform and fusion") {
        auto d = random_tensor<double>({2, 3, 4, 2}, rng);
        auto c = random_tensor<double>({4, 3, 2, 1}, rng);
        auto wc = random_tensor<double>({6, 3, 1, 1}, rng);
        auto r = grad_check(
            [](const std::vector<Tensor<double>>& p) {
                return weighted_sum(add(p[1], csp_transform(p[0], p[2], 2)), 4);
            },
            {d, c, wc});
        CHECK(r.max_relative_error < 1e-4);
    }
}

TEST_CASE("channel group j of frame m lands on frame m*alpha + j") {
    Rng rng(43);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t m = 1 + rng.below(3), alpha = 1 + rng.below(3), c = 1 + rng.below(4);
        auto fd = random_tensor<double>({m, c, 4, 2}, rng);
        auto w = random_tensor<double>({alpha * c, c, 1, 1}, rng);
        auto out = csp_transform(fd, w, alpha);
        auto projected = conv2d(max_pool2d(fd, 2, 2), w); // [m, alpha*c, 2, 1]
        for (std::size_t f = 0; f < m; ++f)
            for (std::size_t j = 0; j < alpha; ++j)
                for (std::size_t ch = 0; ch < c; ++ch)
                    for (std::size_t y = 0; y < 2; ++y)
                        CHECK(out.at({f * alpha + j, ch, y, 0}) == projected.at({f, j * c + ch, y, 0}));
        // inverse reshape recovers the projection
        CHECK(reshape(out, projected.shape()).values() == projected.values());
    }
}

TEST_CASE("aggregate_branches examples") {
    Rng rng(44);
    auto v = random_tensor<double>({1, 5}, rng);
    CHECK(aggregate_branches(v, v).values() == v.values());
    auto half = aggregate_branches(Tensor<double>({1, 5}), v);
    for (std::size_t i = 0; i < 5; ++i) CHECK(half.values()[i] == v.values()[i] / 2);
    auto a = random_tensor<double>({2, 5}, rng), b = random_tensor<double>({2, 5}, rng);
    auto m = aggregate_branches(a, b);
    for (std::size_t i = 0; i < 10; ++i) CHECK(std::abs(m.values()[i] - (a.values()[i] + b.values()[i]) / 2) < 1e-15);
    CHECK_THROWS_AS(aggregate_branches(a, random_tensor<double>({2, 4}, rng)), ConfigError);
}

TEST_CASE("bicnet forward on the mini configuration") {
    Rng rng(45);
    SUBCASE("output length equals the stage 4 width") {
        BiCnetModel<float> model(mini(8, 3), 7);
        model.set_training(false);
        auto out = model.forward(random_tensor<float>({2, 8, 3, 64, 32}, rng));
        CHECK(out.detail.shape() == Shape{2, 128});
        CHECK(out.context.shape() == Shape{2, 128});
        CHECK(out.video.shape() == Shape{2, 128});
        REQUIRE(out.attention_maps.size() == 2);
        CHECK(out.attention_maps[0].shape() == Shape{2, 2, 4, 2});
        CHECK(out.attention_maps[1].shape() == Shape{2, 6, 2, 1});
        CHECK(out.gates.size() == 2);
        const double div = out.divergence.item();
        CHECK(div <= 0.0);
        CHECK(div >= -1.0);
    }
    SUBCASE("two identical big frames give the per-frame vector") {
        auto cfg = mini(4, 1);
        cfg.dao.enabled = false;
        cfg.tks.enabled = false;
        BiCnetModel<double> model(cfg, 8);
        model.set_training(false);
        auto frame = random_tensor<double>({1, 3, 64, 32}, rng);
        auto rest = random_tensor<double>({2, 3, 64, 32}, rng);
        auto seg = concat(std::vector{frame, frame, rest}, 0);
        auto out = model.forward(seg);
        auto split = split_segment(seg, 1);
        // per-frame pooled stage-4 vectors of the detail branch
        auto pooled = global_avg_pool(out.stage_features.back());
        const std::size_t c = pooled.dim(1);
        for (std::size_t i = 0; i < c; ++i) {
            CHECK(pooled.at({0, i}) == pooled.at({1, i}));
            CHECK(std::abs(out.detail.at({0, i}) - pooled.at({0, i})) < 1e-12);
        }
    }
    SUBCASE("zero CSP weights reduce to two independent branches") {
        auto cfg = mini(8, 3);
        BiCnetModel<float> fused(cfg, 9);
        for (auto w : fused.csp_weights())
            for (auto& v : w.data()) v = 0.0f;
        auto plain_cfg = cfg;
        plain_cfg.csp_stages.clear();
        BiCnetModel<float> plain(plain_cfg, 9);
        // same seed, but CSP weights consume random draws, so copy the shared tensors
        for (const auto& p : plain.store().entries()) {
            Tensor<float> dst = p.tensor;
            const auto& src = fused.store().at(p.name).tensor.values();
            std::copy(src.begin(), src.end(), dst.data().begin());
        }
        fused.set_training(false);
        plain.set_training(false);
        auto x = random_tensor<float>({2, 8, 3, 64, 32}, rng);
        auto a = fused.forward(x), b = plain.forward(x);
        CHECK(a.detail.values() == b.detail.values());
        CHECK(a.context.values() == b.context.values());
        CHECK(a.video.values() == b.video.values());
    }
    SUBCASE("a shared frame permutation does not matter without DAO and TKS") {
        auto cfg = mini(8, 1);
        cfg.dao.enabled = false;
        cfg.tks.enabled = false;
        BiCnetModel<double> model(cfg, 10);
        model.set_training(false);
        auto x = random_tensor<double>({8, 3, 64, 32}, rng);
        std::vector<Tensor<double>> frames;
        for (std::size_t i = 0; i < 8; ++i) frames.push_back(slice(x, 0, i, i + 1));
        std::vector<Tensor<double>> permuted{frames[2], frames[0], frames[3], frames[1],
                                             frames[6], frames[4], frames[7], frames[5]};
        auto a = model.forward(x), b = model.forward(concat(permuted, 0));
        CHECK(max_abs_diff(a.detail.values(), b.detail.values()) < 1e-12);
        CHECK(max_abs_diff(a.context.values(), b.context.values()) < 1e-12);
    }
    SUBCASE("single-branch model") {
        BiCnetModel<float> model(mini(8, 0), 11);
        model.set_training(false);
        auto out = model.forward(random_tensor<float>({1, 8, 3, 64, 32}, rng));
        CHECK(out.video.values() == out.detail.values());
        CHECK(out.context.numel() == 0);
        CHECK(model.csp_weights()[0].numel() == 0);
    }
    SUBCASE("mismatched segments") {
        BiCnetModel<float> model(mini(8, 3), 12);
        CHECK_THROWS_AS(model.forward(random_tensor<float>({1, 4, 3, 64, 32}, rng)), InputError);
        CHECK_THROWS_AS(model.forward(random_tensor<float>({1, 8, 3, 32, 32}, rng)), InputError);
    }
}

TEST_CASE("end-to-end gradient check on the mini configuration, N=4, alpha=1") {
    BiCnetModel<double> model(mini(4, 1), 13);
    model.set_training(false);
    Rng rng(46);
    auto seg = random_tensor<double>({1, 4, 3, 64, 32}, rng);
    std::vector<Tensor<double>> points{seg};
    for (auto t : model.store().trainable()) points.push_back(t);
    auto r = grad_check(
        [&](const std::vector<Tensor<double>>& p) {
            auto out = model.forward(p[0]);
            return add(weighted_sum(out.video, 6), out.divergence);
        },
        points, 1e-5, 4, 99);
    CAPTURE(r.worst_input);
    CAPTURE(r.worst_analytic);
    CAPTURE(r.worst_numeric);
    CHECK(r.coordinates >= 4 * points.size() - 10);
    CHECK(r.max_relative_error < 1e-4);
}

TEST_CASE("checkpoint round trip") {
    auto dir = std::filesystem::temp_directory_path() / "btks_ckpt_test";
    std::filesystem::remove_all(dir);
    BiCnetModel<float> a(mini(8, 3), 14, 5);
    save_checkpoint(dir, a);
    CHECK(std::filesystem::exists(dir / "manifest.json"));
    auto [cfg, classes] = read_checkpoint_config(dir);
    CHECK(classes == 5);
    CHECK(to_json(cfg) == to_json(a.config()));
    BiCnetModel<float> b(cfg, 15, classes);
    load_checkpoint(dir, b);
    for (const auto& p : a.store().entries()) CHECK(b.store().tensor(p.name).values() == p.tensor.values());

    BiCnetModel<float> other(mini(4, 1), 16, 5);
    CHECK_THROWS_AS(load_checkpoint(dir, other), InputError);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing", b), InputError);
    std::filesystem::remove_all(dir);
}
