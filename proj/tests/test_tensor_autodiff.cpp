#include "doctest.h"

#include "btks/errors.hpp"
#include "btks/gemm.hpp"
#include "btks/gradcheck.hpp"
#include "btks/ops.hpp"
#include "btks/tensor_io.hpp"
#include "test_util.hpp"

#include <cmath>
#include <filesystem>
#include <sstream>
#include <tuple>

using namespace btks;
using btks::testing::random_tensor;
using btks::testing::weighted_sum;

namespace {

// Direct cross-correlation, no im2col.
std::vector<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, std::size_t stride, std::size_t pad) {
    const std::size_t b = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const std::size_t oh = (h + 2 * pad - kh) / stride + 1, ow = (wd + 2 * pad - kw) / stride + 1;
    std::vector<double> out(b * cout * oh * ow, 0.0);
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t o = 0; o < cout; ++o)
            for (std::size_t y = 0; y < oh; ++y)
                for (std::size_t xx = 0; xx < ow; ++xx) {
                    double acc = 0;
                    for (std::size_t c = 0; c < cin; ++c)
                        for (std::size_t i = 0; i < kh; ++i)
                            for (std::size_t j = 0; j < kw; ++j) {
                                long iy = long(y * stride + i) - long(pad), ix = long(xx * stride + j) - long(pad);
                                if (iy < 0 || ix < 0 || iy >= long(h) || ix >= long(wd)) continue;
                                acc += x.at({n, c, std::size_t(iy), std::size_t(ix)}) * w.at({o, c, i, j});
                            }
                    out[((n * cout + o) * oh + y) * ow + xx] = acc;
                }
    return out;
}

std::vector<double> naive_temporal(const Tensor<double>& x, const Tensor<double>& w, std::size_t dil) {
    const std::size_t t = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    std::vector<double> out(x.numel(), 0.0);
    for (std::size_t f = 0; f < t; ++f)
        for (std::size_t o = 0; o < c; ++o)
            for (int j = -1; j <= 1; ++j) {
                long src = long(f) + j * long(dil);
                if (src < 0 || src >= long(t)) continue;
                for (std::size_t i = 0; i < c; ++i)
                    for (std::size_t p = 0; p < hw; ++p)
                        out[(f * c + o) * hw + p] += w.at({o, i, std::size_t(j + 1)}) * x.values()[(src * c + i) * hw + p];
            }
    return out;
}

} // namespace

TEST_CASE("tensor data length matches shape") {
    Tensor<float> t({2, 3, 4});
    CHECK(t.numel() == 24);
    CHECK_THROWS_AS(Tensor<float>({2, 2}, std::vector<float>(3)), ConfigError);
}

TEST_CASE("conv2d examples") {
    Rng rng(1);
    auto x = random_tensor<double>({1, 2, 4, 4}, rng);
    SUBCASE("1x1 identity kernel returns the input") {
        Tensor<double> w({2, 2, 1, 1}, std::vector<double>{1, 0, 0, 1});
        CHECK(conv2d(x, w).values() == x.values());
    }
    SUBCASE("shape") {
        auto w = random_tensor<double>({3, 2, 1, 1}, rng);
        CHECK(conv2d(x, w).shape() == Shape{1, 3, 4, 4});
    }
    SUBCASE("matches direct cross-correlation") {
        for (auto [stride, pad] : {std::pair{1, 0}, {1, 1}, {2, 1}, {2, 3}}) {
            auto w = random_tensor<double>({3, 2, 3, 3}, rng);
            auto y = conv2d(x, w, stride, pad);
            CHECK(btks::testing::max_abs_diff(y.values(), naive_conv(x, w, stride, pad)) < 1e-12);
        }
    }
    SUBCASE("channel mismatch") {
        auto w = random_tensor<double>({3, 5, 1, 1}, rng);
        CHECK_THROWS_AS(conv2d(x, w), ConfigError);
    }
    SUBCASE("gradient of sum w.r.t. weight") {
        auto w = random_tensor<double>({3, 2, 3, 3}, rng);
        auto r = grad_check([&](const Tensor<double>& ww) { return sum(conv2d(x, ww, 1, 1)); }, w);
        CHECK(r.max_relative_error < 1e-4);
    }
}

TEST_CASE("temporal_conv1d examples") {
    Rng rng(2);
    SUBCASE("centre-tap identity") {
        auto x = random_tensor<double>({5, 3, 2, 2}, rng);
        Tensor<double> w({3, 3, 3});
        for (std::size_t c = 0; c < 3; ++c) w.data()[(c * 3 + c) * 3 + 1] = 1.0;
        for (std::size_t d : {1, 2, 3}) CHECK(temporal_conv1d(x, w, d).values() == x.values());
    }
    SUBCASE("single frame keeps only the centre tap") {
        auto x = random_tensor<double>({1, 3, 2, 2}, rng);
        auto w = random_tensor<double>({3, 3, 3}, rng);
        std::vector<double> centre(9);
        for (std::size_t i = 0; i < 9; ++i) centre[i] = w.values()[i * 3 + 1];
        auto mix = conv2d(x, Tensor<double>({3, 3, 1, 1}, centre));
        for (std::size_t d : {1, 2, 5})
            CHECK(btks::testing::max_abs_diff(temporal_conv1d(x, w, d).values(), mix.values()) < 1e-12);
    }
    SUBCASE("matches direct evaluation") {
        auto x = random_tensor<double>({6, 3, 2, 2}, rng);
        auto w = random_tensor<double>({3, 3, 3}, rng);
        for (std::size_t d : {1, 2, 4})
            CHECK(btks::testing::max_abs_diff(temporal_conv1d(x, w, d).values(), naive_temporal(x, w, d)) < 1e-12);
    }
    SUBCASE("clips are padded independently") {
        auto a = random_tensor<double>({3, 2, 1, 2}, rng), b = random_tensor<double>({3, 2, 1, 2}, rng);
        auto w = random_tensor<double>({2, 2, 3}, rng);
        auto both = temporal_conv1d(concat(std::vector{a, b}, 0), w, 1, 3);
        auto first = temporal_conv1d(a, w, 1), second = temporal_conv1d(b, w, 1);
        auto expected = first.values();
        expected.insert(expected.end(), second.values().begin(), second.values().end());
        CHECK(btks::testing::max_abs_diff(both.values(), expected) < 1e-12);
    }
    SUBCASE("gradient check on [4,3,2,2]") {
        auto x = random_tensor<double>({4, 3, 2, 2}, rng);
        auto w = random_tensor<double>({3, 3, 3}, rng);
        auto r = grad_check(
            [](const std::vector<Tensor<double>>& p) { return weighted_sum(temporal_conv1d(p[0], p[1], 2), 9); },
            {x, w});
        CHECK(r.max_relative_error < 1e-4);
    }
}

TEST_CASE("softmax examples") {
    auto two = softmax(Tensor<double>({2}, std::vector<double>{0, 0}), 0);
    CHECK(two.values()[0] == doctest::Approx(0.5));
    CHECK(two.values()[1] == doctest::Approx(0.5));

    auto four = softmax(Tensor<double>({4}, std::vector<double>{1, 0, 0, 0}), 0);
    const double denom = std::exp(1.0) + 3.0;
    CHECK(std::abs(four.values()[0] - std::exp(1.0) / denom) < 1e-12);
    CHECK(std::abs(four.values()[0] - 0.4754) < 1e-4);
    for (int i = 1; i < 4; ++i) CHECK(std::abs(four.values()[i] - 0.1749) < 1e-4);

    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        auto x = random_tensor<double>({3, 5}, rng, 4.0);
        auto shifted = add_scalar(x, rng.uniform(-50, 50));
        for (std::size_t axis : {0, 1}) {
            auto s = softmax(x, axis);
            CHECK(btks::testing::max_abs_diff(s.values(), softmax(shifted, axis).values()) < 1e-12);
            auto totals = sum_axes(s, {axis});
            for (double v : totals.values()) CHECK(std::abs(v - 1.0) < 1e-6);
            for (double v : s.values()) CHECK(v > 0.0);
        }
    }
    // large logits stay finite
    auto big = softmax(Tensor<float>({2}, std::vector<float>{1000.f, 0.f}), 0);
    CHECK(big.values()[0] == doctest::Approx(1.0f));
}

TEST_CASE("core op examples") {
    Tensor<double> m({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
    CHECK(upsample_nearest(m, 2, 2).values() ==
          std::vector<double>{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4});
    CHECK(max_pool2d(m, 2, 2).values() == std::vector<double>{4});
    auto constant = Tensor<double>::full({2, 3, 4, 2}, 1.25);
    auto gap = global_avg_pool(constant);
    for (double v : gap.values()) CHECK(v == 1.25);
    auto regions = region_avg_pool(constant, 2, 1);
    for (double v : regions.values()) CHECK(v == 1.25);
    CHECK_THROWS_AS(region_avg_pool(constant, 3, 1), ConfigError);
    CHECK_THROWS_AS(add(Tensor<double>({2, 3}), Tensor<double>({3, 2})), ConfigError);
    CHECK_THROWS_AS(matmul(Tensor<double>({2, 3}), Tensor<double>({2, 3})), ConfigError);

    auto t = transpose(Tensor<double>({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6}), 0, 1);
    CHECK(t.shape() == Shape{3, 2});
    CHECK(t.values() == std::vector<double>{1, 4, 2, 5, 3, 6});
    CHECK(mean_axes(Tensor<double>({2, 2}, std::vector<double>{1, 2, 3, 4}), {0}).values() ==
          std::vector<double>{2, 3});
}

TEST_CASE("grad_check oracle") {
    Rng rng(4);
    SUBCASE("linear function is exact") {
        auto a = random_tensor<double>({6}, rng);
        auto x = random_tensor<double>({6}, rng);
        auto r = grad_check([&](const Tensor<double>& p) { return sum(mul(p, a)); }, x);
        CHECK(r.max_relative_error <= 1e-10);
        CHECK(r.coordinates == 6);
    }
    SUBCASE("softmax-dot composite") {
        auto a = random_tensor<double>({8}, rng);
        auto x = random_tensor<double>({8}, rng);
        auto r = grad_check([&](const Tensor<double>& p) { return sum(mul(softmax(p, 0), a)); }, x);
        CHECK(r.max_relative_error < 1e-6);
    }
    SUBCASE("non-finite value is reported") {
        auto x = Tensor<double>::full({2}, -1.0);
        CHECK_THROWS_AS(grad_check([](const Tensor<double>& p) { return sum(log(p)); }, x), VerificationError);
    }
    SUBCASE("a wrong gradient is detected") {
        auto x = random_tensor<double>({3}, rng);
        auto wrong = [](const Tensor<double>& p) {
            auto v = p.values();
            double s = 0;
            for (double e : v) s += e * e;
            return make_op_result<double>({}, {s}, {p}, [](TensorNode<double>& self) {
                auto& in = *self.parents[0];
                for (std::size_t i = 0; i < in.data.size(); ++i) in.grad_buffer()[i] += self.grad[0] * in.data[i];
            });
        };
        CHECK(grad_check(wrong, x).max_relative_error > 0.3);
    }
    SUBCASE("kinks: retried with a smaller step, skipped when unavoidable") {
        // 3e-6 sits inside the first step of 1e-5 but outside the second of 1e-6
        Tensor<double> near({2}, std::vector<double>{3e-6, -2.0});
        auto r = grad_check([](const Tensor<double>& p) { return sum(mul(relu(p), relu(p))); }, near);
        CHECK(r.kinks == 0);
        CHECK(r.coordinates == 2);
        CHECK(r.max_relative_error < 1e-6);

        Tensor<double> at({3}, std::vector<double>{0.0, 2.0, -1.0});
        auto s = grad_check([](const Tensor<double>& p) { return sum(relu(p)); }, at);
        CHECK(s.kinks == 1);
        CHECK(s.coordinates == 2);
        CHECK(s.max_relative_error < 1e-9);

        Tensor<double> pooled({1, 1, 2, 2}, std::vector<double>{1.0, 1.0 + 1e-7, 0.0, 0.5});
        auto m = grad_check([](const Tensor<double>& p) { return sum(max_pool2d(p, 2, 2)); }, pooled);
        CHECK(m.kinks == 2);
        CHECK(m.max_relative_error < 1e-9);
    }
}

TEST_CASE("BranchRecorder") {
    Tensor<double> a({3}, std::vector<double>{-1.0, 0.5, 2.0});
    Tensor<double> b({3}, std::vector<double>{-0.5, 0.1, 3.0});
    Tensor<double> c({3}, std::vector<double>{0.5, 0.1, 3.0});
    auto sig = [](const Tensor<double>& x) {
        BranchRecorder rec;
        relu(x);
        return rec.signature();
    };
    CHECK(sig(a) == sig(b));
    CHECK(sig(a) != sig(c));
    CHECK_FALSE(BranchRecorder::active());
    {
        BranchRecorder outer;
        const auto before = outer.signature();
        {
            BranchRecorder inner;
            clamp_min(a, 0.0);
            CHECK(inner.signature() != before);
        }
        CHECK(outer.signature() == before);
    }
}

TEST_CASE("every differentiable op passes the gradient check over 20 seeds") {
    using Fn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;
    struct Case {
        const char* name;
        std::vector<Shape> shapes;
        Fn fn;
        double input_offset = 0.0;
    };
    std::vector<Case> cases{
        {"add broadcast", {{2, 3}, {1, 3}}, [](auto& p) { return add(p[0], p[1]); }},
        {"sub", {{2, 3}, {2, 1}}, [](auto& p) { return sub(p[0], p[1]); }},
        {"mul broadcast", {{2, 3, 2}, {2, 1, 2}}, [](auto& p) { return mul(p[0], p[1]); }},
        {"div", {{3, 2}, {3, 2}}, [](auto& p) { return div(p[0], add_scalar(mul(p[1], p[1]), 1.0)); }},
        {"relu", {{4, 3}}, [](auto& p) { return relu(p[0]); }},
        {"exp log sqrt", {{5}}, [](auto& p) { return sqrt(log(add_scalar(exp(p[0]), 1.0))); }},
        {"clamp_min", {{6}}, [](auto& p) { return clamp_min(p[0], 0.1); }},
        {"mean_axes", {{2, 3, 4}}, [](auto& p) { return mean_axes(p[0], {0, 2}); }},
        {"sum_axes keepdims", {{2, 3, 4}}, [](auto& p) { return sum_axes(p[0], {1}, true); }},
        {"permute", {{2, 3, 4}}, [](auto& p) { return permute(p[0], {2, 0, 1}); }},
        {"slice concat stack", {{3, 4}}, [](auto& p) {
             auto a = slice(p[0], 1, 1, 3), b = slice(p[0], 1, 0, 2);
             return stack(std::vector{concat(std::vector{a, b}, 0), concat(std::vector{b, a}, 0)}, 0);
         }},
        {"gather_flat", {{3, 4}}, [](auto& p) { return gather_flat(p[0], {0, 5, 5, 11, 3}); }},
        {"matmul", {{3, 4}, {4, 2}}, [](auto& p) { return matmul(p[0], p[1]); }},
        {"bmm", {{2, 3, 4}, {2, 4, 2}}, [](auto& p) { return bmm(p[0], p[1]); }},
        {"linear", {{3, 4}, {5, 4}, {5}}, [](auto& p) { return linear(p[0], p[1], std::optional(p[2])); }},
        {"conv2d strided", {{2, 2, 5, 4}, {3, 2, 3, 3}}, [](auto& p) { return conv2d(p[0], p[1], 2, 1); }},
        {"conv2d 1x1", {{2, 3, 2, 2}, {4, 3, 1, 1}}, [](auto& p) { return conv2d(p[0], p[1]); }},
        {"temporal_conv1d", {{6, 2, 2, 1}, {2, 2, 3}}, [](auto& p) { return temporal_conv1d(p[0], p[1], 2, 3); }},
        {"max_pool2d", {{1, 2, 4, 4}}, [](auto& p) { return max_pool2d(p[0], 3, 2, 1); }},
        {"region_avg_pool", {{2, 2, 4, 2}}, [](auto& p) { return region_avg_pool(p[0], 2, 1); }},
        {"global_avg_pool", {{2, 3, 2, 2}}, [](auto& p) { return global_avg_pool(p[0]); }},
        {"upsample_nearest", {{1, 2, 2, 1}}, [](auto& p) { return upsample_nearest(p[0], 2, 3); }},
        {"softmax", {{3, 4}}, [](auto& p) { return softmax(p[0], 0); }},
        {"log_softmax", {{3, 4}}, [](auto& p) { return log_softmax(p[0], 1); }},
        {"l2_normalize", {{3, 4}}, [](auto& p) { return l2_normalize(p[0]); }},
        {"transpose reshape", {{2, 6}}, [](auto& p) { return reshape(transpose(p[0], 0, 1), {3, 4}); }},
        {"batch_norm training", {{4, 3, 2, 1}, {3}, {3}}, [](auto& p) {
             Tensor<double> rm({3}), rv = Tensor<double>::full({3}, 1.0);
             return batch_norm(p[0], p[1], p[2], rm, rv, true);
         }},
        {"batch_norm frozen", {{4, 3, 2, 1}, {3}, {3}}, [](auto& p) {
             Tensor<double> rm({3}, std::vector<double>{0.1, -0.2, 0.3});
             Tensor<double> rv({3}, std::vector<double>{0.5, 2.0, 1.5});
             return batch_norm(p[0], p[1], p[2], rm, rv, false);
         }},
        {"cross_entropy", {{4, 5}}, [](auto& p) { return cross_entropy(p[0], {0, 4, 2, 2}); }},
    };
    for (const auto& c : cases) {
        CAPTURE(c.name);
        double worst = 0;
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            Rng rng(100 + seed);
            std::vector<Tensor<double>> pts;
            for (const auto& s : c.shapes) pts.push_back(random_tensor<double>(s, rng));
            auto r = grad_check([&](const std::vector<Tensor<double>>& p) { return weighted_sum(c.fn(p), seed); },
                                pts);
            worst = std::max(worst, r.max_relative_error);
        }
        CHECK(worst < 1e-4);
    }
}

TEST_CASE("backward accumulates into leaves and resets interior gradients") {
    Tensor<double> x({2}, std::vector<double>{1.0, 2.0});
    x.set_requires_grad(true);
    auto y = sum(mul(x, x));
    y.backward();
    CHECK(x.grad()[0] == doctest::Approx(2.0));
    y.backward();
    CHECK(x.grad()[1] == doctest::Approx(8.0));
    x.zero_grad();
    {
        NoGradGuard guard;
        auto z = sum(mul(x, x));
        CHECK_FALSE(z.requires_grad());
    }
    CHECK_THROWS_AS(mul(x, x).backward(), UsageError);
}

TEST_CASE("shape-preserving ops keep arbitrary valid shapes") {
    Rng rng(5);
    for (int trial = 0; trial < 25; ++trial) {
        const std::size_t clips = 1 + rng.below(3), t = 1 + rng.below(5), c = 1 + rng.below(4);
        const std::size_t h = 1 + rng.below(4), w = 1 + rng.below(4);
        auto x = random_tensor<float>({clips * t, c, h, w}, rng);
        auto k = random_tensor<float>({c, c, 3}, rng);
        const std::size_t d = 1 + rng.below(3);
        CHECK(temporal_conv1d(x, k, d, t).shape() == x.shape());
        CHECK(add(x, x).shape() == x.shape());
    }
}

TEST_CASE("BTKS tensor files") {
    Tensor<float> t({2, 3}, std::vector<float>{1.5f, -2.f, 0.f, 3.25f, 1e-3f, 7.f});
    std::stringstream ss;
    write_tensor(ss, t);
    const std::string bytes = ss.str();
    REQUIRE(bytes.size() == 4 + 1 + 1 + 2 * 4 + 6 * 4);
    CHECK(bytes.substr(0, 4) == "BTKS");
    CHECK(bytes[4] == 1);
    CHECK(bytes[5] == 2);
    CHECK(static_cast<unsigned char>(bytes[6]) == 2);
    CHECK(static_cast<unsigned char>(bytes[10]) == 3);
    // 1.5f = 0x3FC00000, little endian
    CHECK(static_cast<unsigned char>(bytes[14]) == 0x00);
    CHECK(static_cast<unsigned char>(bytes[16]) == 0xC0);
    CHECK(static_cast<unsigned char>(bytes[17]) == 0x3F);

    auto back = read_tensor(ss);
    CHECK(back.shape() == t.shape());
    CHECK(back.values() == t.values());

    std::stringstream bad("BTKX\x01\x00");
    CHECK_THROWS_AS(read_tensor(bad), InputError);

    auto path = std::filesystem::temp_directory_path() / "btks_io_test.btks";
    save_tensor(path, t);
    CHECK(load_tensor(path).values() == t.values());
    std::filesystem::remove(path);
}

TEST_CASE("gemm agrees with a naive product for every transpose combination") {
    Rng rng(6);
    for (auto [m, n, k] : {std::tuple<std::size_t, std::size_t, std::size_t>{64, 288, 8}, {3, 5, 7}, {17, 1, 33},
                           {128, 576, 8}, {1, 1, 1}}) {
        for (bool ta : {false, true})
            for (bool tb : {false, true}) {
                auto a = random_tensor<double>({m * k}, rng), b = random_tensor<double>({k * n}, rng);
                auto c0 = random_tensor<double>({m * n}, rng);
                std::vector<double> c(c0.values());
                gemm<double>(ta, tb, m, n, k, 0.5, a.data().data(), b.data().data(), 2.0, c.data());
                double err = 0;
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                        double s = 0;
                        for (std::size_t p = 0; p < k; ++p)
                            s += a.values()[ta ? p * m + i : i * k + p] * b.values()[tb ? j * k + p : p * n + j];
                        err = std::max(err, std::abs(0.5 * s + 2.0 * c0.values()[i * n + j] - c[i * n + j]));
                    }
                CHECK(err < 1e-12);
            }
    }
}
