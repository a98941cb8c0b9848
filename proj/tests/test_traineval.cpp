#include "doctest.h"

#include "btks/errors.hpp"
#include "btks/gradcheck.hpp"
#include "btks/ops.hpp"
#include "btks/traineval.hpp"
#include "test_util.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

using namespace btks;
using btks::testing::random_tensor;
namespace fs = std::filesystem;

namespace {

// Expected AP of a uniformly random ranking with p positives among g items.
double random_ranking_ap(std::size_t p, std::size_t g) {
    double h = 0;
    for (std::size_t r = 1; r <= g; ++r) h += 1.0 / double(r);
    if (g == 1) return 1.0;
    return (h + double(p - 1) / double(g - 1) * (double(g) - h)) / double(g);
}

// max over every (positive, negative) pair per anchor, no mining shortcut
double triplet_oracle(const std::vector<std::vector<double>>& x, const std::vector<std::size_t>& labels, double margin) {
    auto unit = x;
    for (auto& v : unit) {
        double n = 0;
        for (double a : v) n += a * a;
        for (double& a : v) a /= std::sqrt(n);
    }
    auto d = [&](std::size_t i, std::size_t j) {
        double s = 0;
        for (std::size_t k = 0; k < unit[i].size(); ++k) s += (unit[i][k] - unit[j][k]) * (unit[i][k] - unit[j][k]);
        return std::sqrt(s);
    };
    double total = 0;
    for (std::size_t a = 0; a < x.size(); ++a) {
        double worst = 0;
        for (std::size_t p = 0; p < x.size(); ++p)
            for (std::size_t n = 0; n < x.size(); ++n)
                if (p != a && labels[p] == labels[a] && labels[n] != labels[a])
                    worst = std::max(worst, d(a, p) - d(a, n) + margin);
        total += worst;
    }
    return total / double(x.size());
}

Tensor<double> from_rows(const std::vector<std::vector<double>>& rows) {
    std::vector<double> v;
    for (const auto& r : rows) v.insert(v.end(), r.begin(), r.end());
    return Tensor<double>({rows.size(), rows[0].size()}, v);
}

ModelConfig tiny_model() {
    auto cfg = mini_preset();
    cfg.segment_len = 4;
    cfg.alpha = 1;
    return cfg;
}

} // namespace

TEST_CASE("learning-rate schedule") {
    TrainConfig cfg;
    CHECK(learning_rate(cfg, 0) == 3.5e-4);
    CHECK(learning_rate(cfg, 39) == 3.5e-4);
    CHECK(std::abs(learning_rate(cfg, 40) - 3.5e-5) < 1e-18);
    CHECK(std::abs(learning_rate(cfg, 85) - 3.5e-6) < 1e-18);
    CHECK(std::abs(learning_rate(cfg, 120) - 3.5e-7) < 1e-18);
    cfg.lr = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("Adam") {
    SUBCASE("zero gradient and no weight decay leave parameters unchanged") {
        Tensor<double> w({3}, std::vector<double>{1, -2, 3});
        w.set_requires_grad(true);
        w.zero_grad();
        Adam<double> opt({w}, {});
        for (int i = 0; i < 3; ++i) opt.step(0.1);
        CHECK(w.values() == std::vector<double>{1, -2, 3});
    }
    SUBCASE("two steps on x^2 from x = 1 match the update formulas") {
        Tensor<double> x({1}, std::vector<double>{1.0});
        x.set_requires_grad(true);
        Adam<double> opt({x}, {});
        const double lr = 3.5e-4;
        double m = 0, v = 0, ref = 1.0;
        for (int t = 1; t <= 2; ++t) {
            x.zero_grad();
            sum(mul(x, x)).backward();
            opt.step(lr);
            const double g = 2 * ref;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
            ref -= lr * mh / (std::sqrt(vh) + 1e-8);
            CHECK(std::abs(x.values()[0] - ref) < 1e-15);
        }
        // first step moves by almost exactly lr
        CHECK(std::abs((1.0 - 3.5e-4 * 2 / (2 + 1e-8)) - (1.0 - lr)) < 1e-11);
    }
    SUBCASE("weight decay enters the gradient") {
        Tensor<double> w({1}, std::vector<double>{2.0});
        w.set_requires_grad(true);
        w.zero_grad();
        AdamConfig cfg;
        cfg.weight_decay = 0.5;
        Adam<double> opt({w}, cfg);
        opt.step(0.01);
        CHECK(w.values()[0] < 2.0);
        CHECK(std::abs(w.values()[0] - (2.0 - 0.01)) < 1e-9);
    }
}

TEST_CASE("batch-hard triplet") {
    SUBCASE("hand-built 4-point set against brute force") {
        std::vector<std::vector<double>> x{{1, 0}, {0.8, 0.6}, {0.6, 0.8}, {0, 1}};
        std::vector<std::size_t> labels{0, 0, 1, 1};
        auto got = batch_hard_triplet(from_rows(x), labels, 0.3).item();
        CHECK(std::abs(got - triplet_oracle(x, labels, 0.3)) < 1e-12);
        CHECK(got > 0);
    }
    SUBCASE("random sets against brute force") {
        Rng rng(61);
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<std::vector<double>> x(8, std::vector<double>(5));
            for (auto& r : x)
                for (auto& v : r) v = rng.normal();
            std::vector<std::size_t> labels{0, 0, 1, 1, 2, 2, 3, 3};
            CHECK(std::abs(batch_hard_triplet(from_rows(x), labels, 0.3).item() - triplet_oracle(x, labels, 0.3)) <
                  1e-12);
        }
    }
    SUBCASE("zero exactly when every hardest positive wins by the margin") {
        std::vector<std::size_t> labels{0, 0, 1, 1};
        // well separated: positives coincide, negatives orthogonal (distance sqrt 2)
        std::vector<std::vector<double>> far{{1, 0}, {1, 0}, {0, 1}, {0, 1}};
        CHECK(batch_hard_triplet(from_rows(far), labels, 0.3).item() == 0.0);
        CHECK(batch_hard_triplet(from_rows(far), labels, 1.5).item() > 0.0);
        // margin exactly met: d(a,n) - d(a,p) = 0.3 for one anchor
        const double t = 2 * std::asin(0.15); // chord 0.3
        std::vector<std::vector<double>> edge{{1, 0}, {1, 0}, {std::cos(t), std::sin(t)}, {std::cos(t), std::sin(t)}};
        // distances carry a sqrt(1e-12) floor
        CHECK(batch_hard_triplet(from_rows(edge), labels, 0.3).item() < 2e-6);
        CHECK(batch_hard_triplet(from_rows(edge), labels, 0.31).item() > 0.0);
    }
    SUBCASE("gradient check") {
        Rng rng(62);
        for (int seed = 0; seed < 5; ++seed) {
            auto f = random_tensor<double>({6, 4}, rng);
            std::vector<std::size_t> labels{0, 0, 1, 1, 2, 2};
            auto r = grad_check([&](const std::vector<Tensor<double>>& p) { return batch_hard_triplet(p[0], labels, 1.0); },
                                {f});
            CHECK(r.max_relative_error < 1e-4);
        }
    }
    SUBCASE("anchor without a positive") {
        CHECK_THROWS_AS(batch_hard_triplet(Tensor<double>({3, 2}, std::vector<double>{1, 0, 0, 1, 1, 1}),
                                           {0, 0, 1}, 0.3),
                        InputError);
    }
}

TEST_CASE("total_loss") {
    TrainConfig cfg;
    std::vector<std::size_t> labels{0, 0, 1, 1};
    auto features = from_rows({{1, 0}, {1, 0}, {0, 1}, {0, 1}});
    auto logits = from_rows({{40, -40}, {40, -40}, {-40, 40}, {-40, 40}});
    SUBCASE("term-wise minima") {
        auto terms = total_loss(features, logits, labels, Tensor<double>::scalar(-1.0), cfg);
        CHECK(terms.ce < 1e-12);
        CHECK(terms.triplet == 0.0);
        CHECK(std::abs(terms.total.item() - (-1.0)) < 1e-12);
    }
    SUBCASE("lambda 0 drops the divergence term") {
        cfg.lambda_div = 0;
        Rng rng(63);
        auto f = random_tensor<double>({4, 3}, rng), l = random_tensor<double>({4, 2}, rng);
        auto terms = total_loss(f, l, labels, Tensor<double>::scalar(-0.7), cfg);
        CHECK(std::abs(terms.total.item() - (terms.ce + terms.triplet)) < 1e-12);
        CHECK(terms.divergence == -0.7);
    }
    SUBCASE("single identity") {
        CHECK_THROWS_AS(total_loss(features, logits, {0, 0, 0, 0}, Tensor<double>::scalar(0.0), cfg), InputError);
    }
}

TEST_CASE("evaluate_retrieval") {
    SUBCASE("gallery of exact copies") {
        std::vector<std::vector<float>> q{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
        auto r = evaluate_retrieval(q, {0, 1, 2}, q, {0, 1, 2});
        CHECK(r.mAP == 1.0);
        CHECK(r.cmc[0] == 1.0);
    }
    SUBCASE("wrong, right, wrong gives AP 0.5") {
        std::vector<std::vector<float>> q{{1, 0}};
        std::vector<std::vector<float>> g{{1, 0.1f}, {1, 0.5f}, {0, 1}};
        auto r = evaluate_retrieval(q, {7}, g, {3, 7, 4});
        CHECK(r.mAP == 0.5);
        CHECK(r.cmc == std::vector<double>{0, 1, 1});
    }
    SUBCASE("ties break by gallery index") {
        std::vector<std::vector<float>> q{{1, 0}};
        std::vector<std::vector<float>> g{{2, 0}, {1, 0}};
        CHECK(evaluate_retrieval(q, {1}, g, {2, 1}).mAP == 0.5);
        CHECK(evaluate_retrieval(q, {1}, g, {1, 2}).mAP == 1.0);
    }
    SUBCASE("query identity absent from the gallery is excluded") {
        std::vector<std::vector<float>> q{{1, 0}, {0, 1}};
        std::vector<std::vector<float>> g{{1, 0}};
        auto r = evaluate_retrieval(q, {0, 5}, g, {0});
        CHECK(r.excluded_queries == 1);
        CHECK(r.average_precision.size() == 1);
        CHECK(r.mAP == 1.0);
        CHECK_THROWS_AS(evaluate_retrieval(q, {0, 5}, {}, {}), InputError);
    }
    SUBCASE("CMC monotone, mAP bounded and scale invariant on random instances") {
        Rng rng(64);
        for (int trial = 0; trial < 100; ++trial) {
            const std::size_t nq = 1 + rng.below(6), ng = 2 + rng.below(20), ids = 1 + rng.below(5), dim = 1 + rng.below(6);
            std::vector<std::vector<float>> q(nq, std::vector<float>(dim)), g(ng, std::vector<float>(dim));
            std::vector<std::size_t> ql(nq), gl(ng);
            for (auto& r : q)
                for (auto& v : r) v = float(rng.normal());
            for (auto& r : g)
                for (auto& v : r) v = float(rng.normal());
            for (auto& l : ql) l = rng.below(ids);
            for (auto& l : gl) l = rng.below(ids);
            auto r = evaluate_retrieval(q, ql, g, gl);
            for (std::size_t k = 1; k < r.cmc.size(); ++k) CHECK(r.cmc[k - 1] <= r.cmc[k]);
            CHECK(r.mAP >= 0.0);
            CHECK(r.mAP <= 1.0);
            auto scale = [](std::vector<std::vector<float>> x) {
                for (auto& row : x)
                    for (auto& v : row) v *= 4.0f;
                return x;
            };
            auto s = evaluate_retrieval(scale(q), ql, scale(g), gl);
            CHECK(s.average_precision == r.average_precision);
            CHECK(s.cmc == r.cmc);
        }
    }
    SUBCASE("random features match the random-ranking expectation") {
        // 10 identities, 3 gallery items each, one query each
        std::vector<std::size_t> ql, gl;
        for (std::size_t id = 0; id < 10; ++id) {
            ql.push_back(id);
            for (int k = 0; k < 3; ++k) gl.push_back(id);
        }
        const auto est = random_feature_baseline(ql, gl, 32, 30, 65);
        const double expected = random_ranking_ap(3, 30);
        CAPTURE(est.mean);
        CAPTURE(expected);
        CHECK(std::abs(est.mean - expected) < 3 * est.stddev / std::sqrt(30.0));
        const auto more = random_feature_baseline(ql, gl, 32, 400, 66);
        CHECK(std::abs(more.mean - expected) < 3 * more.stddev / std::sqrt(400.0));
    }
}

TEST_CASE("extract_video_feature") {
    auto cfg = tiny_model();
    BiCnetModel<float> model(cfg, 3);
    model.set_training(false);
    Rng rng(67);
    auto clip = random_tensor<float>({4, 3, 64, 32}, rng);
    auto single = model.forward(reshape(clip, {1, 4, 3, 64, 32}));
    auto f = extract_video_feature(clip, model);
    CHECK(f.shape() == Shape{model.feature_dim()});
    auto diff = [](const Tensor<float>& a, const Tensor<float>& b) {
        double m = 0;
        for (std::size_t i = 0; i < a.values().size(); ++i) m = std::max(m, double(std::abs(a.values()[i] - b.values()[i])));
        return m;
    };
    double scale = 0;
    for (float v : f.values()) scale = std::max(scale, double(std::abs(v)));
    CHECK(diff(f, single.video) < 1e-6 * scale);
    auto twice = extract_video_feature(concat(std::vector<Tensor<float>>{clip, clip}, 0), model);
    CHECK(diff(twice, f) < 1e-5 * scale);
    auto nine = concat(std::vector<Tensor<float>>{clip, clip, slice(clip, 0, 0, 1)}, 0);
    CHECK(extract_video_feature(nine, model).values() == twice.values());
    CHECK_THROWS_AS(extract_video_feature(slice(clip, 0, 0, 3), model), InputError);
    model.set_training(true);
    CHECK_THROWS_AS(extract_video_feature(clip, model), UsageError);
}

TEST_CASE("one step on a fixed batch decreases the loss") {
    auto cfg = tiny_model();
    BiCnetModel<double> model(cfg, 5, 2);
    model.set_training(false);
    Rng rng(68);
    auto x = random_tensor<double>({4, 4, 3, 64, 32}, rng);
    std::vector<std::size_t> labels{0, 0, 1, 1};
    TrainConfig tc;
    auto loss = [&] {
        auto out = model.forward(x);
        return total_loss(out.video, model.classify(out.video), labels, out.divergence, tc).total;
    };
    Adam<double> opt(model.store().trainable(), {});
    model.store().zero_grad();
    auto before = loss();
    before.backward();
    opt.step(1e-6);
    NoGradGuard guard;
    CHECK(loss().item() < before.item());
}

TEST_CASE("training loop") {
    auto root = fs::temp_directory_path() / "btks_test_train";
    fs::remove_all(root);
    GeneratorConfig g;
    g.num_ids = 4;
    g.tracklet_len = 32;
    generate_dataset(g, root);
    auto data = Dataset::load(root);
    TrainConfig tc;
    tc.epochs = 2;
    tc.identities_per_batch = 2;
    tc.passes_per_epoch = 1;
    auto run = [&] {
        BiCnetModel<float> model(tiny_model(), 9, 2);
        std::vector<nlohmann::json> seen;
        auto logs = train(model, data, tc, [&](const EpochLog& l) { seen.push_back(to_json(l)); });
        CHECK(!model.training());
        CHECK(seen.size() == 2);
        return std::pair{logs, seen};
    };
    auto [a, ja] = run();
    auto [b, jb] = run();
    CHECK(ja == jb);
    for (const auto& l : a) {
        CHECK(l.steps == 1);
        CHECK(std::isfinite(l.loss));
        CHECK(l.lr == 3.5e-4);
        CHECK(l.attention_cosine_detail > 0.0);
        CHECK(l.attention_cosine_detail <= 1.0 + 1e-9);
    }
    BiCnetModel<float> wrong(tiny_model(), 9, 3);
    CHECK_THROWS_AS(train(wrong, data, tc), ConfigError);

    BiCnetModel<float> model(tiny_model(), 9, 2);
    model.set_training(false);
    auto e = evaluate(model, data, 20, 1);
    CHECK(e.retrieval.average_precision.size() == 2);
    CHECK(e.baseline.trials == 20);
    CHECK(e.attention.mean > 0.0);
    CHECK(to_json(e).contains("mAP"));
    fs::remove_all(root);
}
