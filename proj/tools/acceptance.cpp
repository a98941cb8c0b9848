// Runs acceptance criteria 1-9 and prints one PASS/FAIL line per criterion.
// Exit status is 0 only when every selected criterion passes.

#include "btks/analysis.hpp"
#include "btks/cli.hpp"
#include "btks/dao.hpp"
#include "btks/errors.hpp"
#include "btks/gradsuite.hpp"
#include "btks/ops.hpp"
#include "btks/random.hpp"
#include "btks/tks.hpp"
#include "btks/traineval.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>

using namespace btks;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool passed = true;
    std::string detail;
};

double rel(double x, double target) { return std::abs(x - target) / std::abs(target); }

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

Tensor<double> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.normal() * scale;
    return Tensor<double>(std::move(shape), std::move(v));
}

Outcome cost_fraction_check() {
    Outcome o;
    o.passed = cost_fraction(3) == 0.4375;
    double worst = 0;
    for (std::size_t a = 0; a <= 10; ++a) {
        const double expect = 1.0 - (0.75 - 3.0 / (4.0 * double(a) + 4.0));
        worst = std::max(worst, std::abs(cost_fraction(a) - expect));
    }
    o.passed = o.passed && worst <= 4 * std::numeric_limits<double>::epsilon();
    o.detail = "cost_fraction(3) = " + fmt("%.17g", cost_fraction(3)) + ", max deviation over alpha 0..10 = " +
               fmt("%.3g", worst);
    return o;
}

Outcome flops_check() {
    const auto cfg = resnet50_preset();
    const double big = count_flops(cfg, {256, 128}).gflops();
    const double small = count_flops(cfg, {128, 64}).gflops();
    auto two_branch = cfg;
    two_branch.tks.enabled = false;
    const double a1 = avg_flops_per_frame(two_branch, 1).backbone * 1e-9;
    const double a3 = avg_flops_per_frame(two_branch, 3).backbone * 1e-9;
    Outcome o;
    o.passed = rel(big, 4.08) < 0.10 && rel(small, 1.02) < 0.10 && rel(a1, 2.55) < 0.10 && rel(a3, 1.81) < 0.10;
    o.detail = "256x128 " + fmt("%.3f", big) + " GFLOPs, 128x64 " + fmt("%.3f", small) + ", alpha=1 avg " +
               fmt("%.3f", a1) + ", alpha=3 avg " + fmt("%.3f", a3);
    return o;
}

Outcome params_check() {
    const double backbone = double(count_flops(resnet50_preset(), {256, 128}).total_params);
    auto cfg = resnet50_preset();
    cfg.tks.enabled = false;
    const double bicnet = double(count_params(cfg).total_params);
    Outcome o;
    o.passed = rel(backbone, 23.5e6) < 0.01 && rel(bicnet, 27.6e6) < 0.03;
    o.detail = "backbone " + fmt("%.3f", backbone * 1e-6) + "M, BiCnet (CSP 1-3, alpha=3, DAO) " +
               fmt("%.3f", bicnet * 1e-6) + "M";
    return o;
}

Outcome gradient_check(std::size_t seeds) {
    Outcome o;
    std::ostringstream d;
    for (const auto& name : gradcheck_blocks()) {
        const auto r = run_gradcheck_block(name, seeds, 0);
        o.passed = o.passed && r.passed;
        d << name << " " << fmt("%.2e", r.max_relative_error);
        if (r.kinks) d << " (" << r.kinks << " kink probes skipped)";
        d << "; ";
    }
    o.detail = d.str() + std::to_string(seeds) + " seeds each";
    return o;
}

Outcome tks_check() {
    Rng rng(5);
    Outcome o;
    double worst_sum = 0;
    bool bitwise = true, shapes = true;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t gh = 1 + rng.below(3), gw = 1 + rng.below(2);
        const std::size_t h = gh * (1 + rng.below(3)), w = gw * (1 + rng.below(3));
        const std::size_t c = 1 + rng.below(6), t = 1 + rng.below(5), clips = 1 + rng.below(3), k = 1 + rng.below(3);
        auto f = random_tensor({clips * t, c, h, w}, rng);
        TksParams<double> p;
        for (std::size_t i = 0; i < k; ++i) {
            p.path_weights.push_back(random_tensor({c, c, 3}, rng, 0.5));
            p.select_weights.push_back(random_tensor({c, c}, rng, 0.5));
        }
        const auto out = tks_forward(f, t, gh, gw, p);
        shapes = shapes && out.features.shape() == f.shape();
        for (std::size_t s = 0; s < clips; ++s)
            for (std::size_t ch = 0; ch < c; ++ch) {
                double total = 0;
                for (std::size_t i = 0; i < k; ++i) total += out.gates.at({s, i, ch});
                worst_sum = std::max(worst_sum, std::abs(total - 1.0));
            }
        // equal selection weights force uniform gates
        auto uniform = p;
        for (auto& sw : uniform.select_weights) sw = p.select_weights[0];
        bitwise = bitwise &&
                  tks_forward(f, t, gh, gw, uniform).features.values() == tks_forward(f, t, gh, gw, p, true).features.values();
    }
    o.passed = worst_sum <= 1e-6 && bitwise && shapes;
    o.detail = "max |sum of gates - 1| = " + fmt("%.2e", worst_sum) + ", uniform gates match fixed fusion bitwise: " +
               (bitwise ? "yes" : "no") + ", shapes preserved over 200 random configs: " + (shapes ? "yes" : "no");
    return o;
}

// Weighted double sum written out directly.
double divergence_oracle(const std::vector<std::vector<double>>& maps) {
    auto cosine = [](const std::vector<double>& a, const std::vector<double>& b) {
        double ab = 0, aa = 0, bb = 0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            ab += a[i] * b[i];
            aa += a[i] * a[i];
            bb += b[i] * b[i];
        }
        return ab / std::sqrt(aa * bb);
    };
    const std::size_t m = maps.size();
    double total = 0;
    for (std::size_t k = 1; k < m; ++k) {
        double inner = 0;
        for (std::size_t l = 0; l < k; ++l) inner += 1.0 - cosine(maps[k], maps[l]);
        total += inner / double(k);
    }
    return -total / double(m - 1);
}

Tensor<double> maps_tensor(const std::vector<std::vector<double>>& maps) {
    std::vector<double> v;
    for (const auto& m : maps) v.insert(v.end(), m.begin(), m.end());
    return Tensor<double>({1, maps.size(), 1, maps[0].size()}, v);
}

Outcome divergence_check() {
    Rng rng(6);
    std::vector<double> a(6);
    for (auto& x : a) x = rng.uniform(0.01, 1.0);
    const double same = divergence_loss(maps_tensor({a, a})).item();
    const double pair = divergence_loss(maps_tensor({{1, 0, 0, 0}, {0, 0, 1, 0}})).item();
    const std::vector<std::vector<double>> triple{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    const double three = divergence_loss(maps_tensor(triple)).item();
    const double three_direct = divergence_oracle(triple);
    double worst_identity = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t m = 2 + rng.below(6), hw = 1 + rng.below(12);
        std::vector<std::vector<double>> maps(m, std::vector<double>(hw));
        for (auto& map : maps)
            for (auto& v : map) v = rng.uniform(0.01, 1.0);
        const double l = divergence_loss(maps_tensor(maps)).item();
        double weighted = 0;
        for (std::size_t k = 1; k < m; ++k)
            for (std::size_t j = 0; j < k; ++j) {
                double ab = 0, aa = 0, bb = 0;
                for (std::size_t i = 0; i < hw; ++i) {
                    ab += maps[k][i] * maps[j][i];
                    aa += maps[k][i] * maps[k][i];
                    bb += maps[j][i] * maps[j][i];
                }
                weighted += ab / std::sqrt(aa * bb) / double((m - 1) * k);
            }
        worst_identity = std::max({worst_identity, std::abs(l + 1.0 - weighted), std::abs(l - divergence_oracle(maps))});
    }
    Outcome o;
    o.passed = std::abs(same) < 1e-12 && std::abs(pair + 1) < 1e-12 && std::abs(three + 1) < 1e-12 &&
               std::abs(three_direct + 1) < 1e-12 && worst_identity < 1e-10;
    o.detail = "identical " + fmt("%.2e", same) + ", orthogonal pair " + fmt("%.15g", pair) + ", orthogonal triple " +
               fmt("%.15g", three) + ", identity residual " + fmt("%.2e", worst_identity);
    return o;
}

struct TrainedRun {
    Evaluation eval;
    double seconds = 0;
};

TrainedRun train_and_evaluate(const Dataset& data, double lambda) {
    const auto start = std::chrono::steady_clock::now();
    BiCnetModel<float> model(mini_preset(), 1, data.identities_in(Split::train).size());
    TrainConfig tc;
    tc.lambda_div = lambda;
    train(model, data, tc);
    TrainedRun r;
    r.eval = evaluate(model, data, 200, 0);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
}

Outcome retrieval_check(const TrainedRun& run) {
    Outcome o;
    // AP = 0.5: wrong, right, wrong
    const auto example = evaluate_retrieval({{1, 0}}, {7}, {{1, 0.1f}, {1, 0.5f}, {0, 1}}, {3, 7, 4});
    bool monotone = true;
    Rng rng(8);
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
        try {
            const auto r = evaluate_retrieval(q, ql, g, gl);
            for (std::size_t k = 1; k < r.cmc.size(); ++k) monotone = monotone && r.cmc[k - 1] <= r.cmc[k];
        } catch (const InputError&) {
            // every query identity absent from the gallery
        }
    }
    const double map = run.eval.retrieval.mAP, base = run.eval.baseline.mean;
    o.passed = map >= 3 * base && example.mAP == 0.5 && monotone;
    o.detail = "mAP " + fmt("%.4f", map) + " vs random baseline " + fmt("%.4f", base) + " (" +
               fmt("%.2f", map / base) + "x), AP example " + fmt("%.3f", example.mAP) + ", CMC monotone: " +
               (monotone ? "yes" : "no") + ", " + fmt("%.0f", run.seconds) + " s training + eval";
    return o;
}

std::string read_bytes(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

// Relative path -> contents for every regular file under root.
std::map<std::string, std::string> snapshot(const fs::path& root) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = read_bytes(e.path());
    return files;
}

std::pair<int, std::string> cli(std::vector<std::string> args) {
    args.insert(args.begin(), "btks");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli_dispatch(int(argv.size()), argv.data(), out, err);
    return {code, out.str()};
}

Outcome determinism_check(const fs::path& work) {
    Outcome o;
    std::vector<std::string> failures;
    std::map<std::string, std::string> data[2];
    std::string train_log[2], ckpt_log[2], eval_log[2];
    std::map<std::string, std::string> ckpt[2];
    for (int rep = 0; rep < 2; ++rep) {
        const auto root = work / ("det_data_" + std::to_string(rep));
        const auto ck = work / ("det_ckpt_" + std::to_string(rep));
        fs::remove_all(root);
        fs::remove_all(ck);
        auto g = cli({"gen-data", "--ids", "20", "--seed", "3", "--out", root.string()});
        auto t = cli({"train", "--data", root.string(), "--out", ck.string(), "--epochs", "2", "--seed", "3"});
        auto e = cli({"eval", "--data", root.string(), "--checkpoint", ck.string(), "--seed", "3"});
        if (g.first || t.first || e.first) failures.push_back("nonzero exit");
        data[rep] = snapshot(root);
        ckpt[rep] = snapshot(ck);
        // the output paths differ between repetitions by construction
        auto strip = [&](std::string s, const fs::path& p) {
            for (auto pos = s.find(p.string()); pos != std::string::npos; pos = s.find(p.string()))
                s.replace(pos, p.string().size(), "<dir>");
            return s;
        };
        train_log[rep] = strip(strip(t.second, root), ck);
        eval_log[rep] = e.second;
    }
    if (data[0] != data[1]) failures.push_back("gen-data output differs");
    if (train_log[0] != train_log[1]) failures.push_back("train log differs");
    if (ckpt[0] != ckpt[1]) failures.push_back("checkpoint differs");
    if (eval_log[0] != eval_log[1]) failures.push_back("eval output differs");
    o.passed = failures.empty();
    std::string why;
    for (const auto& f : failures) why += f + "; ";
    o.detail = o.passed ? std::to_string(data[0].size()) + " dataset files, " + std::to_string(ckpt[0].size()) +
                              " checkpoint files, train and eval logs identical across reruns"
                        : why;
    return o;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria 1-9"};
    std::set<int> only;
    std::string work = (fs::temp_directory_path() / "btks_acceptance").string();
    std::size_t seeds = 20;
    app.add_option("--only", only, "Criteria to run (default: all)")->check(CLI::Range(1, 9));
    app.add_option("--workdir", work, "Scratch directory for datasets and checkpoints");
    app.add_option("--grad-seeds", seeds, "Random seeds per gradient block (criterion needs >= 20)");
    CLI11_PARSE(app, argc, argv);
    auto selected = [&](int c) { return only.empty() || only.count(c); };
    fs::create_directories(work);

    bool all = true;
    auto report = [&](int id, const char* name, double limit_s, const std::function<Outcome()>& fn) {
        if (!selected(id)) return;
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool in_time = s < limit_s;
        const bool ok = o.passed && in_time;
        all = all && ok;
        std::printf("criterion %d %s: %s | %s | %.1f s (limit %.0f s)%s\n", id, name, ok ? "PASS" : "FAIL",
                    o.detail.c_str(), s, limit_s, in_time ? "" : " over time");
        std::fflush(stdout);
    };

    report(1, "cost fraction", 1, cost_fraction_check);
    report(2, "FLOPs reproduction", 1, flops_check);
    report(3, "parameter reproduction", 1, params_check);
    report(4, "gradient suite", 300, [&] {
        auto o = gradient_check(seeds);
        if (seeds < 20) o = {false, o.detail + " (fewer than 20 seeds)"};
        return o;
    });
    report(5, "TKS invariants", 60, tks_check);
    report(6, "divergence-loss oracles", 1, divergence_check);

    std::optional<TrainedRun> with_div;
    auto dataset = [&]() {
        const auto root = fs::path(work) / "data20";
        if (!fs::exists(root / "index.json")) {
            GeneratorConfig g;
            g.num_ids = 20;
            generate_dataset(g, root);
        }
        return Dataset::load(root);
    };
    report(7, "DAO ablation", 900, [&] {
        const auto data = dataset();
        with_div = train_and_evaluate(data, 1.0);
        const auto without = train_and_evaluate(data, 0.0);
        const double a = with_div->eval.attention.mean, b = without.eval.attention.mean;
        return Outcome{a < 0.5 && b > 0.9, "held-out mean attention cosine " + fmt("%.4f", a) + " with lambda_div = 1, " +
                                               fmt("%.4f", b) + " with lambda_div = 0"};
    });
    report(8, "retrieval sanity", 900, [&] {
        if (!with_div) with_div = train_and_evaluate(dataset(), 1.0);
        return retrieval_check(*with_div);
    });
    report(9, "determinism", 300, [&] { return determinism_check(work); });
    return all ? 0 : 1;
}
