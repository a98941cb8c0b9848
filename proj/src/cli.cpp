#include "btks/cli.hpp"

#include "btks/analysis.hpp"
#include "btks/bicnet.hpp"
#include "btks/errors.hpp"
#include "btks/gemm.hpp"
#include "btks/gradsuite.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <memory>
#include <ostream>
#include <thread>

namespace btks {

namespace fs = std::filesystem;

void RunConfig::validate() const {
    model.validate();
    generator.validate();
    train.validate();
}

nlohmann::json to_json(const RunConfig& cfg) {
    nlohmann::json data{{"root", cfg.data_root.string()}, {"generator", to_json(cfg.generator)}};
    return {{"seed", cfg.seed},
            {"model", to_json(cfg.model)},
            {"data", data},
            {"train", to_json(cfg.train)},
            {"checkpoint", cfg.checkpoint.string()}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("run config must be a JSON object");
    for (const auto& [key, value] : j.items())
        if (key != "seed" && key != "model" && key != "data" && key != "train" && key != "checkpoint")
            throw ConfigError("unknown run config section '" + key + "'");
    RunConfig cfg;
    try {
        cfg.seed = j.value("seed", cfg.seed);
        if (j.contains("model")) cfg.model = model_config_from_json(j.at("model"), mini_preset());
        if (j.contains("data")) {
            const auto& d = j.at("data");
            cfg.data_root = d.value("root", std::string{});
            if (d.contains("generator")) cfg.generator = generator_config_from_json(d.at("generator"));
        }
        if (j.contains("train")) cfg.train = train_config_from_json(j.at("train"));
        cfg.checkpoint = j.value("checkpoint", std::string{});
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("run config: ") + e.what());
    }
    cfg.generator.seed = cfg.seed;
    cfg.train.seed = cfg.seed;
    cfg.validate();
    return cfg;
}

Extent parse_extent(const std::string& text) {
    const auto x = text.find('x');
    auto number = [&](const std::string& s) -> std::size_t {
        if (s.empty() || !std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; }))
            throw ConfigError("resolution must look like 256x128, got '" + text + "'");
        return std::stoul(s);
    };
    if (x == std::string::npos) number("");
    Extent e{number(text.substr(0, x)), number(text.substr(x + 1))};
    if (e.height == 0 || e.width == 0) throw ConfigError("resolution must be positive, got '" + text + "'");
    return e;
}

namespace {

nlohmann::json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config file " + path.string() + ": " + e.what());
    }
}

std::unique_ptr<BiCnetModel<float>> load_model(const fs::path& dir) {
    auto [cfg, classes] = read_checkpoint_config(dir);
    auto model = std::make_unique<BiCnetModel<float>>(cfg, 0, classes);
    load_checkpoint(dir, *model);
    return model;
}

void write_pgm(const fs::path& path, const std::vector<float>& values, std::size_t h, std::size_t w) {
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    const double range = double(*hi) - double(*lo);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw InputError("cannot write " + path.string());
    f << "P5\n" << w << " " << h << "\n255\n";
    for (float v : values) {
        const double t = range > 0 ? (double(v) - double(*lo)) / range : 0.0;
        f.put(static_cast<char>(static_cast<unsigned char>(std::lround(t * 255.0))));
    }
}

struct Options {
    std::string config;
    bool print_config = false;
    std::uint64_t seed = 0;
    std::size_t threads = std::max(1u, std::thread::hardware_concurrency());

    std::size_t ids = 0, cams = 0, tracklets_per_cam = 0, length = 0;
    std::string data, out, checkpoint, preset, res;
    std::size_t epochs = 0, passes = 0;
    double lambda_div = 0;
    std::size_t trials = 200;
    bool table = false;
    bool all = false;
    std::vector<std::string> blocks;
    std::size_t seeds = 20;
    double tolerance = 1e-4;
    std::size_t tracklet = 0, segment = 0;
    bool tracklet_given = false;
};

int run_gen_data(const RunConfig& run, std::ostream& out) {
    if (run.data_root.empty()) throw ConfigError("gen-data needs --out (or data.root in the config)");
    generate_dataset(run.generator, run.data_root);
    auto data = Dataset::load(run.data_root);
    out << nlohmann::json{{"root", run.data_root.string()},
                          {"identities", data.identities().size()},
                          {"tracklets", data.tracklets().size()},
                          {"train", data.indices(Split::train).size()},
                          {"query", data.indices(Split::query).size()},
                          {"gallery", data.indices(Split::gallery).size()}}
               .dump()
        << "\n";
    return 0;
}

int run_train(const RunConfig& run, std::ostream& out, std::ostream& err) {
    if (run.data_root.empty()) throw ConfigError("train needs --data (or data.root in the config)");
    if (run.checkpoint.empty()) throw ConfigError("train needs --out (or checkpoint in the config)");
    auto data = Dataset::load(run.data_root);
    const auto classes = data.identities_in(Split::train).size();
    BiCnetModel<float> model(run.model, run.seed, classes);
    const auto start = std::chrono::steady_clock::now();
    train(model, data, run.train, [&](const EpochLog& log) {
        out << to_json(log).dump() << "\n" << std::flush;
        const double t = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        err << "epoch " << log.epoch << " loss " << log.loss << " (" << t << " s)\n";
    });
    save_checkpoint(run.checkpoint, model);
    out << nlohmann::json{{"checkpoint", run.checkpoint.string()},
                          {"epochs", run.train.epochs},
                          {"train_identities", classes},
                          {"parameters", model.store().trainable_count()}}
               .dump()
        << "\n";
    return 0;
}

int run_eval(const RunConfig& run, const Options& o, std::ostream& out) {
    if (run.data_root.empty()) throw ConfigError("eval needs --data (or data.root in the config)");
    if (run.checkpoint.empty()) throw ConfigError("eval needs --checkpoint (or checkpoint in the config)");
    auto data = Dataset::load(run.data_root);
    auto model = load_model(run.checkpoint);
    model->set_training(false);
    auto e = evaluate(*model, data, o.trials, run.seed);
    out << to_json(e).dump() << "\n";
    return 0;
}

int run_flops(const RunConfig& run, const Options& o, std::ostream& out) {
    const Extent res = o.res.empty() ? run.model.input : parse_extent(o.res);
    const auto report = count_flops(run.model, res);
    if (o.table)
        out << format_table(report);
    else
        out << to_json(report).dump(2) << "\n";
    return 0;
}

int run_params(const RunConfig& run, const Options& o, std::ostream& out) {
    const auto report = count_params(run.model);
    if (o.table)
        out << format_table(report);
    else
        out << to_json(report).dump(2) << "\n";
    return 0;
}

int run_gradcheck(const RunConfig& run, const Options& o, std::ostream& out, std::ostream& err) {
    if (o.all == !o.blocks.empty()) throw UsageError("gradcheck needs exactly one of --all or --block");
    if (o.seeds == 0) throw ConfigError("gradcheck needs --seeds >= 1");
    const auto names = o.all ? gradcheck_blocks() : o.blocks;
    const double tolerance = o.tolerance;
    nlohmann::json blocks = nlohmann::json::array();
    double worst = 0;
    bool passed = true;
    for (const auto& name : names) {
        auto r = run_gradcheck_block(name, o.seeds, run.seed, tolerance);
        err << name << ": max rel. err " << r.max_relative_error << " over " << r.seeds << " seeds (" << r.seconds
            << " s)\n";
        auto j = to_json(r);
        j.erase("seconds");
        blocks.push_back(j);
        worst = std::max(worst, r.max_relative_error);
        passed = passed && r.passed;
    }
    out << nlohmann::json{{"blocks", blocks}, {"max_relative_error", worst}, {"tolerance", tolerance}, {"passed", passed}}
               .dump(2)
        << "\n";
    return passed ? 0 : 3;
}

int run_attn_dump(const RunConfig& run, const Options& o, std::ostream& out) {
    if (run.data_root.empty()) throw ConfigError("attn-dump needs --data (or data.root in the config)");
    if (o.out.empty()) throw ConfigError("attn-dump needs --out");
    auto data = Dataset::load(run.data_root);
    auto model = run.checkpoint.empty() ? std::make_unique<BiCnetModel<float>>(run.model, run.seed)
                                        : load_model(run.checkpoint);
    if (!model->config().dao.enabled) throw ConfigError("attn-dump: the model has no attention maps");
    model->set_training(false);

    const auto queries = data.indices(Split::query);
    const std::size_t idx = o.tracklet_given ? o.tracklet : (queries.empty() ? 0 : queries.front());
    if (idx >= data.tracklets().size())
        throw InputError("tracklet " + std::to_string(idx) + " out of range (" +
                         std::to_string(data.tracklets().size()) + " tracklets)");
    auto result = forward_tracklet(*model, data.frames(idx));
    const std::size_t segments = result.attention_maps[0].dim(0);
    if (o.segment >= segments)
        throw InputError("segment " + std::to_string(o.segment) + " out of range (" + std::to_string(segments) +
                         " segments)");

    const fs::path dir = o.out;
    fs::create_directories(dir);
    std::ofstream csv(dir / "attention.csv");
    if (!csv) throw InputError("cannot write " + (dir / "attention.csv").string());
    csv << "frame_index,branch,h,w,value\n";
    static const char* branch_names[] = {"detail", "context"};
    nlohmann::json files = nlohmann::json::array();
    for (std::size_t b = 0; b < result.attention_maps.size(); ++b) {
        const auto& maps = result.attention_maps[b]; // [S, F, H, W]
        const std::size_t f = maps.dim(1), h = maps.dim(2), w = maps.dim(3);
        for (std::size_t k = 0; k < f; ++k) {
            const std::size_t base = (o.segment * f + k) * h * w;
            std::vector<float> map(maps.values().begin() + base, maps.values().begin() + base + h * w);
            char name[64];
            std::snprintf(name, sizeof name, "%s_frame%02zu.pgm", branch_names[b], k);
            write_pgm(dir / name, map, h, w);
            files.push_back(name);
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x) {
                    char line[96];
                    std::snprintf(line, sizeof line, "%zu,%s,%zu,%zu,%.9g\n", k, branch_names[b], y, x,
                                  double(map[y * w + x]));
                    csv << line;
                }
        }
    }
    out << nlohmann::json{{"tracklet", idx},
                          {"segment", o.segment},
                          {"segments", segments},
                          {"out", dir.string()},
                          {"csv", "attention.csv"},
                          {"maps", files}}
               .dump()
        << "\n";
    return 0;
}

} // namespace

int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    Options o;
    CLI::App app{"Two-branch video re-identification: data, training, evaluation and cost analysis", "btks"};
    app.fallthrough();
    app.require_subcommand(1, 1);
    app.add_option("--config", o.config, "JSON run config (sections seed, model, data, train, checkpoint)");
    app.add_flag("--print-config", o.print_config, "Print the effective run config and exit");
    auto* seed_opt = app.add_option("--seed", o.seed, "Master seed");
    app.add_option("--threads", o.threads, "Worker threads (default: available cores)");

    auto* gen = app.add_subcommand("gen-data", "Render the synthetic tracklet dataset");
    auto* ids_opt = gen->add_option("--ids", o.ids, "Identities");
    auto* cams_opt = gen->add_option("--cams", o.cams, "Cameras per identity");
    auto* tpc_opt = gen->add_option("--tracklets-per-cam", o.tracklets_per_cam, "Tracklets per camera");
    auto* len_opt = gen->add_option("--len", o.length, "Frames per tracklet");
    auto* gen_out = gen->add_option("--out", o.data, "Dataset root");

    auto* tr = app.add_subcommand("train", "Train a model on the train split and write a checkpoint");
    auto* tr_data = tr->add_option("--data", o.data, "Dataset root");
    auto* tr_out = tr->add_option("--out", o.checkpoint, "Checkpoint directory");
    auto* tr_preset = tr->add_option("--preset", o.preset, "mini or resnet50");
    auto* epochs_opt = tr->add_option("--epochs", o.epochs, "Epochs");
    auto* passes_opt = tr->add_option("--passes", o.passes, "Passes over the training identities per epoch");
    auto* lambda_opt = tr->add_option("--lambda-div", o.lambda_div, "Weight of the divergence loss");

    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on the query/gallery split");
    auto* ev_data = ev->add_option("--data", o.data, "Dataset root");
    auto* ev_ckpt = ev->add_option("--checkpoint", o.checkpoint, "Checkpoint directory");
    ev->add_option("--trials", o.trials, "Random-feature baseline draws");

    auto* fl = app.add_subcommand("flops", "Per-frame backbone cost report");
    auto* fl_preset = fl->add_option("--preset", o.preset, "mini or resnet50");
    fl->add_option("--res", o.res, "Input resolution HxW");
    fl->add_flag("--table", o.table, "Text table instead of JSON");

    auto* pa = app.add_subcommand("params", "Parameter and per-segment cost report of the full model");
    auto* pa_preset = pa->add_option("--preset", o.preset, "mini or resnet50");
    pa->add_flag("--table", o.table, "Text table instead of JSON");

    auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite at 64-bit");
    gc->add_flag("--all", o.all, "Every registered block");
    gc->add_option("--block", o.blocks, "Block name (repeatable)");
    gc->add_option("--seeds", o.seeds, "Random instances per block");
    gc->add_option("--tolerance", o.tolerance, "Maximum relative error");

    auto* ad = app.add_subcommand("attn-dump", "Write DAO attention maps as PGM images and CSV");
    auto* ad_data = ad->add_option("--data", o.data, "Dataset root");
    auto* ad_ckpt = ad->add_option("--checkpoint", o.checkpoint, "Checkpoint directory (random init if omitted)");
    auto* ad_preset = ad->add_option("--preset", o.preset, "Preset for a randomly initialised model");
    auto* tracklet_opt = ad->add_option("--tracklet", o.tracklet, "Tracklet index (default: first query)");
    ad->add_option("--segment", o.segment, "Segment index within the tracklet");
    ad->add_option("--out", o.out, "Output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        if (code == 0) return 0;
        err << app.help();
        return 1;
    }
    o.tracklet_given = tracklet_opt->count() > 0;

    try {
        RunConfig run = o.config.empty() ? RunConfig{} : run_config_from_json(read_json_file(o.config));
        if (seed_opt->count()) run.seed = o.seed;
        for (auto* p : {tr_preset, fl_preset, pa_preset, ad_preset})
            if (p->count()) run.model = model_preset(o.preset);
        if (ids_opt->count()) run.generator.num_ids = o.ids;
        if (cams_opt->count()) run.generator.cams_per_id = o.cams;
        if (tpc_opt->count()) run.generator.tracklets_per_camera = o.tracklets_per_cam;
        if (len_opt->count()) run.generator.tracklet_len = o.length;
        for (auto* p : {gen_out, tr_data, ev_data, ad_data})
            if (p->count()) run.data_root = o.data;
        for (auto* p : {tr_out, ev_ckpt, ad_ckpt})
            if (p->count()) run.checkpoint = o.checkpoint;
        if (epochs_opt->count()) run.train.epochs = o.epochs;
        if (passes_opt->count()) run.train.passes_per_epoch = o.passes;
        if (lambda_opt->count()) run.train.lambda_div = o.lambda_div;
        run.generator.seed = run.seed;
        run.train.seed = run.seed;
        run.validate();

        if (o.print_config) {
            out << to_json(run).dump(2) << "\n";
            return 0;
        }
        set_num_threads(o.threads);

        if (gen->parsed()) return run_gen_data(run, out);
        if (tr->parsed()) return run_train(run, out, err);
        if (ev->parsed()) return run_eval(run, o, out);
        if (fl->parsed()) return run_flops(run, o, out);
        if (pa->parsed()) return run_params(run, o, out);
        if (gc->parsed()) return run_gradcheck(run, o, out, err);
        if (ad->parsed()) return run_attn_dump(run, o, out);
        err << app.help();
        return 1;
    } catch (const ConfigError& e) {
        err << "configuration error: " << e.what() << "\n";
        return 1;
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const InputError& e) {
        err << "input error: " << e.what() << "\n";
        return 2;
    } catch (const fs::filesystem_error& e) {
        err << "input error: " << e.what() << "\n";
        return 2;
    } catch (const VerificationError& e) {
        err << "verification failure: " << e.what() << "\n";
        return 3;
    }
}

} // namespace btks
