#include "doctest.h"

#include "btks/cli.hpp"
#include "btks/errors.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace btks;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run cli(std::vector<std::string> args) {
    args.insert(args.begin(), "btks");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli_dispatch(int(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("btks_cli_" + name);
    fs::remove_all(p);
    return p;
}

void write_file(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

} // namespace

TEST_CASE("parse_extent") {
    CHECK(parse_extent("256x128") == Extent{256, 128});
    CHECK_THROWS_AS(parse_extent("256"), ConfigError);
    CHECK_THROWS_AS(parse_extent("0x4"), ConfigError);
    CHECK_THROWS_AS(parse_extent("ax4"), ConfigError);
}

TEST_CASE("flops and params") {
    auto r = cli({"flops", "--preset", "resnet50", "--res", "256x128"});
    REQUIRE(r.code == 0);
    const auto j = nlohmann::json::parse(r.out);
    CHECK(std::abs(j.at("gflops").get<double>() - 4.08) / 4.08 < 0.10);

    auto table = cli({"flops", "--preset", "resnet50", "--table"});
    CHECK(table.code == 0);
    CHECK(table.out.find("total") != std::string::npos);

    auto p = cli({"params", "--preset", "resnet50"});
    REQUIRE(p.code == 0);
    CHECK(nlohmann::json::parse(p.out).contains("total_params"));

    CHECK(cli({"flops", "--res", "12y"}).code == 1);
    CHECK(cli({"flops", "--preset", "vgg"}).code == 1);
}

TEST_CASE("usage errors exit 1 with usage text") {
    auto r = cli({"bogus"});
    CHECK(r.code == 1);
    CHECK(r.err.find("gen-data") != std::string::npos);
    CHECK(cli({}).code == 1);
    CHECK(cli({"gradcheck"}).code == 1);
    CHECK(cli({"gradcheck", "--block", "nonsense", "--seeds", "1"}).code == 1);
    CHECK(cli({"--help"}).code == 0);
}

TEST_CASE("config files") {
    const auto dir = scratch("config");
    fs::create_directories(dir);
    SUBCASE("invalid values and malformed files exit 1") {
        write_file(dir / "alpha.json", R"({"model": {"alpha": 2, "segment_len": 8}})");
        CHECK(cli({"--config", (dir / "alpha.json").string(), "params"}).code == 1);
        write_file(dir / "broken.json", "{ not json");
        CHECK(cli({"--config", (dir / "broken.json").string(), "params"}).code == 1);
        write_file(dir / "extra.json", R"({"optimizer": {}})");
        CHECK(cli({"--config", (dir / "extra.json").string(), "params"}).code == 1);
        CHECK(cli({"--config", (dir / "missing.json").string(), "params"}).code == 1);
    }
    SUBCASE("print-config round trip") {
        auto first = cli({"--print-config", "--seed", "5", "train", "--epochs", "3", "--lambda-div", "0.5", "--data",
                          "d", "--out", "c"});
        REQUIRE(first.code == 0);
        const auto j = nlohmann::json::parse(first.out);
        CHECK(j.at("seed") == 5);
        CHECK(j.at("train").at("epochs") == 3);
        CHECK(j.at("train").at("seed") == 5);
        write_file(dir / "run.json", first.out);
        auto second = cli({"--config", (dir / "run.json").string(), "--print-config", "train"});
        CHECK(second.code == 0);
        CHECK(second.out == first.out);
        CHECK(run_config_from_json(j).train.lambda_div == 0.5);
    }
    fs::remove_all(dir);
}

TEST_CASE("gradcheck subcommand") {
    auto ok = cli({"gradcheck", "--block", "softmax", "--block", "conv2d", "--seeds", "2"});
    CHECK(ok.code == 0);
    const auto j = nlohmann::json::parse(ok.out);
    CHECK(j.at("passed") == true);
    CHECK(j.at("blocks").size() == 2);
    CHECK(j.at("max_relative_error").get<double>() < 1e-4);
    CHECK(cli({"gradcheck", "--block", "softmax", "--seeds", "2", "--tolerance", "1e-30"}).code == 3);
    CHECK(cli({"gradcheck", "--block", "softmax", "--seeds", "2", "--seed", "4"}).out ==
          cli({"gradcheck", "--block", "softmax", "--seeds", "2", "--seed", "4"}).out);
}

TEST_CASE("data, training, evaluation and attention dump") {
    const auto data = scratch("data"), data2 = scratch("data2"), ckpt = scratch("ckpt"), maps = scratch("maps");
    auto gen = cli({"gen-data", "--ids", "8", "--len", "32", "--seed", "2", "--out", data.string()});
    REQUIRE(gen.code == 0);
    CHECK(nlohmann::json::parse(gen.out).at("tracklets") == 32);
    REQUIRE(cli({"gen-data", "--ids", "8", "--len", "32", "--seed", "2", "--out", data2.string()}).code == 0);
    CHECK(slurp(data / "index.json") == slurp(data2 / "index.json"));
    CHECK(slurp(data / "tracklets" / "0007_1_1" / "frame_0031.png") ==
          slurp(data2 / "tracklets" / "0007_1_1" / "frame_0031.png"));

    CHECK(cli({"eval", "--data", (data / "absent").string(), "--checkpoint", ckpt.string()}).code == 2);
    CHECK(cli({"train", "--data", data.string()}).code == 1);

    auto train = cli({"train", "--data", data.string(), "--out", ckpt.string(), "--epochs", "1", "--passes", "1"});
    REQUIRE(train.code == 0);
    std::istringstream lines(train.out);
    std::string line;
    std::vector<nlohmann::json> logs;
    while (std::getline(lines, line)) logs.push_back(nlohmann::json::parse(line));
    REQUIRE(logs.size() == 2);
    CHECK(logs[0].at("epoch") == 0);
    CHECK(logs[1].at("checkpoint") == ckpt.string());
    CHECK(fs::exists(ckpt / "manifest.json"));

    auto eval = cli({"eval", "--data", data.string(), "--checkpoint", ckpt.string(), "--trials", "10"});
    REQUIRE(eval.code == 0);
    const auto e = nlohmann::json::parse(eval.out);
    CHECK(e.at("mAP").get<double>() >= 0.0);
    CHECK(e.at("mAP").get<double>() <= 1.0);

    auto dump = cli({"attn-dump", "--data", data.string(), "--checkpoint", ckpt.string(), "--out", maps.string()});
    REQUIRE(dump.code == 0);
    const auto d = nlohmann::json::parse(dump.out);
    std::size_t pixels = 0;
    for (const auto& name : d.at("maps")) {
        const auto bytes = slurp(maps / name.get<std::string>());
        std::istringstream header(bytes);
        std::string magic;
        std::size_t w = 0, h = 0, maxval = 0;
        header >> magic >> w >> h >> maxval;
        CHECK(magic == "P5");
        CHECK(maxval == 255);
        const std::string body = bytes.substr(bytes.size() - w * h);
        CHECK(bytes.size() == std::to_string(w).size() + std::to_string(h).size() + 9 + w * h);
        const auto [lo, hi] = std::minmax_element(body.begin(), body.end(), [](char a, char b) {
            return static_cast<unsigned char>(a) < static_cast<unsigned char>(b);
        });
        CHECK(static_cast<unsigned char>(*lo) == 0);
        CHECK(static_cast<unsigned char>(*hi) == 255);
        pixels += w * h;
    }
    // mini preset: 2 detail frames and 6 context frames per segment
    CHECK(d.at("maps").size() == 8);
    std::istringstream csv(slurp(maps / "attention.csv"));
    std::getline(csv, line);
    CHECK(line == "frame_index,branch,h,w,value");
    std::size_t rows = 0;
    while (std::getline(csv, line)) ++rows;
    CHECK(rows == pixels);
    CHECK(cli({"attn-dump", "--data", data.string(), "--out", maps.string(), "--tracklet", "999"}).code == 2);

    for (const auto& p : {data, data2, ckpt, maps}) fs::remove_all(p);
}
