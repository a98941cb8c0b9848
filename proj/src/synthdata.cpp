#include "btks/synthdata.hpp"

#include "btks/errors.hpp"
#include "btks/ops.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>

namespace btks {

namespace fs = std::filesystem;

namespace {

std::uint64_t mix(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0,
                          std::uint64_t d = 0) {
    return mix(mix(mix(mix(mix(seed) ^ a) ^ b) ^ c) ^ d);
}

constexpr std::uint64_t kIdentityStream = 1, kCameraStream = 2, kTrackletStream = 3, kFrameStream = 4;

std::array<std::uint8_t, 3> random_color(Rng& rng) {
    std::array<std::uint8_t, 3> c{};
    for (auto& v : c) v = static_cast<std::uint8_t>(30 + rng.below(196));
    return c;
}

int color_distance(const std::array<std::uint8_t, 3>& a, const std::array<std::uint8_t, 3>& b) {
    int d = 0;
    for (int i = 0; i < 3; ++i) d += std::abs(int(a[i]) - int(b[i]));
    return d;
}

PartAppearance random_part(Rng& rng, bool textured) {
    PartAppearance p;
    p.color = random_color(rng);
    p.pattern = textured ? static_cast<Pattern>(rng.below(4)) : Pattern::solid;
    p.texture_seed = static_cast<std::uint32_t>(rng.below(1u << 16));
    return p;
}

struct Camera {
    std::array<double, 3> background;
    std::array<double, 3> gain;
    std::array<double, 3> occluder;
    double noise;
};

Camera make_camera(std::uint64_t seed, std::size_t cam) {
    Rng rng(stream_seed(seed, kCameraStream, cam));
    Camera c;
    for (int i = 0; i < 3; ++i) c.background[i] = rng.uniform(60, 190);
    for (int i = 0; i < 3; ++i) c.gain[i] = rng.uniform(0.85, 1.15);
    const double grey = rng.uniform(70, 150);
    for (int i = 0; i < 3; ++i) c.occluder[i] = grey + rng.uniform(-10, 10);
    c.noise = rng.uniform(4, 10);
    return c;
}

std::array<double, 3> part_color(const PartAppearance& part, std::ptrdiff_t y, std::ptrdiff_t x) {
    const std::ptrdiff_t period = 2 + part.texture_seed % 3, phase = (part.texture_seed / 3) % period;
    bool alt = false;
    switch (part.pattern) {
    case Pattern::solid: break;
    case Pattern::hstripes: alt = ((y + phase) / period) % 2 == 1; break;
    case Pattern::vstripes: alt = ((x + phase) / period) % 2 == 1; break;
    case Pattern::checker: alt = (((y + phase) / period) + ((x + phase) / period)) % 2 == 1; break;
    }
    const double scale = alt ? 0.55 : 1.0;
    return {part.color[0] * scale, part.color[1] * scale, part.color[2] * scale};
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

nlohmann::json to_json(const SyntheticIdentity& id) {
    static const char* names[] = {"head", "torso", "legs", "bag"};
    nlohmann::json parts = nlohmann::json::object();
    for (std::size_t i = 0; i < 4; ++i)
        parts[names[i]] = {{"color", id.parts[i].color},
                           {"pattern", int(id.parts[i].pattern)},
                           {"texture_seed", id.parts[i].texture_seed}};
    return {{"id", id.id},
            {"parts", parts},
            {"has_bag", id.has_bag},
            {"gait_amplitude", id.gait_amplitude},
            {"gait_frequency", id.gait_frequency},
            {"torso_twin", id.torso_twin}};
}

SyntheticIdentity identity_from_json(const nlohmann::json& j) {
    static const char* names[] = {"head", "torso", "legs", "bag"};
    SyntheticIdentity id;
    id.id = j.at("id").get<std::size_t>();
    for (std::size_t i = 0; i < 4; ++i) {
        const auto& p = j.at("parts").at(names[i]);
        id.parts[i].color = p.at("color").get<std::array<std::uint8_t, 3>>();
        id.parts[i].pattern = static_cast<Pattern>(p.at("pattern").get<int>());
        id.parts[i].texture_seed = p.at("texture_seed").get<std::uint32_t>();
    }
    id.has_bag = j.at("has_bag").get<bool>();
    id.gait_amplitude = j.at("gait_amplitude").get<double>();
    id.gait_frequency = j.at("gait_frequency").get<double>();
    id.torso_twin = j.at("torso_twin").get<std::ptrdiff_t>();
    return id;
}

Split split_from_name(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "query") return Split::query;
    if (s == "gallery") return Split::gallery;
    throw InputError("index.json: unknown split '" + s + "'");
}

std::string tracklet_dir(std::size_t id, std::size_t cam, std::size_t k) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "tracklets/%04zu_%zu_%zu", id, cam, k);
    return buf;
}

std::string frame_name(std::size_t t) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "frame_%04zu.png", t);
    return buf;
}

} // namespace

void write_png(const fs::path& path, const Image& image) {
    if (image.rgb.size() != image.height * image.width * 3) throw UsageError("write_png: pixel buffer size mismatch");
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw InputError("cannot open " + path.string() + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw InputError("failed to write " + path.string());
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, png_uint_32(image.width), png_uint_32(image.height), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t y = 0; y < image.height; ++y)
        png_write_row(png, const_cast<png_bytep>(image.rgb.data() + 3 * y * image.width));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    if (std::fclose(fp) != 0) throw InputError("failed to close " + path.string());
}

Image read_png(const fs::path& path) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str()))
        throw InputError("cannot read " + path.string() + ": " + img.message);
    img.format = PNG_FORMAT_RGB;
    Image out;
    out.height = img.height;
    out.width = img.width;
    out.rgb.resize(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, out.rgb.data(), 0, nullptr)) {
        png_image_free(&img);
        throw InputError("cannot decode " + path.string() + ": " + img.message);
    }
    return out;
}

std::string split_name(Split s) {
    switch (s) {
    case Split::train: return "train";
    case Split::query: return "query";
    case Split::gallery: return "gallery";
    }
    return "?";
}

void GeneratorConfig::validate() const {
    if (num_ids < 2) throw ConfigError("gen-data needs at least 2 identities, got " + std::to_string(num_ids));
    if (cams_per_id == 0 || tracklets_per_camera == 0)
        throw ConfigError("gen-data needs at least one camera and one tracklet per camera");
    if (cams_per_id * tracklets_per_camera < 2)
        throw ConfigError("each identity needs at least 2 tracklets so the gallery is not empty");
    if (tracklet_len == 0) throw ConfigError("tracklet length must be positive");
    if (resolution.height < 16 || resolution.width < 8)
        throw ConfigError("resolution " + std::to_string(resolution.height) + "x" +
                          std::to_string(resolution.width) + " is too small to draw a figure");
}

nlohmann::json to_json(const GeneratorConfig& cfg) {
    return {{"ids", cfg.num_ids},
            {"cams", cfg.cams_per_id},
            {"tracklets_per_camera", cfg.tracklets_per_camera},
            {"len", cfg.tracklet_len},
            {"height", cfg.resolution.height},
            {"width", cfg.resolution.width},
            {"seed", cfg.seed}};
}

GeneratorConfig generator_config_from_json(const nlohmann::json& j, const GeneratorConfig& base) {
    GeneratorConfig cfg = base;
    cfg.num_ids = j.value("ids", cfg.num_ids);
    cfg.cams_per_id = j.value("cams", cfg.cams_per_id);
    cfg.tracklets_per_camera = j.value("tracklets_per_camera", cfg.tracklets_per_camera);
    cfg.tracklet_len = j.value("len", cfg.tracklet_len);
    cfg.resolution.height = j.value("height", cfg.resolution.height);
    cfg.resolution.width = j.value("width", cfg.resolution.width);
    cfg.seed = j.value("seed", cfg.seed);
    return cfg;
}

std::vector<SyntheticIdentity> make_identities(std::size_t num_ids, std::uint64_t seed) {
    std::vector<SyntheticIdentity> ids;
    ids.reserve(num_ids);
    for (std::size_t i = 0; i < num_ids; ++i) {
        Rng rng(stream_seed(seed, kIdentityStream, i));
        SyntheticIdentity id;
        id.id = i;
        id.parts[std::size_t(Part::head)] = random_part(rng, false);
        id.parts[std::size_t(Part::torso)] = random_part(rng, true);
        id.parts[std::size_t(Part::legs)] = random_part(rng, true);
        id.parts[std::size_t(Part::bag)] = random_part(rng, false);
        id.has_bag = rng.bernoulli(0.5);
        id.gait_amplitude = rng.uniform(0.04, 0.12);
        id.gait_frequency = rng.uniform(0.08, 0.2);
        if (i % 4 == 1) {
            const auto& twin = ids[i - 1];
            id.torso_twin = std::ptrdiff_t(i - 1);
            id.parts[std::size_t(Part::torso)] = twin.parts[std::size_t(Part::torso)];
            for (Part p : {Part::head, Part::legs}) {
                auto& part = id.parts[std::size_t(p)];
                while (color_distance(part.color, twin.parts[std::size_t(p)].color) < 90) part.color = random_color(rng);
            }
        }
        ids.push_back(id);
    }
    return ids;
}

std::vector<TrackletInfo> plan_tracklets(const GeneratorConfig& cfg) {
    cfg.validate();
    const std::size_t train_ids = std::max<std::size_t>(1, cfg.num_ids / 2);
    std::vector<TrackletInfo> out;
    for (std::size_t id = 0; id < cfg.num_ids; ++id) {
        bool first = true;
        for (std::size_t cam = 0; cam < cfg.cams_per_id; ++cam)
            for (std::size_t k = 0; k < cfg.tracklets_per_camera; ++k) {
                TrackletInfo t;
                t.dir = tracklet_dir(id, cam, k);
                t.identity = id;
                t.camera = cam;
                t.index = k;
                t.length = cfg.tracklet_len;
                if (id < train_ids) t.split = Split::train;
                else t.split = first ? Split::query : Split::gallery;
                first = false;
                Rng rng(stream_seed(cfg.seed, kTrackletStream, id, cam, k));
                if (cfg.tracklet_len >= 16 && rng.bernoulli(0.4)) {
                    static const char* regions[] = {"upper", "lower", "left", "right"};
                    const std::size_t len = 4 + rng.below(std::min<std::size_t>(17, cfg.tracklet_len / 2));
                    const std::size_t start = rng.below(cfg.tracklet_len - len + 1);
                    t.occlusions.push_back({start, start + len, regions[rng.below(4)]});
                }
                out.push_back(std::move(t));
            }
    }
    return out;
}

std::vector<Image> render_tracklet(const GeneratorConfig& cfg, const SyntheticIdentity& identity,
                                   const TrackletInfo& tracklet) {
    const std::ptrdiff_t h = std::ptrdiff_t(cfg.resolution.height), w = std::ptrdiff_t(cfg.resolution.width);
    const Camera cam = make_camera(cfg.seed, tracklet.camera);
    Rng motion(stream_seed(cfg.seed, kTrackletStream, tracklet.identity, tracklet.camera, tracklet.index) ^ 0x5bd1e995);
    const double offset = motion.uniform(-0.08, 0.08) * double(w);
    const double drift = motion.uniform(-0.1, 0.1) * double(w);
    const double phase = motion.uniform(0, 2 * M_PI);
    const double lift = motion.uniform(-0.03, 0.03) * double(h);

    std::vector<Image> frames;
    frames.reserve(tracklet.length);
    for (std::size_t t = 0; t < tracklet.length; ++t) {
        Rng noise(stream_seed(cfg.seed, kFrameStream, tracklet.identity,
                              (tracklet.camera << 16) | tracklet.index, t));
        const double progress = tracklet.length > 1 ? double(t) / double(tracklet.length - 1) - 0.5 : 0.0;
        const double swing_phase = 2 * M_PI * identity.gait_frequency * double(t) + phase;
        const double cx = double(w) / 2 + offset + drift * progress;
        const double bob = identity.gait_amplitude * 0.25 * double(h) * std::abs(std::sin(swing_phase));
        const double top = lift - bob;
        const double swing = identity.gait_amplitude * double(w) * std::sin(swing_phase);

        const OcclusionSpan* occ = nullptr;
        for (const auto& o : tracklet.occlusions)
            if (t >= o.start && t < o.end) occ = &o;

        Image img{std::size_t(h), std::size_t(w), std::vector<std::uint8_t>(std::size_t(h * w * 3))};
        for (std::ptrdiff_t y = 0; y < h; ++y)
            for (std::ptrdiff_t x = 0; x < w; ++x) {
                const double fy = (double(y) + 0.5 - top) / double(h), fx = (double(x) + 0.5 - cx) / double(w);
                std::array<double, 3> c = cam.background;
                const PartAppearance* part = nullptr;
                std::ptrdiff_t py = 0, px = 0;
                if (fy >= 0.56 && fy < 0.96) {
                    const double u = (fy - 0.56) / 0.40;
                    const double left = fx + 0.1 - swing * u / double(w), right = fx - 0.1 + swing * u / double(w);
                    if (std::abs(left) < 0.08 || std::abs(right) < 0.08) {
                        part = &identity.parts[std::size_t(Part::legs)];
                        py = y - std::ptrdiff_t(top + 0.56 * double(h));
                        px = x;
                    }
                }
                if (fy >= 0.22 && fy < 0.56 && std::abs(fx) < 0.22) {
                    part = &identity.parts[std::size_t(Part::torso)];
                    py = y - std::ptrdiff_t(top + 0.22 * double(h));
                    px = x - std::ptrdiff_t(cx - 0.22 * double(w));
                }
                if (identity.has_bag && fy >= 0.30 && fy < 0.50 && fx >= 0.22 && fx < 0.36)
                    part = &identity.parts[std::size_t(Part::bag)];
                const double hy = (fy - 0.15) / 0.07, hx = fx / 0.12;
                if (hy * hy + hx * hx <= 1.0) part = &identity.parts[std::size_t(Part::head)];
                if (part) c = part_color(*part, py, px);
                for (int i = 0; i < 3; ++i) c[i] *= cam.gain[i];
                if (occ) {
                    const bool box = fy >= 0.04 && fy < 0.98 && std::abs(fx) < 0.38;
                    const bool hit = (occ->region == "upper" && fy < 0.5) || (occ->region == "lower" && fy >= 0.5) ||
                                     (occ->region == "left" && fx < 0) || (occ->region == "right" && fx >= 0);
                    if (box && hit) c = cam.occluder;
                }
                auto* p = img.pixel(std::size_t(y), std::size_t(x));
                for (int i = 0; i < 3; ++i) p[i] = to_byte(c[i] + noise.uniform(-cam.noise, cam.noise));
            }
        frames.push_back(std::move(img));
    }
    return frames;
}

void generate_dataset(const GeneratorConfig& cfg, const fs::path& root) {
    cfg.validate();
    const auto identities = make_identities(cfg.num_ids, cfg.seed);
    const auto plan = plan_tracklets(cfg);
    std::error_code ec;
    fs::create_directories(root / "tracklets", ec);
    if (ec) throw InputError("cannot create " + (root / "tracklets").string() + ": " + ec.message());

    std::array<double, 3> total{}, total_sq{};
    double count = 0;
    nlohmann::json tracklets = nlohmann::json::array();
    for (const auto& t : plan) {
        const auto frames = render_tracklet(cfg, identities[t.identity], t);
        fs::create_directories(root / t.dir, ec);
        if (ec) throw InputError("cannot create " + (root / t.dir).string() + ": " + ec.message());
        for (std::size_t i = 0; i < frames.size(); ++i) {
            write_png(root / t.dir / frame_name(i), frames[i]);
            for (std::size_t q = 0; q < frames[i].rgb.size(); ++q) {
                const double v = frames[i].rgb[q] / 255.0;
                total[q % 3] += v;
                total_sq[q % 3] += v * v;
            }
            count += double(frames[i].height * frames[i].width);
        }
        nlohmann::json occ = nlohmann::json::array();
        for (const auto& o : t.occlusions) occ.push_back({{"start", o.start}, {"end", o.end}, {"region", o.region}});
        tracklets.push_back({{"dir", t.dir},
                             {"identity", t.identity},
                             {"camera", t.camera},
                             {"index", t.index},
                             {"length", t.length},
                             {"split", split_name(t.split)},
                             {"occlusions", occ}});
    }
    std::array<double, 3> mean{}, stddev{};
    for (int i = 0; i < 3; ++i) {
        mean[i] = total[i] / count;
        stddev[i] = std::sqrt(std::max(total_sq[i] / count - mean[i] * mean[i], 1e-6));
    }
    nlohmann::json ids = nlohmann::json::array();
    for (const auto& id : identities) ids.push_back(to_json(id));
    const nlohmann::json index{{"format", "btks-synth-1"},
                               {"config", to_json(cfg)},
                               {"mean", mean},
                               {"std", stddev},
                               {"identities", ids},
                               {"tracklets", tracklets}};
    std::ofstream out(root / "index.json");
    out << index.dump(1) << '\n';
    if (!out) throw InputError("failed to write " + (root / "index.json").string());
}

Dataset Dataset::load(const fs::path& root) {
    std::ifstream in(root / "index.json");
    if (!in) throw InputError("no dataset index at " + (root / "index.json").string());
    nlohmann::json index;
    try {
        in >> index;
    } catch (const nlohmann::json::exception& e) {
        throw InputError("malformed " + (root / "index.json").string() + ": " + e.what());
    }
    Dataset ds;
    try {
        ds.config_ = generator_config_from_json(index.at("config"));
        for (int i = 0; i < 3; ++i) {
            ds.mean_[i] = index.at("mean").at(i).get<float>();
            ds.std_[i] = index.at("std").at(i).get<float>();
        }
        for (const auto& j : index.at("identities")) ds.identities_.push_back(identity_from_json(j));
        for (const auto& j : index.at("tracklets")) {
            TrackletInfo t;
            t.dir = j.at("dir").get<std::string>();
            t.identity = j.at("identity").get<std::size_t>();
            t.camera = j.at("camera").get<std::size_t>();
            t.index = j.at("index").get<std::size_t>();
            t.length = j.at("length").get<std::size_t>();
            t.split = split_from_name(j.at("split").get<std::string>());
            for (const auto& o : j.at("occlusions"))
                t.occlusions.push_back({o.at("start").get<std::size_t>(), o.at("end").get<std::size_t>(),
                                        o.at("region").get<std::string>()});
            ds.tracklets_.push_back(std::move(t));
        }
    } catch (const nlohmann::json::exception& e) {
        throw InputError("malformed " + (root / "index.json").string() + ": " + e.what());
    }
    const std::size_t h = ds.config_.resolution.height, w = ds.config_.resolution.width;
    for (const auto& t : ds.tracklets_) {
        std::vector<std::uint8_t> px(t.length * 3 * h * w);
        for (std::size_t f = 0; f < t.length; ++f) {
            const Image img = read_png(root / t.dir / frame_name(f));
            if (img.height != h || img.width != w)
                throw InputError((root / t.dir / frame_name(f)).string() + " has the wrong size");
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x)
                    for (std::size_t c = 0; c < 3; ++c)
                        px[((f * 3 + c) * h + y) * w + x] = img.pixel(y, x)[c];
        }
        ds.pixels_.push_back(std::move(px));
    }
    return ds;
}

std::vector<std::size_t> Dataset::indices(Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < tracklets_.size(); ++i)
        if (tracklets_[i].split == split) out.push_back(i);
    return out;
}

std::vector<std::size_t> Dataset::identities_in(Split split) const {
    std::vector<std::size_t> out;
    for (const auto& t : tracklets_)
        if (t.split == split) out.push_back(t.identity);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

Tensor<float> Dataset::frames(std::size_t tracklet) const {
    if (tracklet >= tracklets_.size()) throw UsageError("Dataset::frames: index out of range");
    const std::size_t h = config_.resolution.height, w = config_.resolution.width;
    const auto& px = pixels_[tracklet];
    std::vector<float> v(px.size());
    const std::size_t plane = h * w;
    for (std::size_t i = 0; i < px.size(); ++i) {
        const std::size_t c = (i / plane) % 3;
        v[i] = (float(px[i]) / 255.0f - mean_[c]) / std_[c];
    }
    return Tensor<float>({tracklets_[tracklet].length, 3, h, w}, std::move(v));
}

std::vector<std::size_t> sample_indices(std::size_t length, std::size_t n, std::size_t stride, Rng& rng) {
    if (n == 0 || stride == 0) throw ConfigError("sample_indices: n and stride must be positive");
    const std::size_t span = (n - 1) * stride + 1;
    if (length < span)
        throw InputError("tracklet of " + std::to_string(length) + " frames is too short for " + std::to_string(n) +
                         " frames at stride " + std::to_string(stride) + " (needs " + std::to_string(span) + ")");
    const std::size_t start = rng.below(length - span + 1);
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = start + i * stride;
    return idx;
}

Tensor<float> sample_segment(const Tensor<float>& tracklet, std::size_t n, std::size_t stride, Rng& rng) {
    if (tracklet.rank() != 4) throw InputError("sample_segment: expected [L, 3, H, W], got " + shape_str(tracklet.shape()));
    const auto idx = sample_indices(tracklet.dim(0), n, stride, rng);
    std::vector<Tensor<float>> frames;
    for (auto i : idx) frames.push_back(slice(tracklet, 0, i, i + 1));
    return concat(frames, 0);
}

SegmentSplit<float> resize_and_split(const Tensor<float>& segment, std::size_t alpha, Extent big, Extent small) {
    if (alpha > 0 && (small.height * 2 != big.height || small.width * 2 != big.width))
        throw ConfigError("small resolution " + std::to_string(small.height) + "x" + std::to_string(small.width) +
                          " must be half of " + std::to_string(big.height) + "x" + std::to_string(big.width));
    if (segment.rank() != 4 && segment.rank() != 5)
        throw InputError("resize_and_split: expected [N, 3, H, W] or [S, N, 3, H, W], got " +
                         shape_str(segment.shape()));
    Tensor<float> x = segment;
    const std::size_t r = segment.rank();
    if (segment.dim(r - 2) != big.height || segment.dim(r - 1) != big.width) {
        Shape flat{segment.numel() / (segment.dim(r - 3) * segment.dim(r - 2) * segment.dim(r - 1)),
                   segment.dim(r - 3), segment.dim(r - 2), segment.dim(r - 1)};
        auto resized = resize_bilinear(reshape(segment, flat), big.height, big.width);
        Shape out = segment.shape();
        out[r - 2] = big.height;
        out[r - 1] = big.width;
        x = reshape(resized, out);
    }
    return split_segment(x, alpha);
}

Tensor<float> augment(const Tensor<float>& frames, Rng& rng, const AugmentConfig& cfg, std::array<float, 3> fill) {
    if (frames.rank() != 4 || frames.dim(1) != 3)
        throw InputError("augment: expected [N, 3, H, W], got " + shape_str(frames.shape()));
    const std::size_t n = frames.dim(0), h = frames.dim(2), w = frames.dim(3);
    std::vector<float> v(frames.values().begin(), frames.values().end());
    if (rng.bernoulli(cfg.flip_probability))
        for (std::size_t row = 0; row < n * 3 * h; ++row) std::reverse(v.begin() + row * w, v.begin() + (row + 1) * w);
    for (std::size_t f = 0; f < n; ++f) {
        if (!rng.bernoulli(cfg.erase_probability)) continue;
        for (int attempt = 0; attempt < 100; ++attempt) {
            const double area = rng.uniform(cfg.erase_area_min, cfg.erase_area_max) * double(h * w);
            const double log_r = std::log(cfg.erase_aspect_min);
            const double aspect = std::exp(rng.uniform(log_r, -log_r));
            const auto eh = std::size_t(std::lround(std::sqrt(area * aspect)));
            const auto ew = std::size_t(std::lround(std::sqrt(area / aspect)));
            if (eh == 0 || ew == 0 || eh >= h || ew >= w) continue;
            const std::size_t y0 = rng.below(h - eh + 1), x0 = rng.below(w - ew + 1);
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t y = y0; y < y0 + eh; ++y)
                    std::fill_n(v.begin() + ((f * 3 + c) * h + y) * w + x0, ew, fill[c]);
            break;
        }
    }
    return Tensor<float>(frames.shape(), std::move(v));
}

PkSampler::PkSampler(std::vector<std::size_t> tracklet_labels, std::size_t p, std::size_t per_identity,
                     std::uint64_t seed)
    : p_(p), s_(per_identity), rng_(seed) {
    if (p == 0 || per_identity == 0) throw ConfigError("PK sampler needs P >= 1 and S >= 1");
    std::vector<std::size_t> labels = tracklet_labels;
    std::sort(labels.begin(), labels.end());
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
    by_identity_.resize(labels.size());
    for (std::size_t i = 0; i < tracklet_labels.size(); ++i) {
        const auto pos = std::lower_bound(labels.begin(), labels.end(), tracklet_labels[i]) - labels.begin();
        by_identity_[std::size_t(pos)].push_back(i);
    }
    if (by_identity_.size() < p)
        throw InputError("PK sampler: " + std::to_string(by_identity_.size()) + " identities, fewer than P = " +
                         std::to_string(p));
}

std::vector<std::vector<std::size_t>> PkSampler::epoch(std::size_t passes) {
    auto shuffled = [&] {
        std::vector<std::size_t> order(by_identity_.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng_.shuffle(order.begin(), order.end());
        return order;
    };
    std::deque<std::size_t> queue;
    for (std::size_t pass = 0; pass < passes; ++pass)
        for (auto id : shuffled()) queue.push_back(id);

    std::vector<std::vector<std::size_t>> batches;
    while (!queue.empty()) {
        std::vector<std::size_t> ids, deferred;
        while (ids.size() < p_ && !queue.empty()) {
            const auto id = queue.front();
            queue.pop_front();
            if (std::find(ids.begin(), ids.end(), id) == ids.end()) ids.push_back(id);
            else deferred.push_back(id);
        }
        for (auto it = deferred.rbegin(); it != deferred.rend(); ++it) queue.push_front(*it);
        if (ids.size() < p_)
            for (auto id : shuffled())
                if (ids.size() < p_ && std::find(ids.begin(), ids.end(), id) == ids.end()) ids.push_back(id);
        std::vector<std::size_t> batch;
        for (auto id : ids) {
            auto pool = by_identity_[id];
            rng_.shuffle(pool.begin(), pool.end());
            for (std::size_t k = 0; k < s_; ++k) batch.push_back(k < pool.size() ? pool[k] : pool[rng_.below(pool.size())]);
        }
        batches.push_back(std::move(batch));
    }
    return batches;
}

} // namespace btks
