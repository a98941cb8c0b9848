#include "btks/bicnet.hpp"

#include "btks/errors.hpp"
#include "btks/ops.hpp"
#include "btks/tensor_io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace btks {

template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& images, std::size_t height, std::size_t width) {
    if (images.rank() != 4) throw ConfigError("resize_bilinear: expected [B, C, H, W], got " + shape_str(images.shape()));
    if (height == 0 || width == 0) throw ConfigError("resize_bilinear: empty target extent");
    const std::size_t planes = images.dim(0) * images.dim(1), h = images.dim(2), w = images.dim(3);
    if (h == 0 || w == 0) throw ConfigError("resize_bilinear: empty source extent");
    auto axis = [](std::size_t out, std::size_t in, std::vector<std::size_t>& lo, std::vector<std::size_t>& hi,
                   std::vector<double>& frac) {
        const double scale = static_cast<double>(in) / static_cast<double>(out);
        for (std::size_t i = 0; i < out; ++i) {
            double src = std::max((static_cast<double>(i) + 0.5) * scale - 0.5, 0.0);
            auto base = std::min(static_cast<std::size_t>(src), in - 1);
            lo.push_back(base);
            hi.push_back(std::min(base + 1, in - 1));
            frac.push_back(src - static_cast<double>(base));
        }
    };
    std::vector<std::size_t> y0, y1, x0, x1;
    std::vector<double> fy, fx;
    axis(height, h, y0, y1, fy);
    axis(width, w, x0, x1, fx);
    std::vector<T> out(planes * height * width);
    const T* src = images.data().data();
    for (std::size_t p = 0; p < planes; ++p) {
        const T* plane = src + p * h * w;
        T* dst = out.data() + p * height * width;
        for (std::size_t y = 0; y < height; ++y)
            for (std::size_t x = 0; x < width; ++x) {
                const double top = (1 - fx[x]) * plane[y0[y] * w + x0[x]] + fx[x] * plane[y0[y] * w + x1[x]];
                const double bottom = (1 - fx[x]) * plane[y1[y] * w + x0[x]] + fx[x] * plane[y1[y] * w + x1[x]];
                dst[y * width + x] = static_cast<T>((1 - fy[y]) * top + fy[y] * bottom);
            }
    }
    return Tensor<T>({images.dim(0), images.dim(1), height, width}, std::move(out));
}

template <typename T>
SegmentSplit<T> split_segment(const Tensor<T>& segment, std::size_t alpha) {
    Tensor<T> batch = segment;
    if (segment.rank() == 4) batch = reshape(segment, {1, segment.dim(0), segment.dim(1), segment.dim(2), segment.dim(3)});
    if (batch.rank() != 5) throw InputError("split_segment: expected [N, 3, H, W] or [S, N, 3, H, W], got " +
                                            shape_str(segment.shape()));
    const std::size_t s = batch.dim(0), n = batch.dim(1), c = batch.dim(2), h = batch.dim(3), w = batch.dim(4);
    if (n % (1 + alpha) != 0)
        throw InputError("segment of " + std::to_string(n) + " frames cannot be split with alpha = " +
                         std::to_string(alpha) + " (" + std::to_string(n) + " is not divisible by " +
                         std::to_string(1 + alpha) + ")");
    SegmentSplit<T> split;
    split.alpha = alpha;
    split.m = n / (1 + alpha);
    split.segments = s;
    split.big_frames = reshape(slice(batch, 1, 0, split.m), {s * split.m, c, h, w});
    if (alpha > 0) {
        if (h % 2 != 0 || w % 2 != 0)
            throw InputError("frames of " + std::to_string(h) + "x" + std::to_string(w) +
                             " cannot be halved exactly");
        auto small = reshape(slice(batch, 1, split.m, n), {s * (n - split.m), c, h, w});
        // bilinear halving with half-pixel centres is exactly the 2x2 block mean
        split.small_frames = region_avg_pool(small, h / 2, w / 2);
    }
    return split;
}

template <typename T>
Tensor<T> csp_transform(const Tensor<T>& detail, const Tensor<T>& weight, std::size_t alpha) {
    if (detail.rank() != 4) throw ConfigError("csp_transform: expected [M, C, H, W], got " + shape_str(detail.shape()));
    const std::size_t b = detail.dim(0), c = detail.dim(1);
    if (alpha == 0 || weight.shape() != Shape{alpha * c, c, 1, 1})
        throw ConfigError("csp_transform: weight " + shape_str(weight.shape()) + " does not map " + std::to_string(c) +
                          " channels to alpha = " + std::to_string(alpha) + " groups");
    if (detail.dim(2) % 2 != 0 || detail.dim(3) % 2 != 0)
        throw ConfigError("csp_transform: odd extent " + shape_str(detail.shape()));
    auto pooled = max_pool2d(detail, 2, 2);
    auto projected = conv2d(pooled, weight);
    return reshape(projected, {b * alpha, c, pooled.dim(2), pooled.dim(3)});
}

template <typename T>
Tensor<T> aggregate_branches(const Tensor<T>& f_d, const Tensor<T>& f_c) {
    if (f_d.shape() != f_c.shape())
        throw ConfigError("aggregate_branches: " + shape_str(f_d.shape()) + " vs " + shape_str(f_c.shape()));
    return mul_scalar(add(f_d, f_c), T(0.5));
}

template <typename T>
BiCnetModel<T>::BiCnetModel(const ModelConfig& config, std::uint64_t seed, std::size_t num_classes)
    : config_(config), num_classes_(num_classes) {
    config_.validate();
    Rng rng(seed);
    backbone_ = std::make_unique<Backbone<T>>(config_.backbone, store_, rng);
    const auto& bb = config_.backbone;
    csp_weights_.resize(4);
    tks_.resize(4);
    for (std::size_t s = 1; s <= 4; ++s) {
        if (config_.two_branch() && config_.csp_at(s)) {
            const std::size_t c = bb.stage_channels(s);
            csp_weights_[s - 1] = store_.add("csp.stage" + std::to_string(s) + ".weight",
                                             uniform_fan_in<T>({config_.alpha * c, c, 1, 1}, rng), true, "csp");
        }
        if (config_.tks.enabled && config_.tks_at(s))
            tks_[s - 1] = std::make_unique<TemporalKernelSelection<T>>(store_, "tks.stage" + std::to_string(s),
                                                                       bb.stage_channels(s), config_.tks, rng);
    }
    if (config_.dao.enabled) {
        const std::size_t s = config_.dao.stage, c = bb.stage_channels(s);
        dao_detail_ = std::make_unique<DiverseAttention<T>>(store_, "dao.detail", c, bb.stage_output(config_.input, s),
                                                            config_.big_frames(), config_.dao, rng);
        if (config_.two_branch())
            dao_context_ = std::make_unique<DiverseAttention<T>>(store_, "dao.context", c,
                                                                 bb.stage_output(config_.small_input(), s),
                                                                 config_.small_frames(), config_.dao, rng);
    }
    if (num_classes_ > 0) {
        head_weight_ = store_.add("head.weight", uniform_fan_in<T>({num_classes_, feature_dim()}, rng), true, "head");
        head_bias_ = store_.add("head.bias", Tensor<T>::zeros({num_classes_}), true, "head");
    }
}

template <typename T>
BiCnetOutput<T> BiCnetModel<T>::forward(const Tensor<T>& segments) const {
    if (segments.rank() < 4) throw InputError("forward: expected [S, N, 3, H, W], got " + shape_str(segments.shape()));
    const std::size_t n = segments.dim(segments.rank() - 4);
    const std::size_t h = segments.dim(segments.rank() - 2), w = segments.dim(segments.rank() - 1);
    if (n != config_.segment_len || h != config_.input.height || w != config_.input.width)
        throw InputError("forward: segment " + shape_str(segments.shape()) + " does not match the configured " +
                         std::to_string(config_.segment_len) + " frames of " + std::to_string(config_.input.height) +
                         "x" + std::to_string(config_.input.width));
    return forward(split_segment(segments, config_.alpha));
}

template <typename T>
BiCnetOutput<T> BiCnetModel<T>::forward(const SegmentSplit<T>& split) const {
    if (split.alpha != config_.alpha || split.m != config_.big_frames())
        throw ConfigError("forward: split with alpha " + std::to_string(split.alpha) + " and " +
                          std::to_string(split.m) + " big frames does not match the model");
    const bool two = config_.two_branch();
    const std::size_t clips = split.segments, m = split.m, small_m = m * split.alpha;

    BiCnetOutput<T> out;
    auto d = backbone_->stem(split.big_frames, Branch::detail);
    StageFeature<T> c;
    if (two) c = backbone_->stem(split.small_frames, Branch::context);
    std::vector<Tensor<T>> losses;
    for (std::size_t s = 1; s <= 4; ++s) {
        d = backbone_->forward_stage(d, s);
        if (two) c = backbone_->forward_stage(c, s);
        if (const auto& tks = tks_[s - 1]) {
            auto td = (*tks)(d.tensor, m);
            d.tensor = td.features;
            out.gates.push_back({s, Branch::detail, td.gates});
            if (two) {
                auto tc = (*tks)(c.tensor, small_m);
                c.tensor = tc.features;
                out.gates.push_back({s, Branch::context, tc.gates});
            }
        }
        if (two && csp_weights_[s - 1].numel() > 0)
            c.tensor = add(c.tensor, csp_transform(d.tensor, csp_weights_[s - 1], split.alpha));
        if (dao_detail_ && s == config_.dao.stage) {
            auto od = (*dao_detail_)(d.tensor);
            d.tensor = od.features;
            out.attention_maps.push_back(od.maps);
            losses.push_back(od.loss);
            if (two) {
                auto oc = (*dao_context_)(c.tensor);
                c.tensor = oc.features;
                out.attention_maps.push_back(oc.maps);
                losses.push_back(oc.loss);
            }
        }
        out.stage_features.push_back(d.tensor);
    }

    auto temporal_mean = [clips](const Tensor<T>& x, std::size_t frames) {
        auto pooled = global_avg_pool(x);
        return mean_axes(reshape(pooled, {clips, frames, pooled.dim(1)}), {1});
    };
    out.detail = temporal_mean(d.tensor, m);
    if (two) {
        out.context = temporal_mean(c.tensor, small_m);
        out.video = aggregate_branches(out.detail, out.context);
    } else {
        out.video = out.detail;
    }
    if (losses.empty()) {
        out.divergence = Tensor<T>::scalar(T(0));
    } else {
        out.divergence = losses[0];
        for (std::size_t i = 1; i < losses.size(); ++i) out.divergence = add(out.divergence, losses[i]);
        out.divergence = mul_scalar(out.divergence, T(1) / static_cast<T>(losses.size()));
    }
    return out;
}

template <typename T>
Tensor<T> BiCnetModel<T>::classify(const Tensor<T>& video) const {
    if (num_classes_ == 0) throw UsageError("classify: model was built without a classifier head");
    return linear(video, head_weight_, std::optional<Tensor<T>>(head_bias_));
}

template class BiCnetModel<float>;
template class BiCnetModel<double>;

#define BTKS_INSTANTIATE_BICNET(T)                                                         \
    template Tensor<T> resize_bilinear(const Tensor<T>&, std::size_t, std::size_t);        \
    template SegmentSplit<T> split_segment(const Tensor<T>&, std::size_t);                 \
    template Tensor<T> csp_transform(const Tensor<T>&, const Tensor<T>&, std::size_t);     \
    template Tensor<T> aggregate_branches(const Tensor<T>&, const Tensor<T>&);

BTKS_INSTANTIATE_BICNET(float)
BTKS_INSTANTIATE_BICNET(double)

#undef BTKS_INSTANTIATE_BICNET

namespace {

std::string tensor_file(const std::string& name) { return name + ".btks"; }

nlohmann::json read_manifest(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw InputError("no checkpoint manifest in " + dir.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw InputError("malformed checkpoint manifest in " + dir.string() + ": " + e.what());
    }
}

} // namespace

void save_checkpoint(const std::filesystem::path& dir, const BiCnetModel<float>& model) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["config"] = to_json(model.config());
    manifest["num_classes"] = model.num_classes();
    auto& tensors = manifest["tensors"] = nlohmann::json::array();
    for (const auto& p : model.store().entries()) {
        save_tensor(dir / tensor_file(p.name), p.tensor);
        tensors.push_back({{"name", p.name},
                           {"file", tensor_file(p.name)},
                           {"shape", p.tensor.shape()},
                           {"stage", p.group},
                           {"trainable", p.trainable}});
    }
    std::ofstream out(dir / "manifest.json");
    out << manifest.dump(2) << '\n';
    if (!out) throw InputError("cannot write checkpoint manifest in " + dir.string());
}

void load_checkpoint(const std::filesystem::path& dir, BiCnetModel<float>& model) {
    const auto manifest = read_manifest(dir);
    for (const auto& p : model.store().entries()) {
        const auto it = std::find_if(manifest["tensors"].begin(), manifest["tensors"].end(),
                                     [&](const nlohmann::json& t) { return t.at("name") == p.name; });
        if (it == manifest["tensors"].end()) throw InputError("checkpoint lacks tensor " + p.name);
        auto stored = load_tensor(dir / it->at("file").get<std::string>());
        if (stored.shape() != p.tensor.shape())
            throw InputError("checkpoint tensor " + p.name + " has shape " + shape_str(stored.shape()) +
                             ", model expects " + shape_str(p.tensor.shape()));
        Tensor<float> target = p.tensor;
        std::copy(stored.values().begin(), stored.values().end(), target.data().begin());
    }
}

std::pair<ModelConfig, std::size_t> read_checkpoint_config(const std::filesystem::path& dir) {
    const auto manifest = read_manifest(dir);
    try {
        return {model_config_from_json(manifest.at("config")), manifest.value("num_classes", std::size_t{0})};
    } catch (const nlohmann::json::exception& e) {
        throw InputError("checkpoint manifest in " + dir.string() + " lacks a model config: " + e.what());
    }
}

} // namespace btks
