#include "btks/backbone.hpp"

#include "btks/errors.hpp"
#include "btks/ops.hpp"

namespace btks {

template <typename T>
BatchNorm<T>::BatchNorm(ParameterStore<T>& store, const std::string& prefix, std::size_t channels,
                        const std::string& group)
    : gamma_(store.add(prefix + ".gamma", Tensor<T>::full({channels}, T(1)), true, group)),
      beta_(store.add(prefix + ".beta", Tensor<T>::zeros({channels}), true, group)),
      running_mean_(store.add(prefix + ".running_mean", Tensor<T>::zeros({channels}), false, group)),
      running_var_(store.add(prefix + ".running_var", Tensor<T>::full({channels}, T(1)), false, group)) {}

template <typename T>
Tensor<T> BatchNorm<T>::operator()(const Tensor<T>& x, bool training) const {
    return batch_norm(x, gamma_, beta_, running_mean_, running_var_, training);
}

template <typename T>
ResidualBlock<T>::ResidualBlock(ParameterStore<T>& store, const std::string& prefix, const std::string& group,
                                BlockKind kind, std::size_t in_channels, std::size_t out_channels, std::size_t stride,
                                Rng& rng) {
    auto conv_bn = [&](const std::string& name, std::size_t cin, std::size_t cout, std::size_t k, std::size_t s) {
        auto w = store.add(prefix + "." + name + ".weight", he_normal<T>({cout, cin, k, k}, rng), true, group);
        return ConvBn{w, BatchNorm<T>(store, prefix + "." + name + ".bn", cout, group), s, k / 2};
    };
    if (kind == BlockKind::basic) {
        path_.push_back(conv_bn("conv1", in_channels, out_channels, 3, stride));
        path_.push_back(conv_bn("conv2", out_channels, out_channels, 3, 1));
    } else {
        const std::size_t width = out_channels / 4;
        path_.push_back(conv_bn("conv1", in_channels, width, 1, 1));
        path_.push_back(conv_bn("conv2", width, width, 3, stride));
        path_.push_back(conv_bn("conv3", width, out_channels, 1, 1));
    }
    if (stride != 1 || in_channels != out_channels)
        shortcut_ = conv_bn("downsample", in_channels, out_channels, 1, stride);
}

template <typename T>
Tensor<T> ResidualBlock<T>::operator()(const Tensor<T>& x, bool training) const {
    Tensor<T> h = x;
    for (std::size_t i = 0; i < path_.size(); ++i) {
        const auto& layer = path_[i];
        h = layer.bn(conv2d(h, layer.weight, layer.stride, layer.padding), training);
        if (i + 1 < path_.size()) h = relu(h);
    }
    Tensor<T> identity = x;
    if (shortcut_) identity = shortcut_->bn(conv2d(x, shortcut_->weight, shortcut_->stride, 0), training);
    return relu(add(h, identity));
}

template <typename T>
Backbone<T>::Backbone(const BackboneConfig& config, ParameterStore<T>& store, Rng& rng) : config_(config) {
    config_.validate();
    const auto& stem = config_.stem;
    stem_weight_ = store.add("stem.conv.weight",
                             he_normal<T>({stem.channels, config_.in_channels, stem.kernel, stem.kernel}, rng), true,
                             "stem");
    stem_bn_.emplace(store, "stem.bn", stem.channels, "stem");
    for (std::size_t s = 1; s <= 4; ++s) {
        const std::string group = "stage" + std::to_string(s);
        std::vector<ResidualBlock<T>> blocks;
        std::size_t cin = config_.stage_input_channels(s);
        for (std::size_t b = 0; b < config_.stages[s - 1].blocks; ++b) {
            const std::size_t stride = b == 0 ? config_.stage_stride(s) : 1;
            blocks.emplace_back(store, group + ".block" + std::to_string(b), group, config_.block, cin,
                                config_.stage_channels(s), stride, rng);
            cin = config_.stage_channels(s);
        }
        stages_.push_back(std::move(blocks));
    }
}

template <typename T>
StageFeature<T> Backbone<T>::stem(const Tensor<T>& frames, Branch branch) const {
    if (frames.rank() != 4 || frames.dim(1) != config_.in_channels)
        throw ConfigError("backbone expects [frames, " + std::to_string(config_.in_channels) + ", H, W], got " +
                          shape_str(frames.shape()));
    auto h = relu((*stem_bn_)(conv2d(frames, stem_weight_, config_.stem.stride, config_.stem.kernel / 2), training_));
    if (config_.stem.max_pool) h = max_pool2d(h, 3, 2, 1);
    return {h, 0, branch};
}

template <typename T>
StageFeature<T> Backbone<T>::forward_stage(const StageFeature<T>& feature, std::size_t stage_index) const {
    if (stage_index != feature.stage_index + 1 || stage_index > 4)
        throw UsageError("forward_stage(" + std::to_string(stage_index) + ") after stage " +
                         std::to_string(feature.stage_index) + ": stages must run consecutively");
    Tensor<T> h = feature.tensor;
    for (const auto& block : stages_[stage_index - 1]) h = block(h, training_);
    return {h, stage_index, feature.branch};
}

template <typename T>
StageFeature<T> Backbone<T>::forward(const Tensor<T>& frames, Branch branch) const {
    auto f = stem(frames, branch);
    for (std::size_t s = 1; s <= 4; ++s) f = forward_stage(f, s);
    return f;
}

template class BatchNorm<float>;
template class BatchNorm<double>;
template class ResidualBlock<float>;
template class ResidualBlock<double>;
template class Backbone<float>;
template class Backbone<double>;

} // namespace btks
