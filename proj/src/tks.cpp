#include "btks/tks.hpp"

#include "btks/errors.hpp"
#include "btks/ops.hpp"

namespace btks {

template <typename T>
Tensor<T> partition(const Tensor<T>& features, std::size_t grid_h, std::size_t grid_w) {
    return region_avg_pool(features, grid_h, grid_w);
}

template <typename T>
SelectOutput<T> select(const Tensor<T>& regions, std::size_t frames, const TksParams<T>& params, bool fixed_fusion) {
    if (regions.rank() != 4) throw ConfigError("select: expected [S*T, C, h, w], got " + shape_str(regions.shape()));
    const std::size_t k = params.path_weights.size();
    if (k == 0 || params.select_weights.size() != k)
        throw ConfigError("select: need matching non-empty path and selection weights");
    if (frames == 0 || regions.dim(0) % frames != 0)
        throw ConfigError("select: " + std::to_string(regions.dim(0)) + " frames not divisible into clips of " +
                          std::to_string(frames));
    const std::size_t clips = regions.dim(0) / frames;
    const std::size_t c = regions.dim(1), cells = regions.dim(2) * regions.dim(3);
    for (std::size_t i = 0; i < k; ++i) {
        if (params.path_weights[i].shape() != Shape{c, c, 3})
            throw ConfigError("select: path weight " + shape_str(params.path_weights[i].shape()) + " for " +
                              std::to_string(c) + " channels");
        if (params.select_weights[i].shape() != Shape{c, c})
            throw ConfigError("select: selection weight " + shape_str(params.select_weights[i].shape()) + " for " +
                              std::to_string(c) + " channels");
    }

    SelectOutput<T> out;
    for (std::size_t i = 0; i < k; ++i) out.paths.push_back(temporal_conv1d(regions, params.path_weights[i], i + 1, frames));

    if (fixed_fusion) {
        out.gates = Tensor<T>::full({clips, k, c}, T(1) / static_cast<T>(k));
    } else {
        Tensor<T> summed = out.paths[0];
        for (std::size_t i = 1; i < k; ++i) summed = add(summed, out.paths[i]);
        auto u = mean_axes(reshape(summed, {clips, frames, c, cells}), {1, 3}); // [S, C]
        std::vector<Tensor<T>> logits;
        for (std::size_t i = 0; i < k; ++i) logits.push_back(linear(u, params.select_weights[i]));
        out.gates = softmax(stack(logits, 1), 1);
    }

    Tensor<T> fused;
    for (std::size_t i = 0; i < k; ++i) {
        auto gate = reshape(slice(out.gates, 1, i, i + 1), {clips, 1, c, 1});
        auto term = mul(gate, reshape(out.paths[i], {clips, frames, c, cells}));
        fused = i == 0 ? term : add(fused, term);
    }
    out.fused = reshape(fused, regions.shape());
    return out;
}

template <typename T>
Tensor<T> excite(const Tensor<T>& features, const Tensor<T>& fused) {
    if (features.rank() != 4 || fused.rank() != 4 || features.dim(0) != fused.dim(0) || features.dim(1) != fused.dim(1))
        throw ConfigError("excite: incompatible " + shape_str(features.shape()) + " and " + shape_str(fused.shape()));
    const std::size_t h = features.dim(2), w = features.dim(3), gh = fused.dim(2), gw = fused.dim(3);
    if (gh == 0 || gw == 0 || h % gh != 0 || w % gw != 0)
        throw ConfigError("excite: cannot upsample " + std::to_string(gh) + "x" + std::to_string(gw) + " to " +
                          std::to_string(h) + "x" + std::to_string(w) + " by an integral factor");
    return add(upsample_nearest(fused, h / gh, w / gw), features);
}

template <typename T>
TksOutput<T> tks_forward(const Tensor<T>& features, std::size_t frames, std::size_t grid_h, std::size_t grid_w,
                         const TksParams<T>& params, bool fixed_fusion) {
    auto selected = select(partition(features, grid_h, grid_w), frames, params, fixed_fusion);
    return {excite(features, selected.fused), selected.gates};
}

template <typename T>
TemporalKernelSelection<T>::TemporalKernelSelection(ParameterStore<T>& store, const std::string& prefix,
                                                    std::size_t channels, const TksConfig& config, Rng& rng)
    : config_(config) {
    if (config.k == 0) throw ConfigError("TKS needs at least one temporal path");
    for (std::size_t i = 1; i <= config.k; ++i) {
        params_.path_weights.push_back(store.add(prefix + ".path" + std::to_string(i) + ".weight",
                                                 uniform_fan_in<T>({channels, channels, 3}, rng), true, "tks"));
    }
    for (std::size_t i = 1; i <= config.k; ++i) {
        params_.select_weights.push_back(store.add(prefix + ".select" + std::to_string(i) + ".weight",
                                                   uniform_fan_in<T>({channels, channels}, rng), true, "tks"));
    }
}

template <typename T>
TksOutput<T> TemporalKernelSelection<T>::operator()(const Tensor<T>& features, std::size_t frames) const {
    return tks_forward(features, frames, config_.grid_h, config_.grid_w, params_, config_.fixed_fusion);
}

#define BTKS_INSTANTIATE_TKS(T)                                                                                    \
    template Tensor<T> partition(const Tensor<T>&, std::size_t, std::size_t);                                      \
    template SelectOutput<T> select(const Tensor<T>&, std::size_t, const TksParams<T>&, bool);                     \
    template Tensor<T> excite(const Tensor<T>&, const Tensor<T>&);                                                 \
    template TksOutput<T> tks_forward(const Tensor<T>&, std::size_t, std::size_t, std::size_t, const TksParams<T>&, \
                                      bool);                                                                       \
    template class TemporalKernelSelection<T>;

BTKS_INSTANTIATE_TKS(float)
BTKS_INSTANTIATE_TKS(double)

#undef BTKS_INSTANTIATE_TKS

} // namespace btks
