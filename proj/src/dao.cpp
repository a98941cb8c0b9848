#include "btks/dao.hpp"

#include "btks/errors.hpp"
#include "btks/ops.hpp"

#include <cmath>

namespace btks {

namespace {

template <typename T>
void require_maps_input(const Tensor<T>& features, const char* op) {
    if (features.rank() != 4) throw ConfigError(std::string(op) + ": expected [B, C, H, W], got " + shape_str(features.shape()));
}

} // namespace

template <typename T>
Tensor<T> self_attention_map(const Tensor<T>& features) {
    require_maps_input(features, "self_attention_map");
    const std::size_t b = features.dim(0), h = features.dim(2), w = features.dim(3);
    auto compressed = reshape(mean_axes(features, {1}), {b, h * w});
    return reshape(softmax(compressed, 1), {b, h, w});
}

template <typename T>
Tensor<T> learned_attention_map(const Tensor<T>& features, const AttentionModuleParams<T>& params) {
    require_maps_input(features, "learned_attention_map");
    const std::size_t b = features.dim(0), c = features.dim(1), h = features.dim(2), w = features.dim(3);
    const Shape compress_shape{1, c, 1, 1};
    if (params.channel_compress.shape() != compress_shape || params.spatial_fc.shape() != Shape{h * w, h * w} ||
        params.spatial_bias.shape() != Shape{h * w})
        throw ConfigError("attention module sized for " + shape_str(params.channel_compress.shape()) + " / " +
                          shape_str(params.spatial_fc.shape()) + " cannot take features " +
                          shape_str(features.shape()));
    auto compressed = reshape(conv2d(features, params.channel_compress), {b, h * w});
    auto embedded = linear(compressed, params.spatial_fc, std::optional<Tensor<T>>(params.spatial_bias));
    return reshape(softmax(embedded, 1), {b, h, w});
}

template <typename T>
Tensor<T> divergence_loss(const Tensor<T>& maps, Similarity similarity) {
    if (maps.rank() < 3) throw ConfigError("divergence_loss: expected [S, M, ...], got " + shape_str(maps.shape()));
    const std::size_t clips = maps.dim(0), m = maps.dim(1);
    if (m < 2) return Tensor<T>::scalar(T(0));
    const std::size_t hw = maps.numel() / (clips * m);
    auto flat = reshape(maps, {clips, m, hw});
    if (similarity == Similarity::cosine) flat = l2_normalize(flat);
    auto sims = bmm(flat, transpose(flat, 1, 2)); // [S, M, M]

    // Pair (k, l), l < k (0-based), carries weight 1 / ((M - 1) * k); the weights sum to 1,
    // so L = -sum w (1 - sim) = sum w sim - 1.
    std::vector<T> weights(m * m, T(0));
    for (std::size_t k = 1; k < m; ++k)
        for (std::size_t l = 0; l < k; ++l)
            weights[k * m + l] = T(1) / (static_cast<T>(m - 1) * static_cast<T>(k));
    Tensor<T> w({1, m, m}, std::move(weights));
    auto weighted = mul_scalar(sum(mul(sims, w)), T(1) / static_cast<T>(clips));
    return add_scalar(weighted, T(-1));
}

template <typename T>
Tensor<T> divergence_loss(const std::vector<Tensor<T>>& maps, Similarity similarity) {
    if (maps.empty()) throw ConfigError("divergence_loss: no maps");
    for (const auto& m : maps)
        if (m.shape() != maps[0].shape())
            throw ConfigError("divergence_loss: maps of differing shapes " + shape_str(m.shape()) + " vs " +
                              shape_str(maps[0].shape()));
    std::vector<Tensor<T>> flat;
    for (const auto& m : maps) flat.push_back(reshape(m, {m.numel()}));
    auto stacked = stack(flat, 0);
    return divergence_loss(reshape(stacked, {1, maps.size(), maps[0].numel()}), similarity);
}

template <typename T>
Tensor<T> apply_attention_residual(const Tensor<T>& features, const Tensor<T>& maps, T gain) {
    require_maps_input(features, "apply_attention_residual");
    const std::size_t b = features.dim(0), h = features.dim(2), w = features.dim(3);
    if (maps.numel() != b * h * w)
        throw ConfigError("apply_attention_residual: maps " + shape_str(maps.shape()) + " do not match features " +
                          shape_str(features.shape()));
    auto scale = add_scalar(mul_scalar(reshape(maps, {b, 1, h, w}), gain), T(1));
    return mul(features, scale);
}

template <typename T>
DaoOutput<T> dao_forward(const Tensor<T>& features, std::size_t frames_per_clip,
                         const std::vector<AttentionModuleParams<T>>& modules, Similarity similarity, T gain) {
    require_maps_input(features, "dao_forward");
    const std::size_t m = frames_per_clip;
    if (m == 0 || features.dim(0) % m != 0)
        throw ConfigError("dao_forward: " + std::to_string(features.dim(0)) + " frames not divisible into clips of " +
                          std::to_string(m));
    if (modules.size() + 1 != m)
        throw ConfigError("dao_forward: " + std::to_string(m) + " frames per clip need " + std::to_string(m - 1) +
                          " attention modules, got " + std::to_string(modules.size()));
    const std::size_t clips = features.dim(0) / m;
    const std::size_t c = features.dim(1), h = features.dim(2), w = features.dim(3);

    auto per_clip = reshape(features, {clips, m, c, h, w});
    std::vector<Tensor<T>> maps;
    maps.reserve(m);
    for (std::size_t k = 0; k < m; ++k) {
        auto frame = reshape(slice(per_clip, 1, k, k + 1), {clips, c, h, w});
        maps.push_back(k == 0 ? self_attention_map(frame) : learned_attention_map(frame, modules[k - 1]));
    }
    auto all_maps = stack(maps, 1); // [S, M, H, W]
    auto updated = apply_attention_residual(features, reshape(all_maps, {clips * m, h, w}), gain);
    return {updated, divergence_loss(all_maps, similarity), all_maps};
}

namespace {

template <typename T>
double mean_pairwise_cosine_impl(const Tensor<T>& maps) {
    if (maps.rank() < 2) throw ConfigError("mean_pairwise_cosine: expected [S, M, ...]");
    const std::size_t clips = maps.dim(0), m = maps.dim(1);
    if (m < 2 || clips == 0) return 1.0;
    const std::size_t hw = maps.numel() / (clips * m);
    const T* p = maps.data().data();
    double total = 0.0;
    std::size_t pairs = 0;
    for (std::size_t s = 0; s < clips; ++s)
        for (std::size_t k = 0; k < m; ++k)
            for (std::size_t l = k + 1; l < m; ++l) {
                const T* a = p + (s * m + k) * hw;
                const T* b = p + (s * m + l) * hw;
                double dot = 0, na = 0, nb = 0;
                for (std::size_t i = 0; i < hw; ++i) {
                    dot += double(a[i]) * double(b[i]);
                    na += double(a[i]) * double(a[i]);
                    nb += double(b[i]) * double(b[i]);
                }
                total += dot / std::max(std::sqrt(na * nb), 1e-30);
                ++pairs;
            }
    return total / static_cast<double>(pairs);
}

} // namespace

double mean_pairwise_cosine(const Tensor<float>& maps) { return mean_pairwise_cosine_impl(maps); }
double mean_pairwise_cosine(const Tensor<double>& maps) { return mean_pairwise_cosine_impl(maps); }

template <typename T>
DiverseAttention<T>::DiverseAttention(ParameterStore<T>& store, const std::string& prefix, std::size_t channels,
                                      Extent extent, std::size_t frames_per_clip, const DaoConfig& config, Rng& rng)
    : frames_(frames_per_clip), similarity_(config.similarity), gain_(static_cast<T>(config.residual_gain)) {
    if (frames_per_clip == 0) throw ConfigError("DiverseAttention: no frames per clip");
    const std::size_t hw = extent.height * extent.width;
    // Modules start as a slightly perturbed copy of the parameter-free map
    // (channel mean, identity embedding) so untrained maps agree with frame 1.
    constexpr double kJitter = 1e-2;
    for (std::size_t k = 1; k < frames_per_clip; ++k) {
        const std::string name = prefix + ".module" + std::to_string(k);
        std::vector<T> compress(channels);
        for (auto& v : compress) v = static_cast<T>((1.0 + rng.uniform(-kJitter, kJitter)) / static_cast<double>(channels));
        std::vector<T> fc(hw * hw);
        for (std::size_t i = 0; i < hw; ++i)
            for (std::size_t j = 0; j < hw; ++j)
                fc[i * hw + j] = static_cast<T>((i == j ? 1.0 : 0.0) + rng.uniform(-kJitter, kJitter));
        AttentionModuleParams<T> params{
            store.add(name + ".compress", Tensor<T>({1, channels, 1, 1}, std::move(compress)), true, "dao"),
            store.add(name + ".fc.weight", Tensor<T>({hw, hw}, std::move(fc)), true, "dao"),
            store.add(name + ".fc.bias", Tensor<T>::zeros({hw}), true, "dao"),
        };
        modules_.push_back(std::move(params));
    }
}

template <typename T>
DaoOutput<T> DiverseAttention<T>::operator()(const Tensor<T>& features) const {
    return dao_forward(features, frames_, modules_, similarity_, gain_);
}

#define BTKS_INSTANTIATE_DAO(T)                                                                                   \
    template Tensor<T> self_attention_map(const Tensor<T>&);                                                      \
    template Tensor<T> learned_attention_map(const Tensor<T>&, const AttentionModuleParams<T>&);                  \
    template Tensor<T> divergence_loss(const Tensor<T>&, Similarity);                                             \
    template Tensor<T> divergence_loss(const std::vector<Tensor<T>>&, Similarity);                                \
    template Tensor<T> apply_attention_residual(const Tensor<T>&, const Tensor<T>&, T);                           \
    template DaoOutput<T> dao_forward(const Tensor<T>&, std::size_t, const std::vector<AttentionModuleParams<T>>&, \
                                      Similarity, T);                                                             \
    template class DiverseAttention<T>;

BTKS_INSTANTIATE_DAO(float)
BTKS_INSTANTIATE_DAO(double)

#undef BTKS_INSTANTIATE_DAO

} // namespace btks
