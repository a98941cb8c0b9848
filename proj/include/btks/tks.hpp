#pragma once

#include "btks/config.hpp"
#include "btks/parameters.hpp"
#include "btks/random.hpp"
#include "btks/tensor.hpp"

#include <string>
#include <vector>

namespace btks {

// Temporal kernel selection: Partition -> Select -> Excite.
//
// Feature tensors hold S clips of T consecutive frames, [S*T, C, H, W].
// Path i (1-based) is a bias-free 3-tap temporal convolution with dilation i.
// Per clip, u = mean over (T, h, w) of the summed path outputs and the channel
// gates are g = softmax over paths of W_i u, so sum_i g_i[c] = 1.

template <typename T>
struct TksParams {
    std::vector<Tensor<T>> path_weights;   // K x [C, C, 3]
    std::vector<Tensor<T>> select_weights; // K x [C, C]
};

template <typename T>
struct SelectOutput {
    Tensor<T> fused;              // Z, [S*T, C, h, w]
    Tensor<T> gates;              // [S, K, C]
    std::vector<Tensor<T>> paths; // Y^(i), each [S*T, C, h, w]
};

template <typename T>
struct TksOutput {
    Tensor<T> features; // E, same shape as the input
    Tensor<T> gates;    // [S, K, C]
};

// Uniform-region average pooling to a grid_h x grid_w map.
template <typename T> Tensor<T> partition(const Tensor<T>& features, std::size_t grid_h, std::size_t grid_w);

// fixed_fusion replaces the learned gates with 1/K (temporal-kernel ablation).
template <typename T>
SelectOutput<T> select(const Tensor<T>& regions, std::size_t frames, const TksParams<T>& params,
                       bool fixed_fusion = false);

// Nearest-neighbour upsample of `fused` to the input extent, added residually.
template <typename T> Tensor<T> excite(const Tensor<T>& features, const Tensor<T>& fused);

template <typename T>
TksOutput<T> tks_forward(const Tensor<T>& features, std::size_t frames, std::size_t grid_h, std::size_t grid_w,
                         const TksParams<T>& params, bool fixed_fusion = false);

template <typename T>
class TemporalKernelSelection {
public:
    TemporalKernelSelection(ParameterStore<T>& store, const std::string& prefix, std::size_t channels,
                            const TksConfig& config, Rng& rng);

    TksOutput<T> operator()(const Tensor<T>& features, std::size_t frames) const;

    const TksParams<T>& params() const { return params_; }
    const TksConfig& config() const { return config_; }

private:
    TksParams<T> params_;
    TksConfig config_;
};

extern template class TemporalKernelSelection<float>;
extern template class TemporalKernelSelection<double>;

} // namespace btks
