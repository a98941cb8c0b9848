#pragma once

#include "btks/config.hpp"
#include "btks/parameters.hpp"
#include "btks/random.hpp"
#include "btks/tensor.hpp"

#include <string>
#include <vector>

namespace btks {

// Diverse attention over the frames of one branch.
//
// Frame 1 of every clip gets a parameter-free map: softmax over all H*W
// positions of the channel-mean map. Frames 2..M each own a learned module
// (1x1 conv to one channel, fully-connected HW -> HW, softmax). Maps are
// re-injected as D * (1 + gain * A) and pushed apart by the divergence loss
//
//   L = -1/(M-1) * sum_{k=2..M} 1/(k-1) * sum_{l<k} (1 - sim(A_k, A_l))
//
// which lies in [-1, 0] under cosine similarity.

template <typename T>
struct AttentionModuleParams {
    Tensor<T> channel_compress; // [1, C, 1, 1]
    Tensor<T> spatial_fc;       // [HW, HW]
    Tensor<T> spatial_bias;     // [HW]
};

// features [B, C, H, W] -> maps [B, H, W]
template <typename T> Tensor<T> self_attention_map(const Tensor<T>& features);
template <typename T>
Tensor<T> learned_attention_map(const Tensor<T>& features, const AttentionModuleParams<T>& params);

// maps [S, M, H, W] (or [S, M, HW]); the loss of each clip is averaged over S.
// M = 1 yields 0.
template <typename T>
Tensor<T> divergence_loss(const Tensor<T>& maps, Similarity similarity = Similarity::cosine);

// Single clip given as M maps of equal shape.
template <typename T>
Tensor<T> divergence_loss(const std::vector<Tensor<T>>& maps, Similarity similarity = Similarity::cosine);

// features [B, C, H, W] * (1 + gain * maps [B, H, W]) broadcast over channels.
template <typename T>
Tensor<T> apply_attention_residual(const Tensor<T>& features, const Tensor<T>& maps, T gain = T(1));

template <typename T>
struct DaoOutput {
    Tensor<T> features; // same shape as the input
    Tensor<T> loss;     // scalar
    Tensor<T> maps;     // [S, M, H, W]
};

// features [S*M, C, H, W], clips of M consecutive frames; modules.size() == M - 1.
template <typename T>
DaoOutput<T> dao_forward(const Tensor<T>& features, std::size_t frames_per_clip,
                         const std::vector<AttentionModuleParams<T>>& modules, Similarity similarity, T gain);

// Mean cosine similarity over all unordered map pairs within each clip, averaged over clips.
// maps [S, M, H, W]; returns 1 when M < 2.
double mean_pairwise_cosine(const Tensor<float>& maps);
double mean_pairwise_cosine(const Tensor<double>& maps);

template <typename T>
class DiverseAttention {
public:
    DiverseAttention(ParameterStore<T>& store, const std::string& prefix, std::size_t channels, Extent extent,
                     std::size_t frames_per_clip, const DaoConfig& config, Rng& rng);

    DaoOutput<T> operator()(const Tensor<T>& features) const;

    const std::vector<AttentionModuleParams<T>>& modules() const { return modules_; }
    std::size_t frames_per_clip() const { return frames_; }

private:
    std::vector<AttentionModuleParams<T>> modules_;
    std::size_t frames_;
    Similarity similarity_;
    T gain_;
};

extern template class DiverseAttention<float>;
extern template class DiverseAttention<double>;

} // namespace btks
