#pragma once

#include "btks/backbone.hpp"
#include "btks/config.hpp"
#include "btks/dao.hpp"
#include "btks/parameters.hpp"
#include "btks/random.hpp"
#include "btks/tensor.hpp"
#include "btks/tks.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace btks {

// Bilinear resize of [B, C, H, W] images (half-pixel centres, edge clamped).
// Halving both extents reduces to the mean of each 2x2 block. No gradient.
template <typename T> Tensor<T> resize_bilinear(const Tensor<T>& images, std::size_t height, std::size_t width);

template <typename T>
struct SegmentSplit {
    Tensor<T> big_frames;   // [S*M, 3, H, W]
    Tensor<T> small_frames; // [S*alpha*M, 3, H/2, W/2]
    std::size_t alpha = 0;
    std::size_t m = 0;      // big frames per segment
    std::size_t segments = 1;
};

// segment [N, 3, H, W] or a batch [S, N, 3, H, W]. The first N/(1+alpha) frames of
// each segment stay at full resolution. Throws InputError when N is not divisible
// by 1+alpha or H, W are odd.
template <typename T> SegmentSplit<T> split_segment(const Tensor<T>& segment, std::size_t alpha);

// maxpool(2, 2) -> 1x1 conv C -> alpha*C -> [B, alpha*C, h, w] viewed as [B*alpha, C, h, w].
// Channel group j of frame b becomes frame b*alpha + j.
template <typename T> Tensor<T> csp_transform(const Tensor<T>& detail, const Tensor<T>& weight, std::size_t alpha);

// Elementwise mean of equally shaped feature tensors.
template <typename T> Tensor<T> aggregate_branches(const Tensor<T>& f_d, const Tensor<T>& f_c);

template <typename T>
struct GateRecord {
    std::size_t stage = 0;
    Branch branch = Branch::detail;
    Tensor<T> gates; // [S, K, C]
};

template <typename T>
struct BiCnetOutput {
    Tensor<T> detail;     // f_d, [S, C_out]
    Tensor<T> context;    // f_c, [S, C_out]; empty for a single-branch model
    Tensor<T> video;      // [S, C_out]
    Tensor<T> divergence; // scalar, 0 without DAO
    std::vector<Tensor<T>> attention_maps; // per branch, [S, frames, H, W]
    std::vector<GateRecord<T>> gates;
    std::vector<Tensor<T>> stage_features; // detail branch after each stage 1..4 (diagnostics)
};

// Two-branch video model with CSP fusion, DAO and TKS. Owns its parameter store.
// An optional linear classifier ("head.weight"/"head.bias") is registered when
// num_classes > 0.
template <typename T>
class BiCnetModel {
public:
    BiCnetModel(const ModelConfig& config, std::uint64_t seed, std::size_t num_classes = 0);

    // segments [S, N, 3, H, W] or one segment [N, 3, H, W].
    BiCnetOutput<T> forward(const Tensor<T>& segments) const;
    BiCnetOutput<T> forward(const SegmentSplit<T>& split) const;

    // [S, C_out] -> [S, classes]
    Tensor<T> classify(const Tensor<T>& video) const;

    void set_training(bool on) { backbone_->set_training(on); }
    bool training() const { return backbone_->training(); }

    const ModelConfig& config() const { return config_; }
    ParameterStore<T>& store() { return store_; }
    const ParameterStore<T>& store() const { return store_; }
    std::size_t num_classes() const { return num_classes_; }
    std::size_t feature_dim() const { return config_.backbone.stage_channels(4); }

    const std::vector<Tensor<T>>& csp_weights() const { return csp_weights_; }

private:
    ModelConfig config_;
    std::size_t num_classes_;
    ParameterStore<T> store_;
    std::unique_ptr<Backbone<T>> backbone_;
    std::vector<Tensor<T>> csp_weights_; // indexed by stage - 1; empty when CSP is off there
    std::unique_ptr<DiverseAttention<T>> dao_detail_, dao_context_;
    std::vector<std::unique_ptr<TemporalKernelSelection<T>>> tks_; // indexed by stage - 1
    Tensor<T> head_weight_, head_bias_;
};

extern template class BiCnetModel<float>;
extern template class BiCnetModel<double>;

// Checkpoint directory: manifest.json plus one BTKS tensor file per store entry.
void save_checkpoint(const std::filesystem::path& dir, const BiCnetModel<float>& model);
// Copies stored values into an identically configured model. Throws InputError on
// missing files or shape mismatch.
void load_checkpoint(const std::filesystem::path& dir, BiCnetModel<float>& model);
// Reads model config and class count from a checkpoint manifest.
std::pair<ModelConfig, std::size_t> read_checkpoint_config(const std::filesystem::path& dir);

} // namespace btks
