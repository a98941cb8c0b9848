#pragma once

#include "btks/config.hpp"
#include "btks/parameters.hpp"
#include "btks/random.hpp"
#include "btks/tensor.hpp"

#include <optional>
#include <string>
#include <vector>

namespace btks {

enum class Branch { detail, context };

inline const char* branch_name(Branch b) { return b == Branch::detail ? "detail" : "context"; }

// Feature map of a batch of frames after a given stage (0 = stem).
template <typename T>
struct StageFeature {
    Tensor<T> tensor; // [frames, C, H, W]
    std::size_t stage_index = 0;
    Branch branch = Branch::detail;
};

// Per-channel batch normalisation with running statistics.
template <typename T>
class BatchNorm {
public:
    BatchNorm(ParameterStore<T>& store, const std::string& prefix, std::size_t channels, const std::string& group);
    Tensor<T> operator()(const Tensor<T>& x, bool training) const;

private:
    Tensor<T> gamma_, beta_;
    mutable Tensor<T> running_mean_, running_var_;
};

template <typename T>
class ResidualBlock {
public:
    ResidualBlock(ParameterStore<T>& store, const std::string& prefix, const std::string& group, BlockKind kind,
                  std::size_t in_channels, std::size_t out_channels, std::size_t stride, Rng& rng);
    Tensor<T> operator()(const Tensor<T>& x, bool training) const;

private:
    struct ConvBn {
        Tensor<T> weight;
        BatchNorm<T> bn;
        std::size_t stride;
        std::size_t padding;
    };
    std::vector<ConvBn> path_;
    std::optional<ConvBn> shortcut_;
};

// Staged CNN. A single instance serves both branches, so the detail and context
// branches reference the same parameter storage.
template <typename T>
class Backbone {
public:
    Backbone(const BackboneConfig& config, ParameterStore<T>& store, Rng& rng);

    StageFeature<T> stem(const Tensor<T>& frames, Branch branch) const;

    // Requires stage_index == feature.stage_index + 1, else UsageError.
    StageFeature<T> forward_stage(const StageFeature<T>& feature, std::size_t stage_index) const;

    // Stem followed by all four stages.
    StageFeature<T> forward(const Tensor<T>& frames, Branch branch) const;

    void set_training(bool on) { training_ = on; }
    bool training() const { return training_; }
    const BackboneConfig& config() const { return config_; }

private:
    BackboneConfig config_;
    Tensor<T> stem_weight_;
    std::optional<BatchNorm<T>> stem_bn_;
    std::vector<std::vector<ResidualBlock<T>>> stages_;
    bool training_ = true;
};

extern template class BatchNorm<float>;
extern template class BatchNorm<double>;
extern template class ResidualBlock<float>;
extern template class ResidualBlock<double>;
extern template class Backbone<float>;
extern template class Backbone<double>;

} // namespace btks
