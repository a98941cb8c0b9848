#pragma once

#include "btks/tensor.hpp"

#include <cstddef>
#include <optional>
#include <vector>

// Differentiable operator set. Every op records its backward closure when grad
// mode is on and an input requires gradients. Shape mismatches throw ConfigError.
namespace btks {

// Elementwise binary ops. Operands have equal rank; each extent is equal or 1.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T value);
template <typename T> Tensor<T> mul_scalar(const Tensor<T>& a, T value);

template <typename T> Tensor<T> relu(const Tensor<T>& a);
template <typename T> Tensor<T> exp(const Tensor<T>& a);
template <typename T> Tensor<T> log(const Tensor<T>& a);
template <typename T> Tensor<T> sqrt(const Tensor<T>& a);
template <typename T> Tensor<T> clamp_min(const Tensor<T>& a, T floor);

template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);
template <typename T> Tensor<T> sum_axes(const Tensor<T>& a, std::vector<std::size_t> axes, bool keepdims = false);
template <typename T> Tensor<T> mean_axes(const Tensor<T>& a, std::vector<std::size_t> axes, bool keepdims = false);

template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& order);
template <typename T> Tensor<T> transpose(const Tensor<T>& a, std::size_t axis0, std::size_t axis1);
template <typename T> Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t begin, std::size_t end);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
template <typename T> Tensor<T> stack(const std::vector<Tensor<T>>& parts, std::size_t axis);
// Picks flat elements; output is 1-D of length indices.size().
template <typename T> Tensor<T> gather_flat(const Tensor<T>& a, const std::vector<std::size_t>& indices);

// [m,k] x [k,n]
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// [B,m,k] x [B,k,n]
template <typename T> Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b);
// x[B,in] * W[out,in]^T + bias[out]
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const std::optional<Tensor<T>>& bias = std::nullopt);

// Cross-correlation, x[B,Cin,H,W], w[Cout,Cin,kh,kw].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride = 1, std::size_t padding = 0);

// Dilated 3-tap convolution along time with zero padding = dilation.
// x[S*T,C,h,w] holds S independent clips of `frames` frames each; w[Cout,C,3].
// frames == 0 treats the whole leading axis as one clip.
template <typename T>
Tensor<T> temporal_conv1d(const Tensor<T>& x, const Tensor<T>& w, std::size_t dilation, std::size_t frames = 0);

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, std::size_t kernel, std::size_t stride, std::size_t padding = 0);

// Average over a uniform grid_h x grid_w partition of each map; extents must divide.
template <typename T> Tensor<T> region_avg_pool(const Tensor<T>& x, std::size_t grid_h, std::size_t grid_w);

// [B,C,H,W] -> [B,C]
template <typename T> Tensor<T> global_avg_pool(const Tensor<T>& x);

template <typename T> Tensor<T> upsample_nearest(const Tensor<T>& x, std::size_t factor_h, std::size_t factor_w);

template <typename T> Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);
template <typename T> Tensor<T> log_softmax(const Tensor<T>& x, std::size_t axis);

// Per-channel normalisation over all axes but 1. In training mode batch
// statistics are used and the running buffers are updated in place.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, Tensor<T>& running_mean,
                     Tensor<T>& running_var, bool training, T momentum = T(0.1), T eps = T(1e-5));

// Mean negative log-likelihood of integer labels under log_softmax(logits, 1).
template <typename T> Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<std::size_t>& labels);

// Rows scaled to unit L2 norm along the last axis.
template <typename T> Tensor<T> l2_normalize(const Tensor<T>& x, T eps = T(1e-12));

} // namespace btks
