#pragma once

#include "btks/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace btks {

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::size_t worst_input = 0;       // which leaf held the worst coordinate
    std::size_t worst_index = 0;       // flat index within that leaf
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t coordinates = 0;
    std::size_t kinks = 0; // probed coordinates skipped because every step crossed a kink
};

using ScalarFunction = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

// Compares reverse-mode gradients of `fn` against central differences with step
// `epsilon`, coordinate by coordinate over every tensor in `points`.
// Per coordinate: |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
// A probe whose +-step changes the branch signature of a piecewise op (see
// BranchRecorder) is retried with the step divided by 10, twice; if it still
// crosses a kink the coordinate is counted in `kinks` and skipped.
// Throws VerificationError if fn produces a non-finite value.
// With max_coordinates > 0, at most that many coordinates per tensor are probed,
// drawn with `seed`.
GradCheckResult grad_check(const ScalarFunction& fn, std::vector<Tensor<double>> points, double epsilon = 1e-5,
                           std::size_t max_coordinates = 0, std::uint64_t seed = 0);

GradCheckResult grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& fn, Tensor<double> point,
                           double epsilon = 1e-5);

} // namespace btks
