#include "btks/gradcheck.hpp"

#include "btks/errors.hpp"
#include "btks/random.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace btks {

namespace {

struct Probe {
    double value;
    std::uint64_t signature;
};

Probe evaluate(const ScalarFunction& fn, const std::vector<Tensor<double>>& points) {
    NoGradGuard guard;
    BranchRecorder recorder;
    const double v = fn(points).item();
    if (!std::isfinite(v)) throw VerificationError("grad_check: function returned a non-finite value");
    return {v, recorder.signature()};
}

} // namespace

GradCheckResult grad_check(const ScalarFunction& fn, std::vector<Tensor<double>> points, double epsilon,
                           std::size_t max_coordinates, std::uint64_t seed) {
    for (auto& p : points) {
        p.set_requires_grad(true);
        p.zero_grad();
    }
    std::uint64_t base_signature = 0;
    {
        BranchRecorder recorder;
        auto out = fn(points);
        base_signature = recorder.signature();
        if (out.numel() != 1) throw UsageError("grad_check: function must return a scalar");
        if (!std::isfinite(out.item())) throw VerificationError("grad_check: function returned a non-finite value");
        out.backward();
    }

    GradCheckResult result;
    Rng rng(seed);
    for (std::size_t which = 0; which < points.size(); ++which) {
        auto& p = points[which];
        const std::vector<double> analytic(p.grad().begin(), p.grad().end());
        auto values = p.data();
        std::vector<std::size_t> coords(values.size());
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        if (max_coordinates > 0 && coords.size() > max_coordinates) {
            rng.shuffle(coords.begin(), coords.end());
            coords.resize(max_coordinates);
            std::sort(coords.begin(), coords.end());
        }
        for (const std::size_t i : coords) {
            const double saved = values[i];
            double numeric = 0;
            bool smooth = false;
            double step = epsilon;
            for (int attempt = 0; attempt < 3 && !smooth; ++attempt, step /= 10) {
                values[i] = saved + step;
                const auto up = evaluate(fn, points);
                values[i] = saved - step;
                const auto down = evaluate(fn, points);
                values[i] = saved;
                smooth = up.signature == base_signature && down.signature == base_signature;
                numeric = (up.value - down.value) / (2.0 * step);
            }
            if (!smooth) {
                ++result.kinks;
                continue;
            }
            const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
            const double rel = std::abs(analytic[i] - numeric) / denom;
            ++result.coordinates;
            if (rel > result.max_relative_error || result.coordinates == 1) {
                result.max_relative_error = rel;
                result.worst_input = which;
                result.worst_index = i;
                result.worst_analytic = analytic[i];
                result.worst_numeric = numeric;
            }
        }
    }
    return result;
}

GradCheckResult grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& fn, Tensor<double> point,
                           double epsilon) {
    return grad_check([&fn](const std::vector<Tensor<double>>& p) { return fn(p[0]); }, {std::move(point)},
                      epsilon);
}

} // namespace btks
