#include "btks/parameters.hpp"

#include "btks/errors.hpp"

#include <cmath>

namespace btks {

template <typename T>
Tensor<T> ParameterStore<T>::add(const std::string& name, Tensor<T> tensor, bool trainable, const std::string& group) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    tensor.set_requires_grad(trainable);
    index_.emplace(name, entries_.size());
    entries_.push_back({tensor, name, trainable, group});
    return tensor;
}

template <typename T>
const Parameter<T>& ParameterStore<T>::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return entries_[it->second];
}

template <typename T>
std::vector<Tensor<T>> ParameterStore<T>::trainable() const {
    std::vector<Tensor<T>> out;
    for (const auto& p : entries_)
        if (p.trainable) out.push_back(p.tensor);
    return out;
}

template <typename T>
std::size_t ParameterStore<T>::trainable_count() const {
    std::size_t n = 0;
    for (const auto& p : entries_)
        if (p.trainable) n += p.tensor.numel();
    return n;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
    for (auto& p : entries_)
        if (p.trainable) p.tensor.zero_grad();
}

namespace {
std::size_t fan_in(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t i = 1; i < shape.size(); ++i) n *= shape[i];
    return n == 0 ? 1 : n;
}
} // namespace

template <typename T>
Tensor<T> he_normal(Shape shape, Rng& rng) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in(shape)));
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(rng.normal() * stddev);
    return Tensor<T>(std::move(shape), std::move(v));
}

template <typename T>
Tensor<T> uniform_fan_in(Shape shape, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in(shape)));
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
    return Tensor<T>(std::move(shape), std::move(v));
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template Tensor<float> he_normal(Shape, Rng&);
template Tensor<double> he_normal(Shape, Rng&);
template Tensor<float> uniform_fan_in(Shape, Rng&);
template Tensor<double> uniform_fan_in(Shape, Rng&);

} // namespace btks
