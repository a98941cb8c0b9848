#pragma once

#include "btks/random.hpp"
#include "btks/tensor.hpp"

#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace btks {

template <typename T>
struct Parameter {
    Tensor<T> tensor;
    std::string name;
    bool trainable = true;
    std::string group; // stem, stage1..stage4, csp, dao, tks, head
};

// Named registry of every tensor a model owns, in registration order.
// Non-trainable entries hold buffers such as normalisation running statistics.
template <typename T>
class ParameterStore {
public:
    // Throws ConfigError on duplicate names.
    Tensor<T> add(const std::string& name, Tensor<T> tensor, bool trainable, const std::string& group);

    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    const Parameter<T>& at(const std::string& name) const;
    Tensor<T> tensor(const std::string& name) const { return at(name).tensor; }

    const std::vector<Parameter<T>>& entries() const { return entries_; }
    std::vector<Tensor<T>> trainable() const;

    // Element count of trainable tensors.
    std::size_t trainable_count() const;

    void zero_grad();

private:
    std::vector<Parameter<T>> entries_;
    std::map<std::string, std::size_t> index_;
};

// Initialisers. Fan-in is the product of all axes but the first.
template <typename T> Tensor<T> he_normal(Shape shape, Rng& rng);
template <typename T> Tensor<T> uniform_fan_in(Shape shape, Rng& rng);

extern template class ParameterStore<float>;
extern template class ParameterStore<double>;

} // namespace btks
