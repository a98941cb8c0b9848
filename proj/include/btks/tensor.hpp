#pragma once

#include <cstdint>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace btks {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Graph recording switch. Ops only record backward closures while enabled.
class GradMode {
public:
    static bool enabled();
    static void set_enabled(bool on);
};

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// While one is alive on this thread, piecewise ops (relu, clamp_min, max_pool2d)
// fold the branch taken at every element into a signature. Two evaluations with
// equal signatures lie on the same smooth piece.
class BranchRecorder {
public:
    BranchRecorder();
    ~BranchRecorder();
    BranchRecorder(const BranchRecorder&) = delete;
    BranchRecorder& operator=(const BranchRecorder&) = delete;

    std::uint64_t signature() const { return hash_; }
    static bool active();
    static void note(std::uint64_t value);

private:
    std::uint64_t hash_ = 0xcbf29ce484222325ULL;
    BranchRecorder* previous_;
};

template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    // Reads this node's grad and accumulates into parents.
    std::function<void(TensorNode&)> backward_fn;

    std::vector<T>& grad_buffer() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
        return grad;
    }
};

// Dense row-major array with optional reverse-mode gradient tracking.
//
// Copies are shallow handles onto the same node. Values produced by ops are
// treated as immutable; only leaves (parameters) are updated in place.
template <typename T>
class Tensor {
public:
    using value_type = T;
    using Node = TensorNode<T>;

    Tensor();
    explicit Tensor(Shape shape, T fill = T(0));
    Tensor(Shape shape, std::vector<T> values);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, T value) { return Tensor(std::move(shape), value); }
    static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t numel() const { return node_->data.size(); }

    std::span<T> data() { return node_->data; }
    std::span<const T> data() const { return node_->data; }
    const std::vector<T>& values() const { return node_->data; }

    bool has_grad() const { return node_->grad.size() == node_->data.size(); }
    std::span<T> grad() { return node_->grad_buffer(); }
    std::span<const T> grad() const { return node_->grad_buffer(); }
    void zero_grad() { node_->grad.assign(node_->data.size(), T(0)); }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool on);

    T item() const;
    T at(std::initializer_list<std::size_t> index) const;

    // Fresh leaf holding a copy of the values.
    Tensor detach() const;

    // Seeds d(self)/d(self) = 1 (self must be a scalar) and runs reverse accumulation.
    void backward() const;

    // Reverse accumulation with an explicit upstream gradient.
    void backward(std::span<const T> seed) const;

    bool same_storage(const Tensor& other) const { return node_ == other.node_; }

    const std::shared_ptr<Node>& node() const { return node_; }
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<Node> node_;
};

// Builds an op result. When grad mode is on and any input tracks gradients the
// closure is attached, otherwise the result is a plain constant.
template <typename T>
Tensor<T> make_op_result(Shape shape, std::vector<T> values, std::initializer_list<Tensor<T>> inputs,
                         std::function<void(TensorNode<T>&)> backward_fn);

template <typename T>
Tensor<T> make_op_result(Shape shape, std::vector<T> values, const std::vector<Tensor<T>>& inputs,
                         std::function<void(TensorNode<T>&)> backward_fn);

template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& t) {
    std::vector<To> out(t.values().begin(), t.values().end());
    return Tensor<To>(t.shape(), std::move(out));
}

extern template class Tensor<float>;
extern template class Tensor<double>;

} // namespace btks
