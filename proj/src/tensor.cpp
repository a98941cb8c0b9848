#include "btks/tensor.hpp"

#include "btks/errors.hpp"

#include <sstream>
#include <unordered_set>

namespace btks {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

namespace {
thread_local bool grad_mode_enabled = true;
}

bool GradMode::enabled() { return grad_mode_enabled; }
void GradMode::set_enabled(bool on) { grad_mode_enabled = on; }

NoGradGuard::NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
NoGradGuard::~NoGradGuard() { GradMode::set_enabled(previous_); }

namespace {
thread_local BranchRecorder* current_recorder = nullptr;
}

BranchRecorder::BranchRecorder() : previous_(current_recorder) { current_recorder = this; }
BranchRecorder::~BranchRecorder() { current_recorder = previous_; }
bool BranchRecorder::active() { return current_recorder != nullptr; }
void BranchRecorder::note(std::uint64_t value) {
    if (!current_recorder) return;
    auto& h = current_recorder->hash_;
    h = (h ^ value) * 0x100000001b3ULL;
}

template <typename T>
Tensor<T>::Tensor() : node_(std::make_shared<Node>()) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : node_(std::make_shared<Node>()) {
    node_->data.assign(shape_numel(shape), fill);
    node_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<Node>()) {
    if (values.size() != shape_numel(shape))
        throw ConfigError("tensor data length " + std::to_string(values.size()) + " does not match shape " +
                          shape_str(shape));
    node_->shape = std::move(shape);
    node_->data = std::move(values);
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
    node_->requires_grad = on;
    return *this;
}

template <typename T>
T Tensor<T>::item() const {
    if (numel() != 1) throw ConfigError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
    if (index.size() != rank()) throw ConfigError("index rank mismatch for shape " + shape_str(shape()));
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (auto i : index) {
        if (i >= node_->shape[axis]) throw ConfigError("index out of range for shape " + shape_str(shape()));
        flat = flat * node_->shape[axis] + i;
        ++axis;
    }
    return node_->data[flat];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
    return Tensor(node_->shape, node_->data);
}

template <typename T>
void Tensor<T>::backward() const {
    if (numel() != 1) throw UsageError("backward() without a seed requires a scalar, got " + shape_str(shape()));
    const std::vector<T> seed{T(1)};
    backward(seed);
}

template <typename T>
void Tensor<T>::backward(std::span<const T> seed) const {
    if (seed.size() != numel()) throw UsageError("backward seed size mismatch");
    if (!node_->requires_grad) return;

    // Iterative post-order DFS gives a topological order with parents first.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // Interior nodes start from zero on every pass; leaves keep accumulating.
    for (Node* n : order)
        if (n->backward_fn) n->grad.assign(n->data.size(), T(0));

    auto& root = node_->grad_buffer();
    for (std::size_t i = 0; i < seed.size(); ++i) root[i] += seed[i];

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
    }
}

template <typename T>
static Tensor<T> make_result_impl(Shape shape, std::vector<T> values, const Tensor<T>* inputs, std::size_t count,
                                  std::function<void(TensorNode<T>&)> backward_fn) {
    Tensor<T> out(std::move(shape), std::move(values));
    if (!GradMode::enabled()) return out;
    bool any = false;
    for (std::size_t i = 0; i < count; ++i) any = any || inputs[i].requires_grad();
    if (!any) return out;
    auto& node = *out.node();
    node.requires_grad = true;
    node.parents.reserve(count);
    for (std::size_t i = 0; i < count; ++i) node.parents.push_back(inputs[i].node());
    node.backward_fn = std::move(backward_fn);
    return out;
}

template <typename T>
Tensor<T> make_op_result(Shape shape, std::vector<T> values, std::initializer_list<Tensor<T>> inputs,
                         std::function<void(TensorNode<T>&)> backward_fn) {
    return make_result_impl<T>(std::move(shape), std::move(values), inputs.begin(), inputs.size(),
                               std::move(backward_fn));
}

template <typename T>
Tensor<T> make_op_result(Shape shape, std::vector<T> values, const std::vector<Tensor<T>>& inputs,
                         std::function<void(TensorNode<T>&)> backward_fn) {
    return make_result_impl<T>(std::move(shape), std::move(values), inputs.data(), inputs.size(),
                               std::move(backward_fn));
}

template class Tensor<float>;
template class Tensor<double>;

template Tensor<float> make_op_result(Shape, std::vector<float>, std::initializer_list<Tensor<float>>,
                                      std::function<void(TensorNode<float>&)>);
template Tensor<double> make_op_result(Shape, std::vector<double>, std::initializer_list<Tensor<double>>,
                                       std::function<void(TensorNode<double>&)>);
template Tensor<float> make_op_result(Shape, std::vector<float>, const std::vector<Tensor<float>>&,
                                      std::function<void(TensorNode<float>&)>);
template Tensor<double> make_op_result(Shape, std::vector<double>, const std::vector<Tensor<double>>&,
                                       std::function<void(TensorNode<double>&)>);

} // namespace btks
