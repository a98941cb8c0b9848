#include "btks/ops.hpp"

#include "btks/errors.hpp"
#include "btks/gemm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace btks {

namespace {

template <typename T>
using Node = TensorNode<T>;

Shape contiguous_strides(const Shape& shape) {
    Shape strides(shape.size(), 1);
    for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
    return strides;
}

// Advances a multi-index over `shape`, returning false after the last element.
bool next_index(std::vector<std::size_t>& idx, const Shape& shape) {
    for (std::size_t i = shape.size(); i-- > 0;) {
        if (++idx[i] < shape[i]) return true;
        idx[i] = 0;
    }
    return false;
}

struct BroadcastPlan {
    Shape out;
    Shape a_strides;
    Shape b_strides;
    bool same = false;
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
    if (a.size() != b.size())
        throw ConfigError(std::string(op) + ": rank mismatch " + shape_str(a) + " vs " + shape_str(b));
    BroadcastPlan plan;
    plan.same = a == b;
    plan.out.resize(a.size());
    const auto sa = contiguous_strides(a);
    const auto sb = contiguous_strides(b);
    plan.a_strides.resize(a.size());
    plan.b_strides.resize(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] != b[i] && a[i] != 1 && b[i] != 1)
            throw ConfigError(std::string(op) + ": incompatible shapes " + shape_str(a) + " vs " + shape_str(b));
        plan.out[i] = std::max(a[i], b[i]);
        plan.a_strides[i] = a[i] == 1 ? 0 : sa[i];
        plan.b_strides[i] = b[i] == 1 ? 0 : sb[i];
    }
    return plan;
}

template <typename F>
void for_each_broadcast(const BroadcastPlan& plan, F&& f) {
    const std::size_t n = shape_numel(plan.out);
    if (plan.same) {
        for (std::size_t i = 0; i < n; ++i) f(i, i, i);
        return;
    }
    if (n == 0) return;
    std::vector<std::size_t> idx(plan.out.size(), 0);
    std::size_t o = 0;
    do {
        std::size_t ia = 0, ib = 0;
        for (std::size_t d = 0; d < idx.size(); ++d) {
            ia += idx[d] * plan.a_strides[d];
            ib += idx[d] * plan.b_strides[d];
        }
        f(o++, ia, ib);
    } while (next_index(idx, plan.out));
}

// f(x, y) -> value, dfdx(x, y, out), dfdy(x, y, out)
template <typename T, typename F, typename DA, typename DB>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, const char* name, F f, DA dfa, DB dfb) {
    auto plan = plan_broadcast(a.shape(), b.shape(), name);
    std::vector<T> out(shape_numel(plan.out));
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = f(pa[ia], pb[ib]); });
    auto shape = plan.out;
    return make_op_result<T>(std::move(shape), std::move(out), {a, b}, [plan, dfa, dfb](Node<T>& self) {
        Node<T>& na = *self.parents[0];
        Node<T>& nb = *self.parents[1];
        const T* g = self.grad.data();
        const T* y = self.data.data();
        const T* xa = na.data.data();
        const T* xb = nb.data.data();
        if (na.requires_grad) {
            T* ga = na.grad_buffer().data();
            for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
                ga[ia] += g[o] * dfa(xa[ia], xb[ib], y[o]);
            });
        }
        if (nb.requires_grad) {
            T* gb = nb.grad_buffer().data();
            for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
                gb[ib] += g[o] * dfb(xa[ia], xb[ib], y[o]);
            });
        }
    });
}

// f(x) -> value, df(x, out)
template <typename T, typename F, typename D>
Tensor<T> unary_op(const Tensor<T>& a, F f, D df) {
    std::vector<T> out(a.numel());
    const T* pa = a.data().data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(pa[i]);
    return make_op_result<T>(a.shape(), std::move(out), {a}, [df](Node<T>& self) {
        Node<T>& na = *self.parents[0];
        if (!na.requires_grad) return;
        auto& ga = na.grad_buffer();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * df(na.data[i], self.data[i]);
    });
}

void require_rank(const Shape& s, std::size_t rank, const char* op) {
    if (s.size() != rank)
        throw ConfigError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(s));
}

} // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, "add", [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); }, [](T, T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, "sub", [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); }, [](T, T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y, T) { return y; }, [](T x, T, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, "div", [](T x, T y) { return x / y; }, [](T, T y, T) { return T(1) / y; },
        [](T, T y, T out) { return -out / y; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T value) {
    return unary_op(a, [value](T x) { return x + value; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T value) {
    return unary_op(a, [value](T x) { return x * value; }, [value](T, T) { return value; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    if (BranchRecorder::active())
        for (T x : a.values()) BranchRecorder::note(x > T(0));
    return unary_op(a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
    return unary_op(a, [](T x) { return std::exp(x); }, [](T, T out) { return out; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
    return unary_op(a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& a) {
    return unary_op(a, [](T x) { return std::sqrt(x); }, [](T, T out) { return T(0.5) / out; });
}

template <typename T>
Tensor<T> clamp_min(const Tensor<T>& a, T floor) {
    if (BranchRecorder::active())
        for (T x : a.values()) BranchRecorder::note(x > floor);
    return unary_op(
        a, [floor](T x) { return x > floor ? x : floor; }, [floor](T x, T) { return x > floor ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sum_axes(const Tensor<T>& a, std::vector<std::size_t> axes, bool keepdims) {
    const Shape& in = a.shape();
    std::vector<bool> reduced(in.size(), false);
    for (auto ax : axes) {
        if (ax >= in.size()) throw ConfigError("sum_axes: axis out of range for " + shape_str(in));
        reduced[ax] = true;
    }
    Shape kept(in.size());
    Shape out_shape;
    for (std::size_t i = 0; i < in.size(); ++i) {
        kept[i] = reduced[i] ? 1 : in[i];
        if (!reduced[i]) out_shape.push_back(in[i]);
        else if (keepdims) out_shape.push_back(1);
    }
    if (keepdims) out_shape = kept;
    const auto ks = contiguous_strides(kept);
    Shape map_strides(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) map_strides[i] = reduced[i] ? 0 : ks[i];

    auto index_map = std::make_shared<std::vector<std::size_t>>(a.numel());
    std::vector<T> out(shape_numel(kept), T(0));
    if (a.numel() > 0) {
        std::vector<std::size_t> idx(in.size(), 0);
        std::size_t i = 0;
        const T* pa = a.data().data();
        do {
            std::size_t o = 0;
            for (std::size_t d = 0; d < idx.size(); ++d) o += idx[d] * map_strides[d];
            (*index_map)[i] = o;
            out[o] += pa[i];
            ++i;
        } while (next_index(idx, in));
    }
    return make_op_result<T>(std::move(out_shape), std::move(out), {a}, [index_map](Node<T>& self) {
        Node<T>& na = *self.parents[0];
        if (!na.requires_grad) return;
        auto& ga = na.grad_buffer();
        const auto& m = *index_map;
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[m[i]];
    });
}

template <typename T>
Tensor<T> mean_axes(const Tensor<T>& a, std::vector<std::size_t> axes, bool keepdims) {
    std::size_t count = 1;
    for (auto ax : axes) {
        if (ax >= a.rank()) throw ConfigError("mean_axes: axis out of range for " + shape_str(a.shape()));
        count *= a.dim(ax);
    }
    return mul_scalar(sum_axes(a, std::move(axes), keepdims), T(1) / static_cast<T>(count));
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    T total = T(0);
    for (T v : a.data()) total += v;
    return make_op_result<T>(Shape{}, {total}, {a}, [](Node<T>& self) {
        Node<T>& na = *self.parents[0];
        if (!na.requires_grad) return;
        const T g = self.grad[0];
        for (auto& v : na.grad_buffer()) v += g;
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
    return mul_scalar(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw ConfigError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    return make_op_result<T>(std::move(shape), a.values(), {a}, [](Node<T>& self) {
        Node<T>& na = *self.parents[0];
        if (!na.requires_grad) return;
        auto& ga = na.grad_buffer();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
    });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& order) {
    const Shape& in = a.shape();
    if (order.size() != in.size()) throw ConfigError("permute: order rank mismatch for " + shape_str(in));
    std::vector<bool> seen(in.size(), false);
    Shape out_shape(in.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (order[i] >= in.size() || seen[order[i]]) throw ConfigError("permute: invalid axis order");
        seen[order[i]] = true;
        out_shape[i] = in[order[i]];
    }
    const auto in_strides = contiguous_strides(in);
    Shape src_strides(in.size());
    for (std::size_t i = 0; i < order.size(); ++i) src_strides[i] = in_strides[order[i]];

    auto source = std::make_shared<std::vector<std::size_t>>(a.numel());
    std::vector<T> out(a.numel());
    if (!out.empty()) {
        std::vector<std::size_t> idx(in.size(), 0);
        std::size_t o = 0;
        const T* pa = a.data().data();
        do {
            std::size_t s = 0;
            for (std::size_t d = 0; d < idx.size(); ++d) s += idx[d] * src_strides[d];
            (*source)[o] = s;
            out[o++] = pa[s];
        } while (next_index(idx, out_shape));
    }
    return make_op_result<T>(std::move(out_shape), std::move(out), {a}, [source](Node<T>& self) {
        Node<T>& na = *self.parents[0];
        if (!na.requires_grad) return;
        auto& ga = na.grad_buffer();
        const auto& src = *source;
        for (std::size_t o = 0; o < src.size(); ++o) ga[src[o]] += self.grad[o];
    });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a, std::size_t axis0, std::size_t axis1) {
    std::vector<std::size_t> order(a.rank());
    std::iota(order.begin(), order.end(), 0);
    if (axis0 >= order.size() || axis1 >= order.size()) throw ConfigError("transpose: axis out of range");
    std::swap(order[axis0], order[axis1]);
    return permute(a, order);
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t begin, std::size_t end) {
    const Shape& in = a.shape();
    if (axis >= in.size() || begin > end || end > in[axis])
        throw ConfigError("slice: invalid range on axis " + std::to_string(axis) + " of " + shape_str(in));
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= in[i];
    for (std::size_t i = axis + 1; i < in.size(); ++i) inner *= in[i];
    const std::size_t len = end - begin;
    Shape out_shape = in;
    out_shape[axis] = len;
    std::vector<T> out(outer * len * inner);
    const T* pa = a.data().data();
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(pa + (o * in[axis] + begin) * inner, len * inner, out.data() + o * len * inner);
    const std::size_t extent = in[axis];
    return make_op_result<T>(std::move(out_shape), std::move(out), {a}, [=](Node<T>& self) {
        Node<T>& na = *self.parents[0];
        if (!na.requires_grad) return;
        auto& ga = na.grad_buffer();
        for (std::size_t o = 0; o < outer; ++o) {
            T* dst = ga.data() + (o * extent + begin) * inner;
            const T* src = self.grad.data() + o * len * inner;
            for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
        }
    });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
    if (parts.empty()) throw ConfigError("concat: no inputs");
    const Shape& first = parts[0].shape();
    if (axis >= first.size()) throw ConfigError("concat: axis out of range");
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
    for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
    std::vector<std::size_t> extents;
    std::size_t total = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        bool ok = s.size() == first.size();
        for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
        if (!ok) throw ConfigError("concat: shape " + shape_str(s) + " incompatible with " + shape_str(first));
        extents.push_back(s[axis]);
        total += s[axis];
    }
    Shape out_shape = first;
    out_shape[axis] = total;
    std::vector<T> out(outer * total * inner);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const T* src = parts[k].data().data();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(src + o * extents[k] * inner, extents[k] * inner,
                        out.data() + (o * total + offset) * inner);
        offset += extents[k];
    }
    return make_op_result<T>(std::move(out_shape), std::move(out), parts, [=](Node<T>& self) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < extents.size(); ++k) {
            Node<T>& np = *self.parents[k];
            if (np.requires_grad) {
                auto& gp = np.grad_buffer();
                for (std::size_t o = 0; o < outer; ++o) {
                    const T* src = self.grad.data() + (o * total + off) * inner;
                    T* dst = gp.data() + o * extents[k] * inner;
                    for (std::size_t i = 0; i < extents[k] * inner; ++i) dst[i] += src[i];
                }
            }
            off += extents[k];
        }
    });
}

template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& parts, std::size_t axis) {
    if (parts.empty()) throw ConfigError("stack: no inputs");
    std::vector<Tensor<T>> expanded;
    expanded.reserve(parts.size());
    for (const auto& p : parts) {
        if (axis > p.rank()) throw ConfigError("stack: axis out of range");
        Shape s = p.shape();
        s.insert(s.begin() + static_cast<std::ptrdiff_t>(axis), 1);
        expanded.push_back(reshape(p, std::move(s)));
    }
    return concat(expanded, axis);
}

template <typename T>
Tensor<T> gather_flat(const Tensor<T>& a, const std::vector<std::size_t>& indices) {
    std::vector<T> out(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= a.numel()) throw ConfigError("gather_flat: index out of range");
        out[i] = a.data()[indices[i]];
    }
    return make_op_result<T>(Shape{indices.size()}, std::move(out), {a}, [indices](Node<T>& self) {
        Node<T>& na = *self.parents[0];
        if (!na.requires_grad) return;
        auto& ga = na.grad_buffer();
        for (std::size_t i = 0; i < indices.size(); ++i) ga[indices[i]] += self.grad[i];
    });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    require_rank(a.shape(), 2, "matmul");
    require_rank(b.shape(), 2, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw ConfigError("matmul: inner extents differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    std::vector<T> out(m * n, T(0));
    gemm<T>(false, false, m, n, k, T(1), a.data().data(), b.data().data(), T(0), out.data());
    return make_op_result<T>(Shape{m, n}, std::move(out), {a, b}, [m, k, n](Node<T>& self) {
        Node<T>& na = *self.parents[0];
        Node<T>& nb = *self.parents[1];
        if (na.requires_grad)
            gemm<T>(false, true, m, k, n, T(1), self.grad.data(), nb.data.data(), T(1), na.grad_buffer().data());
        if (nb.requires_grad)
            gemm<T>(true, false, k, n, m, T(1), na.data.data(), self.grad.data(), T(1), nb.grad_buffer().data());
    });
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
    require_rank(a.shape(), 3, "bmm");
    require_rank(b.shape(), 3, "bmm");
    const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    if (b.dim(0) != batch || b.dim(1) != k)
        throw ConfigError("bmm: incompatible " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    std::vector<T> out(batch * m * n, T(0));
    for (std::size_t i = 0; i < batch; ++i)
        gemm<T>(false, false, m, n, k, T(1), a.data().data() + i * m * k, b.data().data() + i * k * n, T(0),
                out.data() + i * m * n);
    return make_op_result<T>(Shape{batch, m, n}, std::move(out), {a, b}, [=](Node<T>& self) {
        Node<T>& na = *self.parents[0];
        Node<T>& nb = *self.parents[1];
        for (std::size_t i = 0; i < batch; ++i) {
            const T* g = self.grad.data() + i * m * n;
            if (na.requires_grad)
                gemm<T>(false, true, m, k, n, T(1), g, nb.data.data() + i * k * n, T(1),
                        na.grad_buffer().data() + i * m * k);
            if (nb.requires_grad)
                gemm<T>(true, false, k, n, m, T(1), na.data.data() + i * m * k, g, T(1),
                        nb.grad_buffer().data() + i * k * n);
        }
    });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const std::optional<Tensor<T>>& bias) {
    require_rank(x.shape(), 2, "linear");
    require_rank(weight.shape(), 2, "linear");
    const std::size_t batch = x.dim(0), in = x.dim(1), out_features = weight.dim(0);
    if (weight.dim(1) != in)
        throw ConfigError("linear: input width " + std::to_string(in) + " vs weight " + shape_str(weight.shape()));
    if (bias && (bias->rank() != 1 || bias->dim(0) != out_features))
        throw ConfigError("linear: bias shape " + shape_str(bias->shape()));
    std::vector<T> out(batch * out_features, T(0));
    if (bias)
        for (std::size_t b = 0; b < batch; ++b)
            std::copy_n(bias->data().data(), out_features, out.data() + b * out_features);
    gemm<T>(false, true, batch, out_features, in, T(1), x.data().data(), weight.data().data(), bias ? T(1) : T(0),
            out.data());
    std::vector<Tensor<T>> inputs{x, weight};
    if (bias) inputs.push_back(*bias);
    const bool has_bias = bias.has_value();
    return make_op_result<T>(Shape{batch, out_features}, std::move(out), inputs, [=](Node<T>& self) {
        Node<T>& nx = *self.parents[0];
        Node<T>& nw = *self.parents[1];
        const T* g = self.grad.data();
        if (nx.requires_grad)
            gemm<T>(false, false, batch, in, out_features, T(1), g, nw.data.data(), T(1), nx.grad_buffer().data());
        if (nw.requires_grad)
            gemm<T>(true, false, out_features, in, batch, T(1), g, nx.data.data(), T(1), nw.grad_buffer().data());
        if (has_bias && self.parents[2]->requires_grad) {
            auto& gb = self.parents[2]->grad_buffer();
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t o = 0; o < out_features; ++o) gb[o] += g[b * out_features + o];
        }
    });
}

namespace {

struct ConvGeometry {
    std::size_t batch, cin, h, w, cout, kh, kw, stride, pad, ho, wo;
    std::size_t col_rows() const { return cin * kh * kw; }
    std::size_t col_cols() const { return ho * wo; }
    bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

template <typename T>
void im2col(const ConvGeometry& g, const T* img, T* col) {
    for (std::size_t c = 0; c < g.cin; ++c)
        for (std::size_t ky = 0; ky < g.kh; ++ky)
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                T* row = col + ((c * g.kh + ky) * g.kw + kx) * g.ho * g.wo;
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
                    for (std::size_t ox = 0; ox < g.wo; ++ox) {
                        const auto ix =
                            static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                        const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.h) &&
                                            ix < static_cast<std::ptrdiff_t>(g.w);
                        row[oy * g.wo + ox] =
                            inside ? img[(c * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)]
                                   : T(0);
                    }
                }
            }
}

template <typename T>
void col2im_add(const ConvGeometry& g, const T* col, T* img) {
    for (std::size_t c = 0; c < g.cin; ++c)
        for (std::size_t ky = 0; ky < g.kh; ++ky)
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                const T* row = col + ((c * g.kh + ky) * g.kw + kx) * g.ho * g.wo;
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                    for (std::size_t ox = 0; ox < g.wo; ++ox) {
                        const auto ix =
                            static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
                        img[(c * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] +=
                            row[oy * g.wo + ox];
                    }
                }
            }
}

} // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride, std::size_t padding) {
    require_rank(x.shape(), 4, "conv2d");
    require_rank(w.shape(), 4, "conv2d");
    if (stride == 0) throw ConfigError("conv2d: stride must be positive");
    ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3), stride, padding, 0, 0};
    if (w.dim(1) != g.cin)
        throw ConfigError("conv2d: input has " + std::to_string(g.cin) + " channels, weight expects " +
                          std::to_string(w.dim(1)));
    if (g.kh > g.h + 2 * padding || g.kw > g.w + 2 * padding)
        throw ConfigError("conv2d: kernel larger than padded input " + shape_str(x.shape()));
    g.ho = (g.h + 2 * padding - g.kh) / stride + 1;
    g.wo = (g.w + 2 * padding - g.kw) / stride + 1;

    const std::size_t in_plane = g.cin * g.h * g.w;
    const std::size_t out_plane = g.cout * g.ho * g.wo;
    std::vector<T> out(g.batch * out_plane);
    std::vector<T> col(g.pointwise() ? 0 : g.col_rows() * g.col_cols());
    for (std::size_t b = 0; b < g.batch; ++b) {
        const T* img = x.data().data() + b * in_plane;
        const T* src = img;
        if (!g.pointwise()) {
            im2col(g, img, col.data());
            src = col.data();
        }
        gemm<T>(false, false, g.cout, g.col_cols(), g.col_rows(), T(1), w.data().data(), src, T(0),
                out.data() + b * out_plane);
    }
    return make_op_result<T>(Shape{g.batch, g.cout, g.ho, g.wo}, std::move(out), {x, w}, [g](Node<T>& self) {
        Node<T>& nx = *self.parents[0];
        Node<T>& nw = *self.parents[1];
        const std::size_t in_plane = g.cin * g.h * g.w;
        const std::size_t out_plane = g.cout * g.ho * g.wo;
        std::vector<T> col(g.pointwise() ? 0 : g.col_rows() * g.col_cols());
        std::vector<T> dcol(nx.requires_grad && !g.pointwise() ? col.size() : 0);
        for (std::size_t b = 0; b < g.batch; ++b) {
            const T* dout = self.grad.data() + b * out_plane;
            const T* img = nx.data.data() + b * in_plane;
            if (nw.requires_grad) {
                const T* src = img;
                if (!g.pointwise()) {
                    im2col(g, img, col.data());
                    src = col.data();
                }
                gemm<T>(false, true, g.cout, g.col_rows(), g.col_cols(), T(1), dout, src, T(1),
                        nw.grad_buffer().data());
            }
            if (nx.requires_grad) {
                T* dimg = nx.grad_buffer().data() + b * in_plane;
                if (g.pointwise()) {
                    gemm<T>(true, false, g.col_rows(), g.col_cols(), g.cout, T(1), nw.data.data(), dout, T(1), dimg);
                } else {
                    gemm<T>(true, false, g.col_rows(), g.col_cols(), g.cout, T(1), nw.data.data(), dout, T(0),
                            dcol.data());
                    col2im_add(g, dcol.data(), dimg);
                }
            }
        }
    });
}

template <typename T>
Tensor<T> temporal_conv1d(const Tensor<T>& x, const Tensor<T>& w, std::size_t dilation, std::size_t frames) {
    require_rank(x.shape(), 4, "temporal_conv1d");
    require_rank(w.shape(), 3, "temporal_conv1d");
    const std::size_t total = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
    const std::size_t cout = w.dim(0);
    if (w.dim(1) != c || w.dim(2) != 3)
        throw ConfigError("temporal_conv1d: weight " + shape_str(w.shape()) + " does not match " +
                          std::to_string(c) + " input channels with 3 taps");
    if (dilation == 0) throw ConfigError("temporal_conv1d: dilation must be positive");
    if (frames == 0) frames = total;
    if (total == 0 || total % frames != 0)
        throw ConfigError("temporal_conv1d: " + std::to_string(total) + " frames not divisible into clips of " +
                          std::to_string(frames));
    const std::size_t clips = total / frames;

    // taps[j] is the contiguous [cout, c] matrix of kernel tap j (offset (j-1)*dilation).
    auto split_taps = [cout, c](const T* wd) {
        std::vector<T> taps(3 * cout * c);
        for (std::size_t o = 0; o < cout; ++o)
            for (std::size_t i = 0; i < c; ++i)
                for (std::size_t j = 0; j < 3; ++j) taps[(j * cout + o) * c + i] = wd[(o * c + i) * 3 + j];
        return taps;
    };
    const auto taps = split_taps(w.data().data());
    const std::size_t in_frame = c * plane, out_frame = cout * plane;
    std::vector<T> out(total * out_frame, T(0));
    const auto shift = static_cast<std::ptrdiff_t>(dilation);
    for (std::size_t s = 0; s < clips; ++s)
        for (std::size_t t = 0; t < frames; ++t)
            for (std::size_t j = 0; j < 3; ++j) {
                const auto src = static_cast<std::ptrdiff_t>(t) + (static_cast<std::ptrdiff_t>(j) - 1) * shift;
                if (src < 0 || src >= static_cast<std::ptrdiff_t>(frames)) continue;
                gemm<T>(false, false, cout, plane, c, T(1), taps.data() + j * cout * c,
                        x.data().data() + (s * frames + static_cast<std::size_t>(src)) * in_frame, T(1),
                        out.data() + (s * frames + t) * out_frame);
            }
    return make_op_result<T>(
        Shape{total, cout, x.dim(2), x.dim(3)}, std::move(out), {x, w}, [=](Node<T>& self) {
            Node<T>& nx = *self.parents[0];
            Node<T>& nw = *self.parents[1];
            const auto tp = split_taps(nw.data.data());
            std::vector<T> dtaps(nw.requires_grad ? tp.size() : 0, T(0));
            for (std::size_t s = 0; s < clips; ++s)
                for (std::size_t t = 0; t < frames; ++t)
                    for (std::size_t j = 0; j < 3; ++j) {
                        const auto src =
                            static_cast<std::ptrdiff_t>(t) + (static_cast<std::ptrdiff_t>(j) - 1) * shift;
                        if (src < 0 || src >= static_cast<std::ptrdiff_t>(frames)) continue;
                        const std::size_t in_off = (s * frames + static_cast<std::size_t>(src)) * in_frame;
                        const T* dout = self.grad.data() + (s * frames + t) * out_frame;
                        if (nx.requires_grad)
                            gemm<T>(true, false, c, plane, cout, T(1), tp.data() + j * cout * c, dout, T(1),
                                    nx.grad_buffer().data() + in_off);
                        if (nw.requires_grad)
                            gemm<T>(false, true, cout, c, plane, T(1), dout, nx.data.data() + in_off, T(1),
                                    dtaps.data() + j * cout * c);
                    }
            if (nw.requires_grad) {
                auto& gw = nw.grad_buffer();
                for (std::size_t o = 0; o < cout; ++o)
                    for (std::size_t i = 0; i < c; ++i)
                        for (std::size_t j = 0; j < 3; ++j) gw[(o * c + i) * 3 + j] += dtaps[(j * cout + o) * c + i];
            }
        });
}

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, std::size_t kernel, std::size_t stride, std::size_t padding) {
    require_rank(x.shape(), 4, "max_pool2d");
    if (kernel == 0 || stride == 0) throw ConfigError("max_pool2d: kernel and stride must be positive");
    const std::size_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (kernel > h + 2 * padding || kernel > w + 2 * padding)
        throw ConfigError("max_pool2d: kernel larger than padded input " + shape_str(x.shape()));
    const std::size_t ho = (h + 2 * padding - kernel) / stride + 1;
    const std::size_t wo = (w + 2 * padding - kernel) / stride + 1;
    std::vector<T> out(b * c * ho * wo);
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
    const T* px = x.data().data();
    for (std::size_t plane = 0; plane < b * c; ++plane)
        for (std::size_t oy = 0; oy < ho; ++oy)
            for (std::size_t ox = 0; ox < wo; ++ox) {
                T best = -std::numeric_limits<T>::infinity();
                std::size_t best_i = 0;
                bool found = false;
                for (std::size_t ky = 0; ky < kernel; ++ky) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(padding);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (std::size_t kx = 0; kx < kernel; ++kx) {
                        const auto ix =
                            static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(padding);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                        const std::size_t i = (plane * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix);
                        if (!found || px[i] > best) {
                            best = px[i];
                            best_i = i;
                            found = true;
                        }
                    }
                }
                const std::size_t o = (plane * ho + oy) * wo + ox;
                out[o] = best;
                (*argmax)[o] = best_i;
                BranchRecorder::note(best_i);
            }
    return make_op_result<T>(Shape{b, c, ho, wo}, std::move(out), {x}, [argmax](Node<T>& self) {
        Node<T>& nx = *self.parents[0];
        if (!nx.requires_grad) return;
        auto& gx = nx.grad_buffer();
        for (std::size_t o = 0; o < argmax->size(); ++o) gx[(*argmax)[o]] += self.grad[o];
    });
}

template <typename T>
Tensor<T> region_avg_pool(const Tensor<T>& x, std::size_t grid_h, std::size_t grid_w) {
    require_rank(x.shape(), 4, "region_avg_pool");
    const std::size_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (grid_h == 0 || grid_w == 0 || h % grid_h != 0 || w % grid_w != 0)
        throw ConfigError("region_avg_pool: grid " + std::to_string(grid_h) + "x" + std::to_string(grid_w) +
                          " does not evenly divide " + std::to_string(h) + "x" + std::to_string(w));
    const std::size_t rh = h / grid_h, rw = w / grid_w;
    const T scale = T(1) / static_cast<T>(rh * rw);
    std::vector<T> out(b * c * grid_h * grid_w, T(0));
    const T* px = x.data().data();
    for (std::size_t plane = 0; plane < b * c; ++plane)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xx = 0; xx < w; ++xx)
                out[(plane * grid_h + y / rh) * grid_w + xx / rw] += px[(plane * h + y) * w + xx];
    for (auto& v : out) v *= scale;
    return make_op_result<T>(Shape{b, c, grid_h, grid_w}, std::move(out), {x}, [=](Node<T>& self) {
        Node<T>& nx = *self.parents[0];
        if (!nx.requires_grad) return;
        auto& gx = nx.grad_buffer();
        for (std::size_t plane = 0; plane < b * c; ++plane)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t xx = 0; xx < w; ++xx)
                    gx[(plane * h + y) * w + xx] += scale * self.grad[(plane * grid_h + y / rh) * grid_w + xx / rw];
    });
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    require_rank(x.shape(), 4, "global_avg_pool");
    return mean_axes(x, {2, 3});
}

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, std::size_t factor_h, std::size_t factor_w) {
    require_rank(x.shape(), 4, "upsample_nearest");
    if (factor_h == 0 || factor_w == 0) throw ConfigError("upsample_nearest: factors must be positive");
    const std::size_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t ho = h * factor_h, wo = w * factor_w;
    std::vector<T> out(b * c * ho * wo);
    const T* px = x.data().data();
    for (std::size_t plane = 0; plane < b * c; ++plane)
        for (std::size_t y = 0; y < ho; ++y)
            for (std::size_t xx = 0; xx < wo; ++xx)
                out[(plane * ho + y) * wo + xx] = px[(plane * h + y / factor_h) * w + xx / factor_w];
    return make_op_result<T>(Shape{b, c, ho, wo}, std::move(out), {x}, [=](Node<T>& self) {
        Node<T>& nx = *self.parents[0];
        if (!nx.requires_grad) return;
        auto& gx = nx.grad_buffer();
        for (std::size_t plane = 0; plane < b * c; ++plane)
            for (std::size_t y = 0; y < ho; ++y)
                for (std::size_t xx = 0; xx < wo; ++xx)
                    gx[(plane * h + y / factor_h) * w + xx / factor_w] += self.grad[(plane * ho + y) * wo + xx];
    });
}

namespace {

struct AxisLayout {
    std::size_t outer = 1, extent = 1, inner = 1;
};

AxisLayout axis_layout(const Shape& s, std::size_t axis, const char* op) {
    if (axis >= s.size()) throw ConfigError(std::string(op) + ": axis out of range for " + shape_str(s));
    AxisLayout l;
    for (std::size_t i = 0; i < axis; ++i) l.outer *= s[i];
    l.extent = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) l.inner *= s[i];
    return l;
}

} // namespace

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
    const auto l = axis_layout(x.shape(), axis, "softmax");
    std::vector<T> out(x.numel());
    const T* px = x.data().data();
    for (std::size_t o = 0; o < l.outer; ++o)
        for (std::size_t i = 0; i < l.inner; ++i) {
            const std::size_t base = o * l.extent * l.inner + i;
            T peak = px[base];
            for (std::size_t k = 1; k < l.extent; ++k) peak = std::max(peak, px[base + k * l.inner]);
            T total = T(0);
            for (std::size_t k = 0; k < l.extent; ++k) {
                const T e = std::exp(px[base + k * l.inner] - peak);
                out[base + k * l.inner] = e;
                total += e;
            }
            for (std::size_t k = 0; k < l.extent; ++k) out[base + k * l.inner] /= total;
        }
    return make_op_result<T>(x.shape(), std::move(out), {x}, [l](Node<T>& self) {
        Node<T>& nx = *self.parents[0];
        if (!nx.requires_grad) return;
        auto& gx = nx.grad_buffer();
        const T* y = self.data.data();
        const T* g = self.grad.data();
        for (std::size_t o = 0; o < l.outer; ++o)
            for (std::size_t i = 0; i < l.inner; ++i) {
                const std::size_t base = o * l.extent * l.inner + i;
                T dot = T(0);
                for (std::size_t k = 0; k < l.extent; ++k) dot += g[base + k * l.inner] * y[base + k * l.inner];
                for (std::size_t k = 0; k < l.extent; ++k) {
                    const std::size_t at = base + k * l.inner;
                    gx[at] += y[at] * (g[at] - dot);
                }
            }
    });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, std::size_t axis) {
    const auto l = axis_layout(x.shape(), axis, "log_softmax");
    std::vector<T> out(x.numel());
    const T* px = x.data().data();
    for (std::size_t o = 0; o < l.outer; ++o)
        for (std::size_t i = 0; i < l.inner; ++i) {
            const std::size_t base = o * l.extent * l.inner + i;
            T peak = px[base];
            for (std::size_t k = 1; k < l.extent; ++k) peak = std::max(peak, px[base + k * l.inner]);
            T total = T(0);
            for (std::size_t k = 0; k < l.extent; ++k) total += std::exp(px[base + k * l.inner] - peak);
            const T lse = peak + std::log(total);
            for (std::size_t k = 0; k < l.extent; ++k) out[base + k * l.inner] = px[base + k * l.inner] - lse;
        }
    return make_op_result<T>(x.shape(), std::move(out), {x}, [l](Node<T>& self) {
        Node<T>& nx = *self.parents[0];
        if (!nx.requires_grad) return;
        auto& gx = nx.grad_buffer();
        const T* y = self.data.data();
        const T* g = self.grad.data();
        for (std::size_t o = 0; o < l.outer; ++o)
            for (std::size_t i = 0; i < l.inner; ++i) {
                const std::size_t base = o * l.extent * l.inner + i;
                T gsum = T(0);
                for (std::size_t k = 0; k < l.extent; ++k) gsum += g[base + k * l.inner];
                for (std::size_t k = 0; k < l.extent; ++k) {
                    const std::size_t at = base + k * l.inner;
                    gx[at] += g[at] - std::exp(y[at]) * gsum;
                }
            }
    });
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, Tensor<T>& running_mean,
                     Tensor<T>& running_var, bool training, T momentum, T eps) {
    if (x.rank() < 2) throw ConfigError("batch_norm: input needs a channel axis, got " + shape_str(x.shape()));
    const std::size_t n = x.dim(0), c = x.dim(1);
    const std::size_t spatial = x.numel() / (n * c);
    for (const Tensor<T>* p : {&gamma, &beta, &static_cast<const Tensor<T>&>(running_mean),
                               &static_cast<const Tensor<T>&>(running_var)})
        if (p->rank() != 1 || p->dim(0) != c)
            throw ConfigError("batch_norm: parameter shape " + shape_str(p->shape()) + " for " + std::to_string(c) +
                              " channels");
    const std::size_t count = n * spatial;
    if (training && count < 2) throw ConfigError("batch_norm: training mode needs more than one value per channel");

    std::vector<T> mu(c), inv_std(c);
    const T* px = x.data().data();
    if (training) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            T s = T(0);
            for (std::size_t b = 0; b < n; ++b) {
                const T* p = px + (b * c + ch) * spatial;
                for (std::size_t i = 0; i < spatial; ++i) s += p[i];
            }
            const T m = s / static_cast<T>(count);
            T v = T(0);
            for (std::size_t b = 0; b < n; ++b) {
                const T* p = px + (b * c + ch) * spatial;
                for (std::size_t i = 0; i < spatial; ++i) v += (p[i] - m) * (p[i] - m);
            }
            const T var = v / static_cast<T>(count);
            mu[ch] = m;
            inv_std[ch] = T(1) / std::sqrt(var + eps);
            auto rm = running_mean.data();
            auto rv = running_var.data();
            rm[ch] = (T(1) - momentum) * rm[ch] + momentum * m;
            rv[ch] = (T(1) - momentum) * rv[ch] + momentum * v / static_cast<T>(count - 1);
        }
    } else {
        for (std::size_t ch = 0; ch < c; ++ch) {
            mu[ch] = running_mean.data()[ch];
            inv_std[ch] = T(1) / std::sqrt(running_var.data()[ch] + eps);
        }
    }
    std::vector<T> out(x.numel());
    const T* pg = gamma.data().data();
    const T* pb = beta.data().data();
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t off = (b * c + ch) * spatial;
            for (std::size_t i = 0; i < spatial; ++i)
                out[off + i] = (px[off + i] - mu[ch]) * inv_std[ch] * pg[ch] + pb[ch];
        }
    return make_op_result<T>(x.shape(), std::move(out), {x, gamma, beta}, [=](Node<T>& self) {
        Node<T>& nx = *self.parents[0];
        Node<T>& ng = *self.parents[1];
        Node<T>& nb = *self.parents[2];
        const T* g = self.grad.data();
        const T* xv = nx.data.data();
        for (std::size_t ch = 0; ch < c; ++ch) {
            T sum_g = T(0), sum_gx = T(0);
            for (std::size_t b = 0; b < n; ++b) {
                const std::size_t off = (b * c + ch) * spatial;
                for (std::size_t i = 0; i < spatial; ++i) {
                    const T xhat = (xv[off + i] - mu[ch]) * inv_std[ch];
                    sum_g += g[off + i];
                    sum_gx += g[off + i] * xhat;
                }
            }
            if (ng.requires_grad) ng.grad_buffer()[ch] += sum_gx;
            if (nb.requires_grad) nb.grad_buffer()[ch] += sum_g;
            if (!nx.requires_grad) continue;
            auto& gx = nx.grad_buffer();
            const T scale = ng.data[ch] * inv_std[ch];
            const T mean_g = sum_g / static_cast<T>(count);
            const T mean_gx = sum_gx / static_cast<T>(count);
            for (std::size_t b = 0; b < n; ++b) {
                const std::size_t off = (b * c + ch) * spatial;
                for (std::size_t i = 0; i < spatial; ++i) {
                    if (training) {
                        const T xhat = (xv[off + i] - mu[ch]) * inv_std[ch];
                        gx[off + i] += scale * (g[off + i] - mean_g - xhat * mean_gx);
                    } else {
                        gx[off + i] += scale * g[off + i];
                    }
                }
            }
        }
    });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<std::size_t>& labels) {
    require_rank(logits.shape(), 2, "cross_entropy");
    const std::size_t batch = logits.dim(0), classes = logits.dim(1);
    if (labels.size() != batch) throw ConfigError("cross_entropy: label count does not match batch");
    std::vector<std::size_t> picks(batch);
    for (std::size_t b = 0; b < batch; ++b) {
        if (labels[b] >= classes) throw ConfigError("cross_entropy: label out of range");
        picks[b] = b * classes + labels[b];
    }
    return mul_scalar(mean(gather_flat(log_softmax(logits, 1), picks)), T(-1));
}

template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& x, T eps) {
    if (x.rank() == 0) throw ConfigError("l2_normalize: needs at least one axis");
    const std::size_t last = x.rank() - 1;
    auto norm = sqrt(clamp_min(sum_axes(mul(x, x), {last}, true), eps * eps));
    return div(x, norm);
}

#define BTKS_INSTANTIATE_OPS(T)                                                                                       \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                                       \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                                       \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                                       \
    template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                                       \
    template Tensor<T> add_scalar(const Tensor<T>&, T);                                                               \
    template Tensor<T> mul_scalar(const Tensor<T>&, T);                                                               \
    template Tensor<T> relu(const Tensor<T>&);                                                                        \
    template Tensor<T> exp(const Tensor<T>&);                                                                         \
    template Tensor<T> log(const Tensor<T>&);                                                                         \
    template Tensor<T> sqrt(const Tensor<T>&);                                                                        \
    template Tensor<T> clamp_min(const Tensor<T>&, T);                                                                \
    template Tensor<T> sum(const Tensor<T>&);                                                                         \
    template Tensor<T> mean(const Tensor<T>&);                                                                        \
    template Tensor<T> sum_axes(const Tensor<T>&, std::vector<std::size_t>, bool);                                    \
    template Tensor<T> mean_axes(const Tensor<T>&, std::vector<std::size_t>, bool);                                   \
    template Tensor<T> reshape(const Tensor<T>&, Shape);                                                              \
    template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);                                    \
    template Tensor<T> transpose(const Tensor<T>&, std::size_t, std::size_t);                                         \
    template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);                                \
    template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                                            \
    template Tensor<T> stack(const std::vector<Tensor<T>>&, std::size_t);                                             \
    template Tensor<T> gather_flat(const Tensor<T>&, const std::vector<std::size_t>&);                                \
    template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                                    \
    template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&);                                                       \
    template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const std::optional<Tensor<T>>&);                   \
    template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t);                          \
    template Tensor<T> temporal_conv1d(const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t);                 \
    template Tensor<T> max_pool2d(const Tensor<T>&, std::size_t, std::size_t, std::size_t);                           \
    template Tensor<T> region_avg_pool(const Tensor<T>&, std::size_t, std::size_t);                                   \
    template Tensor<T> global_avg_pool(const Tensor<T>&);                                                             \
    template Tensor<T> upsample_nearest(const Tensor<T>&, std::size_t, std::size_t);                                  \
    template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                                        \
    template Tensor<T> log_softmax(const Tensor<T>&, std::size_t);                                                    \
    template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>&, Tensor<T>&, bool, \
                                  T, T);                                                                              \
    template Tensor<T> cross_entropy(const Tensor<T>&, const std::vector<std::size_t>&);                              \
    template Tensor<T> l2_normalize(const Tensor<T>&, T);

BTKS_INSTANTIATE_OPS(float)
BTKS_INSTANTIATE_OPS(double)

#undef BTKS_INSTANTIATE_OPS

} // namespace btks
