#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "attngen/errors.hpp"
#include "attngen/rng.hpp"

namespace attngen {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

// One vertex of the differentiation graph. Dense row-major storage; grad is
// allocated lazily and always matches values in length. backward_fn reads
// this node's grad and accumulates into the parents' grads.
template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> values;
    std::vector<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;

    bool is_leaf() const { return parents.empty(); }

    void ensure_grad() {
        if (grad.size() != values.size()) grad.assign(values.size(), T(0));
    }
};

// Value-semantics handle to a graph node. Copying a Tensor aliases the node;
// fresh nodes are made by the op functions below.
template <typename T>
class Tensor {
    static_assert(std::is_floating_point_v<T>, "Tensor element type must be float or double");

public:
    using Node = TensorNode<T>;

    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        auto n = std::make_shared<Node>();
        n->values.assign(shape_numel(shape), T(0));
        n->shape = std::move(shape);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor full(Shape shape, T value, bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        std::fill(t.values().begin(), t.values().end(), value);
        return t;
    }

    static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
        if (shape_numel(shape) != values.size())
            throw ShapeError("tensor: " + std::to_string(values.size()) +
                             " values do not fill shape " + shape_str(shape));
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->values = std::move(values);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor scalar(T value, bool requires_grad = false) {
        return from({1}, {value}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t numel() const { return node_->values.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape[i]; }

    std::vector<T>& values() { return node_->values; }
    const std::vector<T>& values() const { return node_->values; }

    bool has_grad() const { return node_->grad.size() == node_->values.size(); }
    std::vector<T>& grad() { node_->ensure_grad(); return node_->grad; }
    const std::vector<T>& grad() const { return node_->grad; }
    void zero_grad() { node_->grad.assign(node_->values.size(), T(0)); }
    void drop_grad() { node_->grad.clear(); }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool v) { node_->requires_grad = v; }

    T item() const {
        if (numel() != 1) throw UsageError("item: tensor is not a scalar");
        return node_->values[0];
    }

    std::shared_ptr<Node> node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

using Tensor32 = Tensor<float>;
using Tensor64 = Tensor<double>;

namespace detail {

template <typename T>
std::shared_ptr<TensorNode<T>> make_result(Shape shape,
                                           std::vector<std::shared_ptr<TensorNode<T>>> parents) {
    auto n = std::make_shared<TensorNode<T>>();
    n->values.assign(shape_numel(shape), T(0));
    n->shape = std::move(shape);
    n->parents = std::move(parents);
    for (const auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    return n;
}

// Reverse topological order from root; every node appears exactly once.
template <typename T>
void topo_sort(const std::shared_ptr<TensorNode<T>>& root,
               std::vector<TensorNode<T>*>& order) {
    std::unordered_set<TensorNode<T>*> seen;
    std::vector<std::pair<TensorNode<T>*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorNode<T>* p = node->parents[next++].get();
            if (seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
}

}  // namespace detail

// Accumulates d(loss)/d(node) into every reachable node's grad. Leaf grads
// persist across calls (repeated backward without reset accumulates);
// interior grads are reset per call so each pass is self-consistent.
template <typename T>
void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1) throw UsageError("backward: loss must be a scalar");
    std::vector<TensorNode<T>*> order;
    detail::topo_sort(loss.node(), order);
    for (auto* n : order) {
        if (n->is_leaf())
            n->ensure_grad();
        else
            n->grad.assign(n->values.size(), T(0));
    }
    loss.node()->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

// ---------------------------------------------------------------------------
// elementwise / structural ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    auto out = detail::make_result<T>(a.shape(), {a.node(), b.node()});
    for (std::size_t i = 0; i < out->values.size(); ++i)
        out->values[i] = a.values()[i] + b.values()[i];
    out->backward_fn = [](TensorNode<T>& self) {
        for (auto& p : self.parents) {
            p->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
        }
    };
    return Tensor<T>(out);
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    auto out = detail::make_result<T>(a.shape(), {a.node(), b.node()});
    for (std::size_t i = 0; i < out->values.size(); ++i)
        out->values[i] = a.values()[i] * b.values()[i];
    out->backward_fn = [](TensorNode<T>& self) {
        auto& a = *self.parents[0];
        auto& b = *self.parents[1];
        a.ensure_grad();
        b.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            a.grad[i] += self.grad[i] * b.values[i];
            b.grad[i] += self.grad[i] * a.values[i];
        }
    };
    return Tensor<T>(out);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
    auto out = detail::make_result<T>(a.shape(), {a.node()});
    for (std::size_t i = 0; i < out->values.size(); ++i) out->values[i] = a.values()[i] * c;
    out->backward_fn = [c](TensorNode<T>& self) {
        auto& a = *self.parents[0];
        a.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) a.grad[i] += self.grad[i] * c;
    };
    return Tensor<T>(out);
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    auto out = detail::make_result<T>({1}, {a.node()});
    T acc = 0;
    for (T v : a.values()) acc += v;
    out->values[0] = acc;
    out->backward_fn = [](TensorNode<T>& self) {
        auto& a = *self.parents[0];
        a.ensure_grad();
        const T g = self.grad[0];
        for (auto& gi : a.grad) gi += g;
    };
    return Tensor<T>(out);
}

template <typename T>
Tensor<T> select_scalar(const Tensor<T>& a, std::size_t flat_index) {
    if (flat_index >= a.numel()) throw UsageError("select_scalar: index out of range");
    auto out = detail::make_result<T>({1}, {a.node()});
    out->values[0] = a.values()[flat_index];
    out->backward_fn = [flat_index](TensorNode<T>& self) {
        auto& a = *self.parents[0];
        a.ensure_grad();
        a.grad[flat_index] += self.grad[0];
    };
    return Tensor<T>(out);
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(shape));
    auto out = detail::make_result<T>(std::move(shape), {a.node()});
    out->values = a.values();
    out->backward_fn = [](TensorNode<T>& self) {
        auto& a = *self.parents[0];
        a.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) a.grad[i] += self.grad[i];
    };
    return Tensor<T>(out);
}

// [B x X x Y] -> [B x Y x X]; pairs the embedding's sequence-major layout
// with the convolution's channel-major one.
template <typename T>
Tensor<T> permute_021(const Tensor<T>& a) {
    if (a.shape().size() != 3) throw ShapeError("permute_021: expected rank-3 tensor");
    const std::size_t B = a.dim(0), X = a.dim(1), Y = a.dim(2);
    auto out = detail::make_result<T>({B, Y, X}, {a.node()});
    const T* src = a.values().data();
    T* dst = out->values.data();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t x = 0; x < X; ++x)
            for (std::size_t y = 0; y < Y; ++y)
                dst[(b * Y + y) * X + x] = src[(b * X + x) * Y + y];
    out->backward_fn = [B, X, Y](TensorNode<T>& self) {
        auto& a = *self.parents[0];
        a.ensure_grad();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t x = 0; x < X; ++x)
                for (std::size_t y = 0; y < Y; ++y)
                    a.grad[(b * X + x) * Y + y] += self.grad[(b * Y + y) * X + x];
    };
    return Tensor<T>(out);
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    auto out = detail::make_result<T>(a.shape(), {a.node()});
    for (std::size_t i = 0; i < out->values.size(); ++i)
        out->values[i] = a.values()[i] > T(0) ? a.values()[i] : T(0);
    out->backward_fn = [](TensorNode<T>& self) {
        auto& a = *self.parents[0];
        a.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (a.values[i] > T(0)) a.grad[i] += self.grad[i];
    };
    return Tensor<T>(out);
}

// ---------------------------------------------------------------------------
// embedding
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, const std::vector<std::int32_t>& tokens,
                           std::size_t batch, std::size_t length) {
    if (table.shape().size() != 2) throw ShapeError("embedding_lookup: table must be rank 2");
    if (tokens.size() != batch * length)
        throw ShapeError("embedding_lookup: token buffer does not match batch x length");
    const std::size_t vocab = table.dim(0), width = table.dim(1);
    for (std::size_t i = 0; i < tokens.size(); ++i)
        if (tokens[i] < 0 || static_cast<std::size_t>(tokens[i]) >= vocab)
            throw UsageError("embedding_lookup: token index " + std::to_string(tokens[i]) +
                             " out of range [0, " + std::to_string(vocab) + ")");
    auto out = detail::make_result<T>({batch, length, width}, {table.node()});
    const T* rows = table.values().data();
    T* dst = out->values.data();
    for (std::size_t i = 0; i < tokens.size(); ++i)
        std::copy_n(rows + static_cast<std::size_t>(tokens[i]) * width, width, dst + i * width);
    out->backward_fn = [tokens, width](TensorNode<T>& self) {
        auto& table = *self.parents[0];
        table.ensure_grad();
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            T* row = table.grad.data() + static_cast<std::size_t>(tokens[i]) * width;
            const T* g = self.grad.data() + i * width;
            for (std::size_t j = 0; j < width; ++j) row[j] += g[j];
        }
    };
    return Tensor<T>(out);
}

// ---------------------------------------------------------------------------
// conv1d — cross-correlation, stride 1, zero padding
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv1d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 std::size_t pad_left, std::size_t pad_right) {
    if (input.shape().size() != 3 || kernel.shape().size() != 3)
        throw ShapeError("conv1d: input and kernel must be rank 3");
    const std::size_t B = input.dim(0), Cin = input.dim(1), L = input.dim(2);
    const std::size_t Cout = kernel.dim(0), K = kernel.dim(2);
    if (kernel.dim(1) != Cin)
        throw ShapeError("conv1d: kernel expects " + std::to_string(kernel.dim(1)) +
                         " input channels, got " + std::to_string(Cin));
    if (bias.numel() != Cout) throw ShapeError("conv1d: bias length != output channels");
    if (K > L + pad_left + pad_right)
        throw ShapeError("conv1d: kernel size " + std::to_string(K) +
                         " exceeds padded length " + std::to_string(L + pad_left + pad_right));
    const std::size_t Lout = L + pad_left + pad_right - K + 1;

    auto out = detail::make_result<T>({B, Cout, Lout}, {input.node(), kernel.node(), bias.node()});
    const T* in = input.values().data();
    const T* w = kernel.values().data();
    const T* bb = bias.values().data();
    T* dst = out->values.data();

    const std::ptrdiff_t pl = static_cast<std::ptrdiff_t>(pad_left);
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t o = 0; o < Cout; ++o) {
            T* orow = dst + (b * Cout + o) * Lout;
            for (std::size_t t = 0; t < Lout; ++t) orow[t] = bb[o];
            for (std::size_t c = 0; c < Cin; ++c) {
                const T* irow = in + (b * Cin + c) * L;
                for (std::size_t k = 0; k < K; ++k) {
                    const T wv = w[(o * Cin + c) * K + k];
                    // input index t + k - pad_left must fall inside [0, L)
                    const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(k) - pl;
                    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -off);
                    const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(
                        static_cast<std::ptrdiff_t>(Lout), static_cast<std::ptrdiff_t>(L) - off);
                    for (std::ptrdiff_t t = lo; t < hi; ++t)
                        orow[t] += wv * irow[t + off];
                }
            }
        }
    }

    out->backward_fn = [B, Cin, Cout, L, K, Lout, pl](TensorNode<T>& self) {
        auto& input = *self.parents[0];
        auto& kernel = *self.parents[1];
        auto& bias = *self.parents[2];
        input.ensure_grad();
        kernel.ensure_grad();
        bias.ensure_grad();
        const T* in = input.values.data();
        const T* w = kernel.values.data();
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t o = 0; o < Cout; ++o) {
                const T* gout = self.grad.data() + (b * Cout + o) * Lout;
                T bsum = 0;
                for (std::size_t t = 0; t < Lout; ++t) bsum += gout[t];
                bias.grad[o] += bsum;
                for (std::size_t c = 0; c < Cin; ++c) {
                    const T* irow = in + (b * Cin + c) * L;
                    T* ig = input.grad.data() + (b * Cin + c) * L;
                    T* wg = kernel.grad.data() + (o * Cin + c) * K;
                    const T* wrow = w + (o * Cin + c) * K;
                    // interior t: all K taps in range, inner loop over k keeps
                    // one accumulator per coordinate (deterministic order)
                    for (std::size_t t = 0; t < Lout; ++t) {
                        const std::ptrdiff_t base = static_cast<std::ptrdiff_t>(t) - pl;
                        const T g = gout[t];
                        if (base >= 0 &&
                            base + static_cast<std::ptrdiff_t>(K) <= static_cast<std::ptrdiff_t>(L)) {
                            const T* ip = irow + base;
                            T* igp = ig + base;
                            for (std::size_t k = 0; k < K; ++k) {
                                wg[k] += g * ip[k];
                                igp[k] += g * wrow[k];
                            }
                        } else {
                            for (std::size_t k = 0; k < K; ++k) {
                                const std::ptrdiff_t idx = base + static_cast<std::ptrdiff_t>(k);
                                if (idx < 0 || idx >= static_cast<std::ptrdiff_t>(L)) continue;
                                wg[k] += g * irow[idx];
                                ig[idx] += g * wrow[k];
                            }
                        }
                    }
                }
            }
        }
    };
    return Tensor<T>(out);
}

template <typename T>
Tensor<T> conv1d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 std::size_t padding) {
    return conv1d(input, kernel, bias, padding, padding);
}

// ---------------------------------------------------------------------------
// maxpool1d — gradient routed to the first-occurring maximum per window
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> maxpool1d(const Tensor<T>& input, std::size_t width, std::size_t stride) {
    if (input.shape().size() != 3) throw ShapeError("maxpool1d: expected rank-3 input");
    if (width == 0 || stride == 0) throw UsageError("maxpool1d: width and stride must be positive");
    const std::size_t B = input.dim(0), C = input.dim(1), L = input.dim(2);
    if (width > L)
        throw ShapeError("maxpool1d: window " + std::to_string(width) + " exceeds length " +
                         std::to_string(L));
    const std::size_t Lout = (L - width) / stride + 1;

    auto out = detail::make_result<T>({B, C, Lout}, {input.node()});
    auto argmax = std::make_shared<std::vector<std::size_t>>(B * C * Lout);
    const T* in = input.values().data();
    T* dst = out->values.data();
    for (std::size_t r = 0; r < B * C; ++r) {
        const T* irow = in + r * L;
        for (std::size_t t = 0; t < Lout; ++t) {
            std::size_t best = t * stride;
            T bv = irow[best];
            for (std::size_t k = 1; k < width; ++k) {
                const std::size_t idx = t * stride + k;
                if (irow[idx] > bv) {
                    bv = irow[idx];
                    best = idx;
                }
            }
            dst[r * Lout + t] = bv;
            (*argmax)[r * Lout + t] = r * L + best;
        }
    }
    out->backward_fn = [argmax](TensorNode<T>& self) {
        auto& input = *self.parents[0];
        input.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            input.grad[(*argmax)[i]] += self.grad[i];
    };
    return Tensor<T>(out);
}

// ---------------------------------------------------------------------------
// batchnorm1d — per-channel statistics over (batch, length)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> batchnorm1d(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                      std::vector<T>& running_mean, std::vector<T>& running_var, bool train,
                      T momentum, T eps) {
    if (input.shape().size() != 3) throw ShapeError("batchnorm1d: expected rank-3 input");
    const std::size_t B = input.dim(0), C = input.dim(1), L = input.dim(2);
    if (gamma.numel() != C || beta.numel() != C || running_mean.size() != C ||
        running_var.size() != C)
        throw ShapeError("batchnorm1d: affine/running buffers must have one entry per channel");
    const std::size_t N = B * L;
    if (train && N < 2)
        throw UsageError("batchnorm1d: train mode needs at least 2 values per channel, got " +
                         std::to_string(N));

    auto out = detail::make_result<T>(input.shape(), {input.node(), gamma.node(), beta.node()});
    const T* in = input.values().data();
    const T* g = gamma.values().data();
    const T* be = beta.values().data();
    T* dst = out->values.data();

    auto mean = std::make_shared<std::vector<T>>(C);
    auto inv_std = std::make_shared<std::vector<T>>(C);
    for (std::size_t c = 0; c < C; ++c) {
        T mu, var;
        if (train) {
            T s = 0;
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t t = 0; t < L; ++t) s += in[(b * C + c) * L + t];
            mu = s / static_cast<T>(N);
            T v = 0;
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t t = 0; t < L; ++t) {
                    const T d = in[(b * C + c) * L + t] - mu;
                    v += d * d;
                }
            var = v / static_cast<T>(N);  // population variance
            running_mean[c] = (T(1) - momentum) * running_mean[c] + momentum * mu;
            running_var[c] = (T(1) - momentum) * running_var[c] + momentum * var;
        } else {
            mu = running_mean[c];
            var = running_var[c];
        }
        (*mean)[c] = mu;
        (*inv_std)[c] = T(1) / std::sqrt(var + eps);
        const T scale = g[c] * (*inv_std)[c];
        const T shift = be[c] - scale * mu;
        for (std::size_t b = 0; b < B; ++b) {
            const T* irow = in + (b * C + c) * L;
            T* orow = dst + (b * C + c) * L;
            for (std::size_t t = 0; t < L; ++t) orow[t] = scale * irow[t] + shift;
        }
    }

    out->backward_fn = [B, C, L, N, train, mean, inv_std](TensorNode<T>& self) {
        auto& input = *self.parents[0];
        auto& gamma = *self.parents[1];
        auto& beta = *self.parents[2];
        input.ensure_grad();
        gamma.ensure_grad();
        beta.ensure_grad();
        const T* in = input.values.data();
        const T* g = gamma.values.data();
        for (std::size_t c = 0; c < C; ++c) {
            const T mu = (*mean)[c];
            const T istd = (*inv_std)[c];
            T sum_dy = 0, sum_dy_xhat = 0;
            for (std::size_t b = 0; b < B; ++b) {
                const T* dy = self.grad.data() + (b * C + c) * L;
                const T* x = in + (b * C + c) * L;
                for (std::size_t t = 0; t < L; ++t) {
                    sum_dy += dy[t];
                    sum_dy_xhat += dy[t] * (x[t] - mu) * istd;
                }
            }
            beta.grad[c] += sum_dy;
            gamma.grad[c] += sum_dy_xhat;
            const T gc = g[c];
            if (train) {
                const T mean_dy = sum_dy / static_cast<T>(N);
                const T mean_dy_xhat = sum_dy_xhat / static_cast<T>(N);
                for (std::size_t b = 0; b < B; ++b) {
                    const T* dy = self.grad.data() + (b * C + c) * L;
                    const T* x = in + (b * C + c) * L;
                    T* dx = input.grad.data() + (b * C + c) * L;
                    for (std::size_t t = 0; t < L; ++t) {
                        const T xhat = (x[t] - mu) * istd;
                        dx[t] += gc * istd * (dy[t] - mean_dy - xhat * mean_dy_xhat);
                    }
                }
            } else {
                for (std::size_t b = 0; b < B; ++b) {
                    const T* dy = self.grad.data() + (b * C + c) * L;
                    T* dx = input.grad.data() + (b * C + c) * L;
                    for (std::size_t t = 0; t < L; ++t) dx[t] += gc * istd * dy[t];
                }
            }
        }
    };
    return Tensor<T>(out);
}

// ---------------------------------------------------------------------------
// linear
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
    if (input.shape().size() != 2 || weight.shape().size() != 2)
        throw ShapeError("linear: input and weight must be rank 2");
    const std::size_t B = input.dim(0), Fin = input.dim(1);
    const std::size_t Fout = weight.dim(0);
    if (weight.dim(1) != Fin)
        throw ShapeError("linear: weight expects " + std::to_string(weight.dim(1)) +
                         " input features, got " + std::to_string(Fin));
    if (bias.numel() != Fout) throw ShapeError("linear: bias length != output features");

    auto out = detail::make_result<T>({B, Fout}, {input.node(), weight.node(), bias.node()});
    const T* in = input.values().data();
    const T* w = weight.values().data();
    const T* bb = bias.values().data();
    T* dst = out->values.data();
    for (std::size_t i = 0; i < B; ++i) {
        for (std::size_t o = 0; o < Fout; ++o) {
            T acc = bb[o];
            const T* irow = in + i * Fin;
            const T* wrow = w + o * Fin;
            for (std::size_t f = 0; f < Fin; ++f) acc += irow[f] * wrow[f];
            dst[i * Fout + o] = acc;
        }
    }
    out->backward_fn = [B, Fin, Fout](TensorNode<T>& self) {
        auto& input = *self.parents[0];
        auto& weight = *self.parents[1];
        auto& bias = *self.parents[2];
        input.ensure_grad();
        weight.ensure_grad();
        bias.ensure_grad();
        const T* in = input.values.data();
        const T* w = weight.values.data();
        for (std::size_t i = 0; i < B; ++i) {
            const T* grow = self.grad.data() + i * Fout;
            T* irow_g = input.grad.data() + i * Fin;
            const T* irow = in + i * Fin;
            for (std::size_t o = 0; o < Fout; ++o) {
                const T g = grow[o];
                bias.grad[o] += g;
                const T* wrow = w + o * Fin;
                T* wrow_g = weight.grad.data() + o * Fin;
                for (std::size_t f = 0; f < Fin; ++f) {
                    irow_g[f] += g * wrow[f];
                    wrow_g[f] += g * irow[f];
                }
            }
        }
    };
    return Tensor<T>(out);
}

// ---------------------------------------------------------------------------
// dropout — inverted scaling, mask reused in backward
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> dropout(const Tensor<T>& input, double p, bool train, Rng& rng) {
    if (p < 0.0 || p >= 1.0)
        throw ConfigError("dropout: probability must lie in [0, 1), got " + std::to_string(p));
    if (!train || p == 0.0) return input;  // identity, no draws consumed
    auto out = detail::make_result<T>(input.shape(), {input.node()});
    auto mask = std::make_shared<std::vector<T>>(input.numel());
    const T keep_scale = T(1.0 / (1.0 - p));
    for (std::size_t i = 0; i < input.numel(); ++i) {
        (*mask)[i] = rng.real() < p ? T(0) : keep_scale;
        out->values[i] = input.values()[i] * (*mask)[i];
    }
    out->backward_fn = [mask](TensorNode<T>& self) {
        auto& input = *self.parents[0];
        input.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            input.grad[i] += self.grad[i] * (*mask)[i];
    };
    return Tensor<T>(out);
}

// ---------------------------------------------------------------------------
// softmax / cross-entropy / KL — all max-shifted for stability
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax(const Tensor<T>& input, std::size_t axis) {
    if (axis >= input.shape().size()) throw UsageError("softmax: axis out of range");
    const auto& shape = input.shape();
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
    const std::size_t n = shape[axis];

    auto out = detail::make_result<T>(shape, {input.node()});
    const T* in = input.values().data();
    T* dst = out->values.data();
    for (std::size_t a = 0; a < outer; ++a) {
        for (std::size_t b = 0; b < inner; ++b) {
            const std::size_t base = a * n * inner + b;
            T mx = in[base];
            for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, in[base + i * inner]);
            T z = 0;
            for (std::size_t i = 0; i < n; ++i) {
                const T e = std::exp(in[base + i * inner] - mx);
                dst[base + i * inner] = e;
                z += e;
            }
            const T inv = T(1) / z;
            for (std::size_t i = 0; i < n; ++i) dst[base + i * inner] *= inv;
        }
    }
    out->backward_fn = [outer, inner, n](TensorNode<T>& self) {
        auto& input = *self.parents[0];
        input.ensure_grad();
        for (std::size_t a = 0; a < outer; ++a) {
            for (std::size_t b = 0; b < inner; ++b) {
                const std::size_t base = a * n * inner + b;
                T dot = 0;
                for (std::size_t i = 0; i < n; ++i)
                    dot += self.grad[base + i * inner] * self.values[base + i * inner];
                for (std::size_t i = 0; i < n; ++i) {
                    const std::size_t idx = base + i * inner;
                    input.grad[idx] += self.values[idx] * (self.grad[idx] - dot);
                }
            }
        }
    };
    return Tensor<T>(out);
}

namespace detail {

// log-softmax of one row of n entries, written to lp
template <typename T>
void log_softmax_row(const T* row, T* lp, std::size_t n) {
    T mx = row[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, row[i]);
    T z = 0;
    for (std::size_t i = 0; i < n; ++i) z += std::exp(row[i] - mx);
    const T lse = mx + std::log(z);
    for (std::size_t i = 0; i < n; ++i) lp[i] = row[i] - lse;
}

}  // namespace detail

// Mean over the batch of -log softmax(logits)[label].
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<std::int32_t>& labels) {
    if (logits.shape().size() != 2) throw ShapeError("cross_entropy: logits must be rank 2");
    const std::size_t B = logits.dim(0), C = logits.dim(1);
    if (labels.size() != B)
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                         std::to_string(B));
    for (std::size_t i = 0; i < B; ++i)
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= C)
            throw UsageError("cross_entropy: label " + std::to_string(labels[i]) +
                             " out of range [0, " + std::to_string(C) + ")");

    auto out = detail::make_result<T>({1}, {logits.node()});
    auto logp = std::make_shared<std::vector<T>>(B * C);
    const T* in = logits.values().data();
    T acc = 0;
    for (std::size_t i = 0; i < B; ++i) {
        detail::log_softmax_row(in + i * C, logp->data() + i * C, C);
        acc -= (*logp)[i * C + static_cast<std::size_t>(labels[i])];
    }
    out->values[0] = acc / static_cast<T>(B);
    out->backward_fn = [B, C, labels, logp](TensorNode<T>& self) {
        auto& logits = *self.parents[0];
        logits.ensure_grad();
        const T g = self.grad[0] / static_cast<T>(B);
        for (std::size_t i = 0; i < B; ++i) {
            T* grow = logits.grad.data() + i * C;
            for (std::size_t c = 0; c < C; ++c) {
                T p = std::exp((*logp)[i * C + c]);
                if (c == static_cast<std::size_t>(labels[i])) p -= T(1);
                grow[c] += g * p;
            }
        }
    };
    return Tensor<T>(out);
}

// Mean over the batch of sum_c P(c) * (log P(c) - log Q(c)) with P, Q the
// softmax of the two logit rows. Log-space form cancels exactly when the
// rows are identical; gradients flow through both arguments.
template <typename T>
Tensor<T> kl_divergence(const Tensor<T>& p_logits, const Tensor<T>& q_logits) {
    if (p_logits.shape() != q_logits.shape() || p_logits.shape().size() != 2)
        throw ShapeError("kl_divergence: logits must be rank 2 with matching shapes");
    const std::size_t B = p_logits.dim(0), C = p_logits.dim(1);

    auto out = detail::make_result<T>({1}, {p_logits.node(), q_logits.node()});
    auto lp = std::make_shared<std::vector<T>>(B * C);
    auto lq = std::make_shared<std::vector<T>>(B * C);
    auto row_kl = std::make_shared<std::vector<T>>(B);
    T acc = 0;
    for (std::size_t i = 0; i < B; ++i) {
        detail::log_softmax_row(p_logits.values().data() + i * C, lp->data() + i * C, C);
        detail::log_softmax_row(q_logits.values().data() + i * C, lq->data() + i * C, C);
        T kl = 0;
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t idx = i * C + c;
            kl += std::exp((*lp)[idx]) * ((*lp)[idx] - (*lq)[idx]);
        }
        (*row_kl)[i] = kl;
        acc += kl;
    }
    out->values[0] = acc / static_cast<T>(B);
    out->backward_fn = [B, C, lp, lq, row_kl](TensorNode<T>& self) {
        auto& pl = *self.parents[0];
        auto& ql = *self.parents[1];
        pl.ensure_grad();
        ql.ensure_grad();
        const T g = self.grad[0] / static_cast<T>(B);
        for (std::size_t i = 0; i < B; ++i) {
            for (std::size_t c = 0; c < C; ++c) {
                const std::size_t idx = i * C + c;
                const T p = std::exp((*lp)[idx]);
                const T q = std::exp((*lq)[idx]);
                pl.grad[idx] += g * p * (((*lp)[idx] - (*lq)[idx]) - (*row_kl)[i]);
                ql.grad[idx] += g * (q - p);
            }
        }
    };
    return Tensor<T>(out);
}

}  // namespace attngen
