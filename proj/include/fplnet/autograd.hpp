#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "fplnet/conv.hpp"
#include "fplnet/error.hpp"
#include "fplnet/loss.hpp"
#include "fplnet/ops.hpp"
#include "fplnet/parameters.hpp"
#include "fplnet/tensor.hpp"

namespace fplnet {

enum class OpKind {
    input,
    parameter,
    conv2d,
    transposed_conv2d,
    batch_norm,
    prelu,
    add,
    concat,
    bilinear,
    avg_pool,
    cross_entropy,
    dot,
};

inline const char* op_kind_name(OpKind k) {
    switch (k) {
        case OpKind::input: return "input";
        case OpKind::parameter: return "parameter";
        case OpKind::conv2d: return "conv2d";
        case OpKind::transposed_conv2d: return "transposed_conv2d";
        case OpKind::batch_norm: return "batch_norm";
        case OpKind::prelu: return "prelu";
        case OpKind::add: return "add";
        case OpKind::concat: return "concat";
        case OpKind::bilinear: return "bilinear";
        case OpKind::avg_pool: return "avg_pool";
        case OpKind::cross_entropy: return "cross_entropy";
        case OpKind::dot: return "dot";
    }
    return "?";
}

template <typename T>
struct Node {
    OpKind kind = OpKind::input;
    std::size_t id = 0;
    std::size_t graph_id = 0;
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    std::vector<std::shared_ptr<Node>> inputs;
    Parameter<T>* param = nullptr;
    std::function<void(Node&)> backward;
    bool requires_grad = false;

    const Tensor<T>& value() const { return external ? *external : owned; }

    Tensor<T>& ensure_grad() {
        if (grad.empty()) grad = Tensor<T>(value().shape());
        return grad;
    }
};

/// Handle to a node of a Graph. Cheap to copy.
template <typename T>
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

    const Tensor<T>& value() const { return node_->value(); }
    const Shape& shape() const { return node_->value().shape(); }
    const Tensor<T>& grad() const { return node_->grad; }
    OpKind kind() const { return node_->kind; }
    bool requires_grad() const { return node_->requires_grad; }
    explicit operator bool() const { return static_cast<bool>(node_); }

    const std::shared_ptr<Node<T>>& node() const { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

/// Tape of nodes in creation order, which is a topological order: every node's
/// inputs were created before it. With recording off no tape, inputs or
/// backward closures are kept, so intermediate values are freed as soon as the
/// caller drops them.
template <typename T>
class Graph {
public:
    explicit Graph(bool record = true) : record_(record), id_(next_id()) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    bool recording() const { return record_; }
    std::size_t size() const { return tape_.size(); }
    const std::vector<std::shared_ptr<Node<T>>>& tape() const { return tape_; }

    Var<T> input(Tensor<T> value, bool requires_grad = false) {
        auto n = new_node(OpKind::input);
        n->owned = std::move(value);
        n->requires_grad = record_ && requires_grad;
        return commit(n);
    }

    /// Leaf bound to a parameter's tensor (not copied). Gradients land in p.grad.
    Var<T> param(Parameter<T>& p) {
        auto n = new_node(OpKind::parameter);
        n->external = &p.value;
        n->param = &p;
        n->requires_grad = record_ && p.trainable();
        if (n->requires_grad)
            n->backward = [](Node<T>& self) {
                Parameter<T>& target = *self.param;
                if (target.grad.empty() || target.grad.shape() != target.value.shape())
                    target.grad = Tensor<T>(target.value.shape());
                auto dst = target.grad.data();
                const auto src = self.grad.data();
                for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
            };
        return commit(n);
    }

    /// Records an op node. backward receives the node itself, reads
    /// node.grad and accumulates into node.inputs[k]->ensure_grad().
    Var<T> make(OpKind kind, Tensor<T> value, const std::vector<Var<T>>& inputs,
                std::function<void(Node<T>&)> backward) {
        auto n = new_node(kind);
        n->owned = std::move(value);
        if (record_) {
            for (const auto& v : inputs) {
                if (v.node()->graph_id != id_) throw Error(std::string(op_kind_name(kind)) + ": input from another graph");
                n->inputs.push_back(v.node());
                n->requires_grad = n->requires_grad || v.requires_grad();
            }
            if (n->requires_grad) n->backward = std::move(backward);
        }
        return commit(n);
    }

    /// Reverse-mode sweep from a scalar node, visiting the tape in exact
    /// reverse order. Parameter gradients accumulate into Parameter::grad.
    void backward(const Var<T>& loss) {
        if (!record_) throw Error("backward: graph was run without recording, no cached forward");
        if (!loss || loss.node()->graph_id != id_ || loss.node()->id >= tape_.size() ||
            tape_[loss.node()->id] != loss.node())
            throw Error("backward: node has no cached forward value in this graph");
        if (loss.value().size() != 1)
            throw ShapeError("backward: loss must be scalar, got " + loss.shape().str());
        for (auto& n : tape_) n->grad = Tensor<T>();
        loss.node()->ensure_grad()[0] = T(1);
        for (std::size_t i = loss.node()->id + 1; i-- > 0;) {
            Node<T>& n = *tape_[i];
            if (n.grad.empty() || !n.backward) continue;
            n.backward(n);
        }
    }

private:
    static std::size_t next_id() {
        static std::size_t counter = 0;
        return ++counter;
    }

    std::shared_ptr<Node<T>> new_node(OpKind kind) {
        auto n = std::make_shared<Node<T>>();
        n->kind = kind;
        n->graph_id = id_;
        return n;
    }

    Var<T> commit(std::shared_ptr<Node<T>> n) {
        if (record_) {
            n->id = tape_.size();
            tape_.push_back(n);
        }
        return Var<T>(std::move(n));
    }

    bool record_;
    std::size_t id_;
    std::vector<std::shared_ptr<Node<T>>> tape_;
};

/// Differentiable wrappers over the tensor kernels.
namespace ag {

namespace detail {
template <typename T>
bool wants(const Node<T>& n, std::size_t k) {
    return k < n.inputs.size() && n.inputs[k]->requires_grad;
}
template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
    auto d = dst.data();
    const auto s = src.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}
} // namespace detail

template <typename T>
Var<T> conv2d(Graph<T>& g, const Var<T>& x, const Var<T>& w, const Var<T>& bias, const ConvSpec& spec) {
    const bool with_bias = spec.has_bias && static_cast<bool>(bias);
    Tensor<T> y = fplnet::conv2d(x.value(), w.value(), spec, with_bias ? &bias.value() : nullptr);
    std::vector<Var<T>> in{x, w};
    if (with_bias) in.push_back(bias);
    return g.make(OpKind::conv2d, std::move(y), in, [spec, with_bias](Node<T>& n) {
        const Tensor<T>& xv = n.inputs[0]->value();
        const Tensor<T>& wv = n.inputs[1]->value();
        const auto geo = fplnet::detail::conv_geometry(spec, xv.shape().n, xv.shape().h, xv.shape().w,
                                                       n.grad.shape().h, n.grad.shape().w);
        if (detail::wants(n, 0)) fplnet::detail::scatter(n.grad.ptr(), wv.ptr(), n.inputs[0]->ensure_grad().ptr(), geo);
        if (detail::wants(n, 1))
            fplnet::detail::weight_gradient(xv.ptr(), n.grad.ptr(), n.inputs[1]->ensure_grad().ptr(), geo);
        if (with_bias && detail::wants(n, 2)) {
            Tensor<T>& gb = n.inputs[2]->ensure_grad();
            const Shape s = n.grad.shape();
            for (std::size_t b = 0; b < s.n; ++b)
                for (std::size_t c = 0; c < s.c; ++c) {
                    const T* p = n.grad.plane(b, c);
                    T acc = 0;
                    for (std::size_t i = 0; i < s.plane(); ++i) acc += p[i];
                    gb[c] += acc;
                }
        }
    });
}

template <typename T>
Var<T> conv2d(Graph<T>& g, const Var<T>& x, const Var<T>& w, const ConvSpec& spec) {
    return conv2d(g, x, w, Var<T>(), spec);
}

template <typename T>
Var<T> transposed_conv2d(Graph<T>& g, const Var<T>& x, const Var<T>& w, const Var<T>& bias, const ConvSpec& spec) {
    const bool with_bias = spec.has_bias && static_cast<bool>(bias);
    Tensor<T> y = fplnet::transposed_conv2d(x.value(), w.value(), spec, with_bias ? &bias.value() : nullptr);
    std::vector<Var<T>> in{x, w};
    if (with_bias) in.push_back(bias);
    return g.make(OpKind::transposed_conv2d, std::move(y), in, [spec, with_bias](Node<T>& n) {
        const Tensor<T>& xv = n.inputs[0]->value();
        const Tensor<T>& wv = n.inputs[1]->value();
        const auto geo = fplnet::detail::transposed_geometry(spec, xv.shape().n, xv.shape().h, xv.shape().w,
                                                             n.grad.shape().h, n.grad.shape().w);
        // The forward pass scattered x through geo, so its adjoint is a correlation.
        if (detail::wants(n, 0))
            fplnet::detail::correlate(n.grad.ptr(), wv.ptr(), n.inputs[0]->ensure_grad().ptr(), geo);
        if (detail::wants(n, 1))
            fplnet::detail::weight_gradient(n.grad.ptr(), xv.ptr(), n.inputs[1]->ensure_grad().ptr(), geo);
        if (with_bias && detail::wants(n, 2)) {
            Tensor<T>& gb = n.inputs[2]->ensure_grad();
            const Shape s = n.grad.shape();
            for (std::size_t b = 0; b < s.n; ++b)
                for (std::size_t c = 0; c < s.c; ++c) {
                    const T* p = n.grad.plane(b, c);
                    T acc = 0;
                    for (std::size_t i = 0; i < s.plane(); ++i) acc += p[i];
                    gb[c] += acc;
                }
        }
    });
}

/// Batch normalization over (n, h, w). In train mode the running statistics
/// in running_mean / running_var are updated as a side effect.
template <typename T>
Var<T> batch_norm(Graph<T>& g, const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, Parameter<T>& running_mean,
                  Parameter<T>& running_var, Mode mode, T eps = T(1e-5), T momentum = T(0.1)) {
    if (mode == Mode::infer) {
        Tensor<T> y = fplnet::detail::bn_infer_forward<T>(x.value(), gamma.value().data(), beta.value().data(),
                                                          running_mean.value.data(), running_var.value.data(), eps);
        return g.make(OpKind::batch_norm, std::move(y), {x, gamma, beta}, [eps, &running_mean, &running_var](Node<T>& n) {
            const Tensor<T>& xv = n.inputs[0]->value();
            const auto gm = n.inputs[1]->value().data();
            const Shape s = xv.shape();
            for (std::size_t c = 0; c < s.c; ++c) {
                const T inv_std = T(1) / std::sqrt(running_var.value[c] + eps);
                const T mean = running_mean.value[c];
                for (std::size_t b = 0; b < s.n; ++b) {
                    const T* gp = n.grad.plane(b, c);
                    const T* xp = xv.plane(b, c);
                    if (detail::wants(n, 0)) {
                        T* gx = n.inputs[0]->ensure_grad().plane(b, c);
                        for (std::size_t i = 0; i < s.plane(); ++i) gx[i] += gp[i] * gm[c] * inv_std;
                    }
                    T sg = 0, sgx = 0;
                    for (std::size_t i = 0; i < s.plane(); ++i) {
                        sg += gp[i];
                        sgx += gp[i] * (xp[i] - mean) * inv_std;
                    }
                    if (detail::wants(n, 1)) n.inputs[1]->ensure_grad()[c] += sgx;
                    if (detail::wants(n, 2)) n.inputs[2]->ensure_grad()[c] += sg;
                }
            }
        });
    }
    auto stats = std::make_shared<BatchNormStats<T>>();
    Tensor<T> y = fplnet::detail::bn_train_forward<T>(x.value(), gamma.value().data(), beta.value().data(), eps, *stats);
    fplnet::detail::bn_update_running<T>(*stats, running_mean.value.data(), running_var.value.data(), momentum);
    return g.make(OpKind::batch_norm, std::move(y), {x, gamma, beta}, [stats](Node<T>& n) {
        Tensor<T>* gx = detail::wants(n, 0) ? &n.inputs[0]->ensure_grad() : nullptr;
        T* ggamma = detail::wants(n, 1) ? n.inputs[1]->ensure_grad().ptr() : nullptr;
        T* gbeta = detail::wants(n, 2) ? n.inputs[2]->ensure_grad().ptr() : nullptr;
        fplnet::detail::bn_train_backward<T>(n.inputs[0]->value(), n.grad, n.inputs[1]->value().data(), *stats, gx,
                                             ggamma, gbeta);
    });
}

template <typename T>
Var<T> prelu(Graph<T>& g, const Var<T>& x, const Var<T>& slope) {
    Tensor<T> y = fplnet::prelu(x.value(), slope.value().data());
    return g.make(OpKind::prelu, std::move(y), {x, slope}, [](Node<T>& n) {
        const Tensor<T>& xv = n.inputs[0]->value();
        const Tensor<T>& a = n.inputs[1]->value();
        const Shape s = xv.shape();
        const bool gx = detail::wants(n, 0), ga = detail::wants(n, 1);
        for (std::size_t b = 0; b < s.n; ++b)
            for (std::size_t c = 0; c < s.c; ++c) {
                const T* xp = xv.plane(b, c);
                const T* gp = n.grad.plane(b, c);
                if (gx) {
                    T* out = n.inputs[0]->ensure_grad().plane(b, c);
                    for (std::size_t i = 0; i < s.plane(); ++i) out[i] += xp[i] >= T(0) ? gp[i] : a[c] * gp[i];
                }
                if (ga) {
                    T acc = 0;
                    for (std::size_t i = 0; i < s.plane(); ++i)
                        if (xp[i] < T(0)) acc += gp[i] * xp[i];
                    n.inputs[1]->ensure_grad()[c] += acc;
                }
            }
    });
}

template <typename T>
Var<T> add(Graph<T>& g, const std::vector<Var<T>>& terms) {
    if (terms.empty()) throw ShapeError("add: no inputs");
    std::vector<const Tensor<T>*> ptrs;
    for (const auto& t : terms) ptrs.push_back(&t.value());
    Tensor<T> y = fplnet::merge(ptrs, MergeMode::add);
    return g.make(OpKind::add, std::move(y), terms, [](Node<T>& n) {
        for (std::size_t k = 0; k < n.inputs.size(); ++k)
            if (detail::wants(n, k)) detail::accumulate(n.inputs[k]->ensure_grad(), n.grad);
    });
}

template <typename T>
Var<T> add(Graph<T>& g, const Var<T>& a, const Var<T>& b) {
    return add(g, std::vector<Var<T>>{a, b});
}

/// Channel concatenation in argument order.
template <typename T>
Var<T> concat(Graph<T>& g, const std::vector<Var<T>>& parts) {
    std::vector<const Tensor<T>*> ptrs;
    for (const auto& t : parts) ptrs.push_back(&t.value());
    Tensor<T> y = fplnet::merge(ptrs, MergeMode::concat);
    return g.make(OpKind::concat, std::move(y), parts, [](Node<T>& n) {
        const Shape s = n.grad.shape();
        std::size_t offset = 0;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
            const std::size_t ck = n.inputs[k]->value().shape().c;
            if (detail::wants(n, k)) {
                Tensor<T>& gk = n.inputs[k]->ensure_grad();
                for (std::size_t b = 0; b < s.n; ++b)
                    for (std::size_t c = 0; c < ck; ++c) {
                        const T* src = n.grad.plane(b, offset + c);
                        T* dst = gk.plane(b, c);
                        for (std::size_t i = 0; i < s.plane(); ++i) dst[i] += src[i];
                    }
            }
            offset += ck;
        }
    });
}

template <typename T>
Var<T> bilinear_upsample(Graph<T>& g, const Var<T>& x, std::size_t factor) {
    Tensor<T> y = fplnet::bilinear_upsample(x.value(), factor);
    return g.make(OpKind::bilinear, std::move(y), {x}, [factor](Node<T>& n) {
        if (!detail::wants(n, 0)) return;
        detail::accumulate(n.inputs[0]->ensure_grad(),
                           fplnet::bilinear_upsample_backward(n.grad, n.inputs[0]->value().shape(), factor));
    });
}

template <typename T>
Var<T> avg_pool(Graph<T>& g, const Var<T>& x, std::size_t factor) {
    Tensor<T> y = fplnet::avg_pool(x.value(), factor);
    return g.make(OpKind::avg_pool, std::move(y), {x}, [factor](Node<T>& n) {
        if (!detail::wants(n, 0)) return;
        detail::accumulate(n.inputs[0]->ensure_grad(),
                           fplnet::avg_pool_backward(n.grad, n.inputs[0]->value().shape(), factor));
    });
}

template <typename T>
Var<T> weighted_cross_entropy(Graph<T>& g, const Var<T>& logits, const LabelMap& targets,
                              const std::vector<double>& weights, std::int32_t ignore_index = LabelMap::kIgnore) {
    auto grad = std::make_shared<Tensor<T>>();
    const double loss =
        fplnet::weighted_cross_entropy(logits.value(), targets, weights, ignore_index, g.recording() ? grad.get() : nullptr);
    Tensor<T> y(Shape{1, 1, 1, 1}, static_cast<T>(loss));
    return g.make(OpKind::cross_entropy, std::move(y), {logits}, [grad](Node<T>& n) {
        if (!detail::wants(n, 0)) return;
        Tensor<T>& gx = n.inputs[0]->ensure_grad();
        const T up = n.grad[0];
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += up * (*grad)[i];
    });
}

/// Scalar sum(x * r) with a constant r; a linear probe used by gradient checks.
template <typename T>
Var<T> dot(Graph<T>& g, const Var<T>& x, const Tensor<T>& r) {
    require_same_shape(x.value(), r, "dot");
    Tensor<T> y(Shape{1, 1, 1, 1}, static_cast<T>(inner_product(x.value(), r)));
    return g.make(OpKind::dot, std::move(y), {x}, [r](Node<T>& n) {
        if (!detail::wants(n, 0)) return;
        Tensor<T>& gx = n.inputs[0]->ensure_grad();
        const T up = n.grad[0];
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += up * r[i];
    });
}

} // namespace ag
} // namespace fplnet
