// Copyright (c) 2026 dsd authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "dsd/errors.hpp"
#include "dsd/rng.hpp"

namespace dsd {

class Tensor;

namespace detail {

// Test hook: when set to a primitive name, that primitive's backward pass is
// deliberately miscaled so gradient checks can prove they catch bad gradients.
inline const char*& corrupted_backward() {
    static const char* name = nullptr;
    return name;
}

inline double corruption_factor(const char* op) {
    const char* c = corrupted_backward();
    return (c && std::string(c) == op) ? 1.01 : 1.0;
}

struct Node {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    std::vector<double> grad;  // sized lazily by backward()
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    std::size_t size() const { return data.size(); }
};

inline std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) {
        if (e == 0) throw ShapeError("tensor extents must be positive");
        n *= e;
    }
    return n;
}

}  // namespace detail

// Dense row-major tensor of 64-bit reals with reverse-mode autodiff.
// Value-semantic handle over a shared node; data is immutable after
// construction, so tensors are safe to share and alias freely.
class Tensor {
public:
    Tensor() = default;

    Tensor(std::vector<double> data, std::vector<std::size_t> shape, bool requires_grad = false) {
        if (detail::shape_numel(shape) != data.size())
            throw ShapeError("data length does not match shape product");
        node_ = std::make_shared<detail::Node>();
        node_->shape = std::move(shape);
        node_->data = std::move(data);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false) {
        std::vector<double> d(detail::shape_numel(shape), 0.0);
        return Tensor(std::move(d), std::move(shape), requires_grad);
    }

    static Tensor full(std::vector<std::size_t> shape, double v, bool requires_grad = false) {
        std::vector<double> d(detail::shape_numel(shape), v);
        return Tensor(std::move(d), std::move(shape), requires_grad);
    }

    static Tensor scalar(double v) { return Tensor({v}, {1}); }

    static Tensor randn(std::vector<std::size_t> shape, Rng& rng, double stddev = 1.0,
                        bool requires_grad = false) {
        std::vector<double> d(detail::shape_numel(shape));
        for (double& x : d) x = stddev * rng.normal();
        return Tensor(std::move(d), std::move(shape), requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const std::vector<std::size_t>& shape() const { return node_->shape; }
    const std::vector<double>& data() const { return node_->data; }
    std::size_t size() const { return node_->data.size(); }
    bool requires_grad() const { return node_->requires_grad; }

    std::size_t rows() const {
        if (shape().size() != 2) throw ShapeError("rows(): tensor is not a matrix");
        return shape()[0];
    }
    std::size_t cols() const {
        if (shape().size() != 2) throw ShapeError("cols(): tensor is not a matrix");
        return shape()[1];
    }
    double at(std::size_t i, std::size_t j) const { return data()[i * cols() + j]; }

    // Value of a single-element tensor.
    double value() const {
        if (size() != 1) throw ShapeError("value(): tensor is not scalar");
        return data()[0];
    }

    // Gradient accumulated by the most recent backward(); zeros if the tensor
    // did not participate in that graph.
    Tensor grad() const {
        if (node_->grad.empty()) return Tensor::zeros(shape());
        return Tensor(node_->grad, shape());
    }

    // Identical values in a fresh leaf node, detached from any graph.
    Tensor detached_copy(bool requires_grad = false) const {
        return Tensor(node_->data, node_->shape, requires_grad);
    }

    // Copy with one coordinate shifted; for finite differences.
    Tensor perturbed(std::size_t flat_index, double delta) const {
        if (flat_index >= size()) throw IndexError("perturbed(): index out of range");
        std::vector<double> d = node_->data;
        d[flat_index] += delta;
        return Tensor(std::move(d), node_->shape, node_->requires_grad);
    }

    bool same_shape(const Tensor& o) const { return shape() == o.shape(); }

    bool all_finite() const {
        for (double v : data())
            if (!std::isfinite(v)) return false;
        return true;
    }

    std::shared_ptr<detail::Node> node() const { return node_; }

private:
    std::shared_ptr<detail::Node> node_;

    friend Tensor make_op_result(const char* op, std::vector<std::size_t> shape,
                                 std::vector<double> data, std::vector<Tensor> parents,
                                 std::function<void(detail::Node&)> backward_fn);
};

inline Tensor make_op_result(const char* op, std::vector<std::size_t> shape,
                             std::vector<double> data, std::vector<Tensor> parents,
                             std::function<void(detail::Node&)> backward_fn) {
    bool rg = false;
    for (const Tensor& p : parents) rg = rg || p.requires_grad();
    Tensor out(std::move(data), std::move(shape), rg);
    out.node_->op = op;
    if (rg) {
        out.node_->parents.reserve(parents.size());
        for (const Tensor& p : parents) out.node_->parents.push_back(p.node());
        out.node_->backward_fn = std::move(backward_fn);
    }
    return out;
}

// ---------------------------------------------------------------------------
// primitives
// ---------------------------------------------------------------------------

namespace detail {
inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(op) + ": shape mismatch");
}
}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = a.data()[i] + b.data()[i];
    const double cf = detail::corruption_factor("add");
    return make_op_result("add", a.shape(), std::move(d), {a, b}, [cf](detail::Node& n) {
        for (int k = 0; k < 2; ++k) {
            auto& p = *n.parents[k];
            if (!p.requires_grad) continue;
            for (std::size_t i = 0; i < n.size(); ++i) p.grad[i] += cf * n.grad[i];
        }
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "sub");
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = a.data()[i] - b.data()[i];
    const double cf = detail::corruption_factor("sub");
    return make_op_result("sub", a.shape(), std::move(d), {a, b}, [cf](detail::Node& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        for (std::size_t i = 0; i < n.size(); ++i) {
            if (pa.requires_grad) pa.grad[i] += cf * n.grad[i];
            if (pb.requires_grad) pb.grad[i] -= cf * n.grad[i];
        }
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mul");
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = a.data()[i] * b.data()[i];
    const double cf = detail::corruption_factor("mul");
    return make_op_result("mul", a.shape(), std::move(d), {a, b}, [cf](detail::Node& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        for (std::size_t i = 0; i < n.size(); ++i) {
            if (pa.requires_grad) pa.grad[i] += cf * n.grad[i] * pb.data[i];
            if (pb.requires_grad) pb.grad[i] += cf * n.grad[i] * pa.data[i];
        }
    });
}

inline Tensor scale(const Tensor& a, double c) {
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = c * a.data()[i];
    const double cf = detail::corruption_factor("scale");
    return make_op_result("scale", a.shape(), std::move(d), {a}, [c, cf](detail::Node& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        for (std::size_t i = 0; i < n.size(); ++i) p.grad[i] += cf * c * n.grad[i];
    });
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2)
        throw ShapeError("matmul: operands must be rank-2");
    const std::size_t m = a.shape()[0], k = a.shape()[1], k2 = b.shape()[0], n = b.shape()[1];
    if (k != k2) throw ShapeError("matmul: inner extents differ");
    std::vector<double> d(m * n, 0.0);
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t l = 0; l < k; ++l) {
            const double av = pa[i * k + l];
            for (std::size_t j = 0; j < n; ++j) d[i * n + j] += av * pb[l * n + j];
        }
    const double cf = detail::corruption_factor("matmul");
    return make_op_result(
        "matmul", {m, n}, std::move(d), {a, b}, [m, k, n, cf](detail::Node& nd) {
            auto& A = *nd.parents[0];
            auto& B = *nd.parents[1];
            // dA = dC * B^T, dB = A^T * dC
            if (A.requires_grad) {
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                        const double g = cf * nd.grad[i * n + j];
                        for (std::size_t l = 0; l < k; ++l)
                            A.grad[i * k + l] += g * B.data[l * n + j];
                    }
            }
            if (B.requires_grad) {
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t l = 0; l < k; ++l) {
                        const double av = A.data[i * k + l];
                        for (std::size_t j = 0; j < n; ++j)
                            B.grad[l * n + j] += cf * av * nd.grad[i * n + j];
                    }
            }
        });
}

inline Tensor transpose(const Tensor& a) {
    if (a.shape().size() != 2) throw ShapeError("transpose: operand must be rank-2");
    const std::size_t m = a.shape()[0], n = a.shape()[1];
    std::vector<double> d(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) d[j * m + i] = a.data()[i * n + j];
    const double cf = detail::corruption_factor("transpose");
    return make_op_result("transpose", {n, m}, std::move(d), {a}, [m, n, cf](detail::Node& nd) {
        auto& p = *nd.parents[0];
        if (!p.requires_grad) return;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) p.grad[i * n + j] += cf * nd.grad[j * m + i];
    });
}

// x: [m, n], v: [n] (or [1, n]); adds v to every row of x.
inline Tensor add_rowvec(const Tensor& x, const Tensor& v) {
    if (x.shape().size() != 2) throw ShapeError("add_rowvec: x must be rank-2");
    const std::size_t m = x.shape()[0], n = x.shape()[1];
    if (v.size() != n) throw ShapeError("add_rowvec: vector length does not match columns");
    std::vector<double> d(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) d[i * n + j] = x.data()[i * n + j] + v.data()[j];
    const double cf = detail::corruption_factor("add_rowvec");
    return make_op_result("add_rowvec", {m, n}, std::move(d), {x, v}, [m, n, cf](detail::Node& nd) {
        auto& px = *nd.parents[0];
        auto& pv = *nd.parents[1];
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                const double g = cf * nd.grad[i * n + j];
                if (px.requires_grad) px.grad[i * n + j] += g;
                if (pv.requires_grad) pv.grad[j] += g;
            }
    });
}

// Row-wise softmax, stabilized by subtracting each row's max.
inline Tensor softmax_rows(const Tensor& a) {
    if (a.shape().size() != 2) throw ShapeError("softmax_rows: operand must be rank-2");
    const std::size_t m = a.shape()[0], n = a.shape()[1];
    std::vector<double> d(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        double mx = a.data()[i * n];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, a.data()[i * n + j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double e = std::exp(a.data()[i * n + j] - mx);
            d[i * n + j] = e;
            sum += e;
        }
        for (std::size_t j = 0; j < n; ++j) d[i * n + j] /= sum;
    }
    const double cf = detail::corruption_factor("softmax_rows");
    return make_op_result(
        "softmax_rows", {m, n}, std::move(d), {a}, [m, n, cf](detail::Node& nd) {
            auto& p = *nd.parents[0];
            if (!p.requires_grad) return;
            // ds_j = s_j * (g_j - sum_k g_k s_k) per row
            for (std::size_t i = 0; i < m; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j)
                    dot += nd.grad[i * n + j] * nd.data[i * n + j];
                for (std::size_t j = 0; j < n; ++j)
                    p.grad[i * n + j] +=
                        cf * nd.data[i * n + j] * (nd.grad[i * n + j] - dot);
            }
        });
}

// Smooth tanh-form GELU; differentiable everywhere.
inline Tensor gelu(const Tensor& a) {
    constexpr double kA = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double kB = 0.044715;
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        const double x = a.data()[i];
        d[i] = 0.5 * x * (1.0 + std::tanh(kA * (x + kB * x * x * x)));
    }
    const double cf = detail::corruption_factor("gelu");
    return make_op_result("gelu", a.shape(), std::move(d), {a}, [cf](detail::Node& nd) {
        auto& p = *nd.parents[0];
        if (!p.requires_grad) return;
        for (std::size_t i = 0; i < nd.size(); ++i) {
            const double x = p.data[i];
            const double u = kA * (x + kB * x * x * x);
            const double t = std::tanh(u);
            const double du = kA * (1.0 + 3.0 * kB * x * x);
            p.grad[i] += cf * nd.grad[i] * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du);
        }
    });
}

// log(sigmoid(x)) elementwise, computed as -softplus(-x) for stability.
inline Tensor log_sigmoid(const Tensor& a) {
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        const double x = a.data()[i];
        const double u = -x;
        d[i] = -(std::max(u, 0.0) + std::log1p(std::exp(-std::abs(u))));
    }
    const double cf = detail::corruption_factor("log_sigmoid");
    return make_op_result("log_sigmoid", a.shape(), std::move(d), {a}, [cf](detail::Node& nd) {
        auto& p = *nd.parents[0];
        if (!p.requires_grad) return;
        for (std::size_t i = 0; i < nd.size(); ++i) {
            // d/dx log sigmoid(x) = sigmoid(-x)
            const double x = p.data[i];
            const double s = x >= 0 ? std::exp(-x) / (1.0 + std::exp(-x))
                                    : 1.0 / (1.0 + std::exp(x));
            p.grad[i] += cf * nd.grad[i] * s;
        }
    });
}

inline Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    const double cf = detail::corruption_factor("sum");
    return make_op_result("sum", {1}, {s}, {a}, [cf](detail::Node& nd) {
        auto& p = *nd.parents[0];
        if (!p.requires_grad) return;
        for (std::size_t i = 0; i < p.data.size(); ++i) p.grad[i] += cf * nd.grad[0];
    });
}

inline Tensor reshape(const Tensor& a, std::vector<std::size_t> shape) {
    if (detail::shape_numel(shape) != a.size())
        throw ShapeError("reshape: element count differs");
    std::vector<double> d = a.data();
    const double cf = detail::corruption_factor("reshape");
    return make_op_result("reshape", std::move(shape), std::move(d), {a}, [cf](detail::Node& nd) {
        auto& p = *nd.parents[0];
        if (!p.requires_grad) return;
        for (std::size_t i = 0; i < nd.size(); ++i) p.grad[i] += cf * nd.grad[i];
    });
}

// ---------------------------------------------------------------------------
// composites
// ---------------------------------------------------------------------------

// x: [m, in], w: [out, in], b: [out] -> [m, out]
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    return add_rowvec(matmul(x, transpose(w)), b);
}

inline Tensor sum_sq_diff(const Tensor& a, const Tensor& b) {
    Tensor d = sub(a, b);
    return sum(mul(d, d));
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

// Reverse-mode sweep from a scalar loss. Gradients land in each node's grad
// buffer; read them via Tensor::grad() immediately after the call.
inline void backward(const Tensor& loss) {
    if (loss.size() != 1) throw ShapeError("backward: loss must be scalar");
    if (!loss.requires_grad()) {
        loss.node()->grad.assign(1, 0.0);
        return;
    }

    // Topological order: every node appears after all nodes it depends on.
    std::vector<detail::Node*> topo;
    std::unordered_set<detail::Node*> visited;
    struct Frame {
        detail::Node* node;
        std::size_t next_parent;
    };
    std::vector<Frame> stack{{loss.node().get(), 0}};
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            detail::Node* p = f.node->parents[f.next_parent++].get();
            if (p->requires_grad && visited.insert(p).second) stack.push_back({p, 0});
        } else {
            topo.push_back(f.node);
            stack.pop_back();
        }
    }

    for (detail::Node* n : topo) n->grad.assign(n->size(), 0.0);
    loss.node()->grad[0] = 1.0;

    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        detail::Node* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
    }
}

// ---------------------------------------------------------------------------
// ParamSet
// ---------------------------------------------------------------------------

// Named map of parameters. Frozen entries are excluded from gradients and
// updates. Iteration is in name order, so derived computations are
// deterministic.
class ParamSet {
public:
    struct Entry {
        Tensor tensor;
        bool frozen = false;
    };

    void insert(const std::string& name, Tensor t, bool frozen = false) {
        auto [it, ok] = entries_.emplace(name, Entry{std::move(t), frozen});
        if (!ok) throw ConfigError("ParamSet: duplicate identifier '" + name + "'");
    }

    bool contains(const std::string& name) const { return entries_.count(name) != 0; }

    const Tensor& at(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw ConfigError("ParamSet: unknown identifier '" + name + "'");
        return it->second.tensor;
    }

    bool frozen(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw ConfigError("ParamSet: unknown identifier '" + name + "'");
        return it->second.frozen;
    }

    // Rebind an existing entry to a new tensor (optimizer steps).
    void rebind(const std::string& name, Tensor t) {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw ConfigError("ParamSet: unknown identifier '" + name + "'");
        if (it->second.frozen) throw ConfigError("ParamSet: cannot rebind frozen '" + name + "'");
        if (!it->second.tensor.same_shape(t)) throw ShapeError("ParamSet: rebind shape mismatch");
        it->second.tensor = std::move(t);
    }

    std::size_t size() const { return entries_.size(); }

    std::size_t total_elements(bool trainable_only = false) const {
        std::size_t n = 0;
        for (const auto& [name, e] : entries_)
            if (!trainable_only || !e.frozen) n += e.tensor.size();
        return n;
    }

    // Deep value copy; optionally freezing every entry.
    ParamSet deep_copy(bool freeze_all = false) const {
        ParamSet out;
        for (const auto& [name, e] : entries_) {
            const bool fr = freeze_all || e.frozen;
            out.insert(name, e.tensor.detached_copy(!fr), fr);
        }
        return out;
    }

    // Copy with a single coordinate of one entry shifted by delta.
    ParamSet with_perturbed(const std::string& name, std::size_t flat_index, double delta) const {
        ParamSet out;
        for (const auto& [n, e] : entries_) {
            Tensor t = (n == name) ? e.tensor.perturbed(flat_index, delta) : e.tensor;
            out.insert(n, std::move(t), e.frozen);
        }
        return out;
    }

    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

private:
    std::map<std::string, Entry> entries_;
};

using LossFn = std::function<Tensor(const ParamSet&)>;

// Reverse-mode gradients of a scalar-valued function for every non-frozen
// entry. Frozen entries never appear; trainable entries that the graph does
// not touch come back as zeros.
inline std::map<std::string, Tensor> grad(const LossFn& f, const ParamSet& p) {
    // Clear leftovers from any earlier backward so untouched entries read as zero.
    for (const auto& [name, e] : p) e.tensor.node()->grad.clear();
    Tensor loss = f(p);
    backward(loss);
    std::map<std::string, Tensor> out;
    for (const auto& [name, e] : p) {
        if (e.frozen) continue;
        out.emplace(name, e.tensor.grad());
    }
    return out;
}

}  // namespace dsd
