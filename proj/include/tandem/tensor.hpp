// Copyright (c) 2026 The Tandem Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense double-precision tensors with reverse-mode automatic differentiation.
// The graph is a DAG of shared nodes; each op stores a backward closure that
// accumulates into its parents' gradients. Backward runs once per scalar
// loss, in reverse topological order.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "tandem/errors.hpp"

namespace tandem {

using Shape = std::vector<std::int64_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

// Thread-local switch: with gradients disabled, ops skip graph construction
// and produce detached values (used by samplers and finite differences).
namespace detail {
inline bool& grad_enabled_flag() {
    thread_local bool enabled = true;
    return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
    ~NoGradGuard() { detail::grad_enabled_flag() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

struct TensorNode {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until backward touches this node
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward;

    std::int64_t numel() const { return static_cast<std::int64_t>(value.size()); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return from_values(std::move(shape), {}, requires_grad, /*fill*/ 0.0);
    }

    static Tensor full(Shape shape, double v, bool requires_grad = false) {
        return from_values(std::move(shape), {}, requires_grad, v);
    }

    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
        if (shape_numel(shape) != static_cast<std::int64_t>(values.size()))
            throw ShapeError("tensor value count " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape));
        auto node = std::make_shared<TensorNode>();
        node->shape = std::move(shape);
        node->value = std::move(values);
        node->requires_grad = requires_grad;
        return Tensor(std::move(node));
    }

    static Tensor scalar(double v) { return from({1}, {v}); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::int64_t numel() const { return node_->numel(); }
    std::int64_t rows() const {
        return node_->shape.size() == 2 ? node_->shape[0] : (node_->shape.empty() ? 0 : 1);
    }
    std::int64_t cols() const {
        return node_->shape.size() == 2 ? node_->shape[1] : node_->shape[0];
    }
    bool requires_grad() const { return node_->requires_grad; }

    std::vector<double>& values() { return node_->value; }
    const std::vector<double>& values() const { return node_->value; }
    double item() const {
        if (numel() != 1)
            throw ShapeError("item() requires a scalar tensor, got " + shape_str(shape()));
        return node_->value[0];
    }
    double at(std::int64_t i) const { return node_->value[static_cast<std::size_t>(i)]; }
    double at(std::int64_t r, std::int64_t c) const {
        return node_->value[static_cast<std::size_t>(r * cols() + c)];
    }

    std::vector<double>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    const std::vector<double>& grad() const {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

    std::shared_ptr<TensorNode> node() const { return node_; }

    // Reverse-mode sweep from a scalar output. Gradients of every node in
    // this graph are reset first, so repeated backward calls do not leak
    // stale accumulations into shared leaves.
    void backward() const {
        if (numel() != 1)
            throw ShapeError("backward() requires a scalar loss, got " + shape_str(shape()));
        if (!node_->requires_grad) return;

        std::vector<TensorNode*> order;
        topo_sort(node_.get(), order);
        for (auto* n : order) n->grad.assign(n->value.size(), 0.0);
        node_->grad[0] = 1.0;
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            if ((*it)->backward) (*it)->backward(**it);
        }
    }

private:
    explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

    static Tensor from_values(Shape shape, std::vector<double>, bool requires_grad, double fill) {
        auto node = std::make_shared<TensorNode>();
        node->value.assign(static_cast<std::size_t>(shape_numel(shape)), fill);
        node->shape = std::move(shape);
        node->requires_grad = requires_grad;
        return Tensor(std::move(node));
    }

    static void topo_sort(TensorNode* root, std::vector<TensorNode*>& order) {
        std::unordered_set<TensorNode*> visited;
        std::vector<std::pair<TensorNode*, std::size_t>> stack;
        stack.emplace_back(root, 0);
        visited.insert(root);
        while (!stack.empty()) {
            auto& [node, idx] = stack.back();
            if (idx < node->parents.size()) {
                TensorNode* p = node->parents[idx++].get();
                if (p->requires_grad && !visited.count(p)) {
                    visited.insert(p);
                    stack.emplace_back(p, 0);
                }
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
    }

    friend Tensor make_op(Shape shape, std::vector<double> value,
                          std::vector<Tensor> parents,
                          std::function<void(TensorNode&)> backward);

    std::shared_ptr<TensorNode> node_;
};

// Builds an op node; drops the graph edges when gradients are disabled or no
// parent needs them.
inline Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                      std::function<void(TensorNode&)> backward) {
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    bool needs = false;
    if (grad_enabled()) {
        for (const auto& p : parents) needs = needs || p.requires_grad();
    }
    node->requires_grad = needs;
    if (needs) {
        node->parents.reserve(parents.size());
        for (auto& p : parents) node->parents.push_back(p.node());
        node->backward = std::move(backward);
    }
    return Tensor(std::move(node));
}

namespace detail {
inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}
inline void check_matrix(const Tensor& t, const char* op) {
    if (t.shape().size() != 2)
        throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}
}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    std::vector<double> out(a.values().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
    return make_op(a.shape(), std::move(out), {a, b}, [](TensorNode& self) {
        for (auto& p : self.parents) {
            if (!p->requires_grad) continue;
            p->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
        }
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "sub");
    std::vector<double> out(a.values().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
    return make_op(a.shape(), std::move(out), {a, b}, [](TensorNode& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] -= self.grad[i];
        }
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mul");
    std::vector<double> out(a.values().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
    return make_op(a.shape(), std::move(out), {a, b}, [](TensorNode& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                pa->grad[i] += self.grad[i] * pb->value[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                pb->grad[i] += self.grad[i] * pa->value[i];
        }
    });
}

inline Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.values().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * c;
    return make_op(a.shape(), std::move(out), {a}, [c](TensorNode& self) {
        auto& p = self.parents[0];
        p->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += c * self.grad[i];
    });
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::check_matrix(a, "matmul");
    detail::check_matrix(b, "matmul");
    const std::int64_t n = a.rows(), k = a.cols(), m = b.cols();
    if (b.rows() != k)
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    std::vector<double> out(static_cast<std::size_t>(n * m), 0.0);
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t p = 0; p < k; ++p) {
            const double aip = av[static_cast<std::size_t>(i * k + p)];
            if (aip == 0.0) continue;
            const double* brow = &bv[static_cast<std::size_t>(p * m)];
            double* orow = &out[static_cast<std::size_t>(i * m)];
            for (std::int64_t j = 0; j < m; ++j) orow[j] += aip * brow[j];
        }
    return make_op({n, m}, std::move(out), {a, b}, [n, k, m](TensorNode& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (pa->requires_grad) {
            pa->ensure_grad();
            // dA = G * B^T
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    const double* grow = &self.grad[static_cast<std::size_t>(i * m)];
                    const double* brow = &pb->value[static_cast<std::size_t>(p * m)];
                    for (std::int64_t j = 0; j < m; ++j) acc += grow[j] * brow[j];
                    pa->grad[static_cast<std::size_t>(i * k + p)] += acc;
                }
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            // dB = A^T * G
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t p = 0; p < k; ++p) {
                    const double aip = pa->value[static_cast<std::size_t>(i * k + p)];
                    if (aip == 0.0) continue;
                    const double* grow = &self.grad[static_cast<std::size_t>(i * m)];
                    double* brow = &pb->grad[static_cast<std::size_t>(p * m)];
                    for (std::int64_t j = 0; j < m; ++j) brow[j] += aip * grow[j];
                }
        }
    });
}

inline Tensor transpose(const Tensor& a) {
    detail::check_matrix(a, "transpose");
    const std::int64_t n = a.rows(), m = a.cols();
    std::vector<double> out(static_cast<std::size_t>(n * m));
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < m; ++j)
            out[static_cast<std::size_t>(j * n + i)] = a.values()[static_cast<std::size_t>(i * m + j)];
    return make_op({m, n}, std::move(out), {a}, [n, m](TensorNode& self) {
        auto& p = self.parents[0];
        p->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < m; ++j)
                p->grad[static_cast<std::size_t>(i * m + j)] +=
                    self.grad[static_cast<std::size_t>(j * n + i)];
    });
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    const std::int64_t m = parts[0].cols();
    std::int64_t n = 0;
    for (const auto& p : parts) {
        detail::check_matrix(p, "concat_rows");
        if (p.cols() != m)
            throw ShapeError("concat_rows: column mismatch " + shape_str(parts[0].shape()) +
                             " vs " + shape_str(p.shape()));
        n += p.rows();
    }
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(n * m));
    for (const auto& p : parts)
        out.insert(out.end(), p.values().begin(), p.values().end());
    std::vector<std::int64_t> row_counts;
    for (const auto& p : parts) row_counts.push_back(p.rows());
    return make_op({n, m}, std::move(out), parts, [row_counts, m](TensorNode& self) {
        std::size_t offset = 0;
        for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
            auto& p = self.parents[pi];
            const std::size_t count = static_cast<std::size_t>(row_counts[pi] * m);
            if (p->requires_grad) {
                p->ensure_grad();
                for (std::size_t i = 0; i < count; ++i) p->grad[i] += self.grad[offset + i];
            }
            offset += count;
        }
    });
}

inline Tensor slice_rows(const Tensor& a, std::int64_t r0, std::int64_t r1) {
    detail::check_matrix(a, "slice_rows");
    if (r0 < 0 || r1 > a.rows() || r0 >= r1)
        throw ShapeError("slice_rows: range [" + std::to_string(r0) + "," + std::to_string(r1) +
                         ") invalid for " + shape_str(a.shape()));
    const std::int64_t m = a.cols();
    std::vector<double> out(a.values().begin() + static_cast<std::ptrdiff_t>(r0 * m),
                            a.values().begin() + static_cast<std::ptrdiff_t>(r1 * m));
    return make_op({r1 - r0, m}, std::move(out), {a}, [r0, m](TensorNode& self) {
        auto& p = self.parents[0];
        p->ensure_grad();
        const std::size_t base = static_cast<std::size_t>(r0 * m);
        for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[base + i] += self.grad[i];
    });
}

inline Tensor slice_cols(const Tensor& a, std::int64_t c0, std::int64_t c1) {
    detail::check_matrix(a, "slice_cols");
    if (c0 < 0 || c1 > a.cols() || c0 >= c1)
        throw ShapeError("slice_cols: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                         ") invalid for " + shape_str(a.shape()));
    const std::int64_t n = a.rows(), m = a.cols(), w = c1 - c0;
    std::vector<double> out(static_cast<std::size_t>(n * w));
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < w; ++j)
            out[static_cast<std::size_t>(i * w + j)] =
                a.values()[static_cast<std::size_t>(i * m + c0 + j)];
    return make_op({n, w}, std::move(out), {a}, [n, m, c0, w](TensorNode& self) {
        auto& p = self.parents[0];
        p->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < w; ++j)
                p->grad[static_cast<std::size_t>(i * m + c0 + j)] +=
                    self.grad[static_cast<std::size_t>(i * w + j)];
    });
}

inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
    detail::check_matrix(a, "concat_cols");
    detail::check_matrix(b, "concat_cols");
    if (a.rows() != b.rows())
        throw ShapeError("concat_cols: row mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    const std::int64_t n = a.rows(), ma = a.cols(), mb = b.cols();
    std::vector<double> out(static_cast<std::size_t>(n * (ma + mb)));
    for (std::int64_t i = 0; i < n; ++i) {
        std::copy_n(&a.values()[static_cast<std::size_t>(i * ma)], ma,
                    &out[static_cast<std::size_t>(i * (ma + mb))]);
        std::copy_n(&b.values()[static_cast<std::size_t>(i * mb)], mb,
                    &out[static_cast<std::size_t>(i * (ma + mb) + ma)]);
    }
    return make_op({n, ma + mb}, std::move(out), {a, b}, [n, ma, mb](TensorNode& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        for (std::int64_t i = 0; i < n; ++i) {
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (std::int64_t j = 0; j < ma; ++j)
                    pa->grad[static_cast<std::size_t>(i * ma + j)] +=
                        self.grad[static_cast<std::size_t>(i * (ma + mb) + j)];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (std::int64_t j = 0; j < mb; ++j)
                    pb->grad[static_cast<std::size_t>(i * mb + j)] +=
                        self.grad[static_cast<std::size_t>(i * (ma + mb) + ma + j)];
            }
        }
    });
}

inline Tensor mean_rows(const Tensor& a) {
    detail::check_matrix(a, "mean_rows");
    const std::int64_t n = a.rows(), m = a.cols();
    std::vector<double> out(static_cast<std::size_t>(m), 0.0);
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < m; ++j)
            out[static_cast<std::size_t>(j)] += a.values()[static_cast<std::size_t>(i * m + j)];
    for (auto& v : out) v /= static_cast<double>(n);
    return make_op({1, m}, std::move(out), {a}, [n, m](TensorNode& self) {
        auto& p = self.parents[0];
        p->ensure_grad();
        const double inv = 1.0 / static_cast<double>(n);
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < m; ++j)
                p->grad[static_cast<std::size_t>(i * m + j)] +=
                    inv * self.grad[static_cast<std::size_t>(j)];
    });
}

inline Tensor sum_all(const Tensor& a) {
    double s = std::accumulate(a.values().begin(), a.values().end(), 0.0);
    return make_op({1}, {s}, {a}, [](TensorNode& self) {
        auto& p = self.parents[0];
        p->ensure_grad();
        for (auto& g : p->grad) g += self.grad[0];
    });
}

inline Tensor mean_all(const Tensor& a) {
    const double inv = 1.0 / static_cast<double>(a.numel());
    double s = std::accumulate(a.values().begin(), a.values().end(), 0.0) * inv;
    return make_op({1}, {s}, {a}, [inv](TensorNode& self) {
        auto& p = self.parents[0];
        p->ensure_grad();
        for (auto& g : p->grad) g += inv * self.grad[0];
    });
}

// Mean squared difference over all elements.
inline Tensor mse(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mse");
    const double inv = 1.0 / static_cast<double>(a.numel());
    double s = 0.0;
    for (std::size_t i = 0; i < a.values().size(); ++i) {
        const double d = a.values()[i] - b.values()[i];
        s += d * d;
    }
    return make_op({1}, {s * inv}, {a, b}, [inv](TensorNode& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        const double g = self.grad[0];
        for (std::size_t i = 0; i < pa->value.size(); ++i) {
            const double d = 2.0 * inv * (pa->value[i] - pb->value[i]) * g;
            if (pa->requires_grad) {
                pa->ensure_grad();
                pa->grad[i] += d;
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                pb->grad[i] -= d;
            }
        }
    });
}

// Mean absolute difference over all elements; subgradient 0 at ties.
inline Tensor mae(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mae");
    const double inv = 1.0 / static_cast<double>(a.numel());
    double s = 0.0;
    for (std::size_t i = 0; i < a.values().size(); ++i)
        s += std::abs(a.values()[i] - b.values()[i]);
    return make_op({1}, {s * inv}, {a, b}, [inv](TensorNode& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        const double g = self.grad[0];
        for (std::size_t i = 0; i < pa->value.size(); ++i) {
            const double d = pa->value[i] - pb->value[i];
            const double sg = (d > 0.0) - (d < 0.0);
            if (pa->requires_grad) {
                pa->ensure_grad();
                pa->grad[i] += inv * sg * g;
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                pb->grad[i] -= inv * sg * g;
            }
        }
    });
}

namespace detail {
inline constexpr double kInvSqrt2 = 0.70710678118654752440;
inline constexpr double kInvSqrt2Pi = 0.39894228040143267794;
}  // namespace detail

inline Tensor gelu(const Tensor& a) {
    using detail::kInvSqrt2;
    std::vector<double> out(a.values().size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = a.values()[i];
        out[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    }
    return make_op(a.shape(), std::move(out), {a}, [](TensorNode& self) {
        auto& p = self.parents[0];
        p->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double x = p->value[i];
            const double cdf = 0.5 * (1.0 + std::erf(x * detail::kInvSqrt2));
            const double pdf = detail::kInvSqrt2Pi * std::exp(-0.5 * x * x);
            p->grad[i] += self.grad[i] * (cdf + x * pdf);
        }
    });
}

inline Tensor softmax_rows(const Tensor& a) {
    detail::check_matrix(a, "softmax_rows");
    const std::int64_t n = a.rows(), m = a.cols();
    std::vector<double> out(a.values().size());
    for (std::int64_t i = 0; i < n; ++i) {
        const double* row = &a.values()[static_cast<std::size_t>(i * m)];
        double* orow = &out[static_cast<std::size_t>(i * m)];
        double mx = row[0];
        for (std::int64_t j = 1; j < m; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::int64_t j = 0; j < m; ++j) {
            orow[j] = std::exp(row[j] - mx);
            sum += orow[j];
        }
        for (std::int64_t j = 0; j < m; ++j) orow[j] /= sum;
    }
    return make_op(a.shape(), std::move(out), {a}, [n, m](TensorNode& self) {
        auto& p = self.parents[0];
        p->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i) {
            const double* y = &self.value[static_cast<std::size_t>(i * m)];
            const double* g = &self.grad[static_cast<std::size_t>(i * m)];
            double dot = 0.0;
            for (std::int64_t j = 0; j < m; ++j) dot += y[j] * g[j];
            double* pg = &p->grad[static_cast<std::size_t>(i * m)];
            for (std::int64_t j = 0; j < m; ++j) pg[j] += y[j] * (g[j] - dot);
        }
    });
}

inline bool all_finite(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace tandem
