#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "toib/errors.hpp"

namespace toib {

using Shape = std::vector<size_t>;

inline size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (const size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

namespace detail {

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;    // allocated on first use
    bool requires_grad = false;  // leaf parameter flag
    bool needs = false;          // true if gradients flow through this node

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

using NodePtr = std::shared_ptr<TensorNode>;

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

}  // namespace detail

// Dense row-major 64-bit tensor. Value handle over shared node storage; the
// autodiff tape references nodes, so copies of a Tensor alias the same data
// and gradient accumulator.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return make(std::move(shape), {}, requires_grad, 0.0);
    }

    static Tensor full(Shape shape, double value, bool requires_grad = false) {
        return make(std::move(shape), {}, requires_grad, value);
    }

    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
        if (values.size() != shape_numel(shape))
            throw DimensionError("tensor data length " + std::to_string(values.size()) +
                                 " does not match shape " + shape_str(shape));
        auto node = std::make_shared<detail::TensorNode>();
        node->shape = std::move(shape);
        node->data = std::move(values);
        node->requires_grad = requires_grad;
        node->needs = requires_grad;
        return Tensor(std::move(node));
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return from({1}, {v}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }

    const Shape& shape() const { return node_->shape; }
    size_t numel() const { return node_->data.size(); }
    size_t ndim() const { return node_->shape.size(); }

    size_t rows() const { return node_->shape.at(0); }
    size_t cols() const { return node_->shape.size() > 1 ? node_->shape[1] : 1; }

    std::vector<double>& values() { return node_->data; }
    const std::vector<double>& values() const { return node_->data; }

    double value() const {
        if (numel() != 1) throw ContractError("scalar access on tensor of shape " + shape_str(shape()));
        return node_->data[0];
    }

    double at(size_t i) const { return node_->data.at(i); }
    double at(size_t r, size_t c) const { return node_->data.at(r * cols() + c); }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg) {
        node_->requires_grad = rg;
        node_->needs = rg;
    }

    // True if gradients flow through this tensor (leaf flag or derived from one).
    bool grad_flows() const { return node_->needs; }

    std::vector<double>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    const std::vector<double>& grad() const {
        node_->ensure_grad();
        return node_->grad;
    }

    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    }

    // Value copy detached from any gradient flow.
    Tensor detach() const {
        auto node = std::make_shared<detail::TensorNode>();
        node->shape = node_->shape;
        node->data = node_->data;
        return Tensor(std::move(node));
    }

    detail::NodePtr node() const { return node_; }

private:
    explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}

    static Tensor make(Shape shape, std::vector<double> values, bool requires_grad, double fill) {
        auto node = std::make_shared<detail::TensorNode>();
        const size_t n = shape_numel(shape);
        node->shape = std::move(shape);
        if (values.empty())
            node->data.assign(n, fill);
        else
            node->data = std::move(values);
        node->requires_grad = requires_grad;
        node->needs = requires_grad;
        return Tensor(std::move(node));
    }

    friend class Tape;
    detail::NodePtr node_;
};

// Reverse-mode tape. Records one backward closure per op in forward order;
// backward() replays them in reverse, so a DAG with shared subexpressions
// accumulates gradient contributions by summation.
class Tape {
public:
    explicit Tape(bool recording = true) : recording_(recording) {}

    bool recording() const { return recording_; }
    size_t size() const { return records_.size(); }

    void clear() {
        records_.clear();
        produced_.clear();
    }

    // ---- binary elementwise (equal shape or one-element broadcast) ----

    Tensor add(const Tensor& a, const Tensor& b) {
        return binary(a, b, "add",
                      [](double x, double y) { return x + y; },
                      [](double, double, double g, double& da, double& db) {
                          da += g;
                          db += g;
                      });
    }

    Tensor sub(const Tensor& a, const Tensor& b) {
        return binary(a, b, "sub",
                      [](double x, double y) { return x - y; },
                      [](double, double, double g, double& da, double& db) {
                          da += g;
                          db -= g;
                      });
    }

    Tensor mul(const Tensor& a, const Tensor& b) {
        return binary(a, b, "mul",
                      [](double x, double y) { return x * y; },
                      [](double x, double y, double g, double& da, double& db) {
                          da += g * y;
                          db += g * x;
                      });
    }

    // ---- unary ----

    Tensor scale(const Tensor& a, double c) {
        return unary(a, [c](double x) { return c * x; },
                     [c](double, double, double g) { return c * g; });
    }

    Tensor add_const(const Tensor& a, double c) {
        return unary(a, [c](double x) { return x + c; },
                     [](double, double, double g) { return g; });
    }

    Tensor exp_(const Tensor& a) {
        return unary(a, [](double x) { return std::exp(x); },
                     [](double, double y, double g) { return g * y; });
    }

    Tensor log_(const Tensor& a) {
        for (const double x : a.values())
            if (!(x > 0.0)) throw DomainError("log of non-positive input " + std::to_string(x));
        return unary(a, [](double x) { return std::log(x); },
                     [](double x, double, double g) { return g / x; });
    }

    Tensor relu(const Tensor& a) {
        // Subgradient at 0 is 0.
        return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
                     [](double x, double, double g) { return x > 0.0 ? g : 0.0; });
    }

    Tensor tanh_(const Tensor& a) {
        return unary(a, [](double x) { return std::tanh(x); },
                     [](double, double y, double g) { return g * (1.0 - y * y); });
    }

    // Pass-through gradient strictly inside (lo, hi), zero outside.
    Tensor clamp(const Tensor& a, double lo, double hi) {
        if (!(lo < hi)) throw ContractError("clamp bounds must satisfy lo < hi");
        return unary(a, [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
                     [lo, hi](double x, double, double g) { return (x > lo && x < hi) ? g : 0.0; });
    }

    Tensor pow_const(const Tensor& a, double p) {
        const bool integral_nonneg = (p == std::floor(p) && p >= 0.0);
        if (!integral_nonneg) {
            for (const double x : a.values())
                if (!(x > 0.0))
                    throw DomainError("pow_const(" + std::to_string(p) + ") requires positive base, got " +
                                      std::to_string(x));
        }
        return unary(a, [p](double x) { return std::pow(x, p); },
                     [p](double x, double, double g) { return g * p * std::pow(x, p - 1.0); });
    }

    // ---- matmul ----

    Tensor matmul(const Tensor& a, const Tensor& b) {
        if (a.ndim() != 2 || b.ndim() != 2)
            throw DimensionError("matmul requires 2-D operands, got " + shape_str(a.shape()) + " and " +
                                 shape_str(b.shape()));
        const size_t m = a.shape()[0], k = a.shape()[1], k2 = b.shape()[0], n = b.shape()[1];
        if (k != k2)
            throw DimensionError("matmul inner dimensions " + shape_str(a.shape()) + " vs " +
                                 shape_str(b.shape()));
        Tensor out = fresh({m, n}, a, b);
        {
            detail::ECMap ma(a.values().data(), static_cast<long>(m), static_cast<long>(k));
            detail::ECMap mb(b.values().data(), static_cast<long>(k), static_cast<long>(n));
            detail::EMap mc(out.values().data(), static_cast<long>(m), static_cast<long>(n));
            mc.noalias() = ma * mb;
        }
        if (out.grad_flows() && recording_) {
            auto an = a.node(), bn = b.node(), on = out.node();
            push([an, bn, on, m, k, n] {
                detail::ECMap g(on->grad.data(), static_cast<long>(m), static_cast<long>(n));
                detail::ECMap ma(an->data.data(), static_cast<long>(m), static_cast<long>(k));
                detail::ECMap mb(bn->data.data(), static_cast<long>(k), static_cast<long>(n));
                if (an->needs) {
                    an->ensure_grad();
                    detail::EMap da(an->grad.data(), static_cast<long>(m), static_cast<long>(k));
                    da.noalias() += g * mb.transpose();
                }
                if (bn->needs) {
                    bn->ensure_grad();
                    detail::EMap db(bn->grad.data(), static_cast<long>(k), static_cast<long>(n));
                    db.noalias() += ma.transpose() * g;
                }
            });
        }
        return out;
    }

    // Adds a row vector of width n to every row of an [m x n] matrix.
    Tensor add_rowvec(const Tensor& a, const Tensor& v) {
        if (a.ndim() != 2) throw DimensionError("add_rowvec expects a 2-D left operand");
        const size_t m = a.shape()[0], n = a.shape()[1];
        if (v.numel() != n)
            throw DimensionError("add_rowvec width mismatch: " + shape_str(a.shape()) + " vs " +
                                 shape_str(v.shape()));
        Tensor out = fresh({m, n}, a, v);
        const auto& av = a.values();
        const auto& vv = v.values();
        auto& ov = out.values();
        for (size_t r = 0; r < m; ++r)
            for (size_t c = 0; c < n; ++c) ov[r * n + c] = av[r * n + c] + vv[c];
        if (out.grad_flows() && recording_) {
            auto an = a.node(), vn = v.node(), on = out.node();
            push([an, vn, on, m, n] {
                if (an->needs) {
                    an->ensure_grad();
                    for (size_t i = 0; i < m * n; ++i) an->grad[i] += on->grad[i];
                }
                if (vn->needs) {
                    vn->ensure_grad();
                    for (size_t r = 0; r < m; ++r)
                        for (size_t c = 0; c < n; ++c) vn->grad[c] += on->grad[r * n + c];
                }
            });
        }
        return out;
    }

    // ---- reductions ----

    Tensor sum(const Tensor& a) {
        Tensor out = fresh({1}, a);
        double acc = 0.0;
        for (const double x : a.values()) acc += x;
        out.values()[0] = acc;
        if (out.grad_flows() && recording_) {
            auto an = a.node();
            auto on = out.node();
            push([an, on] {
                if (!an->needs) return;
                an->ensure_grad();
                const double g = on->grad[0];
                for (double& d : an->grad) d += g;
            });
        }
        return out;
    }

    Tensor mean(const Tensor& a) {
        if (a.numel() == 0) throw DimensionError("mean of empty tensor");
        const double inv = 1.0 / static_cast<double>(a.numel());
        return scale(sum(a), inv);
    }

    // Axis reduction for 2-D tensors: axis 0 collapses rows -> [cols],
    // axis 1 collapses cols -> [rows].
    Tensor sum(const Tensor& a, int axis) { return axis_reduce(a, axis, false); }
    Tensor mean(const Tensor& a, int axis) { return axis_reduce(a, axis, true); }

    // ---- structural ----

    Tensor gather_rows(const Tensor& a, const std::vector<size_t>& idx) {
        if (a.ndim() != 2) throw DimensionError("gather_rows expects a 2-D tensor");
        const size_t n = a.shape()[1];
        for (const size_t r : idx)
            if (r >= a.shape()[0]) throw DimensionError("gather_rows index " + std::to_string(r) + " out of range");
        Tensor out = fresh({idx.size(), n}, a);
        const auto& av = a.values();
        auto& ov = out.values();
        for (size_t k = 0; k < idx.size(); ++k)
            std::copy_n(av.begin() + static_cast<long>(idx[k] * n), n, ov.begin() + static_cast<long>(k * n));
        if (out.grad_flows() && recording_) {
            auto an = a.node();
            auto on = out.node();
            push([an, on, idx, n] {
                if (!an->needs) return;
                an->ensure_grad();
                for (size_t k = 0; k < idx.size(); ++k)
                    for (size_t c = 0; c < n; ++c) an->grad[idx[k] * n + c] += on->grad[k * n + c];
            });
        }
        return out;
    }

    Tensor concat_cols(const Tensor& a, const Tensor& b) {
        if (a.ndim() != 2 || b.ndim() != 2 || a.shape()[0] != b.shape()[0])
            throw DimensionError("concat_cols requires 2-D tensors with equal row counts");
        const size_t m = a.shape()[0], ca = a.shape()[1], cb = b.shape()[1];
        Tensor out = fresh({m, ca + cb}, a, b);
        const auto& av = a.values();
        const auto& bv = b.values();
        auto& ov = out.values();
        for (size_t r = 0; r < m; ++r) {
            std::copy_n(av.begin() + static_cast<long>(r * ca), ca, ov.begin() + static_cast<long>(r * (ca + cb)));
            std::copy_n(bv.begin() + static_cast<long>(r * cb), cb,
                        ov.begin() + static_cast<long>(r * (ca + cb) + ca));
        }
        if (out.grad_flows() && recording_) {
            auto an = a.node(), bn = b.node(), on = out.node();
            push([an, bn, on, m, ca, cb] {
                for (size_t r = 0; r < m; ++r) {
                    if (an->needs) {
                        an->ensure_grad();
                        for (size_t c = 0; c < ca; ++c) an->grad[r * ca + c] += on->grad[r * (ca + cb) + c];
                    }
                    if (bn->needs) {
                        bn->ensure_grad();
                        for (size_t c = 0; c < cb; ++c) bn->grad[r * cb + c] += on->grad[r * (ca + cb) + ca + c];
                    }
                }
            });
        }
        return out;
    }

    // ---- model-specific ----

    // z = mu + exp(0.5*logvar) * eps. eps is a constant: gradients flow only
    // into mu and logvar.
    Tensor reparam_sample(const Tensor& mu, const Tensor& logvar, const Tensor& eps) {
        if (mu.shape() != logvar.shape() || mu.shape() != eps.shape())
            throw DimensionError("reparam_sample requires identical shapes, got " + shape_str(mu.shape()) +
                                 ", " + shape_str(logvar.shape()) + ", " + shape_str(eps.shape()));
        Tensor out = fresh(mu.shape(), mu, logvar);
        const auto& m = mu.values();
        const auto& lv = logvar.values();
        const auto& e = eps.values();
        auto& ov = out.values();
        for (size_t i = 0; i < ov.size(); ++i) ov[i] = m[i] + std::exp(0.5 * lv[i]) * e[i];
        if (out.grad_flows() && recording_) {
            auto mn = mu.node(), ln = logvar.node(), en = eps.node(), on = out.node();
            push([mn, ln, en, on] {
                const size_t n = on->grad.size();
                if (mn->needs) {
                    mn->ensure_grad();
                    for (size_t i = 0; i < n; ++i) mn->grad[i] += on->grad[i];
                }
                if (ln->needs) {
                    ln->ensure_grad();
                    for (size_t i = 0; i < n; ++i)
                        ln->grad[i] += on->grad[i] * 0.5 * std::exp(0.5 * ln->data[i]) * en->data[i];
                }
            });
        }
        return out;
    }

    // Mean over the batch of -log softmax(logits)[label], max-stabilized.
    // Labels are 1-based class indices.
    Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
        if (logits.ndim() != 2) throw DimensionError("cross_entropy expects [V x K] logits");
        const size_t v = logits.shape()[0], k = logits.shape()[1];
        if (labels.size() != v)
            throw ContractError("cross_entropy label count " + std::to_string(labels.size()) +
                                " does not match batch " + std::to_string(v));
        if (v == 0) throw ContractError("cross_entropy on empty batch");
        for (const int u : labels)
            if (u < 1 || static_cast<size_t>(u) > k)
                throw ContractError("label " + std::to_string(u) + " outside [1.." + std::to_string(k) + "]");

        Tensor out = fresh({1}, logits);
        const auto& lv = logits.values();
        double total = 0.0;
        for (size_t r = 0; r < v; ++r) {
            const double* row = lv.data() + r * k;
            const double mx = *std::max_element(row, row + k);
            double se = 0.0;
            for (size_t c = 0; c < k; ++c) se += std::exp(row[c] - mx);
            total += mx + std::log(se) - row[static_cast<size_t>(labels[r]) - 1];
        }
        out.values()[0] = total / static_cast<double>(v);

        if (out.grad_flows() && recording_) {
            auto ln = logits.node();
            auto on = out.node();
            push([ln, on, labels, v, k] {
                if (!ln->needs) return;
                ln->ensure_grad();
                const double g = on->grad[0] / static_cast<double>(v);
                for (size_t r = 0; r < v; ++r) {
                    const double* row = ln->data.data() + r * k;
                    const double mx = *std::max_element(row, row + k);
                    double se = 0.0;
                    for (size_t c = 0; c < k; ++c) se += std::exp(row[c] - mx);
                    for (size_t c = 0; c < k; ++c) {
                        const double soft = std::exp(row[c] - mx) / se;
                        const double onehot = (c + 1 == static_cast<size_t>(labels[r])) ? 1.0 : 0.0;
                        ln->grad[r * k + c] += g * (soft - onehot);
                    }
                }
            });
        }
        return out;
    }

    // Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. Intermediate
    // gradients are reset per call; leaf gradients accumulate across calls.
    void backward(const Tensor& loss) {
        if (loss.numel() != 1)
            throw ContractError("backward requires a scalar loss, got " + shape_str(loss.shape()));
        if (!std::isfinite(loss.value())) throw ContractError("backward on non-finite loss");
        for (const auto& n : produced_) n->grad.assign(n->data.size(), 0.0);
        loss.node()->ensure_grad();
        loss.node()->grad[0] = 1.0;
        for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
    }

private:
    Tensor fresh(Shape shape, const Tensor& a) { return fresh_impl(std::move(shape), a.grad_flows()); }
    Tensor fresh(Shape shape, const Tensor& a, const Tensor& b) {
        return fresh_impl(std::move(shape), a.grad_flows() || b.grad_flows());
    }

    Tensor fresh_impl(Shape shape, bool needs) {
        Tensor t = Tensor::zeros(std::move(shape));
        t.node_->needs = needs && recording_;
        if (t.node_->needs) produced_.push_back(t.node_);
        return t;
    }

    void push(std::function<void()> fn) { records_.push_back(std::move(fn)); }

    template <typename Fwd, typename Bwd>
    Tensor unary(const Tensor& a, Fwd fwd, Bwd bwd) {
        Tensor out = fresh(a.shape(), a);
        const auto& av = a.values();
        auto& ov = out.values();
        for (size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(av[i]);
        if (out.grad_flows() && recording_) {
            auto an = a.node();
            auto on = out.node();
            push([an, on, bwd] {
                if (!an->needs) return;
                an->ensure_grad();
                for (size_t i = 0; i < an->grad.size(); ++i)
                    an->grad[i] += bwd(an->data[i], on->data[i], on->grad[i]);
            });
        }
        return out;
    }

    template <typename Fwd, typename Bwd>
    Tensor binary(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Bwd bwd) {
        const bool a_scalar = a.numel() == 1, b_scalar = b.numel() == 1;
        if (!(a.shape() == b.shape() || a_scalar || b_scalar))
            throw DimensionError(std::string(name) + " shapes " + shape_str(a.shape()) + " vs " +
                                 shape_str(b.shape()) + " (equal-shape or one-element broadcast only)");
        const Tensor& big = (b_scalar || a.shape() == b.shape()) ? a : b;
        Tensor out = fresh(big.shape(), a, b);
        const auto& av = a.values();
        const auto& bv = b.values();
        auto& ov = out.values();
        const size_t n = ov.size();
        const size_t sa = a_scalar && n > 1 ? 0 : 1;
        const size_t sb = b_scalar && n > 1 ? 0 : 1;
        for (size_t i = 0; i < n; ++i) ov[i] = fwd(av[i * sa], bv[i * sb]);
        if (out.grad_flows() && recording_) {
            auto an = a.node(), bn = b.node(), on = out.node();
            push([an, bn, on, bwd, n, sa, sb] {
                if (an->needs) an->ensure_grad();
                if (bn->needs) bn->ensure_grad();
                double da_sink = 0.0, db_sink = 0.0;
                for (size_t i = 0; i < n; ++i) {
                    double& da = an->needs ? an->grad[i * sa] : da_sink;
                    double& db = bn->needs ? bn->grad[i * sb] : db_sink;
                    bwd(an->data[i * sa], bn->data[i * sb], on->grad[i], da, db);
                }
            });
        }
        return out;
    }

    Tensor axis_reduce(const Tensor& a, int axis, bool take_mean) {
        if (a.ndim() != 2) throw DimensionError("axis reduction expects a 2-D tensor");
        if (axis != 0 && axis != 1) throw DimensionError("invalid axis " + std::to_string(axis));
        const size_t m = a.shape()[0], n = a.shape()[1];
        const size_t count = axis == 0 ? m : n;
        if (count == 0) throw DimensionError("reduction over empty axis " + std::to_string(axis));
        const size_t out_len = axis == 0 ? n : m;
        Tensor out = fresh({out_len}, a);
        const auto& av = a.values();
        auto& ov = out.values();
        const double w = take_mean ? 1.0 / static_cast<double>(count) : 1.0;
        for (size_t r = 0; r < m; ++r)
            for (size_t c = 0; c < n; ++c) ov[axis == 0 ? c : r] += av[r * n + c];
        if (take_mean)
            for (double& x : ov) x *= w;
        if (out.grad_flows() && recording_) {
            auto an = a.node();
            auto on = out.node();
            push([an, on, m, n, axis, w] {
                if (!an->needs) return;
                an->ensure_grad();
                for (size_t r = 0; r < m; ++r)
                    for (size_t c = 0; c < n; ++c) an->grad[r * n + c] += w * on->grad[axis == 0 ? c : r];
            });
        }
        return out;
    }

    bool recording_;
    std::vector<std::function<void()>> records_;
    std::vector<detail::NodePtr> produced_;
};

}  // namespace toib
