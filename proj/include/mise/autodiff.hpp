#pragma once

// Tape-based reverse-mode differentiation over Tensor values.
//
// A Graph is the computation record: nodes are appended in evaluation order,
// so the node vector is already a topological order and backward() is a
// single reverse sweep. Parameters enter as leaves bound to a ParamSet and
// gradients come back keyed by the same names.

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mise/tensor.hpp"

namespace mise {

class Graph;

struct Var {
    Graph* graph = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    double item() const { return value().item(); }
};

class Graph {
public:
    /// Propagates the node's output gradient into its inputs via add_grad().
    using BackwardFn = std::function<void(Graph&, std::size_t self)>;

    explicit Graph(const ParamSet* params = nullptr) : params_(params) {}

    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    const ParamSet* params() const noexcept { return params_; }

    /// Leaf for a named parameter of the bound set. Repeated calls return the same node.
    Var param(const std::string& name) {
        if (!params_) throw UsageError("graph has no bound parameter set");
        if (auto it = param_nodes_.find(name); it != param_nodes_.end()) return {this, it->second};
        Node n;
        n.op = "param:" + name;
        n.external = &params_->at(name);
        n.param = name;
        n.requires_grad = true;
        nodes_.push_back(std::move(n));
        param_nodes_.emplace(name, nodes_.size() - 1);
        return {this, nodes_.size() - 1};
    }

    Var constant(Tensor value, std::string label = "const") {
        Node n;
        n.op = std::move(label);
        n.value = std::move(value);
        if (!n.value.all_finite()) throw NumericError("non-finite constant '" + n.op + "'");
        nodes_.push_back(std::move(n));
        return {this, nodes_.size() - 1};
    }

    /// Appends a primitive op. `value` must already be computed; `backward` may be empty
    /// for ops with no differentiable inputs.
    Var record(std::string op, const std::vector<Var>& inputs, Tensor value, BackwardFn backward) {
        if (!value.all_finite()) throw NumericError("non-finite value produced by op '" + op + "'");
        Node n;
        n.op = std::move(op);
        n.value = std::move(value);
        n.backward = std::move(backward);
        for (const Var& v : inputs) {
            if (v.graph != this) throw UsageError("op '" + n.op + "' mixes nodes from different graphs");
            n.inputs.push_back(v.id);
            n.requires_grad = n.requires_grad || nodes_[v.id].requires_grad;
        }
        nodes_.push_back(std::move(n));
        return {this, nodes_.size() - 1};
    }

    const Tensor& value(std::size_t id) const {
        const Node& n = nodes_.at(id);
        return n.external ? *n.external : n.value;
    }
    const Tensor& value(Var v) const { return value(v.id); }
    const std::string& op(std::size_t id) const { return nodes_.at(id).op; }
    std::size_t input(std::size_t id, std::size_t k) const { return nodes_.at(id).inputs.at(k); }
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
    std::size_t size() const noexcept { return nodes_.size(); }

    /// Gradient of node `id` accumulated so far (valid inside a backward sweep).
    const Tensor& grad(std::size_t id) const { return nodes_.at(id).grad; }

    /// Accumulation target for an input's gradient, or nullptr when the input needs none.
    Tensor* grad_target(std::size_t id) {
        Node& n = nodes_.at(id);
        if (!n.requires_grad) return nullptr;
        if (!n.has_grad) {
            n.grad = Tensor::zeros_like(value(id));
            n.has_grad = true;
        }
        return &n.grad;
    }

    /// Reverse sweep from a scalar loss. Returns d loss / d param for every parameter of the
    /// bound set; parameters the loss does not touch map to zero tensors.
    ParamSet backward(Var loss) {
        if (loss.graph != this) throw UsageError("backward: loss belongs to another graph");
        if (value(loss).size() != 1) {
            throw UsageError("backward: loss must be scalar, got shape " + shape_str(value(loss).shape()));
        }
        for (Node& n : nodes_) {
            n.has_grad = false;
            n.grad = Tensor();
        }
        if (Tensor* g = grad_target(loss.id)) (*g)[0] = 1.0;

        for (std::size_t i = loss.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.has_grad || !n.backward) continue;
            if (!n.grad.all_finite()) throw NumericError("non-finite gradient reaching op '" + n.op + "'");
            n.backward(*this, i);
        }

        ParamSet out;
        if (!params_) return out;
        for (const auto& [name, t] : *params_) {
            auto it = param_nodes_.find(name);
            if (it != param_nodes_.end() && nodes_[it->second].has_grad) {
                const Tensor& g = nodes_[it->second].grad;
                if (!g.all_finite()) throw NumericError("non-finite gradient for parameter '" + name + "'");
                out.add(name, g);
            } else {
                out.add(name, Tensor::zeros_like(t));
            }
        }
        return out;
    }

private:
    struct Node {
        std::string op;
        Tensor value;
        const Tensor* external = nullptr;
        std::string param;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        bool requires_grad = false;
        Tensor grad;
        bool has_grad = false;
    };

    const ParamSet* params_;
    std::vector<Node> nodes_;
    std::map<std::string, std::size_t> param_nodes_;
};

inline const Tensor& Var::value() const { return graph->value(id); }

namespace detail {

inline void require_same_graph(const Var& a, const Var& b, const char* op) {
    if (a.graph != b.graph) throw UsageError(std::string(op) + ": operands from different graphs");
}

inline void require_matrix(const Tensor& t, const char* op) {
    if (t.rank() != 2) throw UsageError(std::string(op) + ": expected matrix, got " + shape_str(t.shape()));
}

inline double dot(const double* __restrict a, const double* __restrict b, std::size_t n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i) s0 += a[i] * b[i];
    return (s0 + s1) + (s2 + s3);
}

// y += alpha * x
inline void axpy(double alpha, const double* __restrict x, double* __restrict y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

} // namespace detail

// ---------------------------------------------------------------------------
// Primitive ops
// ---------------------------------------------------------------------------

/// (m x k) * (k x n)
inline Var matmul(Var a, Var b) {
    detail::require_same_graph(a, b, "matmul");
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    detail::require_matrix(A, "matmul");
    detail::require_matrix(B, "matmul");
    const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    if (B.rows() != k) throw UsageError("matmul: inner dimensions " + shape_str(A.shape()) + " * " + shape_str(B.shape()));
    Tensor C(Shape{m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = A.at(i, p);
            for (std::size_t j = 0; j < n; ++j) C.at(i, j) += aip * B.at(p, j);
        }
    return a.graph->record("matmul", {a, b}, std::move(C), [m, k, n](Graph& g, std::size_t self) {
        const Tensor& G = g.grad(self);
        const Tensor& A = g.value(g.input(self, 0));
        const Tensor& B = g.value(g.input(self, 1));
        if (Tensor* dA = g.grad_target(g.input(self, 0)))
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < n; ++j) s += G.at(i, j) * B.at(p, j);
                    dA->at(i, p) += s;
                }
        if (Tensor* dB = g.grad_target(g.input(self, 1)))
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double aip = A.at(i, p);
                    for (std::size_t j = 0; j < n; ++j) dB->at(p, j) += aip * G.at(i, j);
                }
    });
}

/// (m x k) * (n x k)^T, i.e. rows of `a` projected by the rows of `w`.
inline Var matmul_nt(Var a, Var w) {
    detail::require_same_graph(a, w, "matmul_nt");
    const Tensor& A = a.value();
    const Tensor& W = w.value();
    detail::require_matrix(A, "matmul_nt");
    detail::require_matrix(W, "matmul_nt");
    const std::size_t m = A.rows(), k = A.cols(), n = W.rows();
    if (W.cols() != k) throw UsageError("matmul_nt: " + shape_str(A.shape()) + " * " + shape_str(W.shape()) + "^T");
    Tensor C(Shape{m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) C.at(i, j) = detail::dot(A.data() + i * k, W.data() + j * k, k);
    return a.graph->record("matmul_nt", {a, w}, std::move(C), [m, k, n](Graph& g, std::size_t self) {
        const Tensor& G = g.grad(self);
        const Tensor& A = g.value(g.input(self, 0));
        const Tensor& W = g.value(g.input(self, 1));
        if (Tensor* dA = g.grad_target(g.input(self, 0)))
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) detail::axpy(G.at(i, j), W.data() + j * k, dA->data() + i * k, k);
        if (Tensor* dW = g.grad_target(g.input(self, 1)))
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) detail::axpy(G.at(i, j), A.data() + i * k, dW->data() + j * k, k);
    });
}

inline Var add(Var a, Var b) {
    detail::require_same_graph(a, b, "add");
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (A.shape() != B.shape()) throw UsageError("add: shapes " + shape_str(A.shape()) + " vs " + shape_str(B.shape()));
    Tensor C = A;
    for (std::size_t i = 0; i < C.size(); ++i) C[i] += B[i];
    return a.graph->record("add", {a, b}, std::move(C), [](Graph& g, std::size_t self) {
        const Tensor& G = g.grad(self);
        for (std::size_t k = 0; k < 2; ++k)
            if (Tensor* d = g.grad_target(g.input(self, k)))
                for (std::size_t i = 0; i < G.size(); ++i) (*d)[i] += G[i];
    });
}

/// Adds vector `b` (length n) to every row of matrix `a` (m x n).
inline Var add_bias(Var a, Var b) {
    detail::require_same_graph(a, b, "add_bias");
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    detail::require_matrix(A, "add_bias");
    if (B.size() != A.cols()) throw UsageError("add_bias: bias " + shape_str(B.shape()) + " vs " + shape_str(A.shape()));
    Tensor C = A;
    for (std::size_t i = 0; i < A.rows(); ++i)
        for (std::size_t j = 0; j < A.cols(); ++j) C.at(i, j) += B[j];
    return a.graph->record("add_bias", {a, b}, std::move(C), [](Graph& g, std::size_t self) {
        const Tensor& G = g.grad(self);
        if (Tensor* dA = g.grad_target(g.input(self, 0)))
            for (std::size_t i = 0; i < G.size(); ++i) (*dA)[i] += G[i];
        if (Tensor* dB = g.grad_target(g.input(self, 1)))
            for (std::size_t i = 0; i < G.rows(); ++i)
                for (std::size_t j = 0; j < G.cols(); ++j) (*dB)[j] += G.at(i, j);
    });
}

/// Elementwise product.
inline Var mul(Var a, Var b) {
    detail::require_same_graph(a, b, "mul");
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (A.shape() != B.shape()) throw UsageError("mul: shapes " + shape_str(A.shape()) + " vs " + shape_str(B.shape()));
    Tensor C = A;
    for (std::size_t i = 0; i < C.size(); ++i) C[i] *= B[i];
    return a.graph->record("mul", {a, b}, std::move(C), [](Graph& g, std::size_t self) {
        const Tensor& G = g.grad(self);
        const Tensor& A = g.value(g.input(self, 0));
        const Tensor& B = g.value(g.input(self, 1));
        if (Tensor* dA = g.grad_target(g.input(self, 0)))
            for (std::size_t i = 0; i < G.size(); ++i) (*dA)[i] += G[i] * B[i];
        if (Tensor* dB = g.grad_target(g.input(self, 1)))
            for (std::size_t i = 0; i < G.size(); ++i) (*dB)[i] += G[i] * A[i];
    });
}

inline Var scale(Var a, double s) {
    Tensor C = a.value();
    for (double& v : C.values()) v *= s;
    return a.graph->record("scale", {a}, std::move(C), [s](Graph& g, std::size_t self) {
        const Tensor& G = g.grad(self);
        if (Tensor* d = g.grad_target(g.input(self, 0)))
            for (std::size_t i = 0; i < G.size(); ++i) (*d)[i] += s * G[i];
    });
}

inline Var tanh(Var a) {
    Tensor C = a.value();
    for (double& v : C.values()) v = std::tanh(v);
    return a.graph->record("tanh", {a}, std::move(C), [](Graph& g, std::size_t self) {
        const Tensor& G = g.grad(self);
        const Tensor& Y = g.value(self);
        if (Tensor* d = g.grad_target(g.input(self, 0)))
            for (std::size_t i = 0; i < G.size(); ++i) (*d)[i] += G[i] * (1.0 - Y[i] * Y[i]);
    });
}

/// Sum of all entries, as a scalar.
inline Var sum(Var a) {
    double s = 0.0;
    for (double v : a.value().values()) s += v;
    return a.graph->record("sum", {a}, Tensor::scalar(s), [](Graph& g, std::size_t self) {
        const double G = g.grad(self)[0];
        if (Tensor* d = g.grad_target(g.input(self, 0)))
            for (double& v : d->values()) v += G;
    });
}

/// Weighted sum of scalar nodes: sum_k weights[k] * terms[k].
inline Var weighted_sum(const std::vector<Var>& terms, const std::vector<double>& weights) {
    if (terms.empty()) throw UsageError("weighted_sum: no terms");
    if (terms.size() != weights.size()) throw UsageError("weighted_sum: weight count mismatch");
    double s = 0.0;
    for (std::size_t k = 0; k < terms.size(); ++k) {
        if (terms[k].value().size() != 1) throw UsageError("weighted_sum: terms must be scalars");
        s += weights[k] * terms[k].item();
    }
    return terms.front().graph->record("weighted_sum", terms, Tensor::scalar(s),
                                       [weights](Graph& g, std::size_t self) {
                                           const double G = g.grad(self)[0];
                                           for (std::size_t k = 0; k < weights.size(); ++k)
                                               if (Tensor* d = g.grad_target(g.input(self, k)))
                                                   (*d)[0] += weights[k] * G;
                                       });
}

inline Var mean(const std::vector<Var>& terms) {
    return weighted_sum(terms, std::vector<double>(terms.size(), 1.0 / static_cast<double>(terms.size())));
}

inline Var add_scalars(const std::vector<Var>& terms) {
    return weighted_sum(terms, std::vector<double>(terms.size(), 1.0));
}

/// Rows of `table` selected by `ids` (embedding lookup). Backward scatters into the table.
inline Var gather_rows(Var table, const std::vector<int>& ids) {
    const Tensor& T = table.value();
    detail::require_matrix(T, "gather_rows");
    if (ids.empty()) throw UsageError("gather_rows: empty id list");
    const std::size_t d = T.cols();
    Tensor out(Shape{ids.size(), d});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= T.rows())
            throw UsageError("gather_rows: id " + std::to_string(ids[i]) + " outside table of " +
                             std::to_string(T.rows()) + " rows");
        const auto src = T.row(static_cast<std::size_t>(ids[i]));
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return table.graph->record("gather_rows", {table}, std::move(out), [ids, d](Graph& g, std::size_t self) {
        const Tensor& G = g.grad(self);
        if (Tensor* dT = g.grad_target(g.input(self, 0)))
            for (std::size_t i = 0; i < ids.size(); ++i) {
                auto dst = dT->row(static_cast<std::size_t>(ids[i]));
                for (std::size_t j = 0; j < d; ++j) dst[j] += G.at(i, j);
            }
    });
}

/// [a | b] for matrices with equal row counts.
inline Var concat_cols(Var a, Var b) {
    detail::require_same_graph(a, b, "concat_cols");
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    detail::require_matrix(A, "concat_cols");
    detail::require_matrix(B, "concat_cols");
    if (A.rows() != B.rows()) throw UsageError("concat_cols: row mismatch");
    const std::size_t m = A.rows(), ca = A.cols(), cb = B.cols();
    Tensor C(Shape{m, ca + cb});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < ca; ++j) C.at(i, j) = A.at(i, j);
        for (std::size_t j = 0; j < cb; ++j) C.at(i, ca + j) = B.at(i, j);
    }
    return a.graph->record("concat_cols", {a, b}, std::move(C), [m, ca, cb](Graph& g, std::size_t self) {
        const Tensor& G = g.grad(self);
        if (Tensor* dA = g.grad_target(g.input(self, 0)))
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < ca; ++j) dA->at(i, j) += G.at(i, j);
        if (Tensor* dB = g.grad_target(g.input(self, 1)))
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < cb; ++j) dB->at(i, j) += G.at(i, ca + j);
    });
}

/// Elman recurrence over the rows of `x` (n x e):
///   h_t = tanh(wx * x_t + wh * h_{t-1} + b),  h_{-1} = 0,
/// scanning bottom-up, or top-down when `reverse`. Output row t is h_t (n x h).
/// Backward is truncation-free BPTT.
inline Var rnn_scan(Var x, Var wx, Var wh, Var b, bool reverse) {
    const Tensor& X = x.value();
    const Tensor& Wx = wx.value();
    const Tensor& Wh = wh.value();
    const Tensor& B = b.value();
    detail::require_matrix(X, "rnn_scan");
    const std::size_t n = X.rows(), e = X.cols(), h = Wx.rows();
    if (Wx.rank() != 2 || Wx.cols() != e || Wh.rank() != 2 || Wh.rows() != h || Wh.cols() != h || B.size() != h)
        throw UsageError("rnn_scan: inconsistent weight shapes");

    Tensor H(Shape{n, h});
    std::vector<double> prev(h, 0.0);
    for (std::size_t s = 0; s < n; ++s) {
        const std::size_t t = reverse ? n - 1 - s : s;
        auto xt = X.row(t);
        auto ht = H.row(t);
        for (std::size_t i = 0; i < h; ++i) {
            const double a = B[i] + detail::dot(Wx.data() + i * e, xt.data(), e) +
                             detail::dot(Wh.data() + i * h, prev.data(), h);
            ht[i] = std::tanh(a);
        }
        std::copy(ht.begin(), ht.end(), prev.begin());
    }

    return x.graph->record(reverse ? "rnn_scan_rev" : "rnn_scan", {x, wx, wh, b}, std::move(H),
                           [n, e, h, reverse](Graph& g, std::size_t self) {
        const Tensor& G = g.grad(self);
        const Tensor& H = g.value(self);
        const Tensor& X = g.value(g.input(self, 0));
        const Tensor& Wx = g.value(g.input(self, 1));
        const Tensor& Wh = g.value(g.input(self, 2));
        Tensor* dX = g.grad_target(g.input(self, 0));
        Tensor* dWx = g.grad_target(g.input(self, 1));
        Tensor* dWh = g.grad_target(g.input(self, 2));
        Tensor* dB = g.grad_target(g.input(self, 3));

        std::vector<double> carry(h, 0.0), da(h);
        for (std::size_t s = n; s-- > 0;) {
            const std::size_t t = reverse ? n - 1 - s : s;
            const bool has_prev = s > 0;
            const std::size_t tp = reverse ? t + 1 : t - 1;
            for (std::size_t i = 0; i < h; ++i) {
                const double y = H.at(t, i);
                da[i] = (G.at(t, i) + carry[i]) * (1.0 - y * y);
            }
            if (dB) detail::axpy(1.0, da.data(), dB->data(), h);
            if (dWx)
                for (std::size_t i = 0; i < h; ++i) detail::axpy(da[i], X.data() + t * e, dWx->data() + i * e, e);
            if (dX)
                for (std::size_t i = 0; i < h; ++i) detail::axpy(da[i], Wx.data() + i * e, dX->data() + t * e, e);
            std::fill(carry.begin(), carry.end(), 0.0);
            if (has_prev) {
                if (dWh)
                    for (std::size_t i = 0; i < h; ++i) detail::axpy(da[i], H.data() + tp * h, dWh->data() + i * h, h);
                for (std::size_t i = 0; i < h; ++i) detail::axpy(da[i], Wh.data() + i * h, carry.data(), h);
            }
        }
    });
}

} // namespace mise
