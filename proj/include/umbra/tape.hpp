#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "umbra/tensor.hpp"

namespace umbra {

namespace detail {

// C += A @ B, row-major, (n,k) x (k,m) -> (n,m)
inline void matmul_acc(const double* A, const double* B, double* C, int n, int k, int m) {
    for (int i = 0; i < n; ++i) {
        const double* a_row = A + static_cast<std::size_t>(i) * k;
        double* c_row = C + static_cast<std::size_t>(i) * m;
        for (int p = 0; p < k; ++p) {
            const double a = a_row[p];
            if (a == 0.0) continue;
            const double* b_row = B + static_cast<std::size_t>(p) * m;
            for (int j = 0; j < m; ++j) c_row[j] += a * b_row[j];
        }
    }
}

// gA += G @ B^T, (n,m) x (k,m)^T -> (n,k)
inline void matmul_nt_acc(const double* G, const double* B, double* gA, int n, int k, int m) {
    for (int i = 0; i < n; ++i) {
        const double* g_row = G + static_cast<std::size_t>(i) * m;
        double* ga_row = gA + static_cast<std::size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const double* b_row = B + static_cast<std::size_t>(p) * m;
            double s = 0.0;
            for (int j = 0; j < m; ++j) s += g_row[j] * b_row[j];
            ga_row[p] += s;
        }
    }
}

// gB += A^T @ G, (n,k)^T x (n,m) -> (k,m)
inline void matmul_tn_acc(const double* A, const double* G, double* gB, int n, int k, int m) {
    for (int i = 0; i < n; ++i) {
        const double* a_row = A + static_cast<std::size_t>(i) * k;
        const double* g_row = G + static_cast<std::size_t>(i) * m;
        for (int p = 0; p < k; ++p) {
            const double a = a_row[p];
            if (a == 0.0) continue;
            double* gb_row = gB + static_cast<std::size_t>(p) * m;
            for (int j = 0; j < m; ++j) gb_row[j] += a * g_row[j];
        }
    }
}

}  // namespace detail

enum class Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    MatMul,
    BiasAdd,
    ScaleCols,
    Tanh,
    Relu,
    Square,
    SqrtEps,
    Sum,
    Mean,
    ScalarMul,
    ConcatCols,
    SliceCols,
};

inline const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Div: return "div";
        case Op::MatMul: return "matmul";
        case Op::BiasAdd: return "bias_add";
        case Op::ScaleCols: return "scale_cols";
        case Op::Tanh: return "tanh";
        case Op::Relu: return "relu";
        case Op::Square: return "square";
        case Op::SqrtEps: return "sqrt_eps";
        case Op::Sum: return "sum";
        case Op::Mean: return "mean";
        case Op::ScalarMul: return "scalar_mul";
        case Op::ConcatCols: return "concat_cols";
        case Op::SliceCols: return "slice_cols";
    }
    return "?";
}

using NodeId = int;

/// Recorded computation graph over Tensors, replayable in reverse for exact
/// gradients. Nodes reference only earlier nodes, so a single reverse sweep
/// from the root visits every node after all of its consumers.
///
/// A tape is built fresh per optimization step and is single-threaded;
/// independent tapes may run on separate threads.
class Tape {
public:
    struct Node {
        Op op = Op::Leaf;
        NodeId a = -1;
        NodeId b = -1;
        double attr = 0.0;   // scalar for ScalarMul, epsilon for SqrtEps
        int c0 = 0, c1 = 0;  // column range for SliceCols
        bool needs_grad = false;
        Tensor val;
        Tensor adj;  // empty until touched by backward
    };

    NodeId leaf(Tensor v, bool requires_grad = false) {
        Node n;
        n.op = Op::Leaf;
        n.needs_grad = requires_grad;
        n.val = std::move(v);
        nodes_.push_back(std::move(n));
        return static_cast<NodeId>(nodes_.size()) - 1;
    }

    NodeId constant(Tensor v) { return leaf(std::move(v), false); }
    NodeId constant(double v) { return leaf(Tensor::scalar(v), false); }

    NodeId add(NodeId a, NodeId b) { return elementwise(Op::Add, a, b); }
    NodeId sub(NodeId a, NodeId b) { return elementwise(Op::Sub, a, b); }
    NodeId mul(NodeId a, NodeId b) { return elementwise(Op::Mul, a, b); }
    NodeId div(NodeId a, NodeId b) { return elementwise(Op::Div, a, b); }

    NodeId matmul(NodeId a, NodeId b) {
        const Tensor& A = val(a);
        const Tensor& B = val(b);
        int n, k, k2, m;
        mm_dims(A, B, n, k, k2, m);
        if (k != k2) shape_error(Op::MatMul, A, B);
        std::vector<int> out_shape;
        if (A.rank() == 2 && B.rank() == 2) out_shape = {n, m};
        else if (A.rank() == 2) out_shape = {n};       // (n,k) @ (k,) -> (n,)
        else out_shape = {m};                          // (k,) @ (k,m) -> (m,)
        Tensor out(out_shape);
        detail::matmul_acc(A.data(), B.data(), out.data(), n, k, m);
        return push(Op::MatMul, a, b, std::move(out));
    }

    /// x: (N,M) or (M,), b: (M,). Adds b to every row of x.
    NodeId bias_add(NodeId x, NodeId b) { return rowwise(Op::BiasAdd, x, b); }

    /// x: (N,M) or (M,), v: (M,). Multiplies every row of x elementwise by v.
    NodeId scale_cols(NodeId x, NodeId v) { return rowwise(Op::ScaleCols, x, v); }

    NodeId tanh(NodeId a) { return unary(Op::Tanh, a); }
    NodeId relu(NodeId a) { return unary(Op::Relu, a); }
    NodeId square(NodeId a) { return unary(Op::Square, a); }

    /// sqrt(x + eps), defined at x == 0 for eps > 0.
    NodeId sqrt_eps(NodeId a, double eps) {
        const Tensor& A = val(a);
        Tensor out(A.shape());
        for (std::size_t i = 0; i < A.numel(); ++i) out[i] = std::sqrt(A[i] + eps);
        NodeId id = push(Op::SqrtEps, a, -1, std::move(out));
        nodes_[id].attr = eps;
        return id;
    }

    NodeId sum(NodeId a) {
        const Tensor& A = val(a);
        double s = 0.0;
        for (std::size_t i = 0; i < A.numel(); ++i) s += A[i];
        return push(Op::Sum, a, -1, Tensor::scalar(s));
    }

    NodeId mean(NodeId a) {
        const Tensor& A = val(a);
        if (A.numel() == 0) throw std::invalid_argument("mean: empty tensor");
        double s = 0.0;
        for (std::size_t i = 0; i < A.numel(); ++i) s += A[i];
        return push(Op::Mean, a, -1, Tensor::scalar(s / static_cast<double>(A.numel())));
    }

    NodeId scalar_mul(NodeId a, double c) {
        const Tensor& A = val(a);
        Tensor out(A.shape());
        for (std::size_t i = 0; i < A.numel(); ++i) out[i] = A[i] * c;
        NodeId id = push(Op::ScalarMul, a, -1, std::move(out));
        nodes_[id].attr = c;
        return id;
    }

    /// (N,p) ++ (N,q) -> (N,p+q); (p,) ++ (q,) -> (p+q,)
    NodeId concat_cols(NodeId a, NodeId b) {
        const Tensor& A = val(a);
        const Tensor& B = val(b);
        if (A.rank() != B.rank() || A.rank() < 1 || A.rank() > 2 || A.rows() != B.rows())
            shape_error(Op::ConcatCols, A, B);
        const int n = A.rows(), p = A.cols(), q = B.cols();
        Tensor out(A.rank() == 2 ? std::vector<int>{n, p + q} : std::vector<int>{p + q});
        for (int r = 0; r < n; ++r) {
            for (int c = 0; c < p; ++c) out.at(r, c) = A.at(r, c);
            for (int c = 0; c < q; ++c) out.at(r, p + c) = B.at(r, c);
        }
        return push(Op::ConcatCols, a, b, std::move(out));
    }

    NodeId slice_cols(NodeId a, int c0, int c1) {
        const Tensor& A = val(a);
        if (A.rank() < 1 || A.rank() > 2 || c0 < 0 || c1 <= c0 || c1 > A.cols()) {
            throw std::invalid_argument(std::string("slice_cols: range [") +
                                        std::to_string(c0) + "," + std::to_string(c1) +
                                        ") invalid for shape " + A.shape_string());
        }
        const int n = A.rows(), w = c1 - c0;
        Tensor out(A.rank() == 2 ? std::vector<int>{n, w} : std::vector<int>{w});
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < w; ++c) out.at(r, c) = A.at(r, c0 + c);
        NodeId id = push(Op::SliceCols, a, -1, std::move(out));
        nodes_[id].c0 = c0;
        nodes_[id].c1 = c1;
        return id;
    }

    const Tensor& val(NodeId id) const { return at(id).val; }

    /// Gradient accumulated at `id` by the last backward pass; zeros if the
    /// node was never reached.
    Tensor grad(NodeId id) const {
        const Node& n = at(id);
        if (n.adj.numel() == 0) return Tensor::zeros(n.val.shape());
        return n.adj;
    }

    bool requires_grad(NodeId id) const { return at(id).needs_grad; }
    std::size_t size() const { return nodes_.size(); }

    /// Reverse sweep from a scalar root; seeds the root adjoint with 1.
    void backward(NodeId root) {
        if (val(root).numel() != 1)
            throw std::invalid_argument(std::string("backward: root has shape ") +
                                        val(root).shape_string() + ", expected a scalar");
        backward_seeded(root, Tensor::full(val(root).shape(), 1.0));
    }

    /// Reverse sweep with an explicit root adjoint; used to join gradients
    /// across tapes (the seed is dU/d(root) computed elsewhere).
    void backward_seeded(NodeId root, const Tensor& seed) {
        Node& r = at(root);
        if (!seed.same_shape(r.val))
            throw std::invalid_argument("backward_seeded: seed shape " + seed.shape_string() +
                                        " does not match root shape " + r.val.shape_string());
        if (r.adj.numel() == 0) r.adj = Tensor::zeros(r.val.shape());
        for (std::size_t i = 0; i < seed.numel(); ++i) r.adj[i] += seed[i];
        if (backward_trace_) backward_trace_->clear();
        for (NodeId i = root; i >= 0; --i) {
            Node& n = nodes_[i];
            if (n.adj.numel() == 0 || !n.needs_grad) continue;
            if (backward_trace_) backward_trace_->push_back(i);
            propagate(n);
        }
    }

    /// Zero every adjoint so the tape can be replayed backward again.
    void clear_adjoints() {
        for (Node& n : nodes_) n.adj = Tensor();
    }

    /// Test hook: records the order in which backward processes nodes.
    void set_backward_trace(std::vector<NodeId>* sink) { backward_trace_ = sink; }

private:
    Node& at(NodeId id) {
        if (id < 0 || id >= static_cast<NodeId>(nodes_.size()))
            throw std::out_of_range("Tape: node " + std::to_string(id) + " does not exist");
        return nodes_[id];
    }
    const Node& at(NodeId id) const { return const_cast<Tape*>(this)->at(id); }


    [[noreturn]] static void shape_error(Op op, const Tensor& a, const Tensor& b) {
        throw std::invalid_argument(std::string(op_name(op)) + ": shape " + a.shape_string() +
                                    " incompatible with " + b.shape_string());
    }

    NodeId push(Op op, NodeId a, NodeId b, Tensor out) {
        Node n;
        n.op = op;
        n.a = a;
        n.b = b;
        n.needs_grad = (a >= 0 && at(a).needs_grad) || (b >= 0 && at(b).needs_grad);
        n.val = std::move(out);
        nodes_.push_back(std::move(n));
        return static_cast<NodeId>(nodes_.size()) - 1;
    }

    NodeId elementwise(Op op, NodeId a, NodeId b) {
        const Tensor& A = val(a);
        const Tensor& B = val(b);
        if (!A.same_shape(B)) shape_error(op, A, B);
        Tensor out(A.shape());
        const std::size_t n = A.numel();
        switch (op) {
            case Op::Add: for (std::size_t i = 0; i < n; ++i) out[i] = A[i] + B[i]; break;
            case Op::Sub: for (std::size_t i = 0; i < n; ++i) out[i] = A[i] - B[i]; break;
            case Op::Mul: for (std::size_t i = 0; i < n; ++i) out[i] = A[i] * B[i]; break;
            case Op::Div: for (std::size_t i = 0; i < n; ++i) out[i] = A[i] / B[i]; break;
            default: throw std::logic_error("elementwise: bad op");
        }
        return push(op, a, b, std::move(out));
    }

    NodeId rowwise(Op op, NodeId x, NodeId v) {
        const Tensor& X = val(x);
        const Tensor& V = val(v);
        if (V.rank() != 1 || X.rank() < 1 || X.rank() > 2 || X.cols() != V.cols())
            shape_error(op, X, V);
        Tensor out(X.shape());
        const int n = X.rows(), m = X.cols();
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < m; ++c)
                out.at(r, c) = op == Op::BiasAdd ? X.at(r, c) + V[c] : X.at(r, c) * V[c];
        return push(op, x, v, std::move(out));
    }

    NodeId unary(Op op, NodeId a) {
        const Tensor& A = val(a);
        Tensor out(A.shape());
        const std::size_t n = A.numel();
        switch (op) {
            case Op::Tanh: for (std::size_t i = 0; i < n; ++i) out[i] = std::tanh(A[i]); break;
            case Op::Relu: for (std::size_t i = 0; i < n; ++i) out[i] = A[i] > 0.0 ? A[i] : 0.0; break;
            case Op::Square: for (std::size_t i = 0; i < n; ++i) out[i] = A[i] * A[i]; break;
            default: throw std::logic_error("unary: bad op");
        }
        return push(op, a, -1, std::move(out));
    }

    void accumulate(NodeId id, const Tensor& g) {
        Node& n = nodes_[id];
        if (!n.needs_grad) return;
        if (n.adj.numel() == 0) n.adj = Tensor::zeros(n.val.shape());
        for (std::size_t i = 0; i < g.numel(); ++i) n.adj[i] += g[i];
    }

    // Adds this node's contribution to its inputs' adjoints.
    void propagate(Node& n) {
        if (n.op == Op::Leaf) return;
        const Tensor& g = n.adj;
        switch (n.op) {
            case Op::Add: {
                accumulate(n.a, g);
                accumulate(n.b, g);
                break;
            }
            case Op::Sub: {
                accumulate(n.a, g);
                if (nodes_[n.b].needs_grad) {
                    Tensor gb(g.shape());
                    for (std::size_t i = 0; i < g.numel(); ++i) gb[i] = -g[i];
                    accumulate(n.b, gb);
                }
                break;
            }
            case Op::Mul: {
                const Tensor& A = nodes_[n.a].val;
                const Tensor& B = nodes_[n.b].val;
                if (nodes_[n.a].needs_grad) {
                    Tensor ga(g.shape());
                    for (std::size_t i = 0; i < g.numel(); ++i) ga[i] = g[i] * B[i];
                    accumulate(n.a, ga);
                }
                if (nodes_[n.b].needs_grad) {
                    Tensor gb(g.shape());
                    for (std::size_t i = 0; i < g.numel(); ++i) gb[i] = g[i] * A[i];
                    accumulate(n.b, gb);
                }
                break;
            }
            case Op::Div: {
                const Tensor& A = nodes_[n.a].val;
                const Tensor& B = nodes_[n.b].val;
                if (nodes_[n.a].needs_grad) {
                    Tensor ga(g.shape());
                    for (std::size_t i = 0; i < g.numel(); ++i) ga[i] = g[i] / B[i];
                    accumulate(n.a, ga);
                }
                if (nodes_[n.b].needs_grad) {
                    Tensor gb(g.shape());
                    for (std::size_t i = 0; i < g.numel(); ++i)
                        gb[i] = -g[i] * A[i] / (B[i] * B[i]);
                    accumulate(n.b, gb);
                }
                break;
            }
            case Op::MatMul: {
                const Tensor& A = nodes_[n.a].val;
                const Tensor& B = nodes_[n.b].val;
                int nn, k, k2, m;
                mm_dims(A, B, nn, k, k2, m);
                if (nodes_[n.a].needs_grad) {
                    Tensor ga = Tensor::zeros(A.shape());
                    detail::matmul_nt_acc(g.data(), B.data(), ga.data(), nn, k, m);
                    accumulate(n.a, ga);
                }
                if (nodes_[n.b].needs_grad) {
                    Tensor gb = Tensor::zeros(B.shape());
                    detail::matmul_tn_acc(A.data(), g.data(), gb.data(), nn, k, m);
                    accumulate(n.b, gb);
                }
                break;
            }
            case Op::BiasAdd: {
                const Tensor& X = nodes_[n.a].val;
                accumulate(n.a, g);
                if (nodes_[n.b].needs_grad) {
                    Tensor gb = Tensor::zeros(nodes_[n.b].val.shape());
                    for (int r = 0; r < X.rows(); ++r)
                        for (int c = 0; c < X.cols(); ++c) gb[c] += g.at(r, c);
                    accumulate(n.b, gb);
                }
                break;
            }
            case Op::ScaleCols: {
                const Tensor& X = nodes_[n.a].val;
                const Tensor& V = nodes_[n.b].val;
                if (nodes_[n.a].needs_grad) {
                    Tensor ga(X.shape());
                    for (int r = 0; r < X.rows(); ++r)
                        for (int c = 0; c < X.cols(); ++c) ga.at(r, c) = g.at(r, c) * V[c];
                    accumulate(n.a, ga);
                }
                if (nodes_[n.b].needs_grad) {
                    Tensor gv = Tensor::zeros(V.shape());
                    for (int r = 0; r < X.rows(); ++r)
                        for (int c = 0; c < X.cols(); ++c) gv[c] += g.at(r, c) * X.at(r, c);
                    accumulate(n.b, gv);
                }
                break;
            }
            case Op::Tanh: {
                Tensor ga(g.shape());
                for (std::size_t i = 0; i < g.numel(); ++i) {
                    const double y = n.val[i];
                    ga[i] = g[i] * (1.0 - y * y);
                }
                accumulate(n.a, ga);
                break;
            }
            case Op::Relu: {
                const Tensor& A = nodes_[n.a].val;
                Tensor ga(g.shape());
                for (std::size_t i = 0; i < g.numel(); ++i) ga[i] = A[i] > 0.0 ? g[i] : 0.0;
                accumulate(n.a, ga);
                break;
            }
            case Op::Square: {
                const Tensor& A = nodes_[n.a].val;
                Tensor ga(g.shape());
                for (std::size_t i = 0; i < g.numel(); ++i) ga[i] = g[i] * 2.0 * A[i];
                accumulate(n.a, ga);
                break;
            }
            case Op::SqrtEps: {
                Tensor ga(g.shape());
                for (std::size_t i = 0; i < g.numel(); ++i) ga[i] = g[i] * 0.5 / n.val[i];
                accumulate(n.a, ga);
                break;
            }
            case Op::Sum: {
                const Tensor& A = nodes_[n.a].val;
                accumulate(n.a, Tensor::full(A.shape(), g[0]));
                break;
            }
            case Op::Mean: {
                const Tensor& A = nodes_[n.a].val;
                accumulate(n.a, Tensor::full(A.shape(), g[0] / static_cast<double>(A.numel())));
                break;
            }
            case Op::ScalarMul: {
                Tensor ga(g.shape());
                for (std::size_t i = 0; i < g.numel(); ++i) ga[i] = g[i] * n.attr;
                accumulate(n.a, ga);
                break;
            }
            case Op::ConcatCols: {
                const Tensor& A = nodes_[n.a].val;
                const Tensor& B = nodes_[n.b].val;
                const int rows = A.rows(), p = A.cols(), q = B.cols();
                if (nodes_[n.a].needs_grad) {
                    Tensor ga(A.shape());
                    for (int r = 0; r < rows; ++r)
                        for (int c = 0; c < p; ++c) ga.at(r, c) = g.at(r, c);
                    accumulate(n.a, ga);
                }
                if (nodes_[n.b].needs_grad) {
                    Tensor gb(B.shape());
                    for (int r = 0; r < rows; ++r)
                        for (int c = 0; c < q; ++c) gb.at(r, c) = g.at(r, p + c);
                    accumulate(n.b, gb);
                }
                break;
            }
            case Op::SliceCols: {
                const Tensor& A = nodes_[n.a].val;
                Tensor ga = Tensor::zeros(A.shape());
                for (int r = 0; r < A.rows(); ++r)
                    for (int c = n.c0; c < n.c1; ++c) ga.at(r, c) = g.at(r, c - n.c0);
                accumulate(n.a, ga);
                break;
            }
            case Op::Leaf:
                break;
        }
    }

    static void mm_dims(const Tensor& A, const Tensor& B, int& n, int& k, int& k2, int& m) {
        if (A.rank() == 2 && B.rank() == 2) {
            n = A.shape()[0]; k = A.shape()[1]; k2 = B.shape()[0]; m = B.shape()[1];
        } else if (A.rank() == 2 && B.rank() == 1) {
            n = A.shape()[0]; k = A.shape()[1]; k2 = B.shape()[0]; m = 1;
        } else if (A.rank() == 1 && B.rank() == 2) {
            n = 1; k = A.shape()[0]; k2 = B.shape()[0]; m = B.shape()[1];
        } else {
            throw std::invalid_argument(std::string("matmul: shapes ") + A.shape_string() +
                                        " and " + B.shape_string() + " are not matrix-like");
        }
    }

    std::vector<Node> nodes_;
    std::vector<NodeId>* backward_trace_ = nullptr;
};

}  // namespace umbra
