#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "vdrive/tensor.hpp"

namespace vdrive::ad {

enum class OpKind {
    leaf,
    matmul,
    transpose,
    add,
    sub,
    mul,
    scale,
    relu,
    exp,
    log,
    sigmoid,
    tanh,
    softmax,
    layer_norm,
    concat,
    slice,
    sum,
    mean,
    mse,
    bce,
    embedding,
    cross_entropy,
    stop_gradient,
};

inline const char* op_name(OpKind k) {
    switch (k) {
        case OpKind::leaf: return "leaf";
        case OpKind::matmul: return "matmul";
        case OpKind::transpose: return "transpose";
        case OpKind::add: return "add";
        case OpKind::sub: return "sub";
        case OpKind::mul: return "mul";
        case OpKind::scale: return "scale";
        case OpKind::relu: return "relu";
        case OpKind::exp: return "exp";
        case OpKind::log: return "log";
        case OpKind::sigmoid: return "sigmoid";
        case OpKind::tanh: return "tanh";
        case OpKind::softmax: return "softmax";
        case OpKind::layer_norm: return "layer_norm";
        case OpKind::concat: return "concat";
        case OpKind::slice: return "slice";
        case OpKind::sum: return "sum";
        case OpKind::mean: return "mean";
        case OpKind::mse: return "mse";
        case OpKind::bce: return "bce";
        case OpKind::embedding: return "embedding";
        case OpKind::cross_entropy: return "cross_entropy";
        case OpKind::stop_gradient: return "stop_gradient";
    }
    return "?";
}

constexpr double kBceEps = 1e-7;
constexpr double kLayerNormEps = 1e-5;

// Reverse-mode tape over dense tensors. Values are computed eagerly when a
// node is created; backward() fills gradients for every parameter leaf.
// Single-threaded per instance; distinct graphs may run concurrently.
template <class S>
class GraphT {
 public:
    using NodeId = std::size_t;

    struct Node {
        OpKind kind = OpKind::leaf;
        std::vector<NodeId> parents;
        TensorT<S> value;
        TensorT<S> grad;  // allocated by backward()
        bool requires_grad = false;
        bool is_param = false;
        // op attributes
        double factor = 0.0;                 // scale
        std::size_t axis = 0;                // concat / slice / transpose rows
        std::size_t start = 0, len = 0;      // slice
        std::vector<int> indices;            // embedding rows / cross_entropy targets
        std::vector<double> saved;           // per-row stats (layer_norm) or softmax cache
    };

    NodeId constant(TensorT<S> v) { return add_leaf(std::move(v), false); }

    NodeId param(TensorT<S> v) {
        NodeId id = add_leaf(std::move(v), true);
        params_.push_back(id);
        return id;
    }

    const TensorT<S>& value(NodeId id) const { return nodes_[id].value; }
    const TensorT<S>& grad(NodeId id) const {
        if (!nodes_[id].requires_grad || nodes_[id].grad.data.empty()) {
            throw ValidationError("graph: no gradient on node " + std::to_string(id));
        }
        return nodes_[id].grad;
    }
    std::size_t size() const { return nodes_.size(); }

    // ---- op builders -------------------------------------------------

    NodeId matmul(NodeId a, NodeId b) {
        const auto& A = nodes_[a].value;
        const auto& B = nodes_[b].value;
        auto [m, k, n, out_dims] = matmul_dims(A, B);
        TensorT<S> out(out_dims);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                double acc = 0.0;  // 64-bit accumulation
                for (std::size_t l = 0; l < k; ++l) {
                    acc += static_cast<double>(A.data[i * k + l]) * static_cast<double>(B.data[l * n + j]);
                }
                out.data[i * n + j] = static_cast<S>(acc);
            }
        }
        return add_node(OpKind::matmul, {a, b}, std::move(out));
    }

    NodeId transpose(NodeId a) {
        const auto& A = nodes_[a].value;
        if (A.rank() != 2) {
            throw ValidationError(std::string("transpose: operand 1 must be rank 2, got dims ") +
                                  dims_to_string(A.dims));
        }
        TensorT<S> out({A.dims[1], A.dims[0]});
        for (std::size_t i = 0; i < A.dims[0]; ++i)
            for (std::size_t j = 0; j < A.dims[1]; ++j) out.data[j * A.dims[0] + i] = A.data[i * A.dims[1] + j];
        return add_node(OpKind::transpose, {a}, std::move(out));
    }

    // Same dims, or trailing-dimension bias: (..., n) + (n).
    NodeId add(NodeId a, NodeId b) {
        const auto& A = nodes_[a].value;
        const auto& B = nodes_[b].value;
        if (A.dims == B.dims) {
            TensorT<S> out(A.dims);
            for (std::size_t i = 0; i < A.numel(); ++i) out.data[i] = A.data[i] + B.data[i];
            return add_node(OpKind::add, {a, b}, std::move(out));
        }
        if (B.rank() == 1 && A.dims.back() == B.dims[0]) {
            const std::size_t n = B.dims[0];
            TensorT<S> out(A.dims);
            for (std::size_t i = 0; i < A.numel(); ++i) out.data[i] = A.data[i] + B.data[i % n];
            return add_node(OpKind::add, {a, b}, std::move(out));
        }
        throw ValidationError(std::string("add: operand 2 dims ") + dims_to_string(B.dims) +
                              " incompatible with operand 1 dims " + dims_to_string(A.dims));
    }

    NodeId sub(NodeId a, NodeId b) {
        const auto& A = nodes_[a].value;
        const auto& B = nodes_[b].value;
        if (A.dims != B.dims) {
            throw ValidationError(std::string("sub: operand 2 dims ") + dims_to_string(B.dims) +
                                  " do not match operand 1 dims " + dims_to_string(A.dims));
        }
        TensorT<S> out(A.dims);
        for (std::size_t i = 0; i < A.numel(); ++i) out.data[i] = A.data[i] - B.data[i];
        return add_node(OpKind::sub, {a, b}, std::move(out));
    }

    NodeId mul(NodeId a, NodeId b) {
        const auto& A = nodes_[a].value;
        const auto& B = nodes_[b].value;
        if (A.dims != B.dims) {
            throw ValidationError(std::string("mul: operand 2 dims ") + dims_to_string(B.dims) +
                                  " do not match operand 1 dims " + dims_to_string(A.dims));
        }
        TensorT<S> out(A.dims);
        for (std::size_t i = 0; i < A.numel(); ++i) out.data[i] = A.data[i] * B.data[i];
        return add_node(OpKind::mul, {a, b}, std::move(out));
    }

    NodeId scale(NodeId a, double c) {
        const auto& A = nodes_[a].value;
        TensorT<S> out(A.dims);
        for (std::size_t i = 0; i < A.numel(); ++i) out.data[i] = static_cast<S>(c * A.data[i]);
        NodeId id = add_node(OpKind::scale, {a}, std::move(out));
        nodes_[id].factor = c;
        return id;
    }

    NodeId relu(NodeId a) { return unary(OpKind::relu, a, [](double x) { return x > 0 ? x : 0.0; }); }
    NodeId exp_(NodeId a) { return unary(OpKind::exp, a, [](double x) { return std::exp(x); }); }
    NodeId log_(NodeId a) { return unary(OpKind::log, a, [](double x) { return std::log(x); }); }
    NodeId sigmoid(NodeId a) {
        return unary(OpKind::sigmoid, a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); });
    }
    NodeId tanh_(NodeId a) { return unary(OpKind::tanh, a, [](double x) { return std::tanh(x); }); }

    // Softmax over the last axis, computed with max-subtraction.
    NodeId softmax(NodeId a) {
        const auto& A = nodes_[a].value;
        const std::size_t n = A.dims.back();
        const std::size_t rows = A.numel() / n;
        TensorT<S> out(A.dims);
        for (std::size_t r = 0; r < rows; ++r) {
            const S* x = &A.data[r * n];
            S* y = &out.data[r * n];
            double mx = x[0];
            for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, static_cast<double>(x[i]));
            double denom = 0.0;
            for (std::size_t i = 0; i < n; ++i) denom += std::exp(static_cast<double>(x[i]) - mx);
            for (std::size_t i = 0; i < n; ++i)
                y[i] = static_cast<S>(std::exp(static_cast<double>(x[i]) - mx) / denom);
        }
        return add_node(OpKind::softmax, {a}, std::move(out));
    }

    // Normalizes the last axis to zero mean / unit variance (no affine).
    NodeId layer_norm(NodeId a) {
        const auto& A = nodes_[a].value;
        const std::size_t n = A.dims.back();
        const std::size_t rows = A.numel() / n;
        TensorT<S> out(A.dims);
        std::vector<double> saved(rows);  // per-row 1/sqrt(var+eps)
        for (std::size_t r = 0; r < rows; ++r) {
            const S* x = &A.data[r * n];
            double mean = 0.0;
            for (std::size_t i = 0; i < n; ++i) mean += x[i];
            mean /= static_cast<double>(n);
            double var = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                double d = x[i] - mean;
                var += d * d;
            }
            var /= static_cast<double>(n);
            double inv = 1.0 / std::sqrt(var + kLayerNormEps);
            saved[r] = inv;
            for (std::size_t i = 0; i < n; ++i) out.data[r * n + i] = static_cast<S>((x[i] - mean) * inv);
        }
        NodeId id = add_node(OpKind::layer_norm, {a}, std::move(out));
        nodes_[id].saved = std::move(saved);
        return id;
    }

    NodeId concat(const std::vector<NodeId>& xs, std::size_t axis) {
        if (xs.empty()) throw ValidationError("concat: empty input list");
        const auto& first = nodes_[xs[0]].value;
        if (axis >= first.rank()) {
            throw ValidationError("concat: axis " + std::to_string(axis) + " out of range for dims " +
                                  dims_to_string(first.dims));
        }
        std::vector<std::size_t> out_dims = first.dims;
        for (std::size_t i = 1; i < xs.size(); ++i) {
            const auto& d = nodes_[xs[i]].value.dims;
            if (d.size() != first.dims.size()) {
                throw ValidationError("concat: operand " + std::to_string(i + 1) + " rank mismatch, dims " +
                                      dims_to_string(d));
            }
            for (std::size_t ax = 0; ax < d.size(); ++ax) {
                if (ax != axis && d[ax] != first.dims[ax]) {
                    throw ValidationError("concat: operand " + std::to_string(i + 1) + " dims " +
                                          dims_to_string(d) + " incompatible with " + dims_to_string(first.dims));
                }
            }
            out_dims[axis] += d[axis];
        }
        TensorT<S> out(out_dims);
        // element count outside/inside the concat axis
        std::size_t outer = 1, inner = 1;
        for (std::size_t ax = 0; ax < axis; ++ax) outer *= out_dims[ax];
        for (std::size_t ax = axis + 1; ax < out_dims.size(); ++ax) inner *= out_dims[ax];
        std::size_t offset = 0;
        for (NodeId x : xs) {
            const auto& X = nodes_[x].value;
            const std::size_t ext = X.dims[axis];
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t e = 0; e < ext; ++e) {
                    for (std::size_t in = 0; in < inner; ++in) {
                        out.data[(o * out_dims[axis] + offset + e) * inner + in] =
                            X.data[(o * ext + e) * inner + in];
                    }
                }
            }
            offset += ext;
        }
        NodeId id = add_node(OpKind::concat, xs, std::move(out));
        nodes_[id].axis = axis;
        return id;
    }

    NodeId slice(NodeId a, std::size_t axis, std::size_t start, std::size_t len) {
        const auto& A = nodes_[a].value;
        if (axis >= A.rank() || start + len > A.dims[axis] || len == 0) {
            throw ValidationError("slice: range [" + std::to_string(start) + "," +
                                  std::to_string(start + len) + ") on axis " + std::to_string(axis) +
                                  " invalid for operand dims " + dims_to_string(A.dims));
        }
        std::vector<std::size_t> out_dims = A.dims;
        out_dims[axis] = len;
        std::size_t outer = 1, inner = 1;
        for (std::size_t ax = 0; ax < axis; ++ax) outer *= A.dims[ax];
        for (std::size_t ax = axis + 1; ax < A.dims.size(); ++ax) inner *= A.dims[ax];
        TensorT<S> out(out_dims);
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t e = 0; e < len; ++e)
                for (std::size_t in = 0; in < inner; ++in)
                    out.data[(o * len + e) * inner + in] = A.data[(o * A.dims[axis] + start + e) * inner + in];
        NodeId id = add_node(OpKind::slice, {a}, std::move(out));
        nodes_[id].axis = axis;
        nodes_[id].start = start;
        nodes_[id].len = len;
        return id;
    }

    NodeId sum(NodeId a) {
        const auto& A = nodes_[a].value;
        double acc = 0.0;
        for (S v : A.data) acc += v;
        return add_node(OpKind::sum, {a}, TensorT<S>::scalar(static_cast<S>(acc)));
    }

    NodeId mean(NodeId a) {
        const auto& A = nodes_[a].value;
        double acc = 0.0;
        for (S v : A.data) acc += v;
        return add_node(OpKind::mean, {a}, TensorT<S>::scalar(static_cast<S>(acc / A.numel())));
    }

    // Mean squared error over all elements -> scalar.
    NodeId mse(NodeId pred, NodeId target) {
        const auto& P = nodes_[pred].value;
        const auto& T = nodes_[target].value;
        if (P.dims != T.dims) {
            throw ValidationError(std::string("mse: operand 2 dims ") + dims_to_string(T.dims) +
                                  " do not match operand 1 dims " + dims_to_string(P.dims));
        }
        double acc = 0.0;
        for (std::size_t i = 0; i < P.numel(); ++i) {
            double d = static_cast<double>(P.data[i]) - static_cast<double>(T.data[i]);
            acc += d * d;
        }
        return add_node(OpKind::mse, {pred, target},
                        TensorT<S>::scalar(static_cast<S>(acc / P.numel())));
    }

    // Elementwise binary cross entropy; predictions clamped to [eps, 1-eps].
    NodeId bce(NodeId pred, NodeId target) {
        const auto& P = nodes_[pred].value;
        const auto& T = nodes_[target].value;
        if (P.dims != T.dims) {
            throw ValidationError(std::string("bce: operand 2 dims ") + dims_to_string(T.dims) +
                                  " do not match operand 1 dims " + dims_to_string(P.dims));
        }
        TensorT<S> out(P.dims);
        for (std::size_t i = 0; i < P.numel(); ++i) {
            double p = std::min(1.0 - kBceEps, std::max(kBceEps, static_cast<double>(P.data[i])));
            double t = T.data[i];
            out.data[i] = static_cast<S>(-(t * std::log(p) + (1.0 - t) * std::log(1.0 - p)));
        }
        return add_node(OpKind::bce, {pred, target}, std::move(out));
    }

    // Row gather: table (V x D), indices n -> (n x D).
    NodeId embedding(NodeId table, std::vector<int> indices) {
        const auto& Tb = nodes_[table].value;
        if (Tb.rank() != 2) {
            throw ValidationError("embedding: operand 1 must be rank 2, got dims " + dims_to_string(Tb.dims));
        }
        const std::size_t V = Tb.dims[0], D = Tb.dims[1];
        TensorT<S> out({indices.size(), D});
        for (std::size_t i = 0; i < indices.size(); ++i) {
            int ix = indices[i];
            if (ix < 0 || static_cast<std::size_t>(ix) >= V) {
                throw ValidationError("embedding: index " + std::to_string(ix) + " out of range [0," +
                                      std::to_string(V) + ")");
            }
            for (std::size_t d = 0; d < D; ++d) out.data[i * D + d] = Tb.data[static_cast<std::size_t>(ix) * D + d];
        }
        NodeId id = add_node(OpKind::embedding, {table}, std::move(out));
        nodes_[id].indices = std::move(indices);
        return id;
    }

    // Mean over rows of -log softmax(logits)[target]; logits (n x V).
    NodeId cross_entropy(NodeId logits, std::vector<int> targets) {
        const auto& L = nodes_[logits].value;
        if (L.rank() != 2 || targets.size() != L.dims[0]) {
            throw ValidationError("cross_entropy: logits dims " + dims_to_string(L.dims) + " vs " +
                                  std::to_string(targets.size()) + " targets");
        }
        const std::size_t n = L.dims[0], V = L.dims[1];
        std::vector<double> probs(n * V);
        double loss = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            int t = targets[r];
            if (t < 0 || static_cast<std::size_t>(t) >= V) {
                throw ValidationError("cross_entropy: target " + std::to_string(t) + " out of range [0," +
                                      std::to_string(V) + ")");
            }
            double mx = L.data[r * V];
            for (std::size_t j = 1; j < V; ++j) mx = std::max(mx, static_cast<double>(L.data[r * V + j]));
            double denom = 0.0;
            for (std::size_t j = 0; j < V; ++j) denom += std::exp(static_cast<double>(L.data[r * V + j]) - mx);
            for (std::size_t j = 0; j < V; ++j)
                probs[r * V + j] = std::exp(static_cast<double>(L.data[r * V + j]) - mx) / denom;
            loss -= std::log(std::max(probs[r * V + static_cast<std::size_t>(t)], 1e-300));
        }
        NodeId id = add_node(OpKind::cross_entropy, {logits},
                             TensorT<S>::scalar(static_cast<S>(loss / n)));
        nodes_[id].indices = std::move(targets);
        nodes_[id].saved = std::move(probs);
        return id;
    }

    // Identity forward; backward treats the result as a constant.
    NodeId stop_gradient(NodeId a) {
        TensorT<S> out = nodes_[a].value;
        NodeId id = nodes_.size();
        Node node;
        node.kind = OpKind::stop_gradient;
        node.parents = {a};
        node.value = std::move(out);
        node.requires_grad = false;  // nothing flows through
        nodes_.push_back(std::move(node));
        return id;
    }

    // ---- backward ----------------------------------------------------

    void backward(NodeId root) {
        if (nodes_[root].value.numel() != 1) {
            throw ValidationError("backward: root must be scalar, got dims " +
                                  dims_to_string(nodes_[root].value.dims));
        }
        // mark nodes reachable from root that need gradients
        std::vector<char> needed(nodes_.size(), 0);
        mark_needed(root, needed);
        // reset gradients (backward is idempotent / deterministic)
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            if (needed[i] || nodes_[i].is_param) {
                nodes_[i].grad = TensorT<S>(nodes_[i].value.dims, S(0));
            }
        }
        if (!needed[root]) return;  // root does not depend on any parameter
        nodes_[root].grad.data[0] = S(1);
        for (std::size_t i = root + 1; i-- > 0;) {
            if (!needed[i] || nodes_[i].kind == OpKind::leaf) continue;
            propagate(i, needed);
        }
    }

    const std::vector<NodeId>& params() const { return params_; }

 private:
    std::vector<Node> nodes_;
    std::vector<NodeId> params_;

    NodeId add_leaf(TensorT<S> v, bool is_param) {
        Node node;
        node.kind = OpKind::leaf;
        node.value = std::move(v);
        node.requires_grad = is_param;
        node.is_param = is_param;
        nodes_.push_back(std::move(node));
        return nodes_.size() - 1;
    }

    NodeId add_node(OpKind kind, std::vector<NodeId> parents, TensorT<S> value) {
#ifndef NDEBUG
        for (S v : value.data) assert(std::isfinite(static_cast<double>(v)) && "non-finite forward value");
#endif
        Node node;
        node.kind = kind;
        node.parents = std::move(parents);
        node.requires_grad = false;
        for (NodeId p : node.parents) node.requires_grad |= nodes_[p].requires_grad;
        node.value = std::move(value);
        nodes_.push_back(std::move(node));
        return nodes_.size() - 1;
    }

    template <class F>
    NodeId unary(OpKind kind, NodeId a, F f) {
        const auto& A = nodes_[a].value;
        TensorT<S> out(A.dims);
        for (std::size_t i = 0; i < A.numel(); ++i) out.data[i] = static_cast<S>(f(static_cast<double>(A.data[i])));
        return add_node(kind, {a}, std::move(out));
    }

    struct MatmulDims {
        std::size_t m, k, n;
        std::vector<std::size_t> out_dims;
    };

    MatmulDims matmul_dims(const TensorT<S>& A, const TensorT<S>& B) const {
        if (A.rank() == 2 && B.rank() == 2) {
            if (A.dims[1] != B.dims[0]) {
                throw ValidationError(std::string("matmul: operand 2 dims ") + dims_to_string(B.dims) +
                                      " incompatible with operand 1 dims " + dims_to_string(A.dims));
            }
            return {A.dims[0], A.dims[1], B.dims[1], {A.dims[0], B.dims[1]}};
        }
        if (A.rank() == 2 && B.rank() == 1) {
            if (A.dims[1] != B.dims[0]) {
                throw ValidationError(std::string("matmul: operand 2 dims ") + dims_to_string(B.dims) +
                                      " incompatible with operand 1 dims " + dims_to_string(A.dims));
            }
            return {A.dims[0], A.dims[1], 1, {A.dims[0]}};
        }
        if (A.rank() == 1 && B.rank() == 2) {
            if (A.dims[0] != B.dims[0]) {
                throw ValidationError(std::string("matmul: operand 2 dims ") + dims_to_string(B.dims) +
                                      " incompatible with operand 1 dims " + dims_to_string(A.dims));
            }
            return {1, A.dims[0], B.dims[1], {B.dims[1]}};
        }
        throw ValidationError(std::string("matmul: unsupported ranks, operand 1 dims ") +
                              dims_to_string(A.dims) + " operand 2 dims " + dims_to_string(B.dims));
    }

    void mark_needed(NodeId root, std::vector<char>& needed) const {
        // a node is needed if it requires grad and is reachable from root
        std::vector<NodeId> stack{root};
        std::vector<char> visited(nodes_.size(), 0);
        while (!stack.empty()) {
            NodeId id = stack.back();
            stack.pop_back();
            if (visited[id]) continue;
            visited[id] = 1;
            if (!nodes_[id].requires_grad) continue;
            needed[id] = 1;
            if (nodes_[id].kind == OpKind::stop_gradient) continue;
            for (NodeId p : nodes_[id].parents) stack.push_back(p);
        }
    }

    void accum(NodeId p, const std::vector<char>& needed, std::size_t flat, S v) {
        if (needed[p]) nodes_[p].grad.data[flat] += v;
    }

    void propagate(NodeId id, const std::vector<char>& needed) {
        Node& n = nodes_[id];
        const TensorT<S>& g = n.grad;
        switch (n.kind) {
            case OpKind::matmul: {
                NodeId pa = n.parents[0], pb = n.parents[1];
                const auto& A = nodes_[pa].value;
                const auto& B = nodes_[pb].value;
                auto [m, k, nn, od] = matmul_dims(A, B);
                (void)od;
                if (needed[pa]) {
                    auto& gA = nodes_[pa].grad;
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t l = 0; l < k; ++l) {
                            double acc = 0.0;
                            for (std::size_t j = 0; j < nn; ++j)
                                acc += static_cast<double>(g.data[i * nn + j]) * static_cast<double>(B.data[l * nn + j]);
                            gA.data[i * k + l] += static_cast<S>(acc);
                        }
                }
                if (needed[pb]) {
                    auto& gB = nodes_[pb].grad;
                    for (std::size_t l = 0; l < k; ++l)
                        for (std::size_t j = 0; j < nn; ++j) {
                            double acc = 0.0;
                            for (std::size_t i = 0; i < m; ++i)
                                acc += static_cast<double>(A.data[i * k + l]) * static_cast<double>(g.data[i * nn + j]);
                            gB.data[l * nn + j] += static_cast<S>(acc);
                        }
                }
                break;
            }
            case OpKind::transpose: {
                NodeId pa = n.parents[0];
                if (!needed[pa]) break;
                const auto& A = nodes_[pa].value;
                for (std::size_t i = 0; i < A.dims[0]; ++i)
                    for (std::size_t j = 0; j < A.dims[1]; ++j)
                        nodes_[pa].grad.data[i * A.dims[1] + j] += g.data[j * A.dims[0] + i];
                break;
            }
            case OpKind::add: {
                NodeId pa = n.parents[0], pb = n.parents[1];
                const auto& A = nodes_[pa].value;
                const auto& B = nodes_[pb].value;
                if (needed[pa])
                    for (std::size_t i = 0; i < g.numel(); ++i) nodes_[pa].grad.data[i] += g.data[i];
                if (needed[pb]) {
                    if (A.dims == B.dims) {
                        for (std::size_t i = 0; i < g.numel(); ++i) nodes_[pb].grad.data[i] += g.data[i];
                    } else {
                        const std::size_t nb = B.dims[0];
                        for (std::size_t i = 0; i < g.numel(); ++i) nodes_[pb].grad.data[i % nb] += g.data[i];
                    }
                }
                break;
            }
            case OpKind::sub: {
                NodeId pa = n.parents[0], pb = n.parents[1];
                if (needed[pa])
                    for (std::size_t i = 0; i < g.numel(); ++i) nodes_[pa].grad.data[i] += g.data[i];
                if (needed[pb])
                    for (std::size_t i = 0; i < g.numel(); ++i) nodes_[pb].grad.data[i] -= g.data[i];
                break;
            }
            case OpKind::mul: {
                NodeId pa = n.parents[0], pb = n.parents[1];
                const auto& A = nodes_[pa].value;
                const auto& B = nodes_[pb].value;
                if (needed[pa])
                    for (std::size_t i = 0; i < g.numel(); ++i) nodes_[pa].grad.data[i] += g.data[i] * B.data[i];
                if (needed[pb])
                    for (std::size_t i = 0; i < g.numel(); ++i) nodes_[pb].grad.data[i] += g.data[i] * A.data[i];
                break;
            }
            case OpKind::scale: {
                NodeId pa = n.parents[0];
                if (!needed[pa]) break;
                for (std::size_t i = 0; i < g.numel(); ++i)
                    nodes_[pa].grad.data[i] += static_cast<S>(n.factor * g.data[i]);
                break;
            }
            case OpKind::relu: {
                NodeId pa = n.parents[0];
                if (!needed[pa]) break;
                const auto& A = nodes_[pa].value;
                for (std::size_t i = 0; i < g.numel(); ++i)
                    if (A.data[i] > S(0)) nodes_[pa].grad.data[i] += g.data[i];
                break;
            }
            case OpKind::exp: {
                NodeId pa = n.parents[0];
                if (!needed[pa]) break;
                for (std::size_t i = 0; i < g.numel(); ++i) nodes_[pa].grad.data[i] += g.data[i] * n.value.data[i];
                break;
            }
            case OpKind::log: {
                NodeId pa = n.parents[0];
                if (!needed[pa]) break;
                const auto& A = nodes_[pa].value;
                for (std::size_t i = 0; i < g.numel(); ++i)
                    nodes_[pa].grad.data[i] += static_cast<S>(g.data[i] / static_cast<double>(A.data[i]));
                break;
            }
            case OpKind::sigmoid: {
                NodeId pa = n.parents[0];
                if (!needed[pa]) break;
                for (std::size_t i = 0; i < g.numel(); ++i) {
                    double y = n.value.data[i];
                    nodes_[pa].grad.data[i] += static_cast<S>(g.data[i] * y * (1.0 - y));
                }
                break;
            }
            case OpKind::tanh: {
                NodeId pa = n.parents[0];
                if (!needed[pa]) break;
                for (std::size_t i = 0; i < g.numel(); ++i) {
                    double y = n.value.data[i];
                    nodes_[pa].grad.data[i] += static_cast<S>(g.data[i] * (1.0 - y * y));
                }
                break;
            }
            case OpKind::softmax: {
                NodeId pa = n.parents[0];
                if (!needed[pa]) break;
                const std::size_t cols = n.value.dims.back();
                const std::size_t rows = n.value.numel() / cols;
                for (std::size_t r = 0; r < rows; ++r) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < cols; ++j)
                        dot += static_cast<double>(g.data[r * cols + j]) * static_cast<double>(n.value.data[r * cols + j]);
                    for (std::size_t j = 0; j < cols; ++j) {
                        double y = n.value.data[r * cols + j];
                        nodes_[pa].grad.data[r * cols + j] +=
                            static_cast<S>(y * (static_cast<double>(g.data[r * cols + j]) - dot));
                    }
                }
                break;
            }
            case OpKind::layer_norm: {
                NodeId pa = n.parents[0];
                if (!needed[pa]) break;
                const std::size_t cols = n.value.dims.back();
                const std::size_t rows = n.value.numel() / cols;
                for (std::size_t r = 0; r < rows; ++r) {
                    double inv = n.saved[r];
                    double gmean = 0.0, gymean = 0.0;
                    for (std::size_t j = 0; j < cols; ++j) {
                        gmean += g.data[r * cols + j];
                        gymean += static_cast<double>(g.data[r * cols + j]) * static_cast<double>(n.value.data[r * cols + j]);
                    }
                    gmean /= static_cast<double>(cols);
                    gymean /= static_cast<double>(cols);
                    for (std::size_t j = 0; j < cols; ++j) {
                        double y = n.value.data[r * cols + j];
                        nodes_[pa].grad.data[r * cols + j] +=
                            static_cast<S>(inv * (static_cast<double>(g.data[r * cols + j]) - gmean - y * gymean));
                    }
                }
                break;
            }
            case OpKind::concat: {
                const std::size_t axis = n.axis;
                std::size_t outer = 1, inner = 1;
                for (std::size_t ax = 0; ax < axis; ++ax) outer *= n.value.dims[ax];
                for (std::size_t ax = axis + 1; ax < n.value.dims.size(); ++ax) inner *= n.value.dims[ax];
                std::size_t offset = 0;
                for (NodeId p : n.parents) {
                    const std::size_t ext = nodes_[p].value.dims[axis];
                    if (needed[p]) {
                        for (std::size_t o = 0; o < outer; ++o)
                            for (std::size_t e = 0; e < ext; ++e)
                                for (std::size_t in = 0; in < inner; ++in)
                                    nodes_[p].grad.data[(o * ext + e) * inner + in] +=
                                        g.data[(o * n.value.dims[axis] + offset + e) * inner + in];
                    }
                    offset += ext;
                }
                break;
            }
            case OpKind::slice: {
                NodeId pa = n.parents[0];
                if (!needed[pa]) break;
                const auto& A = nodes_[pa].value;
                std::size_t outer = 1, inner = 1;
                for (std::size_t ax = 0; ax < n.axis; ++ax) outer *= A.dims[ax];
                for (std::size_t ax = n.axis + 1; ax < A.dims.size(); ++ax) inner *= A.dims[ax];
                for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t e = 0; e < n.len; ++e)
                        for (std::size_t in = 0; in < inner; ++in)
                            nodes_[pa].grad.data[(o * A.dims[n.axis] + n.start + e) * inner + in] +=
                                g.data[(o * n.len + e) * inner + in];
                break;
            }
            case OpKind::sum: {
                NodeId pa = n.parents[0];
                if (!needed[pa]) break;
                for (auto& gv : nodes_[pa].grad.data) gv += g.data[0];
                break;
            }
            case OpKind::mean: {
                NodeId pa = n.parents[0];
                if (!needed[pa]) break;
                S gv = static_cast<S>(static_cast<double>(g.data[0]) / nodes_[pa].value.numel());
                for (auto& x : nodes_[pa].grad.data) x += gv;
                break;
            }
            case OpKind::mse: {
                NodeId pa = n.parents[0], pb = n.parents[1];
                const auto& P = nodes_[pa].value;
                const auto& T = nodes_[pb].value;
                const double c = 2.0 * static_cast<double>(g.data[0]) / P.numel();
                for (std::size_t i = 0; i < P.numel(); ++i) {
                    double d = static_cast<double>(P.data[i]) - static_cast<double>(T.data[i]);
                    if (needed[pa]) nodes_[pa].grad.data[i] += static_cast<S>(c * d);
                    if (needed[pb]) nodes_[pb].grad.data[i] -= static_cast<S>(c * d);
                }
                break;
            }
            case OpKind::bce: {
                NodeId pa = n.parents[0], pb = n.parents[1];
                const auto& P = nodes_[pa].value;
                const auto& T = nodes_[pb].value;
                for (std::size_t i = 0; i < P.numel(); ++i) {
                    double praw = P.data[i];
                    double p = std::min(1.0 - kBceEps, std::max(kBceEps, praw));
                    double t = T.data[i];
                    bool clamped = praw < kBceEps || praw > 1.0 - kBceEps;
                    if (needed[pa] && !clamped)
                        nodes_[pa].grad.data[i] += static_cast<S>(g.data[i] * (p - t) / (p * (1.0 - p)));
                    if (needed[pb])
                        nodes_[pb].grad.data[i] += static_cast<S>(g.data[i] * (std::log(1.0 - p) - std::log(p)));
                }
                break;
            }
            case OpKind::embedding: {
                NodeId pa = n.parents[0];
                if (!needed[pa]) break;
                const std::size_t D = n.value.dims[1];
                for (std::size_t i = 0; i < n.indices.size(); ++i) {
                    std::size_t row = static_cast<std::size_t>(n.indices[i]);
                    for (std::size_t d = 0; d < D; ++d)
                        nodes_[pa].grad.data[row * D + d] += g.data[i * D + d];
                }
                break;
            }
            case OpKind::cross_entropy: {
                NodeId pa = n.parents[0];
                if (!needed[pa]) break;
                const auto& L = nodes_[pa].value;
                const std::size_t rows = L.dims[0], V = L.dims[1];
                const double c = static_cast<double>(g.data[0]) / rows;
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < V; ++j) {
                        double p = n.saved[r * V + j];
                        double onehot = (static_cast<std::size_t>(n.indices[r]) == j) ? 1.0 : 0.0;
                        nodes_[pa].grad.data[r * V + j] += static_cast<S>(c * (p - onehot));
                    }
                }
                break;
            }
            case OpKind::stop_gradient:
            case OpKind::leaf:
                break;
        }
    }
};

using Graph = GraphT<float>;
using Graph64 = GraphT<double>;

// Attributes for the generic kind dispatcher.
struct OpAttrs {
    double factor = 1.0;
    std::size_t axis = 0;
    std::size_t start = 0;
    std::size_t len = 0;
    std::vector<int> indices;
};

// Generic entry point: applies `kind` to `inputs` on the graph.
template <class S>
typename GraphT<S>::NodeId apply_op(GraphT<S>& g, OpKind kind,
                                    const std::vector<typename GraphT<S>::NodeId>& inputs,
                                    const OpAttrs& attrs = {}) {
    auto want = [&](std::size_t n) {
        if (inputs.size() != n) {
            throw ValidationError(std::string(op_name(kind)) + ": expected " + std::to_string(n) +
                                  " inputs, got " + std::to_string(inputs.size()));
        }
    };
    switch (kind) {
        case OpKind::matmul: want(2); return g.matmul(inputs[0], inputs[1]);
        case OpKind::transpose: want(1); return g.transpose(inputs[0]);
        case OpKind::add: want(2); return g.add(inputs[0], inputs[1]);
        case OpKind::sub: want(2); return g.sub(inputs[0], inputs[1]);
        case OpKind::mul: want(2); return g.mul(inputs[0], inputs[1]);
        case OpKind::scale: want(1); return g.scale(inputs[0], attrs.factor);
        case OpKind::relu: want(1); return g.relu(inputs[0]);
        case OpKind::exp: want(1); return g.exp_(inputs[0]);
        case OpKind::log: want(1); return g.log_(inputs[0]);
        case OpKind::sigmoid: want(1); return g.sigmoid(inputs[0]);
        case OpKind::tanh: want(1); return g.tanh_(inputs[0]);
        case OpKind::softmax: want(1); return g.softmax(inputs[0]);
        case OpKind::layer_norm: want(1); return g.layer_norm(inputs[0]);
        case OpKind::concat: return g.concat(inputs, attrs.axis);
        case OpKind::slice: want(1); return g.slice(inputs[0], attrs.axis, attrs.start, attrs.len);
        case OpKind::sum: want(1); return g.sum(inputs[0]);
        case OpKind::mean: want(1); return g.mean(inputs[0]);
        case OpKind::mse: want(2); return g.mse(inputs[0], inputs[1]);
        case OpKind::bce: want(2); return g.bce(inputs[0], inputs[1]);
        case OpKind::embedding: want(1); return g.embedding(inputs[0], attrs.indices);
        case OpKind::cross_entropy: want(1); return g.cross_entropy(inputs[0], attrs.indices);
        case OpKind::stop_gradient: want(1); return g.stop_gradient(inputs[0]);
        case OpKind::leaf: break;
    }
    throw ValidationError("apply_op: unsupported kind");
}

}  // namespace vdrive::ad
