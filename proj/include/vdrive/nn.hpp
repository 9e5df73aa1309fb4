#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "vdrive/graph.hpp"
#include "vdrive/rng.hpp"
#include "vdrive/tensor.hpp"

namespace vdrive::nn {

// Named parameter set with stable iteration order.
template <class S>
class ParamStoreT {
 public:
    std::size_t add(const std::string& name, TensorT<S> v) {
        if (by_name_.count(name)) throw ValidationError("params: duplicate name " + name);
        by_name_[name] = names_.size();
        names_.push_back(name);
        values_.push_back(std::move(v));
        return names_.size() - 1;
    }

    std::size_t count() const { return values_.size(); }
    const std::string& name(std::size_t i) const { return names_[i]; }
    TensorT<S>& operator[](std::size_t i) { return values_[i]; }
    const TensorT<S>& operator[](std::size_t i) const { return values_[i]; }

    TensorT<S>& at(const std::string& name) {
        auto it = by_name_.find(name);
        if (it == by_name_.end()) throw ValidationError("params: unknown name " + name);
        return values_[it->second];
    }
    const TensorT<S>& at(const std::string& name) const {
        auto it = by_name_.find(name);
        if (it == by_name_.end()) throw ValidationError("params: unknown name " + name);
        return values_[it->second];
    }
    bool has(const std::string& name) const { return by_name_.count(name) != 0; }

    // Registers every parameter on a fresh graph; index i -> node id.
    std::vector<typename ad::GraphT<S>::NodeId> bind(ad::GraphT<S>& g) const {
        std::vector<typename ad::GraphT<S>::NodeId> ids(values_.size());
        for (std::size_t i = 0; i < values_.size(); ++i) ids[i] = g.param(values_[i]);
        return ids;
    }

 private:
    std::vector<std::string> names_;
    std::vector<TensorT<S>> values_;
    std::map<std::string, std::size_t> by_name_;
};

using ParamStore = ParamStoreT<float>;

template <class S>
TensorT<S> zeros(std::vector<std::size_t> dims) {
    return TensorT<S>(std::move(dims), S(0));
}

// Xavier/Glorot uniform for a (fan_in x fan_out) weight.
template <class S>
TensorT<S> xavier(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
    double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    TensorT<S> t({fan_in, fan_out});
    for (auto& v : t.data) v = static_cast<S>(rng.uniform(-bound, bound));
    return t;
}

template <class S>
TensorT<S> gaussian(Rng& rng, std::vector<std::size_t> dims, double sigma) {
    TensorT<S> t(std::move(dims));
    for (auto& v : t.data) v = static_cast<S>(sigma * rng.normal());
    return t;
}

// Adam with 64-bit moment math.
template <class S>
class AdamT {
 public:
    explicit AdamT(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(ParamStoreT<S>& params, const std::vector<TensorT<S>>& grads) {
        if (m_.empty()) {
            for (std::size_t i = 0; i < params.count(); ++i) {
                m_.emplace_back(params[i].dims, 0.0);
                v_.emplace_back(params[i].dims, 0.0);
            }
        }
        ++t_;
        double bc1 = 1.0 - std::pow(beta1_, t_);
        double bc2 = 1.0 - std::pow(beta2_, t_);
        for (std::size_t i = 0; i < params.count(); ++i) {
            auto& p = params[i];
            const auto& g = grads[i];
            for (std::size_t j = 0; j < p.numel(); ++j) {
                double gv = g.data[j];
                m_[i].data[j] = beta1_ * m_[i].data[j] + (1.0 - beta1_) * gv;
                v_[i].data[j] = beta2_ * v_[i].data[j] + (1.0 - beta2_) * gv * gv;
                double mhat = m_[i].data[j] / bc1;
                double vhat = v_[i].data[j] / bc2;
                p.data[j] = static_cast<S>(p.data[j] - lr_ * mhat / (std::sqrt(vhat) + eps_));
            }
        }
    }

    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }

 private:
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<TensorT<double>> m_, v_;
};

using Adam = AdamT<float>;

// x (.. x in) * W (in x out) + b (out)
template <class S>
typename ad::GraphT<S>::NodeId linear(ad::GraphT<S>& g, typename ad::GraphT<S>::NodeId x,
                                      typename ad::GraphT<S>::NodeId w, typename ad::GraphT<S>::NodeId b) {
    return g.add(g.matmul(x, w), b);
}

// Collects gradients for all bound params after backward().
template <class S>
std::vector<TensorT<S>> collect_grads(const ad::GraphT<S>& g,
                                      const std::vector<typename ad::GraphT<S>::NodeId>& ids) {
    std::vector<TensorT<S>> out;
    out.reserve(ids.size());
    for (auto id : ids) out.push_back(g.grad(id));
    return out;
}

// Weight ids of one pre-LN encoder block (single-head attention + FFN).
struct BlockIds {
    std::size_t wq, wk, wv, wo;  // d x d
    std::size_t w1, b1, w2, b2;  // d x f, f, f x d, d
};

template <class S>
void add_block_params(ParamStoreT<S>& p, const std::string& prefix, std::size_t d, std::size_t f,
                      Rng& rng) {
    p.add(prefix + ".wq", xavier<S>(rng, d, d));
    p.add(prefix + ".wk", xavier<S>(rng, d, d));
    p.add(prefix + ".wv", xavier<S>(rng, d, d));
    p.add(prefix + ".wo", xavier<S>(rng, d, d));
    p.add(prefix + ".w1", xavier<S>(rng, d, f));
    p.add(prefix + ".b1", zeros<S>({f}));
    p.add(prefix + ".w2", xavier<S>(rng, f, d));
    p.add(prefix + ".b2", zeros<S>({d}));
}

// x: (T x d) sequence; returns x after self-attention and feedforward, both
// with residual connections.
template <class S>
typename ad::GraphT<S>::NodeId encoder_block(ad::GraphT<S>& g, typename ad::GraphT<S>::NodeId x,
                                             const std::vector<typename ad::GraphT<S>::NodeId>& ids,
                                             const BlockIds& b) {
    const double d = static_cast<double>(g.value(x).dims.back());
    auto xn = g.layer_norm(x);
    auto q = g.matmul(xn, ids[b.wq]);
    auto k = g.matmul(xn, ids[b.wk]);
    auto v = g.matmul(xn, ids[b.wv]);
    auto scores = g.scale(g.matmul(q, g.transpose(k)), 1.0 / std::sqrt(d));
    auto attn = g.matmul(g.softmax(scores), v);
    x = g.add(x, g.matmul(attn, ids[b.wo]));
    auto ffn_in = g.layer_norm(x);
    auto h = g.relu(g.add(g.matmul(ffn_in, ids[b.w1]), ids[b.b1]));
    return g.add(x, g.add(g.matmul(h, ids[b.w2]), ids[b.b2]));
}

// Checkpoint: one VDTN file per parameter plus a JSON index.
void save_checkpoint(const ParamStore& params, const std::string& dir);
void load_checkpoint(ParamStore& params, const std::string& dir);
bool checkpoint_exists(const std::string& dir);

}  // namespace vdrive::nn
