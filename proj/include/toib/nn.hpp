#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "toib/errors.hpp"
#include "toib/rng.hpp"
#include "toib/tensor.hpp"

namespace toib {

enum class Activation { relu, tanh };

enum class InitScheme { xavier_uniform };

// Per-sample diagonal-Gaussian latent parameters, both [V x d].
struct GaussianLatent {
    Tensor mu;
    Tensor logvar;
};

struct Linear {
    Tensor w;  // [in x out]
    Tensor b;  // [out]

    static Linear make(size_t in, size_t out) {
        Linear l;
        l.w = Tensor::zeros({in, out}, true);
        l.b = Tensor::zeros({out}, true);
        return l;
    }

    Tensor forward(Tape& tape, const Tensor& x) const { return tape.add_rowvec(tape.matmul(x, w), b); }

    size_t in_dim() const { return w.shape()[0]; }
    size_t out_dim() const { return w.shape()[1]; }
};

struct Mlp {
    std::vector<Linear> layers;
    Activation act = Activation::relu;

    static Mlp make(const std::vector<size_t>& widths, Activation act = Activation::relu) {
        if (widths.size() < 2) throw ContractError("Mlp needs at least input and output widths");
        Mlp m;
        m.act = act;
        for (size_t i = 0; i + 1 < widths.size(); ++i) m.layers.push_back(Linear::make(widths[i], widths[i + 1]));
        return m;
    }

    // Activation after every layer except the last.
    Tensor forward(Tape& tape, const Tensor& x) const {
        Tensor h = x;
        for (size_t i = 0; i < layers.size(); ++i) {
            h = layers[i].forward(tape, h);
            if (i + 1 < layers.size()) h = act == Activation::relu ? tape.relu(h) : tape.tanh_(h);
        }
        return h;
    }

    void collect_params(std::vector<Tensor>& out) const {
        for (const auto& l : layers) {
            out.push_back(l.w);
            out.push_back(l.b);
        }
    }

    size_t param_count() const {
        size_t n = 0;
        for (const auto& l : layers) n += l.w.numel() + l.b.numel();
        return n;
    }

    size_t in_dim() const { return layers.front().in_dim(); }
    size_t out_dim() const { return layers.back().out_dim(); }
};

inline constexpr double kLogvarClamp = 10.0;

// Stochastic encoder: shared trunk with affine mu / logvar heads.
// logvar is clamped to [-kLogvarClamp, kLogvarClamp] before anything
// downstream touches it.
struct GaussianEncoder {
    Mlp trunk;
    Linear mu_head;
    Linear logvar_head;

    static GaussianEncoder make(size_t input_dim, const std::vector<size_t>& hidden, size_t latent_dim,
                                Activation act = Activation::relu) {
        GaussianEncoder e;
        std::vector<size_t> widths{input_dim};
        widths.insert(widths.end(), hidden.begin(), hidden.end());
        if (hidden.empty()) widths.push_back(input_dim);
        e.trunk = Mlp::make(widths, act);
        e.mu_head = Linear::make(e.trunk.out_dim(), latent_dim);
        e.logvar_head = Linear::make(e.trunk.out_dim(), latent_dim);
        return e;
    }

    GaussianLatent forward(Tape& tape, const Tensor& x) const {
        if (x.ndim() != 2 || x.shape()[1] != trunk.in_dim())
            throw DimensionError("encoder input " + shape_str(x.shape()) + " does not match trunk width " +
                                 std::to_string(trunk.in_dim()));
        Tensor h = trunk.forward(tape, x);
        // Trunk output still needs one nonlinearity; the heads are affine.
        h = trunk.act == Activation::relu ? tape.relu(h) : tape.tanh_(h);
        GaussianLatent lat;
        lat.mu = mu_head.forward(tape, h);
        lat.logvar = tape.clamp(logvar_head.forward(tape, h), -kLogvarClamp, kLogvarClamp);
        return lat;
    }

    size_t latent_dim() const { return mu_head.out_dim(); }

    void collect_params(std::vector<Tensor>& out) const {
        trunk.collect_params(out);
        out.push_back(mu_head.w);
        out.push_back(mu_head.b);
        out.push_back(logvar_head.w);
        out.push_back(logvar_head.b);
    }
};

struct Decoder {
    Mlp net;

    static Decoder make(size_t latent_dim, const std::vector<size_t>& hidden, size_t n_classes,
                        Activation act = Activation::relu) {
        std::vector<size_t> widths{latent_dim};
        widths.insert(widths.end(), hidden.begin(), hidden.end());
        widths.push_back(n_classes);
        Decoder d;
        d.net = Mlp::make(widths, act);
        return d;
    }

    Tensor forward(Tape& tape, const Tensor& y) const {
        if (y.ndim() != 2 || y.shape()[1] != net.in_dim())
            throw DimensionError("decoder input " + shape_str(y.shape()) + " does not match width " +
                                 std::to_string(net.in_dim()));
        return net.forward(tape, y);
    }

    size_t n_classes() const { return net.out_dim(); }

    void collect_params(std::vector<Tensor>& out) const { net.collect_params(out); }
};

// Predicted class from logits, 1-based. Ties break to the lowest index.
inline std::vector<int> argmax_classes(const Tensor& logits) {
    const size_t v = logits.shape()[0], k = logits.shape()[1];
    std::vector<int> pred(v);
    for (size_t r = 0; r < v; ++r) {
        size_t best = 0;
        for (size_t c = 1; c < k; ++c)
            if (logits.at(r, c) > logits.at(r, best)) best = c;
        pred[r] = static_cast<int>(best) + 1;
    }
    return pred;
}

// Conditional density network q(z_j | z_i, w): input is z_i concatenated with
// a one-hot encoding of w, output is a diagonal Gaussian over z_j.
struct ClubNet {
    Mlp trunk;
    Linear mu_head;
    Linear logvar_head;
    size_t latent_dim = 0;
    size_t n_classes = 0;

    static ClubNet make(size_t latent_dim, size_t n_classes, const std::vector<size_t>& hidden,
                        Activation act = Activation::relu) {
        ClubNet c;
        c.latent_dim = latent_dim;
        c.n_classes = n_classes;
        std::vector<size_t> widths{latent_dim + n_classes};
        widths.insert(widths.end(), hidden.begin(), hidden.end());
        if (hidden.empty()) widths.push_back(latent_dim + n_classes);
        c.trunk = Mlp::make(widths, act);
        c.mu_head = Linear::make(c.trunk.out_dim(), latent_dim);
        c.logvar_head = Linear::make(c.trunk.out_dim(), latent_dim);
        return c;
    }

    // cond is [V x (d+K)]; returns (mu, logvar) each [V x d], logvar clamped.
    GaussianLatent forward(Tape& tape, const Tensor& cond) const {
        Tensor h = trunk.forward(tape, cond);
        h = trunk.act == Activation::relu ? tape.relu(h) : tape.tanh_(h);
        GaussianLatent out;
        out.mu = mu_head.forward(tape, h);
        out.logvar = tape.clamp(logvar_head.forward(tape, h), -kLogvarClamp, kLogvarClamp);
        return out;
    }

    void collect_params(std::vector<Tensor>& out) const {
        trunk.collect_params(out);
        out.push_back(mu_head.w);
        out.push_back(mu_head.b);
        out.push_back(logvar_head.w);
        out.push_back(logvar_head.b);
    }

    void set_params_requires_grad(bool rg) {
        std::vector<Tensor> ps;
        collect_params(ps);
        for (auto& p : ps) p.set_requires_grad(rg);
    }
};

// One-hot encoding of 1-based class indices, as a constant tensor.
inline Tensor one_hot(const std::vector<int>& classes, size_t k) {
    Tensor t = Tensor::zeros({classes.size(), k});
    for (size_t r = 0; r < classes.size(); ++r) {
        const int w = classes[r];
        if (w < 1 || static_cast<size_t>(w) > k)
            throw ContractError("class " + std::to_string(w) + " outside [1.." + std::to_string(k) + "]");
        t.values()[r * k + static_cast<size_t>(w - 1)] = 1.0;
    }
    return t;
}

// Xavier-uniform weights, zero biases.
inline void init_linear(Linear& l, Rng& rng, InitScheme scheme = InitScheme::xavier_uniform) {
    (void)scheme;
    const double fan_in = static_cast<double>(l.in_dim());
    const double fan_out = static_cast<double>(l.out_dim());
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& x : l.w.values()) x = rng.uniform(-bound, bound);
    for (double& x : l.b.values()) x = 0.0;
}

inline void init_params(Mlp& m, Rng& rng, InitScheme scheme = InitScheme::xavier_uniform) {
    for (auto& l : m.layers) init_linear(l, rng, scheme);
}

inline void init_params(GaussianEncoder& e, Rng& rng, InitScheme scheme = InitScheme::xavier_uniform) {
    init_params(e.trunk, rng, scheme);
    init_linear(e.mu_head, rng, scheme);
    init_linear(e.logvar_head, rng, scheme);
}

inline void init_params(Decoder& d, Rng& rng, InitScheme scheme = InitScheme::xavier_uniform) {
    init_params(d.net, rng, scheme);
}

inline void init_params(ClubNet& c, Rng& rng, InitScheme scheme = InitScheme::xavier_uniform) {
    init_params(c.trunk, rng, scheme);
    init_linear(c.mu_head, rng, scheme);
    init_linear(c.logvar_head, rng, scheme);
}

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias correction over a fixed parameter list. Gradients are
// cleared after each step.
class AdamState {
public:
    AdamState() = default;

    AdamState(std::vector<Tensor> params, AdamConfig cfg) : cfg_(cfg), params_(std::move(params)) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i].numel(), 0.0);
            v_[i].assign(params_[i].numel(), 0.0);
        }
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i].values();
            auto& g = params_[i].grad();
            if (g.size() != p.size())
                throw ContractError("adam_step gradient shape mismatch on parameter " + std::to_string(i));
            auto& m = m_[i];
            auto& v = v_[i];
            for (size_t j = 0; j < p.size(); ++j) {
                m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
                v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
                const double mhat = m[j] / bc1;
                const double vhat = v[j] / bc2;
                p[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
        for (auto& p : params_) p.zero_grad();
    }

    void zero_grads() {
        for (auto& p : params_) p.zero_grad();
    }

    const std::vector<Tensor>& params() const { return params_; }
    std::vector<Tensor>& params() { return params_; }
    uint64_t step_count() const { return t_; }
    const AdamConfig& config() const { return cfg_; }

    std::vector<std::vector<double>>& moment1() { return m_; }
    std::vector<std::vector<double>>& moment2() { return v_; }
    const std::vector<std::vector<double>>& moment1() const { return m_; }
    const std::vector<std::vector<double>>& moment2() const { return v_; }
    void set_step_count(uint64_t t) { t_ = t; }

private:
    AdamConfig cfg_;
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    uint64_t t_ = 0;
};

}  // namespace toib
