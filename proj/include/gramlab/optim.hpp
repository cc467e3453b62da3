#pragma once

#include <string>
#include <vector>

#include "gramlab/linalg.hpp"
#include "gramlab/matrix.hpp"
#include "gramlab/nn.hpp"

namespace gramlab {

enum class OptimRule { Sgd, Adam, AdamW, WhitenedSgd };

inline OptimRule optim_rule_from_name(const std::string& s) {
    if (s == "sgd") return OptimRule::Sgd;
    if (s == "adam") return OptimRule::Adam;
    if (s == "adamw") return OptimRule::AdamW;
    if (s == "whitened_sgd") return OptimRule::WhitenedSgd;
    throw ShapeMismatch("unknown optimizer rule: " + s);
}
inline const char* optim_rule_name(OptimRule r) {
    switch (r) {
        case OptimRule::Sgd: return "sgd";
        case OptimRule::Adam: return "adam";
        case OptimRule::AdamW: return "adamw";
        case OptimRule::WhitenedSgd: return "whitened_sgd";
    }
    return "?";
}

struct OptimizerState {
    OptimRule rule = OptimRule::Sgd;
    double lr = 0.01;
    double momentum = 0.0;        // sgd
    double beta1 = 0.9;           // adam / adamw
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    std::uint64_t step_count = 0;
    double last_gram_dev = 0.0;  // whitened rule: worst per-layer relative Gram drift, last step

    // Optional per-layer lr multipliers (sgd rule). Setting scale[l] = 1/fan_in
    // reproduces plain GD under the 1/sqrt(fan_in) forward-scaling
    // parametrization without touching the forward pass.
    std::vector<double> lr_scale;

    std::vector<Matrix> moment1;  // sgd momentum / adam m
    std::vector<Matrix> moment2;  // adam v
    std::vector<std::vector<double>> bias_moment1;
    std::vector<std::vector<double>> bias_moment2;

    static OptimizerState make(OptimRule rule, double lr, const Network& net) {
        if (lr <= 0.0) throw ShapeMismatch("OptimizerState: lr must be > 0");
        OptimizerState s;
        s.rule = rule;
        s.lr = lr;
        for (const auto& layer : net.layers) {
            s.moment1.emplace_back(layer.weight.rows(), layer.weight.cols());
            s.moment2.emplace_back(layer.weight.rows(), layer.weight.cols());
            std::size_t bn = layer.bias ? layer.bias->size() : 0;
            s.bias_moment1.emplace_back(bn, 0.0);
            s.bias_moment2.emplace_back(bn, 0.0);
        }
        return s;
    }
};

inline void check_grad_shapes(const Network& net, const GradientBundle& grads) {
    if (grads.grad_w.size() != net.depth()) throw ShapeMismatch("optimizer: gradient layer count mismatch");
    for (std::size_t l = 0; l < net.depth(); ++l)
        require_same_shape(net.layers[l].weight, grads.grad_w[l], "optimizer grad");
}

inline void sgd_step(Network& net, const GradientBundle& grads, OptimizerState& state) {
    check_grad_shapes(net, grads);
    ++state.step_count;
    for (std::size_t l = 0; l < net.depth(); ++l) {
        const double lr =
            state.lr * (l < state.lr_scale.size() ? state.lr_scale[l] : 1.0);
        Matrix& w = net.layers[l].weight;
        Matrix& v = state.moment1[l];
        for (std::size_t i = 0; i < w.size(); ++i) {
            double g = grads.grad_w[l].data()[i];
            double vi = state.momentum * v.data()[i] + g;
            v.raw()[i] = vi;
            w.raw()[i] -= lr * (vi + state.weight_decay * w.data()[i]);
        }
        if (net.layers[l].bias && !grads.grad_bias[l].empty()) {
            auto& b = *net.layers[l].bias;
            auto& vb = state.bias_moment1[l];
            for (std::size_t i = 0; i < b.size(); ++i) {
                vb[i] = state.momentum * vb[i] + grads.grad_bias[l][i];
                b[i] -= lr * vb[i];
            }
        }
    }
}

inline void adam_step(Network& net, const GradientBundle& grads, OptimizerState& state) {
    check_grad_shapes(net, grads);
    ++state.step_count;
    const double t = static_cast<double>(state.step_count);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    const bool decoupled = state.rule == OptimRule::AdamW;
    for (std::size_t l = 0; l < net.depth(); ++l) {
        Matrix& w = net.layers[l].weight;
        Matrix& m = state.moment1[l];
        Matrix& v = state.moment2[l];
        for (std::size_t i = 0; i < w.size(); ++i) {
            double g = grads.grad_w[l].data()[i];
            if (!decoupled) g += state.weight_decay * w.data()[i];
            m.raw()[i] = state.beta1 * m.data()[i] + (1.0 - state.beta1) * g;
            v.raw()[i] = state.beta2 * v.data()[i] + (1.0 - state.beta2) * g * g;
            double mhat = m.data()[i] / c1;
            double vhat = v.data()[i] / c2;
            double upd = mhat / (std::sqrt(vhat) + state.eps);
            if (decoupled) upd += state.weight_decay * w.data()[i];
            w.raw()[i] -= state.lr * upd;
        }
        if (net.layers[l].bias && !grads.grad_bias[l].empty()) {
            auto& b = *net.layers[l].bias;
            auto& mb = state.bias_moment1[l];
            auto& vb = state.bias_moment2[l];
            for (std::size_t i = 0; i < b.size(); ++i) {
                double g = grads.grad_bias[l][i];
                mb[i] = state.beta1 * mb[i] + (1.0 - state.beta1) * g;
                vb[i] = state.beta2 * vb[i] + (1.0 - state.beta2) * g * g;
                b[i] -= state.lr * (mb[i] / c1) / (std::sqrt(vb[i] / c2) + state.eps);
            }
        }
    }
}

/// Gram-whitened update. Per hidden layer: W_hat = W - lr * gradW,
/// Q = polar factor of W W_hatᵀ, W+ = Q W_hat. The Gram of W+ equals the Gram
/// the plain GD step would have produced, while the Gram-preserving rotation
/// component of the update is removed. The final layer and biases take plain
/// gradient steps.
inline void whitened_step(Network& net, const GradientBundle& grads, OptimizerState& state) {
    check_grad_shapes(net, grads);
    ++state.step_count;
    state.last_gram_dev = 0.0;
    for (std::size_t l = 0; l < net.depth(); ++l) {
        Matrix& w = net.layers[l].weight;
        bool last = (l + 1 == net.depth());
        Matrix w_hat = w;
        for (std::size_t i = 0; i < w.size(); ++i)
            w_hat.raw()[i] -= state.lr * (grads.grad_w[l].data()[i] + state.weight_decay * w.data()[i]);
        if (last || w.rows() < 2) {
            w = std::move(w_hat);
        } else {
            Matrix q = polar_orthogonalize_adaptive(matmul_nt(w, w_hat), 1e-9);
            w = matmul(q, w_hat);
            Matrix target = matmul_tn(w_hat, w_hat);
            double dev = frobenius_norm(sub(matmul_tn(w, w), target)) /
                         std::max(frobenius_norm(target), 1e-300);
            state.last_gram_dev = std::max(state.last_gram_dev, dev);
        }
        if (net.layers[l].bias && !grads.grad_bias[l].empty()) {
            auto& b = *net.layers[l].bias;
            for (std::size_t i = 0; i < b.size(); ++i) b[i] -= state.lr * grads.grad_bias[l][i];
        }
    }
}

inline void optimizer_step(Network& net, const GradientBundle& grads, OptimizerState& state) {
    switch (state.rule) {
        case OptimRule::Sgd: sgd_step(net, grads, state); break;
        case OptimRule::Adam:
        case OptimRule::AdamW: adam_step(net, grads, state); break;
        case OptimRule::WhitenedSgd: whitened_step(net, grads, state); break;
    }
}

}  // namespace gramlab
