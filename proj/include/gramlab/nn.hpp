#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "gramlab/matrix.hpp"
#include "gramlab/rng.hpp"

namespace gramlab {

enum class Activation : std::uint8_t { Relu = 0, Gelu = 1, Identity = 2, Sigmoid = 3 };
enum class Loss { Mse, Bce, BceLogits, SoftmaxCe };
enum class InitScale { He, Ntk };

inline const char* activation_name(Activation a) {
    switch (a) {
        case Activation::Relu: return "relu";
        case Activation::Gelu: return "gelu";
        case Activation::Identity: return "identity";
        case Activation::Sigmoid: return "sigmoid";
    }
    return "?";
}

inline Activation activation_from_name(const std::string& s) {
    if (s == "relu") return Activation::Relu;
    if (s == "gelu") return Activation::Gelu;
    if (s == "identity") return Activation::Identity;
    if (s == "sigmoid") return Activation::Sigmoid;
    throw ShapeMismatch("unknown activation: " + s);
}

// GELU, tanh form: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))),
// with the exactly corresponding analytic derivative.
inline double gelu(double x) {
    const double c = std::sqrt(2.0 / M_PI);
    return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}
inline double gelu_deriv(double x) {
    const double c = std::sqrt(2.0 / M_PI);
    double u = c * (x + 0.044715 * x * x * x);
    double t = std::tanh(u);
    double du = c * (1.0 + 3.0 * 0.044715 * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double apply_activation(Activation a, double x) {
    switch (a) {
        case Activation::Relu: return x > 0.0 ? x : 0.0;
        case Activation::Gelu: return gelu(x);
        case Activation::Identity: return x;
        case Activation::Sigmoid: return sigmoid(x);
    }
    return x;
}
inline double activation_deriv(Activation a, double x) {
    switch (a) {
        case Activation::Relu: return x > 0.0 ? 1.0 : 0.0;
        case Activation::Gelu: return gelu_deriv(x);
        case Activation::Identity: return 1.0;
        case Activation::Sigmoid: {
            double s = sigmoid(x);
            return s * (1.0 - s);
        }
    }
    return 1.0;
}

struct Layer {
    Matrix weight;                      // d_out x d_in
    std::optional<std::vector<double>> bias;  // d_out
    Activation activation = Activation::Identity;
};

/// Dense feed-forward network: h_{l+1} = sigma(W_l h_l + b_l), h_0 = input.
struct Network {
    std::vector<Layer> layers;

    std::size_t input_dim() const { return layers.front().weight.cols(); }
    std::size_t output_dim() const { return layers.back().weight.rows(); }
    std::size_t depth() const { return layers.size(); }

    bool bias_free() const {
        for (const auto& l : layers)
            if (l.bias) return false;
        return true;
    }
};

/// Cached batch evolution: z_l = W_l h_l + b_l, h_{l+1} = sigma(z_l).
/// h has depth+1 entries (h[0] = input batch, h[depth] = output f).
struct ForwardTrace {
    std::vector<Matrix> h;  // h[l]: d_l x B
    std::vector<Matrix> z;  // z[l]: d_{l+1} x B
    const Matrix& output() const { return h.back(); }
    std::size_t batch() const { return h.front().cols(); }
};

/// Per-layer weight gradients and hidden-state gradients for one batch.
/// grad_h[l] is the gradient with respect to the INPUT of layer l (so
/// grad_h[0] is the input gradient and grad_h[depth] the output gradient).
struct GradientBundle {
    std::vector<Matrix> grad_w;
    std::vector<std::vector<double>> grad_bias;  // empty vector when layer has no bias
    std::vector<Matrix> grad_h;
};

inline ForwardTrace forward(const Network& net, const Matrix& x) {
    if (x.rows() != net.input_dim()) throw ShapeMismatch("forward: input dim mismatch");
    if (x.cols() < 1) throw ShapeMismatch("forward: empty batch");
    ForwardTrace t;
    t.h.reserve(net.depth() + 1);
    t.z.reserve(net.depth());
    t.h.push_back(x);
    for (const auto& layer : net.layers) {
        Matrix z = matmul(layer.weight, t.h.back());
        if (layer.bias) {
            for (std::size_t i = 0; i < z.rows(); ++i)
                for (std::size_t b = 0; b < z.cols(); ++b) z(i, b) += (*layer.bias)[i];
        }
        Matrix h(z.rows(), z.cols());
        for (std::size_t i = 0; i < z.size(); ++i)
            h.data()[i] = apply_activation(layer.activation, z.data()[i]);
        t.z.push_back(std::move(z));
        t.h.push_back(std::move(h));
    }
    return t;
}

/// Loss value and gradient dL/df. Losses are batch-mean.
inline double loss_and_output_grad(Loss loss, const Matrix& f, const Matrix& y, Matrix& grad_f) {
    require_same_shape(f, y, "loss");
    const double b = static_cast<double>(f.cols());
    grad_f = Matrix(f.rows(), f.cols());
    double total = 0.0;
    switch (loss) {
        case Loss::Mse: {
            for (std::size_t i = 0; i < f.size(); ++i) {
                double d = f.data()[i] - y.data()[i];
                total += d * d;
                grad_f.raw()[i] = 2.0 * d / b;
            }
            return total / b;
        }
        case Loss::Bce: {
            for (std::size_t i = 0; i < f.size(); ++i) {
                double p = f.data()[i];
                if (p <= 0.0 || p >= 1.0)
                    throw ShapeMismatch("bce: predictions must lie in (0,1); use a sigmoid readout");
                double t = y.data()[i];
                total += -(t * std::log(p) + (1.0 - t) * std::log(1.0 - p));
                grad_f.raw()[i] = (p - t) / (p * (1.0 - p)) / b;
            }
            return total / b;
        }
        case Loss::BceLogits: {
            // cross-entropy on raw scores: softplus(f) - y f, stable for |f| large
            for (std::size_t i = 0; i < f.size(); ++i) {
                double z = f.data()[i], t = y.data()[i];
                double softplus = z > 30.0 ? z : std::log1p(std::exp(z));
                total += softplus - t * z;
                grad_f.raw()[i] = (sigmoid(z) - t) / b;
            }
            return total / b;
        }
        case Loss::SoftmaxCe: {
            for (std::size_t c = 0; c < f.cols(); ++c) {
                double m = -1e300;
                for (std::size_t i = 0; i < f.rows(); ++i) m = std::max(m, f(i, c));
                double z = 0.0;
                for (std::size_t i = 0; i < f.rows(); ++i) z += std::exp(f(i, c) - m);
                double logz = std::log(z) + m;
                for (std::size_t i = 0; i < f.rows(); ++i) {
                    double p = std::exp(f(i, c) - logz);
                    grad_f(i, c) = (p - y(i, c)) / b;
                    total += -y(i, c) * (f(i, c) - logz);
                }
            }
            return total / b;
        }
    }
    return 0.0;
}

struct BackwardResult {
    double loss = 0.0;
    GradientBundle grads;
};

inline BackwardResult backward(const Network& net, const ForwardTrace& trace, Loss loss,
                               const Matrix& y) {
    const std::size_t depth = net.depth();
    if (trace.h.size() != depth + 1) throw ShapeMismatch("backward: trace depth mismatch");
    BackwardResult out;
    out.grads.grad_w.resize(depth);
    out.grads.grad_bias.resize(depth);
    out.grads.grad_h.resize(depth + 1);

    Matrix grad_out;
    out.loss = loss_and_output_grad(loss, trace.output(), y, grad_out);
    out.grads.grad_h[depth] = grad_out;

    Matrix grad_h = std::move(grad_out);
    for (std::size_t li = depth; li-- > 0;) {
        const Layer& layer = net.layers[li];
        const Matrix& z = trace.z[li];
        Matrix grad_z(z.rows(), z.cols());
        for (std::size_t i = 0; i < z.size(); ++i)
            grad_z.raw()[i] = grad_h.data()[i] * activation_deriv(layer.activation, z.data()[i]);
        out.grads.grad_w[li] = matmul_nt(grad_z, trace.h[li]);
        if (layer.bias) {
            std::vector<double> gb(z.rows(), 0.0);
            for (std::size_t i = 0; i < z.rows(); ++i)
                for (std::size_t b = 0; b < z.cols(); ++b) gb[i] += grad_z(i, b);
            out.grads.grad_bias[li] = std::move(gb);
        }
        grad_h = matmul_tn(layer.weight, grad_z);
        out.grads.grad_h[li] = grad_h;
    }
    return out;
}

struct NetworkSpec {
    std::vector<std::size_t> dims;  // d_0, d_1, ..., d_L
    Activation hidden_activation = Activation::Relu;
    Activation readout_activation = Activation::Identity;
    bool bias = false;
    InitScale scale = InitScale::He;
};

inline Network init_network(const NetworkSpec& spec, std::uint64_t seed) {
    if (spec.dims.size() < 2) throw ShapeMismatch("init_network: need at least one layer");
    Network net;
    SplitMix64 rng(seed);
    for (std::size_t l = 0; l + 1 < spec.dims.size(); ++l) {
        Layer layer;
        std::size_t fan_in = spec.dims[l], fan_out = spec.dims[l + 1];
        double var = spec.scale == InitScale::He ? 2.0 / static_cast<double>(fan_in)
                                                 : 1.0 / static_cast<double>(fan_in);
        double std_dev = std::sqrt(var);
        layer.weight = Matrix(fan_out, fan_in);
        for (std::size_t i = 0; i < layer.weight.size(); ++i)
            layer.weight.raw()[i] = std_dev * rng.next_gaussian();
        if (spec.bias) layer.bias = std::vector<double>(fan_out, 0.0);
        bool last = (l + 2 == spec.dims.size());
        layer.activation = last ? spec.readout_activation : spec.hidden_activation;
        net.layers.push_back(std::move(layer));
    }
    return net;
}

// ---- checkpoint format: magic "GRMW", version u16, layer count u16, then per
// layer u32 rows, u32 cols, activation u8, bias flag u8, row-major f64 LE
// weights followed by the bias when present. ----

struct BadMagic : std::runtime_error {
    explicit BadMagic(const std::string& what) : std::runtime_error(what) {}
};
struct TruncatedFile : std::runtime_error {
    explicit TruncatedFile(const std::string& what) : std::runtime_error(what) {}
};
struct CountMismatch : std::runtime_error {
    explicit CountMismatch(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {
template <typename T>
void write_le(std::ostream& os, T v) {
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));  // little-endian host assumed (x86/arm64)
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}
template <typename T>
T read_le(std::istream& is) {
    T v;
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
        throw TruncatedFile("unexpected end of file");
    return v;
}
}  // namespace detail

inline void save_checkpoint(const Network& net, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
    os.write("GRMW", 4);
    detail::write_le<std::uint16_t>(os, 1);
    detail::write_le<std::uint16_t>(os, static_cast<std::uint16_t>(net.layers.size()));
    for (const auto& layer : net.layers) {
        detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(layer.weight.rows()));
        detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(layer.weight.cols()));
        detail::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(layer.activation));
        detail::write_le<std::uint8_t>(os, layer.bias ? 1 : 0);
        for (double v : layer.weight.raw()) detail::write_le<double>(os, v);
        if (layer.bias)
            for (double v : *layer.bias) detail::write_le<double>(os, v);
    }
}

inline Network load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[4];
    if (!is.read(magic, 4)) throw TruncatedFile(path + ": too short for magic");
    if (std::memcmp(magic, "GRMW", 4) != 0) throw BadMagic(path + ": not a GRMW checkpoint");
    std::uint16_t version = detail::read_le<std::uint16_t>(is);
    if (version != 1) throw BadMagic(path + ": unsupported version");
    std::uint16_t count = detail::read_le<std::uint16_t>(is);
    Network net;
    for (std::uint16_t l = 0; l < count; ++l) {
        std::uint32_t rows = detail::read_le<std::uint32_t>(is);
        std::uint32_t cols = detail::read_le<std::uint32_t>(is);
        std::uint8_t act = detail::read_le<std::uint8_t>(is);
        std::uint8_t has_bias = detail::read_le<std::uint8_t>(is);
        Layer layer;
        layer.weight = Matrix(rows, cols);
        for (auto& v : layer.weight.raw()) v = detail::read_le<double>(is);
        if (has_bias) {
            std::vector<double> b(rows);
            for (auto& v : b) v = detail::read_le<double>(is);
            layer.bias = std::move(b);
        }
        layer.activation = static_cast<Activation>(act);
        net.layers.push_back(std::move(layer));
    }
    return net;
}

}  // namespace gramlab
