#pragma once

#include "gramlab/matrix.hpp"
#include "gramlab/nn.hpp"

namespace gramlab {

/// beta-VAE with dense encoder/decoder. The encoder emits 2k rows: the first
/// k are the latent mean, the last k the log-variance.
struct VaeModel {
    Network encoder;
    Network decoder;
    std::size_t latent_dim = 0;
    double beta = 1.0;
};

/// Backward pass from an externally supplied output gradient (no loss head).
inline GradientBundle backward_from_output_grad(const Network& net, const ForwardTrace& trace,
                                                const Matrix& grad_out) {
    const std::size_t depth = net.depth();
    require_same_shape(grad_out, trace.output(), "backward_from_output_grad");
    GradientBundle g;
    g.grad_w.resize(depth);
    g.grad_bias.resize(depth);
    g.grad_h.resize(depth + 1);
    g.grad_h[depth] = grad_out;
    Matrix grad_h = grad_out;
    for (std::size_t li = depth; li-- > 0;) {
        const Layer& layer = net.layers[li];
        const Matrix& z = trace.z[li];
        Matrix grad_z(z.rows(), z.cols());
        for (std::size_t i = 0; i < z.size(); ++i)
            grad_z.raw()[i] = grad_h.data()[i] * activation_deriv(layer.activation, z.data()[i]);
        g.grad_w[li] = matmul_nt(grad_z, trace.h[li]);
        if (layer.bias) {
            std::vector<double> gb(z.rows(), 0.0);
            for (std::size_t i = 0; i < z.rows(); ++i)
                for (std::size_t b = 0; b < z.cols(); ++b) gb[i] += grad_z(i, b);
            g.grad_bias[li] = std::move(gb);
        }
        grad_h = matmul_tn(layer.weight, grad_z);
        g.grad_h[li] = grad_h;
    }
    return g;
}

struct VaeStepResult {
    double recon_loss = 0.0;  // batch-mean squared reconstruction error
    double kl = 0.0;          // batch-mean closed-form Gaussian KL
    double total = 0.0;       // recon + beta * kl
    GradientBundle encoder_grads;
    GradientBundle decoder_grads;
    Matrix mu;      // k x B
    Matrix logvar;  // k x B
    Matrix z;       // k x B reparameterized latents
};

/// One loss/gradient evaluation of the beta-VAE objective with the
/// reparameterization z = mu + sigma .* eps. The noise batch is an explicit
/// argument so runs are replayable.
inline VaeStepResult vae_step(const VaeModel& model, const Matrix& x, const Matrix& noise) {
    const std::size_t k = model.latent_dim;
    const std::size_t b = x.cols();
    if (model.encoder.output_dim() != 2 * k) throw ShapeMismatch("vae_step: encoder must emit 2k rows");
    if (model.decoder.input_dim() != k) throw ShapeMismatch("vae_step: decoder input dim != k");
    if (noise.rows() != k || noise.cols() != b) throw ShapeMismatch("vae_step: noise must be k x B");

    ForwardTrace enc = forward(model.encoder, x);
    const Matrix& enc_out = enc.output();
    VaeStepResult out;
    out.mu = Matrix(k, b);
    out.logvar = Matrix(k, b);
    out.z = Matrix(k, b);
    Matrix sigma(k, b);
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t c = 0; c < b; ++c) {
            out.mu(i, c) = enc_out(i, c);
            out.logvar(i, c) = enc_out(k + i, c);
            sigma(i, c) = std::exp(0.5 * out.logvar(i, c));
            out.z(i, c) = out.mu(i, c) + sigma(i, c) * noise(i, c);
        }
    }

    ForwardTrace dec = forward(model.decoder, out.z);
    Matrix grad_xhat;
    out.recon_loss = loss_and_output_grad(Loss::Mse, dec.output(), x, grad_xhat);
    out.decoder_grads = backward_from_output_grad(model.decoder, dec, grad_xhat);

    const double bn = static_cast<double>(b);
    double kl = 0.0;
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t c = 0; c < b; ++c) {
            double m = out.mu(i, c), lv = out.logvar(i, c);
            kl += 0.5 * (m * m + std::exp(lv) - lv - 1.0);
        }
    out.kl = kl / bn;
    out.total = out.recon_loss + model.beta * out.kl;

    const Matrix& grad_z = out.decoder_grads.grad_h[0];
    Matrix grad_enc_out(2 * k, b);
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t c = 0; c < b; ++c) {
            double gz = grad_z(i, c);
            grad_enc_out(i, c) = gz + model.beta * out.mu(i, c) / bn;
            grad_enc_out(k + i, c) =
                gz * 0.5 * sigma(i, c) * noise(i, c) +
                model.beta * 0.5 * (std::exp(out.logvar(i, c)) - 1.0) / bn;
        }
    }
    out.encoder_grads = backward_from_output_grad(model.encoder, enc, grad_enc_out);
    return out;
}

}  // namespace gramlab
