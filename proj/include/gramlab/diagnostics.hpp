#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "gramlab/linalg.hpp"
#include "gramlab/matrix.hpp"
#include "gramlab/nn.hpp"
#include "gramlab/vae.hpp"

namespace gramlab {

// ---------------------------------------------------------------------------
// Gram / feature-gradient identities
// ---------------------------------------------------------------------------

/// Relative residual of the identity W_lᵀ ∇W_l = Σ_i ∇h_{l,i} h_{l,i}ᵀ.
/// An exact chain-rule identity: any correct backward pass sits at <= 1e-10.
inline double fle_residual(const Network& net, const ForwardTrace& trace,
                           const GradientBundle& grads, std::size_t layer) {
    const Matrix& w = net.layers[layer].weight;
    Matrix lhs = matmul_tn(w, grads.grad_w[layer]);
    Matrix rhs = matmul_nt(grads.grad_h[layer], trace.h[layer]);
    double denom = std::max(frobenius_norm(lhs), 1e-300);
    return frobenius_norm(sub(lhs, rhs)) / denom;
}

/// (W+)ᵀW+ - WᵀW, exact.
inline Matrix gram_shift(const Matrix& w, const Matrix& w_plus) {
    return sub(matmul_tn(w_plus, w_plus), matmul_tn(w, w));
}

/// Batch-summed Virtual Covariance Shift at a layer's input, full expansion:
/// -gamma (G Hᵀ + H Gᵀ) + gamma² G Gᵀ for G = ∇h, H = h.
inline Matrix vcs(const ForwardTrace& trace, const GradientBundle& grads, std::size_t layer,
                  double gamma) {
    const Matrix& h = trace.h[layer];
    const Matrix& g = grads.grad_h[layer];
    Matrix gh = matmul_nt(g, h);
    Matrix out(gh.rows(), gh.cols());
    Matrix gg = matmul_nt(g, g);
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < out.cols(); ++j)
            out(i, j) = -gamma * (gh(i, j) + gh(j, i)) + gamma * gamma * gg(i, j);
    return out;
}

/// O(gamma) part of the VCS, the side Thm-1-style comparisons use.
inline Matrix vcs_first_order(const ForwardTrace& trace, const GradientBundle& grads,
                              std::size_t layer, double gamma) {
    const Matrix& h = trace.h[layer];
    const Matrix& g = grads.grad_h[layer];
    Matrix gh = matmul_nt(g, h);
    Matrix out(gh.rows(), gh.cols());
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) = -gamma * (gh(i, j) + gh(j, i));
    return out;
}

/// Diagonal of the batch-summed VCS, cheap enough to accumulate every step.
inline std::vector<double> vcs_diag(const ForwardTrace& trace, const GradientBundle& grads,
                                    std::size_t layer, double gamma) {
    const Matrix& h = trace.h[layer];
    const Matrix& g = grads.grad_h[layer];
    std::vector<double> out(h.rows(), 0.0);
    for (std::size_t i = 0; i < h.rows(); ++i) {
        double acc = 0.0;
        for (std::size_t b = 0; b < h.cols(); ++b) {
            double hv = h(i, b), gv = g(i, b);
            acc += -2.0 * gamma * gv * hv + gamma * gamma * gv * gv;
        }
        out[i] = acc;
    }
    return out;
}

/// Residual ||gram_shift - vcs_first_order||_F at learning rates gamma and
/// gamma/2, aggregated over all layers. The ratio sits near 4 because the
/// residual is the exact gamma² term.
inline std::pair<double, double> thm1_residual_scaling(const Network& net, const Matrix& x,
                                                       const Matrix& y, Loss loss, double gamma) {
    ForwardTrace trace = forward(net, x);
    BackwardResult back = backward(net, trace, loss, y);
    auto residual_at = [&](double g) {
        double acc = 0.0;
        for (std::size_t l = 0; l < net.depth(); ++l) {
            const Matrix& w = net.layers[l].weight;
            Matrix w_plus = w;
            for (std::size_t i = 0; i < w.size(); ++i)
                w_plus.raw()[i] -= g * back.grads.grad_w[l].data()[i];
            Matrix diff = sub(gram_shift(w, w_plus), vcs_first_order(trace, back.grads, l, g));
            double f = frobenius_norm(diff);
            acc += f * f;
        }
        return std::sqrt(acc);
    };
    return {residual_at(gamma), residual_at(gamma / 2.0)};
}

/// Average Gradient Outer Product at a layer's input:
/// (1/N) Σ_i ∇_{h_l} f ∇_{h_l} fᵀ, per-class summed for multi-output nets.
inline Matrix agop(const Network& net, const ForwardTrace& trace, std::size_t layer) {
    const std::size_t n = trace.batch();
    const std::size_t out_dim = net.output_dim();
    const std::size_t d = trace.h[layer].rows();
    Matrix acc(d, d);
    for (std::size_t c = 0; c < out_dim; ++c) {
        Matrix grad_out(out_dim, n);
        for (std::size_t b = 0; b < n; ++b) grad_out(c, b) = 1.0;
        GradientBundle g = backward_from_output_grad(net, trace, grad_out);
        Matrix gg = matmul_nt(g.grad_h[layer], g.grad_h[layer]);
        as_eigen(acc) += as_eigen(gg);
    }
    as_eigen(acc) *= 1.0 / static_cast<double>(n);
    return acc;
}

/// Diagonal-only AGOP, for wide input layers.
inline std::vector<double> agop_diag(const Network& net, const ForwardTrace& trace,
                                     std::size_t layer) {
    const std::size_t n = trace.batch();
    const std::size_t out_dim = net.output_dim();
    const std::size_t d = trace.h[layer].rows();
    std::vector<double> acc(d, 0.0);
    for (std::size_t c = 0; c < out_dim; ++c) {
        Matrix grad_out(out_dim, n);
        for (std::size_t b = 0; b < n; ++b) grad_out(c, b) = 1.0;
        GradientBundle g = backward_from_output_grad(net, trace, grad_out);
        const Matrix& gh = g.grad_h[layer];
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t b = 0; b < n; ++b) acc[i] += gh(i, b) * gh(i, b);
    }
    for (auto& v : acc) v /= static_cast<double>(n);
    return acc;
}

/// Virtual trajectory of a point cloud across training checkpoints:
/// X_{t+1} = X_t - gamma ∇_X L_t, gradients under checkpoint t.
inline std::vector<Matrix> virtual_trajectory(const std::vector<Network>& checkpoints,
                                              const Matrix& x0, const Matrix& y, Loss loss,
                                              double gamma) {
    std::vector<Matrix> traj;
    traj.reserve(checkpoints.size() + 1);
    traj.push_back(x0);
    Matrix x = x0;
    for (const Network& net : checkpoints) {
        ForwardTrace trace = forward(net, x);
        BackwardResult back = backward(net, trace, loss, y);
        for (std::size_t i = 0; i < x.size(); ++i)
            x.raw()[i] -= gamma * back.grads.grad_h[0].data()[i];
        traj.push_back(x);
    }
    return traj;
}

// ---------------------------------------------------------------------------
// Target Linearity and surrogate
// ---------------------------------------------------------------------------

struct TargetLinearity {
    double pooled = 0.0;                  // one R² over the flattened residual matrix
    std::vector<double> per_column;       // auxiliary per-target R²
    Matrix fitted;                        // Y_hat, N x C
};

/// Ridge R² of regressing targets on features: 1 - ||Y - Y_hat||² / ||Y - Y_bar||²
/// with Y_hat = Hᵀ (HHᵀ + λI)⁻¹ H Y. λ = 0 is computed with the jitter
/// 1e-8 tr(HHᵀ)/d added to HHᵀ.
inline TargetLinearity target_linearity_full(const Matrix& h, const Matrix& y, double lambda) {
    const std::size_t d = h.rows(), n = h.cols();
    if (y.rows() != n) throw ShapeMismatch("target_linearity: H cols must equal Y rows");
    Matrix a = matmul_nt(h, h);
    double lam = lambda;
    if (lam == 0.0) lam = 1e-8 * trace(a) / static_cast<double>(d);
    for (std::size_t i = 0; i < d; ++i) a(i, i) += lam;
    Matrix hy = matmul(h, y);
    Matrix coeff;
    try {
        coeff = cholesky_solve(a, hy);
    } catch (const NotPositiveDefinite&) {
        throw DegenerateGram("target_linearity: HHᵀ + λI not positive definite");
    }
    TargetLinearity out;
    out.fitted = matmul_tn(h, coeff);  // N x C

    double num_pooled = 0.0, den_pooled = 0.0;
    out.per_column.resize(y.cols());
    for (std::size_t c = 0; c < y.cols(); ++c) {
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += y(i, c);
        mean /= static_cast<double>(n);
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double r = y(i, c) - out.fitted(i, c);
            double cdev = y(i, c) - mean;
            num += r * r;
            den += cdev * cdev;
        }
        if (den == 0.0) throw ConstantInput("target_linearity: constant target column");
        out.per_column[c] = 1.0 - num / den;
        num_pooled += num;
        den_pooled += den;
    }
    out.pooled = 1.0 - num_pooled / den_pooled;
    return out;
}

inline double target_linearity(const Matrix& h, const Matrix& y, double lambda) {
    return target_linearity_full(h, y, lambda).pooled;
}

/// Relative gap between the primal residual ||Y - Y_hat||² and the Woodbury
/// form λ² tr(Yᵀ (λI + HᵀH)⁻² Y). Both sides computed independently.
inline double woodbury_error_check(const Matrix& h, const Matrix& y, double lambda) {
    const std::size_t d = h.rows(), n = h.cols();
    if (lambda <= 0.0) throw ShapeMismatch("woodbury_error_check: lambda must be > 0");
    if (n > 256) throw ShapeMismatch("woodbury_error_check: N > 256");

    // primal side
    Matrix a = matmul_nt(h, h);
    for (std::size_t i = 0; i < d; ++i) a(i, i) += lambda;
    Matrix coeff = cholesky_solve(a, matmul(h, y));
    Matrix fitted = matmul_tn(h, coeff);
    Matrix resid = sub(y, fitted);
    double lhs = frobenius_norm(resid);
    lhs *= lhs;

    // dual side, explicit N x N
    Matrix m = matmul_tn(h, h);
    for (std::size_t i = 0; i < n; ++i) m(i, i) += lambda;
    Matrix s1 = cholesky_solve(m, y);
    Matrix s2 = cholesky_solve(m, s1);
    double rhs = lambda * lambda * dot(y, s2);

    return std::abs(lhs - rhs) / std::max(std::abs(lhs), 1e-300);
}

/// tr(Yᵀ G Y) for an explicit PSD Gram.
inline double surrogate(const Matrix& g, const Matrix& y) {
    Matrix gy = matmul(g, y);
    return dot(y, gy);
}

/// tr(Yᵀ H ᵀWᵀW H Y) = ||W H Y||_F² without materializing the N x N Gram.
inline double surrogate_gid(const Matrix& w, const Matrix& h, const Matrix& y) {
    Matrix hy = matmul(h, y);
    Matrix why = matmul(w, hy);
    double f = frobenius_norm(why);
    return f * f;
}

struct Thm2Bound {
    double tl = 0.0;
    double bound = 0.0;  // 1 - C / S(G_id)
    double surrogate_value = 0.0;
    double constant = 0.0;
};

/// TL lower bound via the surrogate: TL >= 1 - C S(G_id)⁻¹ with
/// C = e0⁻¹ e1² c0² (2λ + c1²)² / (4λ), e0 = ||Y - Y_bar||², e1 = ||Y||².
/// Preconditions ||W||_op <= c0, ||H||_F <= c1, N > d, λ > 0 are verified.
inline Thm2Bound thm2_bound_check(const Matrix& w, const Matrix& h, const Matrix& y, double lambda,
                                  double c0, double c1) {
    const std::size_t d = h.rows(), n = h.cols();
    if (lambda <= 0.0) throw AssumptionViolated("thm2: lambda must be > 0");
    if (n <= d) throw AssumptionViolated("thm2: requires N > d");
    if (operator_norm(w) > c0 * (1.0 + 1e-9)) throw AssumptionViolated("thm2: ||W||_op > c0");
    if (frobenius_norm(h) > c1 * (1.0 + 1e-9)) throw AssumptionViolated("thm2: ||H||_F > c1");
    if (y.cols() != 1) throw ShapeMismatch("thm2: single-target Y expected");

    Thm2Bound out;
    out.tl = target_linearity(h, y, lambda);
    double e1 = 0.0, mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        e1 += y(i, 0) * y(i, 0);
        mean += y(i, 0);
    }
    mean /= static_cast<double>(n);
    double e0 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double dv = y(i, 0) - mean;
        e0 += dv * dv;
    }
    if (e0 == 0.0) throw ConstantInput("thm2: constant target");
    out.surrogate_value = surrogate_gid(w, h, y);
    double t = 2.0 * lambda + c1 * c1;
    out.constant = (e1 * e1 * c0 * c0 * t * t) / (4.0 * lambda * e0);
    out.bound = 1.0 - out.constant / std::max(out.surrogate_value, 1e-300);
    return out;
}

/// Kantorovich-style spectral bound:
/// Yᵀ(λI+G)⁻²Y <= κ ||Y||⁴ [Yᵀ(λI+G)Y]⁻¹, κ = (2λ+λmax+λmin)²/(4(λ+λmin)³).
inline std::pair<double, double> kantorovich_check(const Matrix& g, const Matrix& y,
                                                   double lambda) {
    if (g.rows() > 128) throw ShapeMismatch("kantorovich_check: dim > 128");
    if (lambda <= 0.0) throw ShapeMismatch("kantorovich_check: lambda must be > 0");
    EigenDecomp ed = jacobi_eigen_sym(g);
    const std::size_t n = g.rows();
    double lmax = ed.eigenvalues.front();
    double lmin = std::max(ed.eigenvalues.back(), 0.0);
    double lhs = 0.0, quad = 0.0, ynorm2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double proj = 0.0;
        for (std::size_t r = 0; r < n; ++r) proj += ed.eigenvectors(r, i) * y(r, 0);
        double mu = lambda + std::max(ed.eigenvalues[i], 0.0);
        lhs += proj * proj / (mu * mu);
        quad += proj * proj * mu;
        ynorm2 += proj * proj;
    }
    double t = 2.0 * lambda + lmax + lmin;
    double kappa = t * t / (4.0 * std::pow(lambda + lmin, 3.0));
    double rhs = kappa * ynorm2 * ynorm2 / quad;
    return {lhs, rhs};
}

// ---------------------------------------------------------------------------
// Training dynamics (moving target)
// ---------------------------------------------------------------------------

struct Thm3Result {
    double actual = 0.0;     // S(G_id) after an actual SGD step on W_0, minus before
    double predicted = 0.0;  // 2 gamma (fᵀ y) (yᵀ K g)
    double ykg = 0.0;        // sign logged, not asserted
};

/// Surrogate shift under one GD step on the first-layer weights, against the
/// moving-target prediction. Requires a 1-positively homogeneous scalar-output
/// network in its input (bias-free relu/identity); checked via the Euler
/// identity xᵀ∇_x f = f(x).
inline Thm3Result thm3_prediction(const Network& net, const Matrix& x, const Matrix& y, Loss loss,
                                  double gamma) {
    if (net.output_dim() != 1) throw ShapeMismatch("thm3: scalar output required");
    const std::size_t n = x.cols();
    ForwardTrace trace = forward(net, x);

    // Euler identity check (m = 1)
    {
        Matrix ones(1, n);
        for (std::size_t b = 0; b < n; ++b) ones(0, b) = 1.0;
        GradientBundle g = backward_from_output_grad(net, trace, ones);
        for (std::size_t b = 0; b < n; ++b) {
            double xdg = 0.0;
            for (std::size_t i = 0; i < x.rows(); ++i) xdg += x(i, b) * g.grad_h[0](i, b);
            double f = trace.output()(0, b);
            if (std::abs(xdg - f) > 1e-6 * std::max(std::abs(f), 1.0))
                throw NotHomogeneous("thm3: Euler identity violated; network not 1-homogeneous");
        }
    }

    BackwardResult back = backward(net, trace, loss, y);
    const Matrix& w0 = net.layers[0].weight;

    auto surrogate_of = [&](const Matrix& w) {
        Matrix xy(n, 1);
        for (std::size_t b = 0; b < n; ++b) xy(b, 0) = y(0, b);
        Matrix hy = matmul(x, xy);    // d x 1
        Matrix why = matmul(w, hy);   // d_out x 1
        double f = frobenius_norm(why);
        return f * f;
    };

    double s_before = surrogate_of(w0);
    Matrix w_plus = w0;
    for (std::size_t i = 0; i < w0.size(); ++i)
        w_plus.raw()[i] -= gamma * back.grads.grad_w[0].data()[i];
    double s_after = surrogate_of(w_plus);

    Thm3Result out;
    out.actual = s_after - s_before;

    // prediction: 2 gamma (fᵀy)(yᵀ K g), K_ij = x_iᵀ x_j, g = -dL/df
    double fy = 0.0;
    for (std::size_t b = 0; b < n; ++b) fy += trace.output()(0, b) * y(0, b);
    Matrix xy(n, 1);
    for (std::size_t b = 0; b < n; ++b) xy(b, 0) = y(0, b);
    Matrix hy = matmul(x, xy);  // Σ y_i x_i
    double ykg = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
        double xg = 0.0;
        for (std::size_t i = 0; i < x.rows(); ++i) xg += x(i, b) * hy(i, 0);
        ykg += xg * (-back.grads.grad_h.back()(0, b));
    }
    out.ykg = ykg;
    out.predicted = 2.0 * gamma * fy * ykg;
    return out;
}

struct MovingTargetDecomp {
    double y_to_ols = 0.0;    // ||y - y_OLS||
    double pred_to_ols = 0.0; // ||y_hat - y_OLS||
    double y_to_pred = 0.0;   // ||y - y_hat||
};

/// Triangle decomposition of the training residual through the best linear
/// predictor y_OLS = Hᵀ(HHᵀ + εI)⁻¹ H y. When features outnumber samples the
/// d x d Gram is rank-deficient, so the equivalent dual (min-norm) form
/// y_OLS = K (K + εI)⁻¹ y with K = HᵀH is used instead.
inline MovingTargetDecomp moving_target_decomp(const Matrix& h, const Matrix& y,
                                               const Matrix& y_hat, double eps_jitter) {
    const std::size_t d = h.rows(), n = h.cols();
    Matrix y_ols;
    if (d <= n) {
        Matrix a = matmul_nt(h, h);
        for (std::size_t i = 0; i < d; ++i) a(i, i) += eps_jitter;
        Matrix coeff = cholesky_solve(a, matmul(h, y));
        y_ols = matmul_tn(h, coeff);
    } else {
        Matrix k = matmul_tn(h, h);
        Matrix kj = k;
        for (std::size_t i = 0; i < n; ++i) kj(i, i) += eps_jitter;
        y_ols = matmul(k, cholesky_solve(kj, y));
    }
    MovingTargetDecomp out;
    out.y_to_ols = frobenius_norm(sub(y, y_ols));
    out.pred_to_ols = frobenius_norm(sub(y_hat, y_ols));
    out.y_to_pred = frobenius_norm(sub(y, y_hat));
    return out;
}

// ---------------------------------------------------------------------------
// Virtual/actual alignment (single sample)
// ---------------------------------------------------------------------------

struct Prop1Report {
    std::vector<bool> magnitude_ok;
    std::vector<bool> sign_ok;
    bool all_pass() const {
        for (bool b : magnitude_ok)
            if (!b) return false;
        for (bool b : sign_ok)
            if (!b) return false;
        return true;
    }
};

/// Compares the actual next-layer update sigma(W+h) - sigma(Wh) (only layer
/// `weight_index` stepped, single sample, ||h|| = 1) against the virtual
/// update h+ - h = -gamma ∇_h L, element-wise: |actual| <= L² |virtual| and
/// sign compatibility under the convention sgn(0) ∈ {-1, +1}. L = 1 for
/// relu/identity.
inline Prop1Report prop1_alignment(const Network& net, std::size_t weight_index, const Matrix& x,
                                   const Matrix& y, Loss loss, double gamma) {
    if (x.cols() != 1) throw ShapeMismatch("prop1: single sample expected");
    ForwardTrace trace = forward(net, x);
    double hn = frobenius_norm(trace.h[weight_index]);
    if (std::abs(hn - 1.0) > 1e-9)
        throw AssumptionViolated("prop1: ||h_{l-1}|| must be 1 (pre-scale the sample)");

    BackwardResult back = backward(net, trace, loss, y);
    const Layer& layer = net.layers[weight_index];
    Matrix w_plus = layer.weight;
    for (std::size_t i = 0; i < w_plus.size(); ++i)
        w_plus.raw()[i] -= gamma * back.grads.grad_w[weight_index].data()[i];

    Matrix z_plus = matmul(w_plus, trace.h[weight_index]);
    if (layer.bias)
        for (std::size_t i = 0; i < z_plus.rows(); ++i) z_plus(i, 0) += (*layer.bias)[i];

    const Matrix& h_next = trace.h[weight_index + 1];
    const Matrix& grad_h_next = back.grads.grad_h[weight_index + 1];
    double lip = 1.0;  // relu / identity
    if (layer.activation == Activation::Gelu) lip = 1.13;  // sup |gelu'| under the tanh form

    Prop1Report report;
    const std::size_t d = h_next.rows();
    report.magnitude_ok.resize(d);
    report.sign_ok.resize(d);
    for (std::size_t i = 0; i < d; ++i) {
        double actual = apply_activation(layer.activation, z_plus(i, 0)) - h_next(i, 0);
        double virt = -gamma * grad_h_next(i, 0);
        report.magnitude_ok[i] = std::abs(actual) <= lip * lip * std::abs(virt) + 1e-12;
        report.sign_ok[i] = actual == 0.0 || virt == 0.0 || (actual > 0.0) == (virt > 0.0);
    }
    return report;
}

// ---------------------------------------------------------------------------
// First-order Taylor aggregate (homogeneous, centered data)
// ---------------------------------------------------------------------------

/// Sum of all pairwise first-order Taylor errors of a scalar 1-homogeneous
/// network on a centered batch, against the closed form m N Σ_j f(x_j).
inline std::pair<double, double> pairwise_taylor_sum(const Network& net, const Matrix& x) {
    if (net.output_dim() != 1) throw ShapeMismatch("pairwise_taylor_sum: scalar output required");
    const std::size_t n = x.cols(), d = x.rows();
    for (std::size_t i = 0; i < d; ++i) {
        double m = 0.0;
        for (std::size_t b = 0; b < n; ++b) m += x(i, b);
        if (std::abs(m / static_cast<double>(n)) > 1e-12)
            throw AssumptionViolated("pairwise_taylor_sum: batch not centered");
    }
    ForwardTrace trace = forward(net, x);
    Matrix ones(1, n);
    for (std::size_t b = 0; b < n; ++b) ones(0, b) = 1.0;
    GradientBundle g = backward_from_output_grad(net, trace, ones);

    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double lin = 0.0;
            for (std::size_t r = 0; r < d; ++r)
                lin += (x(r, i) - x(r, j)) * g.grad_h[0](r, j);
            sum += trace.output()(0, i) - trace.output()(0, j) - lin;
        }
    }
    double fsum = 0.0;
    for (std::size_t b = 0; b < n; ++b) fsum += trace.output()(0, b);
    const double m_hom = 1.0;
    return {sum, m_hom * static_cast<double>(n) * fsum};
}

// ---------------------------------------------------------------------------
// Neural collapse probes
// ---------------------------------------------------------------------------

struct EtfConstruction {
    Matrix features;          // D x N, zero within-class variation
    std::vector<int> labels;  // N
    Matrix readout;           // C x D pseudoinverse of the class-mean matrix
    Matrix class_means;       // D x C
};

/// Simplex-ETF features: class means are the columns of M = P (I - 11ᵀ/C) for
/// an orthonormal D x C frame P, so M⁺M = I - 11ᵀ/C and the returned readout
/// W = M⁺ maps every feature to its centered one-hot label.
inline EtfConstruction construct_etf(std::size_t classes, std::size_t dim,
                                     std::size_t n_per_class, std::uint64_t seed = 7) {
    if (dim < classes) throw ShapeMismatch("construct_etf: D >= C required");
    if (classes < 2) throw DegenerateLabels("construct_etf: need at least 2 classes");

    // random orthonormal frame P (D x C) by Gram-Schmidt on Gaussian columns
    SplitMix64 rng(seed);
    Matrix p(dim, classes);
    for (std::size_t c = 0; c < classes; ++c) {
        std::vector<double> v(dim);
        for (auto& e : v) e = rng.next_gaussian();
        for (std::size_t prev = 0; prev < c; ++prev) {
            double proj = 0.0;
            for (std::size_t r = 0; r < dim; ++r) proj += v[r] * p(r, prev);
            for (std::size_t r = 0; r < dim; ++r) v[r] -= proj * p(r, prev);
        }
        double nrm = 0.0;
        for (double e : v) nrm += e * e;
        nrm = std::sqrt(nrm);
        for (std::size_t r = 0; r < dim; ++r) p(r, c) = v[r] / nrm;
    }

    const double inv_c = 1.0 / static_cast<double>(classes);
    Matrix centering = Matrix::identity(classes);
    for (std::size_t i = 0; i < classes; ++i)
        for (std::size_t j = 0; j < classes; ++j) centering(i, j) -= inv_c;

    EtfConstruction out;
    out.class_means = matmul(p, centering);                // M = P (I - 11ᵀ/C)
    out.readout = matmul(centering, transpose(p));         // M⁺ = (I - 11ᵀ/C) Pᵀ

    const std::size_t n = classes * n_per_class;
    out.features = Matrix(dim, n);
    out.labels.resize(n);
    for (std::size_t c = 0; c < classes; ++c) {
        for (std::size_t k = 0; k < n_per_class; ++k) {
            std::size_t col = c * n_per_class + k;
            out.labels[col] = static_cast<int>(c);
            for (std::size_t r = 0; r < dim; ++r) out.features(r, col) = out.class_means(r, c);
        }
    }
    return out;
}

struct NcProbe {
    double nc1 = 0.0;            // tr(Σ_W) / tr(Σ_B)
    double nc2_deviation = 0.0;  // max |cos(μ_c, μ_c') + 1/(C-1)|
    double gid_vs_yyt = 0.0;     // ||G_id - YYᵀ||_F / ||YYᵀ||_F
    double maximality_gap = 0.0; // c ||YYᵀ||_F - S_cls(G_id), c = ||G_id||_F
    double surrogate_value = 0.0;
};

/// Neural-collapse diagnostics on (features, labels, readout).
/// `y` must be the centered one-hot label matrix (N x C).
inline NcProbe nc_probe(const Matrix& h, const std::vector<int>& labels, const Matrix& w,
                        const Matrix& y) {
    const std::size_t d = h.rows(), n = h.cols();
    if (labels.size() != n) throw ShapeMismatch("nc_probe: label count mismatch");
    int cmax = 0;
    for (int l : labels) cmax = std::max(cmax, l);
    const std::size_t classes = static_cast<std::size_t>(cmax) + 1;
    if (classes < 2) throw DegenerateLabels("nc_probe: single class");

    // class means and global mean
    Matrix mu(d, classes);
    std::vector<std::size_t> counts(classes, 0);
    for (std::size_t b = 0; b < n; ++b) {
        ++counts[labels[b]];
        for (std::size_t r = 0; r < d; ++r) mu(r, labels[b]) += h(r, b);
    }
    for (std::size_t c = 0; c < classes; ++c) {
        if (counts[c] == 0) throw DegenerateLabels("nc_probe: empty class");
        for (std::size_t r = 0; r < d; ++r) mu(r, c) /= static_cast<double>(counts[c]);
    }
    std::vector<double> global(d, 0.0);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t r = 0; r < d; ++r) global[r] += h(r, b);
    for (auto& v : global) v /= static_cast<double>(n);

    double tr_w = 0.0, tr_b = 0.0;
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t r = 0; r < d; ++r) {
            double dv = h(r, b) - mu(r, labels[b]);
            tr_w += dv * dv;
        }
    tr_w /= static_cast<double>(n);
    for (std::size_t c = 0; c < classes; ++c)
        for (std::size_t r = 0; r < d; ++r) {
            double dv = mu(r, c) - global[r];
            tr_b += dv * dv;
        }
    tr_b /= static_cast<double>(classes);

    NcProbe out;
    out.nc1 = tr_w / std::max(tr_b, 1e-300);

    double target_cos = -1.0 / static_cast<double>(classes - 1);
    for (std::size_t c1 = 0; c1 < classes; ++c1) {
        for (std::size_t c2 = c1 + 1; c2 < classes; ++c2) {
            double num = 0.0, n1 = 0.0, n2 = 0.0;
            for (std::size_t r = 0; r < d; ++r) {
                double a = mu(r, c1) - global[r], b2 = mu(r, c2) - global[r];
                num += a * b2;
                n1 += a * a;
                n2 += b2 * b2;
            }
            double cos = num / std::max(std::sqrt(n1 * n2), 1e-300);
            out.nc2_deviation = std::max(out.nc2_deviation, std::abs(cos - target_cos));
        }
    }

    Matrix wh = matmul(w, h);             // C x N
    Matrix gid = matmul_tn(wh, wh);       // N x N
    Matrix yyt = matmul_nt(y, y);
    out.gid_vs_yyt = frobenius_norm(sub(gid, yyt)) / std::max(frobenius_norm(yyt), 1e-300);
    Matrix why = matmul(wh, y);
    double s = frobenius_norm(why);
    out.surrogate_value = s * s;
    out.maximality_gap = frobenius_norm(gid) * frobenius_norm(yyt) - out.surrogate_value;
    return out;
}

// ---------------------------------------------------------------------------
// Piecewise-linear Taylor bound (depth-2 relu)
// ---------------------------------------------------------------------------

struct RegionCrossings {
    std::size_t crossings = 0;  // M
    double delta = 0.0;         // max |readout_i| ||w_i|| over crossed neurons
    double eps_actual = 0.0;    // |f(b) - bᵀ∇f(a)|
    double bound = 0.0;         // 2 M B delta
};

/// Exact crossing count for the segment [a, b] through the linear regions of
/// a bias-free one-hidden-layer relu network, with the resulting Taylor-error
/// bound |f(b) - bᵀ∇f(a)| <= 2 M B delta.
inline RegionCrossings region_crossings_depth2(const Network& net, const Matrix& a,
                                               const Matrix& b) {
    if (net.depth() != 2 || net.layers[0].activation != Activation::Relu ||
        net.layers[1].activation != Activation::Identity || !net.bias_free() ||
        net.output_dim() != 1)
        throw ShapeMismatch("region_crossings_depth2: bias-free 1-hidden relu net required");
    if (a.cols() != 1 || b.cols() != 1) throw ShapeMismatch("region_crossings_depth2: single points");

    const Matrix& w = net.layers[0].weight;    // m x d
    const Matrix& readout = net.layers[1].weight;  // 1 x m
    const std::size_t m = w.rows(), d = w.cols();

    RegionCrossings out;
    Matrix za = matmul(w, a), zb = matmul(w, b);
    for (std::size_t i = 0; i < m; ++i) {
        double da = za(i, 0), db = zb(i, 0);
        double denom = db - da;
        if (denom == 0.0) continue;
        double t = -da / denom;
        if (t > 0.0 && t < 1.0) {
            ++out.crossings;
            double wn = 0.0;
            for (std::size_t r = 0; r < d; ++r) wn += w(i, r) * w(i, r);
            out.delta = std::max(out.delta, std::abs(readout(0, i)) * std::sqrt(wn));
        }
    }

    double fb = 0.0, b_grad_a = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        if (zb(i, 0) > 0.0) fb += readout(0, i) * zb(i, 0);
        if (za(i, 0) > 0.0) b_grad_a += readout(0, i) * zb(i, 0);  // bᵀ(relu'(za_i) w_i)
    }
    out.eps_actual = std::abs(fb - b_grad_a);
    double bn = std::max(frobenius_norm(a), frobenius_norm(b));
    out.bound = 2.0 * static_cast<double>(out.crossings) * bn * out.delta;
    return out;
}

// ---------------------------------------------------------------------------
// OLS interpolation bound (Prop 4)
// ---------------------------------------------------------------------------

struct InterpolationGap {
    std::vector<double> lhs;  // per alpha
    double rhs = 0.0;
};

/// Pairwise-interpolation reconstruction error of the OLS decoder
/// g(z) = zᵀ(ZᵀZ)⁻¹ZᵀX against its diagonal reconstruction error.
inline InterpolationGap ols_interpolation_gap(const Matrix& z, const Matrix& x,
                                              const std::vector<double>& alphas) {
    const std::size_t n = z.rows(), k = z.cols();
    if (x.rows() != n) throw ShapeMismatch("ols_interpolation_gap: Z and X row counts differ");
    Matrix ztz = matmul_tn(z, z);
    double jitter = 1e-10 * std::max(trace(ztz) / static_cast<double>(k), 1e-300);
    Matrix coeff;
    for (int attempt = 0;; ++attempt) {
        try {
            coeff = cholesky_solve(ztz, matmul_tn(z, x));
            break;
        } catch (const NotPositiveDefinite&) {
            if (attempt >= 3) throw DegenerateGram("ols_interpolation_gap: ZᵀZ not invertible");
            for (std::size_t i = 0; i < k; ++i) ztz(i, i) += jitter;
            jitter *= 100.0;
        }
    }
    Matrix resid = sub(matmul(z, coeff), x);  // N x d, r_i = g(z_i) - x_i

    InterpolationGap out;
    double rhs = 0.0;
    std::vector<double> row_norm(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t c = 0; c < x.cols(); ++c) s += resid(i, c) * resid(i, c);
        row_norm[i] = std::sqrt(s);
        rhs += row_norm[i];
    }
    out.rhs = rhs / static_cast<double>(n);

    // g is linear, so g(alpha z_i + (1-alpha) z_j) - target = alpha r_i + (1-alpha) r_j
    for (double alpha : alphas) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                double s = 0.0;
                for (std::size_t c = 0; c < x.cols(); ++c) {
                    double v = alpha * resid(i, c) + (1.0 - alpha) * resid(j, c);
                    s += v * v;
                }
                acc += std::sqrt(s);
            }
        }
        out.lhs.push_back(acc / static_cast<double>(n * n));
    }
    return out;
}

}  // namespace gramlab
