#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "gramlab/matrix.hpp"
#include "gramlab/rng.hpp"

namespace gramlab {

/// Solves A X = B for symmetric positive-definite A via an in-place Cholesky
/// factorization. Throws NotPositiveDefinite when a pivot is <= 0, which in
/// practice signals a degenerate Gram or a ridge parameter chosen too small.
inline Matrix cholesky_solve(const Matrix& a, const Matrix& b) {
    if (a.rows() != a.cols()) throw ShapeMismatch("cholesky_solve: A not square");
    if (a.rows() != b.rows()) throw ShapeMismatch("cholesky_solve: A and B row counts differ");
    if (!is_symmetric(a, 1e-10)) throw NotSymmetric("cholesky_solve: A not symmetric");

    const std::size_t n = a.rows();
    Matrix l = a;  // lower triangle overwritten with the factor
    for (std::size_t j = 0; j < n; ++j) {
        double d = l(j, j);
        for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
        if (d <= 0.0) throw NotPositiveDefinite("cholesky_solve: pivot <= 0 at index " + std::to_string(j));
        double lj = std::sqrt(d);
        l(j, j) = lj;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = l(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            l(i, j) = s / lj;
        }
    }

    // forward/back substitution per right-hand side
    Matrix x = b;
    const std::size_t m = b.cols();
    for (std::size_t c = 0; c < m; ++c) {
        for (std::size_t i = 0; i < n; ++i) {
            double s = x(i, c);
            for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * x(k, c);
            x(i, c) = s / l(i, i);
        }
        for (std::size_t ii = n; ii-- > 0;) {
            double s = x(ii, c);
            for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * x(k, c);
            x(ii, c) = s / l(ii, ii);
        }
    }
    return x;
}

/// Newton-Schulz polar factor: X0 = M/||M||_F, X <- 1.5 X - 0.5 X Xᵀ X.
/// Returns the orthogonal factor Q = UVᵀ of the polar/SVD factorization.
/// `iterations` defaults to the cubic 15-step schedule.
inline Matrix polar_orthogonalize(const Matrix& m, int iterations = 15) {
    double fn = frobenius_norm(m);
    if (fn == 0.0) throw DegenerateInput("polar_orthogonalize: zero matrix");
    bool wide = m.cols() > m.rows();
    Matrix x = wide ? transpose(m) : m;  // work tall so XᵀX is the small Gram
    as_eigen(x) *= 1.0 / fn;
    for (int k = 0; k < iterations; ++k) {
        Matrix g = matmul_tn(x, x);
        Matrix xg = matmul(x, g);
        as_eigen(x) = 1.5 * as_eigen(x) - 0.5 * as_eigen(xg);
    }
    return wide ? transpose(x) : x;
}

/// Newton-Schulz iterated until ||QᵀQ - I||_F <= tol (or max_iterations).
/// Square weight matrices can carry near-zero singular values that the fixed
/// 15-step schedule does not finish; the whitened optimizer uses this variant.
inline Matrix polar_orthogonalize_adaptive(const Matrix& m, double tol = 1e-9,
                                           int max_iterations = 120) {
    double fn = frobenius_norm(m);
    if (fn == 0.0) throw DegenerateInput("polar_orthogonalize: zero matrix");
    bool wide = m.cols() > m.rows();
    Matrix x = wide ? transpose(m) : m;
    as_eigen(x) *= 1.0 / fn;
    const std::size_t d = x.cols();
    for (int k = 0; k < max_iterations; ++k) {
        Matrix g = matmul_tn(x, x);
        Matrix err = g;
        for (std::size_t i = 0; i < d; ++i) err(i, i) -= 1.0;
        if (frobenius_norm(err) <= tol) break;
        Matrix xg = matmul(x, g);
        as_eigen(x) = 1.5 * as_eigen(x) - 0.5 * as_eigen(xg);
    }
    return wide ? transpose(x) : x;
}

struct EigenDecomp {
    std::vector<double> eigenvalues;  // descending
    Matrix eigenvectors;              // orthonormal columns, same order
};

/// Cyclic Jacobi eigensolver for symmetric matrices (test scale, dim <= 512).
inline EigenDecomp jacobi_eigen_sym(const Matrix& a_in) {
    if (a_in.rows() != a_in.cols()) throw ShapeMismatch("jacobi_eigen_sym: not square");
    if (a_in.rows() > 512) throw ShapeMismatch("jacobi_eigen_sym: dim > 512");
    if (!is_symmetric(a_in, 1e-10)) throw NotSymmetric("jacobi_eigen_sym: not symmetric");

    const std::size_t n = a_in.rows();
    Matrix a = a_in;
    Matrix q = Matrix::identity(n);
    const int max_sweeps = 100;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
        if (std::sqrt(off) <= 1e-14 * std::max(frobenius_norm(a), 1e-300)) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t r = p + 1; r < n; ++r) {
                double apr = a(p, r);
                if (apr == 0.0) continue;
                double app = a(p, p), arr = a(r, r);
                double tau = (arr - app) / (2.0 * apr);
                double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                double c = 1.0 / std::sqrt(1.0 + t * t);
                double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    double akp = a(k, p), akr = a(k, r);
                    a(k, p) = c * akp - s * akr;
                    a(k, r) = s * akp + c * akr;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    double apk = a(p, k), ark = a(r, k);
                    a(p, k) = c * apk - s * ark;
                    a(r, k) = s * apk + c * ark;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    double qkp = q(k, p), qkr = q(k, r);
                    q(k, p) = c * qkp - s * qkr;
                    q(k, r) = s * qkp + c * qkr;
                }
            }
        }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });
    EigenDecomp out;
    out.eigenvalues.resize(n);
    out.eigenvectors = Matrix(n, n);
    for (std::size_t c = 0; c < n; ++c) {
        out.eigenvalues[c] = a(order[c], order[c]);
        for (std::size_t k = 0; k < n; ++k) out.eigenvectors(k, c) = q(k, order[c]);
    }
    return out;
}

/// Largest singular value via power iteration on AᵀA (200 iterations or
/// relative change < 1e-10). Zero matrix returns 0.
inline double operator_norm(const Matrix& a) {
    if (frobenius_norm(a) == 0.0) return 0.0;
    const std::size_t d = a.cols();
    Matrix v(d, 1);
    SplitMix64 rng(0x5eed0fULL);  // fixed stream; result is rotation-invariant
    for (std::size_t i = 0; i < d; ++i) v(i, 0) = rng.next_gaussian();
    as_eigen(v) *= 1.0 / frobenius_norm(v);
    double sigma2 = 0.0;
    for (int it = 0; it < 200; ++it) {
        Matrix av = matmul(a, v);
        Matrix atav = matmul_tn(a, av);
        double next = frobenius_norm(atav);
        if (next == 0.0) return 0.0;
        as_eigen(v) = as_eigen(atav) / next;
        if (it > 0 && std::abs(next - sigma2) < 1e-10 * std::max(next, 1e-300)) {
            sigma2 = next;
            break;
        }
        sigma2 = next;
    }
    return std::sqrt(sigma2);
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw ShapeMismatch("pearson: length mismatch");
    if (x.size() < 2) throw ShapeMismatch("pearson: need length >= 2");
    const double n = static_cast<double>(x.size());
    double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double dx = x[i] - mx, dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw ConstantInput("pearson: constant input");
    return sxy / std::sqrt(sxx * syy);
}

struct PcaResult {
    Matrix projected;               // N x k_available
    std::vector<double> variances;  // per retained component, non-increasing
    bool rank_deficient = false;    // fewer than k nonzero eigenvalues
};

/// Projects N x d data onto the top-k eigenvectors of the centered covariance.
/// d <= 512 goes through the Jacobi solver; larger d uses power iteration with
/// deflation on the covariance.
inline PcaResult pca_project(const Matrix& x, std::size_t k) {
    const std::size_t n = x.rows(), d = x.cols();
    if (n < 2) throw ShapeMismatch("pca_project: need N >= 2");
    if (k > std::min(n, d)) throw ShapeMismatch("pca_project: k > min(N, d)");

    Matrix xc = x;
    for (std::size_t j = 0; j < d; ++j) {
        double m = 0.0;
        for (std::size_t i = 0; i < n; ++i) m += xc(i, j);
        m /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) xc(i, j) -= m;
    }

    PcaResult out;
    const double eps = 1e-12;
    if (d <= 512) {
        Matrix cov = matmul_tn(xc, xc);
        as_eigen(cov) *= 1.0 / static_cast<double>(n);
        EigenDecomp ed = jacobi_eigen_sym(cov);
        double lmax = std::max(ed.eigenvalues.empty() ? 0.0 : ed.eigenvalues[0], 0.0);
        std::size_t avail = 0;
        while (avail < k && ed.eigenvalues[avail] > eps * std::max(lmax, 1.0)) ++avail;
        out.rank_deficient = avail < k;
        Matrix basis(d, avail);
        for (std::size_t c = 0; c < avail; ++c) {
            out.variances.push_back(ed.eigenvalues[c]);
            for (std::size_t r = 0; r < d; ++r) basis(r, c) = ed.eigenvectors(r, c);
        }
        out.projected = matmul(xc, basis);
    } else {
        Matrix basis(d, k);
        std::size_t avail = 0;
        SplitMix64 rng(0x9ca0ULL);
        Matrix cov = matmul_tn(xc, xc);
        as_eigen(cov) *= 1.0 / static_cast<double>(n);
        for (std::size_t c = 0; c < k; ++c) {
            Matrix v(d, 1);
            for (std::size_t i = 0; i < d; ++i) v(i, 0) = rng.next_gaussian();
            double lam = 0.0;
            for (int it = 0; it < 500; ++it) {
                Matrix w = matmul(cov, v);
                // deflate previously found directions
                for (std::size_t p = 0; p < avail; ++p) {
                    double proj = 0.0;
                    for (std::size_t i = 0; i < d; ++i) proj += basis(i, p) * w(i, 0);
                    for (std::size_t i = 0; i < d; ++i) w(i, 0) -= proj * basis(i, p);
                }
                double nw = frobenius_norm(w);
                if (nw == 0.0) break;
                as_eigen(w) *= 1.0 / nw;
                double next = 0.0;
                Matrix cw = matmul(cov, w);
                for (std::size_t i = 0; i < d; ++i) next += w(i, 0) * cw(i, 0);
                v = w;
                if (it > 0 && std::abs(next - lam) < 1e-12 * std::max(std::abs(next), 1.0)) {
                    lam = next;
                    break;
                }
                lam = next;
            }
            if (lam <= eps) break;
            for (std::size_t i = 0; i < d; ++i) basis(i, avail) = v(i, 0);
            out.variances.push_back(lam);
            ++avail;
        }
        out.rank_deficient = avail < k;
        Matrix b(d, avail);
        for (std::size_t c = 0; c < avail; ++c)
            for (std::size_t r = 0; r < d; ++r) b(r, c) = basis(r, c);
        out.projected = matmul(xc, b);
    }
    return out;
}

}  // namespace gramlab
