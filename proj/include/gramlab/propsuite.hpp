#pragma once

// Randomized sweeps over the diagnostic contracts. Each sweep returns a
// PropResult; `check` and the acceptance suite both run them.

#include <string>
#include <vector>

#include "gramlab/data.hpp"
#include "gramlab/diagnostics.hpp"
#include "gramlab/nn.hpp"
#include "gramlab/optim.hpp"
#include "gramlab/rng.hpp"

namespace gramlab {

struct PropResult {
    std::string name;
    std::size_t trials = 0;
    std::size_t violations = 0;
    double worst = 0.0;  // sweep-specific worst-case statistic
    bool pass() const { return violations == 0; }
};

namespace propdetail {

inline Matrix gaussian(std::size_t r, std::size_t c, SplitMix64& rng, double scale = 1.0) {
    Matrix m(r, c);
    for (std::size_t i = 0; i < m.size(); ++i) m.raw()[i] = scale * rng.next_gaussian();
    return m;
}

inline Network random_net(SplitMix64& rng, std::size_t in_dim, std::size_t out_dim,
                          bool relu_only, bool bias) {
    NetworkSpec spec;
    std::size_t depth = 2 + rng.next_below(2);  // 2 or 3 layers
    spec.dims.push_back(in_dim);
    for (std::size_t l = 0; l + 1 < depth; ++l) spec.dims.push_back(4 + rng.next_below(9));
    spec.dims.push_back(out_dim);
    spec.hidden_activation =
        relu_only ? Activation::Relu : (rng.next_below(2) ? Activation::Relu : Activation::Gelu);
    spec.bias = bias;
    spec.scale = InitScale::He;
    return init_network(spec, rng.next_u64());
}

}  // namespace propdetail

/// Exact feature-gradient identity on fuzzed (net, batch, loss) triples.
inline PropResult sweep_fle(std::size_t trials = 100, std::uint64_t seed = 11) {
    SplitMix64 rng(seed);
    PropResult res{"fle_identity", trials, 0, 0.0};
    const Loss losses[] = {Loss::Mse, Loss::BceLogits, Loss::SoftmaxCe};
    for (std::size_t t = 0; t < trials; ++t) {
        std::size_t in = 2 + rng.next_below(7), out = 1 + rng.next_below(5);
        Network net = propdetail::random_net(rng, in, out, false, rng.next_below(2) == 0);
        std::size_t batch = 1 + rng.next_below(16);
        Matrix x = propdetail::gaussian(in, batch, rng);
        Loss loss = losses[rng.next_below(3)];
        Matrix y(out, batch);
        for (std::size_t i = 0; i < y.size(); ++i)
            y.raw()[i] = loss == Loss::Mse ? rng.next_gaussian()
                                           : static_cast<double>(rng.next_below(2));
        ForwardTrace trace = forward(net, x);
        BackwardResult back = backward(net, trace, loss, y);
        for (std::size_t l = 0; l < net.depth(); ++l) {
            double r = fle_residual(net, trace, back.grads, l);
            res.worst = std::max(res.worst, r);
            if (r > 1e-10) ++res.violations;
        }
    }
    return res;
}

/// Second-order scaling of the Gram-shift-vs-VCS residual: halving gamma must
/// quarter the residual.
inline PropResult sweep_gram_shift_scaling(std::size_t nets = 20, std::uint64_t seed = 12) {
    SplitMix64 rng(seed);
    PropResult res{"gram_shift_second_order", 0, 0, 0.0};
    for (std::size_t t = 0; t < nets; ++t) {
        std::size_t in = 3 + rng.next_below(6);
        Network net = propdetail::random_net(rng, in, 1 + rng.next_below(3), true, false);
        std::size_t batch = 4 + rng.next_below(12);
        Matrix x = propdetail::gaussian(in, batch, rng);
        Matrix y = propdetail::gaussian(net.output_dim(), batch, rng);
        for (double gamma : {1e-2, 1e-3}) {
            auto [r1, r2] = thm1_residual_scaling(net, x, y, Loss::Mse, gamma);
            ++res.trials;
            if (r1 < 1e-14) continue;  // flat gradient, nothing to scale
            double ratio = r1 / r2;
            res.worst = std::max(res.worst, std::abs(ratio - 4.0));
            if (ratio < 3.5 || ratio > 4.5) ++res.violations;
        }
    }
    return res;
}

/// Primal residual equals the Woodbury dual form.
inline PropResult sweep_woodbury(std::size_t trials = 50, std::uint64_t seed = 13) {
    SplitMix64 rng(seed);
    PropResult res{"woodbury_identity", trials, 0, 0.0};
    for (std::size_t t = 0; t < trials; ++t) {
        std::size_t d = 2 + rng.next_below(19);
        std::size_t n = d + 1 + rng.next_below(64);
        n = std::min<std::size_t>(n, 256);
        Matrix h = propdetail::gaussian(d, n, rng);
        Matrix y = propdetail::gaussian(n, 1 + rng.next_below(3), rng);
        double lambda = std::pow(10.0, -4.0 + 5.0 * rng.next_uniform());
        double gap = woodbury_error_check(h, y, lambda);
        res.worst = std::max(res.worst, gap);
        if (gap > 1e-8) ++res.violations;
    }
    return res;
}

/// TL >= 1 - C / S(G_id) on instances satisfying the theorem preconditions.
inline PropResult sweep_tl_lower_bound(std::size_t trials = 100, std::uint64_t seed = 14) {
    SplitMix64 rng(seed);
    PropResult res{"tl_surrogate_bound", trials, 0, 0.0};
    for (std::size_t t = 0; t < trials; ++t) {
        std::size_t d = 2 + rng.next_below(10);
        std::size_t n = d + 1 + rng.next_below(60);
        std::size_t c = 1 + rng.next_below(6);
        Matrix h = propdetail::gaussian(d, n, rng);
        Matrix w = propdetail::gaussian(c, d, rng);
        Matrix y = propdetail::gaussian(n, 1, rng);
        double lambda = std::pow(10.0, -3.0 + 4.0 * rng.next_uniform());
        Thm2Bound b = thm2_bound_check(w, h, y, lambda, operator_norm(w) * (1.0 + 1e-12),
                                       frobenius_norm(h) * (1.0 + 1e-12));
        double slack = b.tl - b.bound;
        res.worst = std::min(res.worst, slack);  // most negative slack
        if (slack < -1e-9) ++res.violations;
    }
    return res;
}

/// Kantorovich-style spectral inequality on random PSD matrices.
inline PropResult sweep_kantorovich(std::size_t trials = 200, std::uint64_t seed = 15) {
    SplitMix64 rng(seed);
    PropResult res{"kantorovich_bound", trials, 0, 0.0};
    for (std::size_t t = 0; t < trials; ++t) {
        std::size_t d = 2 + rng.next_below(31);
        Matrix a = propdetail::gaussian(d, d, rng);
        Matrix g = matmul_tn(a, a);
        Matrix y = propdetail::gaussian(d, 1, rng);
        double lambda = std::pow(10.0, -3.0 + 4.0 * rng.next_uniform());
        auto [lhs, rhs] = kantorovich_check(g, y, lambda);
        double slack = rhs - lhs;
        res.worst = std::min(res.worst, slack);
        if (lhs > rhs * (1.0 + 1e-9)) ++res.violations;
    }
    return res;
}

/// One-step surrogate shift against the moving-target prediction; returns the
/// median relative error in `worst`, violations counts trials with undefined
/// actual shift (never expected).
inline PropResult sweep_surrogate_shift(std::size_t trials, Loss loss, double gamma,
                                        std::uint64_t seed) {
    SplitMix64 rng(seed);
    PropResult res{loss == Loss::Mse ? "surrogate_shift_mse" : "surrogate_shift_bce", trials, 0,
                   0.0};
    std::vector<double> rel;
    for (std::size_t t = 0; t < trials; ++t) {
        std::size_t d = 4 + rng.next_below(5);
        NetworkSpec spec;
        spec.dims = {d, 8 + rng.next_below(9), 1};
        spec.hidden_activation = Activation::Relu;
        spec.bias = false;
        Network net = init_network(spec, rng.next_u64());
        std::size_t n = 16 + rng.next_below(17);
        // samples concentrated around a common direction: the prediction rests
        // on a cross-sample Taylor expansion, valid for nearby inputs
        std::vector<double> center(d);
        for (auto& v : center) v = rng.next_gaussian();
        Matrix x = propdetail::gaussian(d, n, rng, 0.1);
        for (std::size_t r = 0; r < d; ++r)
            for (std::size_t b = 0; b < n; ++b) x(r, b) += center[r];
        Matrix y(1, n);
        for (std::size_t b = 0; b < n; ++b)
            y(0, b) = loss == Loss::Mse ? rng.next_gaussian() : static_cast<double>(rng.next_below(2));
        Thm3Result r = thm3_prediction(net, x, y, loss, gamma);
        if (std::abs(r.actual) < 1e-300) {
            ++res.violations;
            continue;
        }
        rel.push_back(std::abs(r.actual - r.predicted) / std::abs(r.actual));
    }
    std::sort(rel.begin(), rel.end());
    if (!rel.empty()) res.worst = rel[rel.size() / 2];
    if (res.worst > 0.1) ++res.violations;  // median relative error gate
    return res;
}

/// Sign and magnitude agreement of actual vs virtual hidden-state updates.
inline PropResult sweep_update_alignment(std::size_t trials = 100, std::uint64_t seed = 17) {
    SplitMix64 rng(seed);
    PropResult res{"update_alignment", trials, 0, 0.0};
    for (std::size_t t = 0; t < trials; ++t) {
        std::size_t d = 3 + rng.next_below(6);
        Network net = propdetail::random_net(rng, d, 1 + rng.next_below(3), true, false);
        Matrix x = propdetail::gaussian(d, 1, rng);
        double nrm = frobenius_norm(x);
        for (std::size_t i = 0; i < x.size(); ++i) x.raw()[i] /= nrm;
        Matrix y = propdetail::gaussian(net.output_dim(), 1, rng);
        Prop1Report rep = prop1_alignment(net, 0, x, y, Loss::Mse, 1e-3);
        if (!rep.all_pass()) ++res.violations;
    }
    return res;
}

/// Pairwise Taylor-error aggregate equals m N sum f on centered batches.
inline PropResult sweep_pairwise_taylor(std::size_t trials = 50, std::uint64_t seed = 18) {
    SplitMix64 rng(seed);
    PropResult res{"pairwise_taylor_sum", trials, 0, 0.0};
    for (std::size_t t = 0; t < trials; ++t) {
        std::size_t d = 3 + rng.next_below(6), n = 4 + rng.next_below(17);
        Network net = propdetail::random_net(rng, d, 1, true, false);
        Matrix x = propdetail::gaussian(d, n, rng);
        for (std::size_t r = 0; r < d; ++r) {
            double m = 0.0;
            for (std::size_t b = 0; b < n; ++b) m += x(r, b);
            m /= static_cast<double>(n);
            for (std::size_t b = 0; b < n; ++b) x(r, b) -= m;
        }
        auto [lhs, rhs] = pairwise_taylor_sum(net, x);
        double rel = std::abs(lhs - rhs) / std::max(std::abs(rhs), 1e-12);
        res.worst = std::max(res.worst, rel);
        if (rel > 1e-8) ++res.violations;
    }
    return res;
}

/// Piecewise-linear Taylor bound on random depth-2 segment pairs.
inline PropResult sweep_region_bound(std::size_t trials = 500, std::uint64_t seed = 19) {
    SplitMix64 rng(seed);
    PropResult res{"region_taylor_bound", trials, 0, 0.0};
    for (std::size_t t = 0; t < trials; ++t) {
        std::size_t d = 2 + rng.next_below(7);
        NetworkSpec spec;
        spec.dims = {d, 4 + rng.next_below(29), 1};
        spec.hidden_activation = Activation::Relu;
        spec.bias = false;
        Network net = init_network(spec, rng.next_u64());
        Matrix a = propdetail::gaussian(d, 1, rng), b = propdetail::gaussian(d, 1, rng);
        RegionCrossings rc = region_crossings_depth2(net, a, b);
        double slack = rc.bound - rc.eps_actual;
        res.worst = std::min(res.worst, slack);
        if (rc.eps_actual > rc.bound + 1e-10) ++res.violations;
    }
    return res;
}

/// ETF construction saturates the norm-constrained surrogate maximum.
inline PropResult sweep_etf_extremality(std::uint64_t seed = 20) {
    PropResult res{"etf_extremality", 0, 0, 0.0};
    for (std::size_t c : {2u, 3u, 5u, 10u}) {
        EtfConstruction etf = construct_etf(c, c + 3, 4, seed + c);
        Matrix y = one_hot_centered(etf.labels, c);
        NcProbe probe = nc_probe(etf.features, etf.labels, etf.readout, y);
        ++res.trials;
        double yyt_norm = 0.0;
        {
            Matrix yty = matmul_tn(y, y);
            yyt_norm = frobenius_norm(yty);
        }
        double rel_gap = std::abs(probe.maximality_gap) / std::max(yyt_norm * yyt_norm, 1e-300);
        res.worst = std::max(res.worst, std::max(probe.gid_vs_yyt, rel_gap));
        if (probe.gid_vs_yyt > 1e-8 || rel_gap > 1e-8) ++res.violations;
    }
    return res;
}

/// OLS decoder interpolation error bound on random latent/data pairs.
inline PropResult sweep_interpolation(std::size_t trials = 20, std::uint64_t seed = 21) {
    SplitMix64 rng(seed);
    PropResult res{"ols_interpolation", trials, 0, 0.0};
    const std::vector<double> alphas = {0.0, 0.25, 0.5, 0.75, 1.0};
    for (std::size_t t = 0; t < trials; ++t) {
        std::size_t n = 20 + rng.next_below(41), k = 2 + rng.next_below(7),
                    d = 3 + rng.next_below(14);
        Matrix z = propdetail::gaussian(n, k, rng);
        Matrix x = propdetail::gaussian(n, d, rng);
        InterpolationGap gap = ols_interpolation_gap(z, x, alphas);
        for (double lhs : gap.lhs) {
            double slack = gap.rhs - lhs;
            res.worst = std::min(res.worst, slack);
            if (lhs > gap.rhs + 1e-10) ++res.violations;
        }
    }
    return res;
}

/// Whitened optimizer preserves the per-step plain-GD Gram.
inline PropResult sweep_whitened_gram(std::size_t trials = 10, std::uint64_t seed = 22) {
    SplitMix64 rng(seed);
    PropResult res{"whitened_gram_preservation", trials, 0, 0.0};
    for (std::size_t t = 0; t < trials; ++t) {
        NetworkSpec spec;
        spec.dims = {8, 16, 16, 3};
        spec.hidden_activation = Activation::Relu;
        spec.bias = false;
        Network net = init_network(spec, seed * 1000 + t);
        OptimizerState st = OptimizerState::make(OptimRule::WhitenedSgd, 0.05, net);
        Matrix x = propdetail::gaussian(8, 32, rng);
        Matrix y = propdetail::gaussian(3, 32, rng);
        for (int step = 0; step < 5; ++step) {
            ForwardTrace tr = forward(net, x);
            BackwardResult back = backward(net, tr, Loss::Mse, y);
            whitened_step(net, back.grads, st);
            res.worst = std::max(res.worst, st.last_gram_dev);
            if (st.last_gram_dev > 1e-6) ++res.violations;
        }
    }
    return res;
}

inline std::vector<PropResult> run_all_prop_sweeps() {
    return {
        sweep_fle(),
        sweep_gram_shift_scaling(),
        sweep_woodbury(),
        sweep_tl_lower_bound(),
        sweep_kantorovich(),
        sweep_surrogate_shift(50, Loss::Mse, 1e-4, 16),
        sweep_surrogate_shift(50, Loss::BceLogits, 1e-4, 26),
        sweep_update_alignment(),
        sweep_pairwise_taylor(),
        sweep_region_bound(),
        sweep_etf_extremality(),
        sweep_interpolation(),
        sweep_whitened_gram(),
    };
}

}  // namespace gramlab
