#include <catch2/catch_amalgamated.hpp>

#include "gramlab/linalg.hpp"
#include "gramlab/nn.hpp"
#include "gramlab/optim.hpp"
#include "gramlab/rng.hpp"

using namespace gramlab;

namespace {

Network single_layer_net(const Matrix& w) {
    Network net;
    Layer l;
    l.weight = w;
    net.layers.push_back(std::move(l));
    return net;
}

GradientBundle grads_for(const Network& net, const std::vector<Matrix>& gw) {
    GradientBundle g;
    g.grad_w = gw;
    g.grad_bias.resize(net.depth());
    return g;
}

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
    SplitMix64 rng(seed);
    Matrix m(r, c);
    for (std::size_t i = 0; i < m.size(); ++i) m.raw()[i] = rng.next_gaussian();
    return m;
}

}  // namespace

TEST_CASE("sgd step matches the hand-computed update") {
    Matrix w(1, 2);
    w(0, 0) = 1.0;
    w(0, 1) = -2.0;
    Matrix g(1, 2);
    g(0, 0) = 0.5;
    g(0, 1) = 0.25;
    Network net = single_layer_net(w);
    OptimizerState st = OptimizerState::make(OptimRule::Sgd, 0.1, net);
    optimizer_step(net, grads_for(net, {g}), st);
    CHECK(net.layers[0].weight(0, 0) == Catch::Approx(1.0 - 0.1 * 0.5).margin(1e-15));
    CHECK(net.layers[0].weight(0, 1) == Catch::Approx(-2.0 - 0.1 * 0.25).margin(1e-15));
}

TEST_CASE("sgd momentum accumulates the velocity buffer") {
    // two steps with constant gradient 1, momentum 0.9, lr 0.1:
    // v1 = 1 → w1 = w0 - 0.1; v2 = 1.9 → w2 = w1 - 0.19
    Matrix w(1, 1);
    w(0, 0) = 0.0;
    Matrix g(1, 1);
    g(0, 0) = 1.0;
    Network net = single_layer_net(w);
    OptimizerState st = OptimizerState::make(OptimRule::Sgd, 0.1, net);
    st.momentum = 0.9;
    optimizer_step(net, grads_for(net, {g}), st);
    CHECK(net.layers[0].weight(0, 0) == Catch::Approx(-0.1).margin(1e-15));
    optimizer_step(net, grads_for(net, {g}), st);
    CHECK(net.layers[0].weight(0, 0) == Catch::Approx(-0.29).margin(1e-15));
}

TEST_CASE("sgd weight decay is applied outside the momentum buffer") {
    Matrix w(1, 1);
    w(0, 0) = 2.0;
    Matrix g(1, 1);  // zero gradient: update is pure decay
    Network net = single_layer_net(w);
    OptimizerState st = OptimizerState::make(OptimRule::Sgd, 0.5, net);
    st.weight_decay = 0.1;
    optimizer_step(net, grads_for(net, {g}), st);
    CHECK(net.layers[0].weight(0, 0) == Catch::Approx(2.0 - 0.5 * 0.1 * 2.0).margin(1e-15));
}

TEST_CASE("per-layer lr scale multiplies the sgd step") {
    Matrix w(1, 1);
    Matrix g(1, 1);
    g(0, 0) = 1.0;
    Network net = single_layer_net(w);
    OptimizerState st = OptimizerState::make(OptimRule::Sgd, 0.1, net);
    st.lr_scale = {0.25};
    optimizer_step(net, grads_for(net, {g}), st);
    CHECK(net.layers[0].weight(0, 0) == Catch::Approx(-0.025).margin(1e-15));
}

TEST_CASE("adam first step moves by lr regardless of gradient scale") {
    // bias-corrected adam: step 1 update is exactly lr * g/|g| = lr * sign(g)
    // (eps-perturbed), independent of |g|
    for (double gval : {1e-4, 1.0, 100.0}) {
        Matrix w(1, 1);
        Matrix g(1, 1);
        g(0, 0) = gval;
        Network net = single_layer_net(w);
        OptimizerState st = OptimizerState::make(OptimRule::Adam, 0.01, net);
        optimizer_step(net, grads_for(net, {g}), st);
        CHECK(net.layers[0].weight(0, 0) == Catch::Approx(-0.01).epsilon(1e-3));
    }
}

TEST_CASE("adam matches a hand-rolled two-step reference") {
    Matrix w(1, 1);
    w(0, 0) = 1.0;
    Network net = single_layer_net(w);
    OptimizerState st = OptimizerState::make(OptimRule::Adam, 0.1, net);
    double m = 0.0, v = 0.0, wref = 1.0;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    double gs[2] = {0.3, -0.7};
    for (int t = 1; t <= 2; ++t) {
        double gv = gs[t - 1];
        Matrix g(1, 1);
        g(0, 0) = gv;
        optimizer_step(net, grads_for(net, {g}), st);
        m = b1 * m + (1 - b1) * gv;
        v = b2 * v + (1 - b2) * gv * gv;
        double mhat = m / (1 - std::pow(b1, t));
        double vhat = v / (1 - std::pow(b2, t));
        wref -= 0.1 * mhat / (std::sqrt(vhat) + eps);
        CHECK(net.layers[0].weight(0, 0) == Catch::Approx(wref).margin(1e-14));
    }
}

TEST_CASE("adamw decay is decoupled from the adaptive rescaling") {
    // zero gradient: adamw still shrinks weights by lr*wd*w, adam does not
    Matrix w(1, 1);
    w(0, 0) = 4.0;
    Matrix g(1, 1);
    Network aw = single_layer_net(w);
    OptimizerState sw = OptimizerState::make(OptimRule::AdamW, 0.1, aw);
    sw.weight_decay = 0.5;
    optimizer_step(aw, grads_for(aw, {g}), sw);
    CHECK(aw.layers[0].weight(0, 0) == Catch::Approx(4.0 - 0.1 * 0.5 * 4.0).margin(1e-12));

    Network ad = single_layer_net(w);
    OptimizerState sd = OptimizerState::make(OptimRule::Adam, 0.1, ad);
    sd.weight_decay = 0.5;  // coupled: g + wd*w runs through the rescaling
    optimizer_step(ad, grads_for(ad, {g}), sd);
    CHECK(ad.layers[0].weight(0, 0) != Catch::Approx(4.0 - 0.1 * 0.5 * 4.0).margin(1e-6));
}

TEST_CASE("whitened step preserves the plain-step weight Gram") {
    // Oracle: WᵀW of the whitened result must equal WᵀW of the plain sgd
    // result, while the weights themselves differ by a rotation.
    NetworkSpec spec;
    spec.dims = {12, 10, 8, 3};
    Network net = init_network(spec, 31);
    GradientBundle g;
    for (std::size_t l = 0; l < net.depth(); ++l)
        g.grad_w.push_back(random_matrix(net.layers[l].weight.rows(),
                                         net.layers[l].weight.cols(), 50 + l));
    g.grad_bias.resize(net.depth());

    Network plain = net;
    OptimizerState sp = OptimizerState::make(OptimRule::Sgd, 0.05, plain);
    optimizer_step(plain, g, sp);

    OptimizerState swh = OptimizerState::make(OptimRule::WhitenedSgd, 0.05, net);
    optimizer_step(net, g, swh);

    for (std::size_t l = 0; l + 1 < net.depth(); ++l) {
        Matrix gw = matmul_tn(net.layers[l].weight, net.layers[l].weight);
        Matrix gp = matmul_tn(plain.layers[l].weight, plain.layers[l].weight);
        CHECK(frobenius_norm(sub(gw, gp)) <= 1e-8 * frobenius_norm(gp));
    }
    CHECK(swh.last_gram_dev <= 1e-6);
    // last layer takes the plain step verbatim
    std::size_t last = net.depth() - 1;
    CHECK(frobenius_norm(sub(net.layers[last].weight, plain.layers[last].weight)) == 0.0);
}

TEST_CASE("whitened step removes only the rotation component") {
    // the whitened result equals Q * (plain step result) with Q orthogonal
    NetworkSpec spec;
    spec.dims = {6, 6, 2};
    Network net = init_network(spec, 77);
    GradientBundle g;
    for (std::size_t l = 0; l < net.depth(); ++l)
        g.grad_w.push_back(random_matrix(net.layers[l].weight.rows(),
                                         net.layers[l].weight.cols(), 90 + l));
    g.grad_bias.resize(net.depth());
    Matrix w_hat = net.layers[0].weight;
    for (std::size_t i = 0; i < w_hat.size(); ++i)
        w_hat.raw()[i] -= 0.05 * g.grad_w[0].data()[i];

    OptimizerState st = OptimizerState::make(OptimRule::WhitenedSgd, 0.05, net);
    optimizer_step(net, g, st);
    // recover Q = W+ w_hat⁻¹ via least squares and check orthogonality
    Matrix gram = matmul_nt(w_hat, w_hat);
    Matrix q = transpose(cholesky_solve(gram, matmul_nt(w_hat, net.layers[0].weight)));
    Matrix qq = matmul_tn(q, q);
    for (std::size_t i = 0; i < qq.rows(); ++i) qq(i, i) -= 1.0;
    CHECK(frobenius_norm(qq) <= 1e-6);
}

TEST_CASE("optimizer state validation") {
    NetworkSpec spec;
    spec.dims = {2, 2};
    Network net = init_network(spec, 1);
    CHECK_THROWS_AS(OptimizerState::make(OptimRule::Sgd, 0.0, net), ShapeMismatch);
    CHECK_THROWS_AS(OptimizerState::make(OptimRule::Sgd, -1.0, net), ShapeMismatch);

    OptimizerState st = OptimizerState::make(OptimRule::Sgd, 0.1, net);
    GradientBundle wrong;
    wrong.grad_w.push_back(Matrix(3, 3));
    wrong.grad_bias.resize(1);
    CHECK_THROWS_AS(optimizer_step(net, wrong, st), ShapeMismatch);

    CHECK(optim_rule_from_name("adamw") == OptimRule::AdamW);
    CHECK_THROWS_AS(optim_rule_from_name("sgdm"), ShapeMismatch);
    CHECK(std::string(optim_rule_name(OptimRule::WhitenedSgd)) == "whitened_sgd");
}
