#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "dfl/model.hpp"
#include "dfl/optim.hpp"

using namespace dfl;

namespace {

// 117-parameter net: enough structure to exercise conv, relu, pool and dense
// paths while staying cheap for finite differences.
Architecture tiny_arch() {
    Architecture a;
    a.input_channels = 1;
    a.input_h = 6;
    a.input_w = 6;
    a.layers.push_back({ConvSpec{1, 2, 3, 3}, true, false, 0.0});
    a.layers.push_back({ConvSpec{2, 3, 3, 3}, true, true, 0.0});
    a.layers.push_back({DenseSpec{3, 10}, false, false, 0.0});
    return a;
}

Tensor random_batch(Rng& rng, const Architecture& a, int n) {
    Tensor t({n, a.input_channels, a.input_h, a.input_w});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform();
    return t;
}

std::vector<int> random_labels(Rng& rng, int n, int classes) {
    std::vector<int> l(n);
    for (auto& x : l) x = rng.uniform_int(0, classes - 1);
    return l;
}

// Smallest distance to a relu kink or pool tie; finite differences are only
// trustworthy when the loss is smooth in an h-neighborhood.
double kink_margin(const Architecture& arch, const ModelParams& params, const Tensor& inputs) {
    auto cache = detail::run_forward(arch, params, inputs, false, 0);
    double margin = std::numeric_limits<double>::infinity();
    for (std::size_t li = 0; li < arch.layers.size(); ++li) {
        const auto& spec = arch.layers[li];
        const auto& lc = cache.layers[li];
        if (spec.relu) {
            for (std::size_t i = 0; i < lc.pre_activation.size(); ++i)
                margin = std::min(margin, std::abs(lc.pre_activation[i]));
        }
        if (spec.is_conv() && spec.pool_after) {
            const auto& z = lc.pre_activation;
            const int n = z.dims()[0], c = z.dims()[1], h = z.dims()[2], w = z.dims()[3];
            for (int b = 0; b < n; ++b)
                for (int oc = 0; oc < c; ++oc)
                    for (int y = 0; y + 1 < h; y += 2)
                        for (int x = 0; x + 1 < w; x += 2) {
                            double v[4] = {z(b, oc, y, x), z(b, oc, y, x + 1), z(b, oc, y + 1, x),
                                           z(b, oc, y + 1, x + 1)};
                            if (spec.relu)
                                for (double& e : v) e = std::max(0.0, e);
                            double best = v[0], second = -std::numeric_limits<double>::infinity();
                            for (int k = 1; k < 4; ++k) {
                                if (v[k] > best) {
                                    second = best;
                                    best = v[k];
                                } else {
                                    second = std::max(second, v[k]);
                                }
                            }
                            if (best > 0.0) margin = std::min(margin, best - second);
                        }
        }
    }
    return margin;
}

double central_diff_grad(const Architecture& arch, ModelParams params, const Tensor& inputs,
                         const std::vector<int>& labels, std::size_t layer, std::size_t entry, double h) {
    auto& p = params.layers[layer];
    const double orig = p.entry(entry);
    p.entry(entry) = orig + h;
    const double lp = nll_loss(forward(arch, params, inputs), labels);
    p.entry(entry) = orig - h;
    const double lm = nll_loss(forward(arch, params, inputs), labels);
    p.entry(entry) = orig;
    return (lp - lm) / (2.0 * h);
}

}  // namespace

TEST_CASE("init_params determinism and modes") {
    const auto arch = tiny_arch();
    const auto a = init_params(arch, 7, InitMode::SharedUniform);
    const auto b = init_params(arch, 7, InitMode::SharedUniform);
    CHECK(a == b);

    const auto c0 = init_params(arch, 7, InitMode::PerClientRandom, 0);
    const auto c1 = init_params(arch, 7, InitMode::PerClientRandom, 1);
    CHECK_FALSE(c0 == c1);

    const auto d = init_params(arch, 8, InitMode::SharedUniform);
    CHECK_FALSE(a == d);

    Architecture empty;
    CHECK_THROWS_AS(init_params(empty, 7, InitMode::SharedUniform), ConfigError);
}

TEST_CASE("architecture validation rejects bad dimension chains") {
    Architecture a = tiny_arch();
    a.layers[1] = {ConvSpec{3, 3, 3, 3}, true, true, 0.0};  // wrong in_channels
    CHECK_THROWS_AS(a.validate(), ConfigError);

    Architecture b = tiny_arch();
    b.layers[2] = {DenseSpec{5, 10}, false, false, 0.0};  // wrong in_dim
    CHECK_THROWS_AS(b.validate(), ConfigError);

    Architecture c = tiny_arch();
    c.layers.push_back({ConvSpec{10, 4, 1, 1}, false, false, 0.0});  // conv after dense
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("forward: zero weights give uniform log-probabilities") {
    const auto arch = tiny_arch();
    ModelParams zero = init_params(arch, 1, InitMode::SharedUniform);
    for (auto& l : zero.layers) {
        l.weights.fill(0.0);
        std::fill(l.bias.begin(), l.bias.end(), 0.0);
    }
    Rng rng(3);
    const auto batch = random_batch(rng, arch, 3);
    const auto lp = forward(arch, zero, batch);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 10; ++j) CHECK(lp(i, j) == Catch::Approx(std::log(0.1)).margin(1e-12));
}

TEST_CASE("forward: softmax normalization and finiteness") {
    const auto arch = tiny_arch();
    const auto params = init_params(arch, 11, InitMode::SharedUniform);
    Rng rng(4);
    const auto batch = random_batch(rng, arch, 5);
    const auto lp = forward(arch, params, batch);
    for (int i = 0; i < 5; ++i) {
        double sum = 0.0;
        for (int j = 0; j < 10; ++j) {
            CHECK(std::isfinite(lp(i, j)));
            sum += std::exp(lp(i, j));
        }
        CHECK(sum == Catch::Approx(1.0).margin(1e-6));
    }
}

TEST_CASE("forward: shape mismatch raises") {
    const auto arch = tiny_arch();
    const auto params = init_params(arch, 11, InitMode::SharedUniform);
    Tensor wrong({2, 1, 5, 5});
    CHECK_THROWS_AS(forward(arch, params, wrong), ShapeError);
}

TEST_CASE("nll_loss analytic cases") {
    Tensor lp({2, 10});
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 10; ++j) lp(i, j) = std::log(0.1);
    CHECK(nll_loss(lp, {0, 7}) == Catch::Approx(std::log(10.0)).margin(1e-12));

    // perfect prediction contributes zero loss
    Tensor perfect({1, 10});
    for (int j = 0; j < 10; ++j) perfect(0, j) = -1e9;
    perfect(0, 3) = 0.0;
    CHECK(nll_loss(perfect, {3}) == Catch::Approx(0.0).margin(1e-12));

    // batch mean of per-sample losses
    Tensor two({2, 10});
    for (int j = 0; j < 10; ++j) {
        two(0, j) = std::log(0.1);
        two(1, j) = -1e9;
    }
    two(1, 5) = -0.5;
    const double a = std::log(10.0), b = 0.5;
    CHECK(nll_loss(two, {2, 5}) == Catch::Approx((a + b) / 2.0).margin(1e-12));

    CHECK_THROWS_AS(nll_loss(lp, {0, 10}), DataError);
    CHECK_THROWS_AS(nll_loss(lp, {0, -1}), DataError);
}

TEST_CASE("gradient matches central finite differences") {
    const auto arch = tiny_arch();
    REQUIRE(arch.param_count() <= 500);
    const double h = 1e-4;
    Rng rng(20240405);

    int accepted = 0;
    int attempts = 0;
    double worst = 0.0;
    while (accepted < 20 && attempts < 400) {
        ++attempts;
        const auto params = init_params(arch, rng.next_u64(), InitMode::SharedUniform);
        const auto inputs = random_batch(rng, arch, 3);
        const auto labels = random_labels(rng, 3, 10);
        if (kink_margin(arch, params, inputs) < 5e-3) continue;  // too close to a relu/pool kink for h=1e-4
        ++accepted;

        const auto grads = gradient(arch, params, inputs, labels);
        for (std::size_t li = 0; li < grads.layers.size(); ++li) {
            const std::size_t n = grads.layers[li].param_count();
            for (std::size_t e = 0; e < n; ++e) {
                const double analytic = grads.layers[li].entry(e);
                const double numeric = central_diff_grad(arch, params, inputs, labels, li, e, h);
                const double rel = std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
                worst = std::max(worst, rel);
            }
        }
    }
    INFO("accepted draws: " << accepted << ", worst relative error: " << worst);
    REQUIRE(accepted == 20);
    CHECK(worst <= 1e-4);
}

TEST_CASE("gradient: zero inputs and zero weights zero the conv weight gradients") {
    const auto arch = tiny_arch();
    ModelParams zero = init_params(arch, 1, InitMode::SharedUniform);
    for (auto& l : zero.layers) {
        l.weights.fill(0.0);
        std::fill(l.bias.begin(), l.bias.end(), 0.0);
    }
    Tensor inputs({2, 1, 6, 6});
    const auto grads = gradient(arch, zero, inputs, {0, 1});
    for (int li = 0; li < 2; ++li) {  // the conv layers
        for (std::size_t i = 0; i < grads.layers[li].weights.size(); ++i)
            CHECK(grads.layers[li].weights[i] == 0.0);
    }
    // final-layer bias gradient is softmax - onehot, definitely nonzero
    double bias_norm = 0.0;
    for (double b : grads.layers[2].bias) bias_norm += std::abs(b);
    CHECK(bias_norm > 0.0);
}

TEST_CASE("gradient: duplicating the batch preserves the mean gradient") {
    const auto arch = tiny_arch();
    const auto params = init_params(arch, 5, InitMode::SharedUniform);
    Rng rng(9);
    const auto batch = random_batch(rng, arch, 2);
    const std::vector<int> labels = {1, 8};

    Tensor doubled({4, 1, 6, 6});
    for (int rep = 0; rep < 2; ++rep)
        for (std::size_t i = 0; i < batch.size(); ++i) doubled[rep * batch.size() + i] = batch[i];
    const std::vector<int> labels2 = {1, 8, 1, 8};

    const auto g1 = gradient(arch, params, batch, labels);
    const auto g2 = gradient(arch, params, doubled, labels2);
    for (std::size_t li = 0; li < g1.layers.size(); ++li) {
        const std::size_t n = g1.layers[li].param_count();
        for (std::size_t e = 0; e < n; ++e)
            CHECK(g1.layers[li].entry(e) == Catch::Approx(g2.layers[li].entry(e)).margin(1e-14));
    }
}

TEST_CASE("gradient determinism with seeded dropout") {
    Architecture a = tiny_arch();
    a.layers[1].dropout_after = 0.5;
    const auto params = init_params(a, 5, InitMode::SharedUniform);
    Rng rng(10);
    const auto batch = random_batch(rng, a, 3);
    const auto labels = random_labels(rng, 3, 10);
    const auto g1 = gradient(a, params, batch, labels, true, 42);
    const auto g2 = gradient(a, params, batch, labels, true, 42);
    const auto g3 = gradient(a, params, batch, labels, true, 43);
    CHECK(g1 == g2);
    CHECK_FALSE(g1 == g3);
}

TEST_CASE("optimizer_step: SGD definitional step") {
    Architecture a;
    a.input_channels = 1;
    a.input_h = 1;
    a.input_w = 1;
    a.layers.push_back({DenseSpec{1, 1}, false, false, 0.0});
    ModelParams p;
    p.layers.push_back({Tensor({1, 1}), {0.0}});
    p.layers[0].weights[0] = 1.0;
    ModelParams g = p;
    g.layers[0].weights[0] = 0.5;
    g.layers[0].bias[0] = 0.0;
    auto st = OptimizerState::create(OptimizerKind::SGD, 0.1, p);
    optimizer_step(p, g, st);
    CHECK(p.layers[0].weights[0] == Catch::Approx(0.95).margin(1e-15));
    CHECK(st.step == 1);
}

TEST_CASE("optimizer_step: Adam first-step magnitude is about lr") {
    ModelParams p;
    p.layers.push_back({Tensor({1, 1}), {0.0}});
    p.layers[0].weights[0] = 0.3;
    ModelParams g = p;
    g.layers[0].weights[0] = 0.7;  // any nonzero gradient
    g.layers[0].bias[0] = 0.0;
    auto st = OptimizerState::create(OptimizerKind::Adam, 0.001, p);
    ModelParams before = p;
    optimizer_step(p, g, st);
    const double dw = std::abs(p.layers[0].weights[0] - before.layers[0].weights[0]);
    CHECK(dw == Catch::Approx(0.001).margin(1e-6));
}

TEST_CASE("optimizer_step: zero gradient leaves parameters unchanged from fresh state") {
    for (auto kind : {OptimizerKind::SGD, OptimizerKind::Adam, OptimizerKind::Adagrad, OptimizerKind::Adadelta,
                      OptimizerKind::RMSprop}) {
        ModelParams p;
        p.layers.push_back({Tensor({2, 2}), {0.5, -0.5}});
        p.layers[0].weights[0] = 1.0;
        p.layers[0].weights[3] = -2.0;
        ModelParams g;
        g.layers.push_back({Tensor({2, 2}), {0.0, 0.0}});
        auto st = OptimizerState::create(kind, 0.1, p);
        ModelParams before = p;
        optimizer_step(p, g, st);
        CHECK(p == before);
    }
}

TEST_CASE("optimizer_step: determinism and validation") {
    const auto arch = tiny_arch();
    const auto params0 = init_params(arch, 3, InitMode::SharedUniform);
    Rng rng(77);
    const auto batch = random_batch(rng, arch, 2);
    const auto labels = random_labels(rng, 2, 10);
    const auto grads = gradient(arch, params0, batch, labels);

    for (auto kind : {OptimizerKind::Adam, OptimizerKind::RMSprop, OptimizerKind::Adadelta}) {
        ModelParams p1 = params0, p2 = params0;
        auto s1 = OptimizerState::create(kind, 0.01, params0);
        auto s2 = OptimizerState::create(kind, 0.01, params0);
        optimizer_step(p1, grads, s1);
        optimizer_step(p2, grads, s2);
        CHECK(p1 == p2);
        optimizer_step(p1, grads, s1);
        optimizer_step(p2, grads, s2);
        CHECK(p1 == p2);
    }

    CHECK_THROWS_AS(OptimizerState::create(OptimizerKind::SGD, 0.0, params0), ConfigError);
    CHECK_THROWS_AS(OptimizerState::create(OptimizerKind::SGD, -1.0, params0), ConfigError);
}

TEST_CASE("model_distance: analytic values and metric properties") {
    const auto arch = tiny_arch();
    const auto a = init_params(arch, 21, InitMode::SharedUniform);
    CHECK(model_distance(a, a) == 0.0);

    // one layer differing by a flattened (3,4) vector has distance 5
    ModelParams b = a;
    b.layers[1].weights[0] += 3.0;
    b.layers[1].weights[7] -= 4.0;
    CHECK(model_distance(a, b) == Catch::Approx(5.0).margin(1e-12));
    CHECK(model_distance(b, a) == Catch::Approx(model_distance(a, b)).margin(0.0));

    Rng rng(55);
    for (int trial = 0; trial < 20; ++trial) {
        const auto x = init_params(arch, rng.next_u64(), InitMode::SharedUniform);
        const auto y = init_params(arch, rng.next_u64(), InitMode::SharedUniform);
        const auto z = init_params(arch, rng.next_u64(), InitMode::SharedUniform);
        CHECK(model_distance(x, y) == Catch::Approx(model_distance(y, x)).margin(0.0));
        CHECK(model_distance(x, z) <= model_distance(x, y) + model_distance(y, z) + 1e-12);
        if (!(x == y)) CHECK(model_distance(x, y) > 0.0);
    }

    Architecture other = tiny_arch();
    other.layers[2] = {DenseSpec{3, 5}, false, false, 0.0};
    const auto c = init_params(other, 1, InitMode::SharedUniform);
    CHECK_THROWS_AS(model_distance(a, c), ShapeError);
}
