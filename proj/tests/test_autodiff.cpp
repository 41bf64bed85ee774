#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "mise/crf.hpp"
#include "mise/gradcheck.hpp"
#include "mise/rng.hpp"

using namespace mise;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = rng.uniform(-scale, scale);
    return t;
}

// x*x with a deliberately wrong partial (3x instead of 2x).
Var bad_square(Var x) {
    Tensor y = x.value();
    for (double& v : y.values()) v *= v;
    return x.graph->record("bad_square", {x}, std::move(y), [](Graph& g, std::size_t self) {
        const Tensor& G = g.grad(self);
        const Tensor& X = g.value(g.input(self, 0));
        if (Tensor* d = g.grad_target(g.input(self, 0)))
            for (std::size_t i = 0; i < G.size(); ++i) (*d)[i] += G[i] * 3.0 * X[i];
    });
}

ParamSet two_layer_params(std::uint64_t seed) {
    Rng rng(seed);
    ParamSet p;
    p.add("w1", random_tensor({4, 3}, rng));
    p.add("b1", random_tensor({4}, rng));
    p.add("w2", random_tensor({2, 4}, rng));
    p.add("x", random_tensor({5, 3}, rng));
    return p;
}

// sum((tanh(x W1^T + b1) W2^T)^2 .* c)
Var two_layer(Graph& g) {
    Var h = tanh(add_bias(matmul_nt(g.param("x"), g.param("w1")), g.param("b1")));
    Var o = matmul_nt(h, g.param("w2"));
    Tensor c({5, 2});
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = 0.3 + 0.1 * static_cast<double>(i);
    return sum(mul(mul(o, o), g.constant(c)));
}

} // namespace

TEST(Backward, SquareAtThree) {
    ParamSet p;
    p.add("x", Tensor::scalar(3.0));
    Graph g(&p);
    Var x = g.param("x");
    auto grads = g.backward(mul(x, x));
    EXPECT_DOUBLE_EQ(grads.at("x").item(), 6.0);
}

TEST(Backward, ConstantLossGivesZeroGradients) {
    ParamSet p;
    p.add("x", Tensor::vector({1.0, 2.0}));
    Graph g(&p);
    auto grads = g.backward(g.constant(Tensor::scalar(4.0)));
    EXPECT_TRUE(grads.at("x").identical(Tensor::vector({0.0, 0.0})));
}

TEST(Backward, UntouchedParametersMapToZero) {
    ParamSet p;
    p.add("a", Tensor::vector({1.0}));
    p.add("b", Tensor::matrix(2, 2, {1, 2, 3, 4}));
    Graph g(&p);
    auto grads = g.backward(sum(g.param("a")));
    EXPECT_TRUE(grads.same_layout(p));
    EXPECT_EQ(grads.at("b").identical(Tensor({2, 2}, 0.0)), true);
    EXPECT_EQ(grads.at("a").item(), 1.0);
}

TEST(Backward, RejectsNonScalarLoss) {
    ParamSet p;
    p.add("x", Tensor::vector({1.0, 2.0}));
    Graph g(&p);
    EXPECT_THROW(g.backward(g.param("x")), UsageError);
}

TEST(Backward, NonFiniteValueIsHardError) {
    ParamSet p;
    p.add("x", Tensor::scalar(1e200));
    Graph g(&p);
    Var x = g.param("x");
    EXPECT_THROW(mul(x, x), NumericError);
    EXPECT_THROW(g.constant(Tensor::scalar(std::numeric_limits<double>::quiet_NaN())), NumericError);
}

TEST(Backward, TwoLayerMatchesFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 5; ++seed)
        EXPECT_LT(grad_check(two_layer, two_layer_params(seed)), 1e-4) << "seed " << seed;
}

TEST(Backward, EveryOpMatchesFiniteDifferences) {
    Rng rng(11);
    ParamSet p;
    p.add("a", random_tensor({3, 4}, rng));
    p.add("b", random_tensor({4, 2}, rng));
    p.add("emb", random_tensor({6, 3}, rng));
    p.add("wx", random_tensor({2, 3}, rng));
    p.add("wh", random_tensor({2, 2}, rng));
    p.add("bh", random_tensor({2}, rng));
    auto loss = [](Graph& g) {
        Var ab = matmul(g.param("a"), g.param("b"));                // 3 x 2
        Var x = gather_rows(g.param("emb"), {0, 5, 2, 5});            // repeated id scatters twice
        Var fwd = rnn_scan(x, g.param("wx"), g.param("wh"), g.param("bh"), false);
        Var bwd = rnn_scan(x, g.param("wx"), g.param("wh"), g.param("bh"), true);
        Var h = concat_cols(fwd, bwd);                                // 4 x 4
        Var s1 = sum(mul(ab, ab));
        Var s2 = sum(tanh(scale(h, 1.7)));
        Var s3 = sum(add(h, h));
        return add_scalars({weighted_sum({s1, s2}, {0.5, -2.0}), mean({s3, s1})});
    };
    EXPECT_LT(grad_check(loss, p), 1e-4);
}

TEST(Backward, LinearityOfSums) {
    ParamSet p = two_layer_params(3);
    auto f = [](Graph& g) { return two_layer(g); };
    auto h = [](Graph& g) { return sum(tanh(g.param("w1"))); };
    ParamSet gf, gh, gs;
    {
        Graph g(&p);
        gf = g.backward(f(g));
    }
    {
        Graph g(&p);
        gh = g.backward(h(g));
    }
    {
        Graph g(&p);
        gs = g.backward(add_scalars({f(g), h(g)}));
    }
    gf.axpy(1.0, gh);
    for (const auto& [name, t] : gs)
        for (std::size_t i = 0; i < t.size(); ++i) EXPECT_NEAR(t[i], gf.at(name)[i], 1e-12);
}

TEST(GradCheck, QuadraticIsNearlyExact) {
    ParamSet p;
    p.add("x", Tensor::vector({0.3, -1.2, 2.5}));
    auto q = [](Graph& g) {
        Var x = g.param("x");
        return sum(scale(mul(x, x), 0.5));
    };
    EXPECT_LT(grad_check(q, p), 1e-6);
}

TEST(GradCheck, CrfNllOnThreeTokens) {
    Rng rng(4);
    ParamSet p;
    p.add("em", random_tensor({3, kNumTags}, rng, 2.0));
    p.add("trans", random_tensor({kNumTags, kNumTags}, rng, 2.0));
    const TagSequence gold{Tag::B, Tag::E, Tag::O};
    auto loss = [&](Graph& g) { return crf_nll(g.param("em"), g.param("trans"), gold); };
    EXPECT_LT(grad_check(loss, p), 1e-4);
}

TEST(GradCheck, DetectsWrongPartial) {
    ParamSet p;
    p.add("x", Tensor::vector({0.7, -1.1}));
    auto loss = [](Graph& g) { return sum(bad_square(g.param("x"))); };
    EXPECT_GT(grad_check(loss, p), 1e-2);
}

TEST(GradCheck, RejectsNonPositiveEps) {
    ParamSet p;
    p.add("x", Tensor::scalar(1.0));
    auto loss = [](Graph& g) { return sum(g.param("x")); };
    EXPECT_THROW(grad_check(loss, p, 0.0), UsageError);
}

TEST(Graph, RejectsMixedGraphs) {
    ParamSet p;
    p.add("x", Tensor::scalar(1.0));
    Graph g1(&p), g2(&p);
    EXPECT_THROW(add(g1.param("x"), g2.param("x")), UsageError);
}
