#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "mise/parallel.hpp"
#include "mise/rng.hpp"
#include "mise/tensor.hpp"

using namespace mise;

TEST(Tensor, ShapeAndValueCount) {
    Tensor t({2, 3}, 1.5);
    EXPECT_EQ(t.size(), 6u);
    EXPECT_EQ(t.rows(), 2u);
    EXPECT_EQ(t.cols(), 3u);
    t.at(1, 2) = 4.0;
    EXPECT_EQ(t[5], 4.0);
    EXPECT_EQ(Tensor::scalar(2.0).item(), 2.0);
}

TEST(Tensor, RejectsZeroDimAndCountMismatch) {
    EXPECT_THROW(Tensor({0, 3}), UsageError);
    EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), UsageError);
    EXPECT_THROW(Tensor({2}).item(), UsageError);
}

TEST(Tensor, IdenticalIsBitwise) {
    Tensor a = Tensor::vector({0.0, 1.0});
    Tensor b = Tensor::vector({-0.0, 1.0});
    EXPECT_TRUE(a == b);
    EXPECT_FALSE(a.identical(b));
    EXPECT_TRUE(a.identical(Tensor::vector({0.0, 1.0})));
}

TEST(Tensor, AllFinite) {
    Tensor t({3});
    EXPECT_TRUE(t.all_finite());
    t[1] = std::numeric_limits<double>::quiet_NaN();
    EXPECT_FALSE(t.all_finite());
}

TEST(ParamSet, OrderedUniqueNames) {
    ParamSet p;
    p.add("z", Tensor({2}));
    p.add("a", Tensor({1}));
    EXPECT_THROW(p.add("a", Tensor({1})), UsageError);
    EXPECT_THROW(p.at("missing"), UsageError);
    std::vector<std::string> names;
    for (const auto& [name, _] : p) names.push_back(name);
    EXPECT_EQ(names, (std::vector<std::string>{"a", "z"}));
    EXPECT_EQ(p.numel(), 3u);
}

TEST(ParamSet, AxpyDotAndLayout) {
    ParamSet p, q;
    p.add("w", Tensor::vector({1, 2}));
    q.add("w", Tensor::vector({3, 4}));
    EXPECT_DOUBLE_EQ(p.dot(q), 11.0);
    p.axpy(2.0, q);
    EXPECT_EQ(p.at("w"), Tensor::vector({7, 10}));
    ParamSet r;
    r.add("w", Tensor::vector({1, 2, 3}));
    EXPECT_FALSE(p.same_layout(r));
    EXPECT_THROW(p.axpy(1.0, r), UsageError);
    EXPECT_TRUE(p.zeros_like().same_layout(p));
}

TEST(Rng, DeterministicStreams) {
    Rng a(42), b(42), c(43);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
    EXPECT_NE(Rng(42).next_u64(), c.next_u64());
    EXPECT_NE(derive_seed(1, 0), derive_seed(1, 1));
    EXPECT_NE(derive_seed(1, 0), derive_seed(2, 0));
}

TEST(Rng, BelowIsUniform) {
    Rng rng(5);
    std::vector<int> hist(7, 0);
    const int n = 70000;
    for (int i = 0; i < n; ++i) ++hist[rng.below(7)];
    // Each bin ~ Binomial(n, 1/7); 5 sigma is about 460.
    for (int h : hist) EXPECT_NEAR(h, n / 7.0, 460.0);
    EXPECT_THROW(rng.below(0), UsageError);
}

TEST(Rng, SampleWithoutReplacement) {
    Rng rng(9);
    std::vector<int> pool{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    auto s = rng.sample(pool, 10);
    std::sort(s.begin(), s.end());
    EXPECT_EQ(s, pool);
    EXPECT_THROW(rng.sample(pool, 11), UsageError);
}

TEST(Parallel, EveryIndexOnceAndErrorsPropagate) {
    std::vector<int> hits(100, 0);
    parallel_for(100, 4, [&](std::size_t i) { hits[i] += 1; });
    for (int h : hits) EXPECT_EQ(h, 1);
    EXPECT_THROW(parallel_for(10, 3,
                              [](std::size_t i) {
                                  if (i == 7) throw DataError("boom");
                              }),
                 DataError);
}
