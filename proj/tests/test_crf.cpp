#include <gtest/gtest.h>

#include <cmath>

#include "mise/crf.hpp"
#include "mise/gradcheck.hpp"
#include "mise/rng.hpp"

using namespace mise;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale) {
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = rng.uniform(-scale, scale);
    return t;
}

// Calls fn(seq) for every tag sequence of length n.
template <class Fn>
void for_each_sequence(std::size_t n, Fn&& fn) {
    TagSequence s(n, Tag::O);
    while (true) {
        fn(s);
        std::size_t i = 0;
        while (i < n && tag_index(s[i]) == kNumTags - 1) s[i++] = Tag::O;
        if (i == n) return;
        s[i] = tag_from_index(tag_index(s[i]) + 1);
    }
}

struct Brute {
    double log_z = 0.0;
    double best = -INFINITY;
    TagSequence argmax;
};

Brute brute_force(const Tensor& em, const Tensor& trans, CrfBoundary bd = {}, bool constrain = false) {
    Brute b;
    double total = 0.0;
    double shift = -INFINITY;
    std::vector<double> scores;
    for_each_sequence(em.rows(), [&](const TagSequence& s) {
        const double sc = path_score(em, trans, s, bd);
        scores.push_back(sc);
        shift = std::max(shift, sc);
        if (constrain && !is_valid_bioes(s)) return;
        if (sc > b.best) {
            b.best = sc;
            b.argmax = s;
        }
    });
    for (double sc : scores) total += std::exp(sc - shift);
    b.log_z = shift + std::log(total);
    return b;
}

} // namespace

TEST(Crf, LogPartitionMatchesEnumeration) {
    Rng rng(1);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 1 + rng.below(5);
        const Tensor em = random_tensor({n, kNumTags}, rng, 3.0);
        const Tensor trans = random_tensor({kNumTags, kNumTags}, rng, 3.0);
        const Brute b = brute_force(em, trans);
        EXPECT_NEAR(log_partition(em, trans), b.log_z, 1e-9);
        const auto v = viterbi(em, trans);
        EXPECT_NEAR(v.score, b.best, 1e-9);
        EXPECT_NEAR(path_score(em, trans, v.tags), b.best, 1e-9);
    }
}

TEST(Crf, BoundaryTermsMatchEnumeration) {
    Rng rng(2);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t n = 1 + rng.below(4);
        const Tensor em = random_tensor({n, kNumTags}, rng, 2.0);
        const Tensor trans = random_tensor({kNumTags, kNumTags}, rng, 2.0);
        const Tensor start = random_tensor({kNumTags}, rng, 2.0);
        const Tensor end = random_tensor({kNumTags}, rng, 2.0);
        const CrfBoundary bd{&start, &end};
        const Brute b = brute_force(em, trans, bd);
        EXPECT_NEAR(log_partition(em, trans, bd), b.log_z, 1e-9);
        EXPECT_NEAR(viterbi(em, trans, false, bd).score, b.best, 1e-9);
    }
}

TEST(Crf, ConstrainedViterbiIsBestValidSequence) {
    Rng rng(3);
    for (int trial = 0; trial < 60; ++trial) {
        const std::size_t n = 1 + rng.below(5);
        const Tensor em = random_tensor({n, kNumTags}, rng, 3.0);
        const Tensor trans = random_tensor({kNumTags, kNumTags}, rng, 3.0);
        const auto v = viterbi(em, trans, true);
        EXPECT_TRUE(is_valid_bioes(v.tags)) << tags_to_string(v.tags);
        EXPECT_NEAR(v.score, brute_force(em, trans, {}, true).best, 1e-9);
    }
}

TEST(Crf, NllIsNonNegativeAndMarginalsNormalized) {
    Rng rng(4);
    const Tensor em = random_tensor({4, kNumTags}, rng, 2.0);
    const Tensor trans = random_tensor({kNumTags, kNumTags}, rng, 2.0);
    for_each_sequence(4, [&](const TagSequence& s) { ASSERT_GE(nll(em, trans, s), 0.0); });
    const Tensor m = marginals(em, trans);
    for (std::size_t i = 0; i < 4; ++i) {
        double row = 0.0;
        for (std::size_t c = 0; c < kNumTags; ++c) row += m.at(i, c);
        EXPECT_NEAR(row, 1.0, 1e-12);
    }
}

TEST(Crf, MarginalsMatchEnumeration) {
    Rng rng(5);
    const std::size_t n = 3;
    const Tensor em = random_tensor({n, kNumTags}, rng, 2.0);
    const Tensor trans = random_tensor({kNumTags, kNumTags}, rng, 2.0);
    const double log_z = log_partition(em, trans);
    Tensor expect({n, kNumTags});
    for_each_sequence(n, [&](const TagSequence& s) {
        const double p = std::exp(path_score(em, trans, s) - log_z);
        for (std::size_t i = 0; i < n; ++i) expect.at(i, tag_index(s[i])) += p;
    });
    const Tensor m = marginals(em, trans);
    for (std::size_t i = 0; i < m.size(); ++i) EXPECT_NEAR(m[i], expect[i], 1e-12);
}

TEST(Crf, ViterbiTieBreaksToLowestIndex) {
    const Tensor em({2, kNumTags}, 0.0);
    const Tensor trans({kNumTags, kNumTags}, 0.0);
    const auto v = viterbi(em, trans);
    EXPECT_EQ(v.tags, (TagSequence{Tag::O, Tag::O}));
}

TEST(Crf, GradientMatchesFiniteDifferences) {
    Rng rng(6);
    for (int trial = 0; trial < 5; ++trial) {
        ParamSet p;
        const std::size_t n = 1 + rng.below(5);
        p.add("em", random_tensor({n, kNumTags}, rng, 2.0));
        p.add("trans", random_tensor({kNumTags, kNumTags}, rng, 2.0));
        p.add("start", random_tensor({kNumTags}, rng, 1.0));
        p.add("end", random_tensor({kNumTags}, rng, 1.0));
        TagSequence gold(n);
        for (auto& t : gold) t = tag_from_index(rng.below(kNumTags));
        auto loss = [&](Graph& g) {
            return crf_nll(g.param("em"), g.param("trans"), gold, g.param("start"), g.param("end"));
        };
        EXPECT_LT(grad_check(loss, p), 1e-4);
    }
}

TEST(Crf, RejectsLengthMismatch) {
    ParamSet p;
    p.add("em", Tensor({3, kNumTags}));
    p.add("trans", Tensor({kNumTags, kNumTags}));
    Graph g(&p);
    EXPECT_THROW(crf_nll(g.param("em"), g.param("trans"), TagSequence{Tag::O}), UsageError);
    EXPECT_THROW(path_score(p.at("em"), p.at("trans"), TagSequence{Tag::O}), UsageError);
}

TEST(Crf, TrivialCases) {
    Tensor em = Tensor::matrix(1, kNumTags, {0.1, 2.0, -1.0, 0.5, 1.9});
    const Tensor trans({kNumTags, kNumTags}, 0.7);
    EXPECT_DOUBLE_EQ(path_score(em, trans, {Tag::E}), 0.5);
    double lse = 0.0;
    for (double v : em.values()) lse += std::exp(v);
    EXPECT_NEAR(log_partition(em, trans), std::log(lse), 1e-12);
    EXPECT_EQ(viterbi(em, trans).tags, TagSequence{Tag::B});

    const Tensor zero3({3, kNumTags}, 0.0), zt({kNumTags, kNumTags}, 0.0);
    EXPECT_NEAR(log_partition(zero3, zt), 3.0 * std::log(5.0), 1e-12);
    const Tensor zero2({2, kNumTags}, 0.0);
    EXPECT_NEAR(nll(zero2, zt, {Tag::S, Tag::I}), std::log(25.0), 1e-12);
}

TEST(Crf, HandSumAndConcatenationAdditivity) {
    Rng rng(7);
    const Tensor em = random_tensor({3, kNumTags}, rng, 2.0);
    const Tensor trans = random_tensor({kNumTags, kNumTags}, rng, 2.0);
    const TagSequence y{Tag::B, Tag::I, Tag::E};
    const double hand = em.at(0, 1) + em.at(1, 2) + em.at(2, 3) + trans.at(1, 2) + trans.at(2, 3);
    EXPECT_NEAR(path_score(em, trans, y), hand, 1e-12);

    const Tensor a = Tensor::matrix(1, kNumTags, {em.row(0).begin(), em.row(0).end()});
    const Tensor b = Tensor::matrix(2, kNumTags, {em.row(1).begin(), em.row(2).end()});
    EXPECT_NEAR(path_score(em, trans, y),
                path_score(a, trans, {Tag::B}) + path_score(b, trans, {Tag::I, Tag::E}) + trans.at(1, 2), 1e-12);
}

TEST(Crf, ProbabilitiesSumToOneUpToSix) {
    Rng rng(8);
    for (std::size_t n = 1; n <= 6; ++n) {
        const Tensor em = random_tensor({n, kNumTags}, rng, 2.0);
        const Tensor trans = random_tensor({kNumTags, kNumTags}, rng, 2.0);
        const double log_z = log_partition(em, trans);
        double total = 0.0;
        for_each_sequence(n, [&](const TagSequence& s) {
            const double p = std::exp(path_score(em, trans, s) - log_z);
            ASSERT_GT(p, 0.0);
            ASSERT_LE(p, 1.0);
            total += p;
        });
        EXPECT_NEAR(total, 1.0, 1e-9);
    }
}

TEST(Crf, RowShiftIdentity) {
    Rng rng(9);
    Tensor em = random_tensor({4, kNumTags}, rng, 2.0);
    const Tensor trans = random_tensor({kNumTags, kNumTags}, rng, 2.0);
    const double before = log_partition(em, trans);
    for (std::size_t c = 0; c < kNumTags; ++c) em.at(2, c) += 3.25;
    EXPECT_NEAR(log_partition(em, trans), before + 3.25, 1e-12);
}

TEST(Crf, ViterbiDominatesGoldAndConstrainedAlwaysValid) {
    Rng rng(10);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + rng.below(8);
        const Tensor em = random_tensor({n, kNumTags}, rng, 3.0);
        const Tensor trans = random_tensor({kNumTags, kNumTags}, rng, 3.0);
        TagSequence gold(n);
        for (auto& t : gold) t = tag_from_index(rng.below(kNumTags));
        ASSERT_GE(viterbi(em, trans).score + 1e-12, path_score(em, trans, gold));
        ASSERT_TRUE(validate_transitions(viterbi(em, trans, true).tags).empty());
    }
}
