#include <gtest/gtest.h>

#include <set>

#include "mise/episodes.hpp"
#include "mise/synth.hpp"

using namespace mise;

namespace {

struct Fixture {
    Dataset data;
    TimeSplit split;
};

Fixture make_fixture(std::size_t posts_per_period = 60) {
    SynthConfig cfg;
    cfg.posts_per_period = posts_per_period;
    cfg.seed = 2;
    Fixture f;
    f.data = Dataset::build(generate_corpus(cfg).corpus);
    f.split = split_periods(f.data);
    return f;
}

std::set<std::size_t> as_set(const MetaTask& t) {
    std::set<std::size_t> s(t.support.begin(), t.support.end());
    s.insert(t.eval.begin(), t.eval.end());
    return s;
}

} // namespace

TEST(SplitPeriods, SevenPastOneLatest) {
    const auto f = make_fixture();
    EXPECT_EQ(f.split.num_past(), 7u);
    EXPECT_EQ(f.split.past_labels.front(), "2018H2");
    EXPECT_EQ(f.split.latest_label, "2022H1");
    std::size_t total = 0;
    for (const auto& [_, n] : f.split.counts) total += n;
    EXPECT_EQ(total, f.data.size());
}

TEST(SplitPeriods, ChronologicalNotLexicalOrder) {
    const std::vector<std::string> labels{"2020H1", "2019H2", "2019H1", "2020H1"};
    const auto split = split_periods(labels, std::vector<bool>(4, true));
    EXPECT_EQ(split.past_labels, (std::vector<std::string>{"2019H1", "2019H2"}));
    EXPECT_EQ(split.latest, (std::vector<std::size_t>{0, 3}));
}

TEST(SplitPeriods, Errors) {
    EXPECT_THROW(split_periods({"2019H1", "2019H1"}, {true, true}), DataError);
    EXPECT_THROW(split_periods({"2019H1", "spring"}, {true, true}), DataError);
    EXPECT_THROW(split_periods({"2019H3", "2019H1"}, {true, true}), DataError);
}

TEST(SplitPeriods, UnlabeledPostsCountedButNotSampled) {
    const auto split = split_periods({"2019H1", "2019H1", "2019H2"}, {true, false, true});
    EXPECT_EQ(split.counts.at("2019H1"), 2u);
    EXPECT_EQ(split.past[0], (std::vector<std::size_t>{0}));
}

TEST(TrainTask, SizesDisjointAndPast) {
    const auto f = make_fixture();
    Rng rng(1);
    for (int i = 0; i < 200; ++i) {
        const auto t = sample_train_task(f.split, 5, rng);
        EXPECT_EQ(t.kind, TaskKind::train);
        ASSERT_EQ(t.support.size(), 5u);
        ASSERT_EQ(t.eval.size(), 15u);
        ASSERT_EQ(as_set(t).size(), 20u);
        for (std::size_t idx : as_set(t)) ASSERT_EQ(f.data.periods[idx], f.split.past_labels[t.period]);
    }
}

TEST(TrainTask, PeriodFrequencyUniform) {
    const auto f = make_fixture();
    Rng rng(2);
    std::vector<double> hits(f.split.num_past(), 0.0);
    const int n = 10000;
    for (int i = 0; i < n; ++i) hits[sample_train_task(f.split, 5, rng).period] += 1.0;
    for (double h : hits) EXPECT_NEAR(h / n, 1.0 / 7.0, 0.02);
}

TEST(TrainTask, InsufficientPostsEverywhere) {
    const auto f = make_fixture(15);
    Rng rng(3);
    EXPECT_THROW(sample_train_task(f.split, 5, rng), DataError);
    EXPECT_THROW(sample_train_task(f.split, 0, rng), UsageError);
}

TEST(TestTask, SizesAndLatestOnly) {
    const auto f = make_fixture();
    Rng rng(4);
    const auto t = sample_test_task(f.split, 3, rng);
    EXPECT_EQ(t.kind, TaskKind::test);
    EXPECT_EQ(t.support.size(), 3u);
    EXPECT_EQ(t.eval.size(), 15u);
    EXPECT_EQ(as_set(t).size(), 18u);
    for (std::size_t idx : as_set(t)) EXPECT_EQ(f.data.periods[idx], f.split.latest_label);
}

TEST(TestTask, Determinism) {
    const auto f = make_fixture();
    Rng a(9), b(9), c(10);
    const auto ta = sample_test_task(f.split, 5, a);
    EXPECT_EQ(ta, sample_test_task(f.split, 5, b));
    EXPECT_NE(ta, sample_test_task(f.split, 5, c));
}

TEST(TestTask, CoverageOfLatestPeriod) {
    // 50 tasks of 20 posts from a 100-post latest period: expected coverage 1 - 0.8^50.
    const auto f = make_fixture(100);
    ASSERT_EQ(f.split.latest.size(), 100u);
    std::set<std::size_t> seen;
    for (std::uint64_t s = 0; s < 50; ++s) {
        Rng rng(derive_seed(77, s));
        const auto t = sample_test_task(f.split, 5, rng);
        const auto ids = as_set(t);
        seen.insert(ids.begin(), ids.end());
    }
    EXPECT_GT(seen.size(), 90u);
}

TEST(TestTask, NeverSamplesWithReplacement) {
    const auto f = make_fixture(18);
    Rng rng(5);
    EXPECT_THROW(sample_test_task(f.split, 5, rng), DataError);
    EXPECT_NO_THROW(sample_test_task(f.split, 3, rng));
}

TEST(TaskView, SealedLabelsAreAContract) {
    const auto f = make_fixture();
    Rng rng(6);
    const auto t = sample_test_task(f.split, 5, rng);
    TaskView view(f.data, t);
    view.seal_eval_labels();
    EXPECT_EQ(view.eval_inputs().size(), 15u);
    EXPECT_EQ(view.support().size(), 5u);
    EXPECT_THROW(view.eval_labeled(), ContractViolation);
    view.unseal_eval_labels();
    EXPECT_EQ(view.eval_labeled().size(), 15u);
}

TEST(ExcludePosts, RemovesFromPools) {
    const auto f = make_fixture();
    const auto pool = f.split.past_pool();
    const std::vector<std::size_t> removed(pool.begin(), pool.begin() + 10);
    const auto reduced = exclude_posts(f.split, removed);
    EXPECT_EQ(reduced.past_pool().size(), pool.size() - 10);
    for (std::size_t i : reduced.past_pool())
        EXPECT_EQ(std::find(removed.begin(), removed.end(), i), removed.end());
    EXPECT_EQ(reduced.latest, f.split.latest);
}

TEST(Dataset, VocabularyFromCorpus) {
    const auto f = make_fixture();
    EXPECT_EQ(f.data.vocab.token(0), "<unk>");
    for (const auto& lp : f.data.posts)
        for (int id : lp.post.ids) EXPECT_NE(id, Vocabulary::kUnknown);
}
