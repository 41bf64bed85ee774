#include <gtest/gtest.h>

#include "mise/protocols.hpp"
#include "mise/synth.hpp"

using namespace mise;

namespace {

struct World {
    Dataset data;
    TimeSplit split;
    ModelConfig model;
    Checkpoint meta;
};

const World& world() {
    static const World w = [] {
        SynthConfig sc;
        sc.posts_per_period = 40;
        sc.seed = 6;
        World w;
        w.data = Dataset::build(generate_corpus(sc).corpus);
        w.split = split_periods(w.data);
        w.model.vocab_size = w.data.vocab.size();
        w.model.embed_dim = 8;
        w.model.hidden_dim = 6;
        TrainConfig tc;
        tc.max_steps = 5;
        tc.snapshot_every = 0;
        w.meta = meta_train(w.data, w.split, w.model, tc).checkpoint;
        return w;
    }();
    return w;
}

TrainConfig eval_config(std::size_t workers = 1) {
    TrainConfig c;
    c.adapt_steps = 3;
    c.seed = 17;
    c.workers = workers;
    return c;
}

} // namespace

TEST(KshotEval, SingleEpisodeReportEqualsEpisode) {
    const auto& w = world();
    EvalOptions opt;
    opt.episodes = 1;
    const auto s = kshot_eval(w.meta, w.data, w.split, eval_config(), opt);
    ASSERT_EQ(s.episodes.size(), 1u);
    EXPECT_EQ(s.f1.mean, s.episodes[0].scores.f1);
    EXPECT_EQ(s.precision.mean, s.episodes[0].scores.precision);
    EXPECT_EQ(s.f1.std, 0.0);
    const auto direct = run_episode(w.meta, w.data, w.split, eval_config(), opt, derive_seed(17, 0));
    EXPECT_EQ(direct, s.episodes[0]);
}

TEST(KshotEval, IndependentOfWorkerCount) {
    const auto& w = world();
    EvalOptions opt;
    opt.episodes = 6;
    opt.k = 3;
    const auto serial = kshot_eval(w.meta, w.data, w.split, eval_config(1), opt);
    const auto parallel = kshot_eval(w.meta, w.data, w.split, eval_config(3), opt);
    EXPECT_EQ(serial, parallel);
    EXPECT_TRUE(serial.consistent());
    EXPECT_EQ(serial.method, "MISE");
    EXPECT_EQ(serial.k, 3u);
}

TEST(KshotEval, MethodsDifferOnlyInAdaptation) {
    const auto& w = world();
    EvalOptions opt;
    opt.episodes = 2;
    opt.method = AdaptMethod::fine_tune;
    const auto ft = kshot_eval(w.meta, w.data, w.split, eval_config(), opt);
    EXPECT_EQ(ft.method, "fine-tune");
    TrainConfig zero = eval_config();
    zero.lambda = 0.0;
    opt.method = AdaptMethod::inheritance;
    const auto mise0 = kshot_eval(w.meta, w.data, w.split, zero, opt);
    ASSERT_EQ(ft.episodes.size(), mise0.episodes.size());
    for (std::size_t i = 0; i < ft.episodes.size(); ++i) EXPECT_EQ(ft.episodes[i], mise0.episodes[i]);
}

TEST(KshotEval, Errors) {
    const auto& w = world();
    EvalOptions opt;
    opt.episodes = 0;
    EXPECT_THROW(kshot_eval(w.meta, w.data, w.split, eval_config(), opt), UsageError);
    opt.episodes = 1;
    opt.k = 30;
    EXPECT_THROW(kshot_eval(w.meta, w.data, w.split, eval_config(), opt), DataError);
}

TEST(Holdout, FractionAndErrors) {
    const auto& w = world();
    Rng rng(1);
    const auto held = sample_holdout(w.split, 0.2, rng);
    EXPECT_EQ(held.size(), static_cast<std::size_t>(std::llround(0.2 * w.split.past_pool().size())));
    std::set<std::size_t> uniq(held.begin(), held.end());
    EXPECT_EQ(uniq.size(), held.size());
    EXPECT_THROW(sample_holdout(w.split, 0.0, rng), UsageError);
    EXPECT_THROW(sample_holdout(w.split, 1.0, rng), UsageError);
}

TEST(Forgetting, StructureAndDeterminism) {
    const auto& w = world();
    TrainConfig cfg = eval_config();
    cfg.max_steps = 3;
    ForgettingOptions opt;
    opt.repeats = 2;
    const auto a = forgetting_study(w.data, w.split, w.model, cfg, opt);
    EXPECT_EQ(a.inheritance.method, "MISE");
    EXPECT_EQ(a.fine_tune.method, "lambda=0");
    ASSERT_EQ(a.inheritance.episodes.size(), 2u);
    ASSERT_EQ(a.fine_tune.episodes.size(), 2u);
    EXPECT_TRUE(a.inheritance.consistent());
    // Retained scores are measured on the held-out past posts.
    const std::size_t held = static_cast<std::size_t>(std::llround(0.2 * w.split.past_pool().size()));
    std::size_t gold_tokens = 0;
    {
        Rng rng(derive_seed(cfg.seed, 0));
        for (std::size_t i : sample_holdout(w.split, 0.2, rng))
            for (Tag t : w.data.posts[i].tags) gold_tokens += t != Tag::O;
    }
    EXPECT_GT(held, 0u);
    EXPECT_EQ(a.inheritance.episodes[0].counts.gold, gold_tokens);
    cfg.workers = 2;
    opt.adapt_tasks = 2;
    const auto b = forgetting_study(w.data, w.split, w.model, cfg, opt);
    cfg.workers = 1;
    const auto c = forgetting_study(w.data, w.split, w.model, cfg, opt);
    EXPECT_EQ(b.inheritance, c.inheritance);
    EXPECT_EQ(b.fine_tune, c.fine_tune);
}

TEST(Forgetting, Errors) {
    const auto& w = world();
    ForgettingOptions opt;
    opt.repeats = 0;
    EXPECT_THROW(forgetting_study(w.data, w.split, w.model, eval_config(), opt), UsageError);
    opt.repeats = 1;
    opt.holdout = 0.0;
    EXPECT_THROW(forgetting_study(w.data, w.split, w.model, eval_config(), opt), UsageError);
}
