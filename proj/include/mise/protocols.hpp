#pragma once

// Evaluation protocols: K-shot episodic evaluation and the forgetting study.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mise/meta.hpp"
#include "mise/metrics.hpp"

namespace mise {

inline constexpr std::size_t kDefaultEpisodes = 50;
inline constexpr std::size_t kDefaultRepeats = 5;
inline constexpr double kDefaultHoldout = 0.2;

enum class AdaptMethod { inheritance, fine_tune };

struct EvalOptions {
    std::size_t k = 5;
    std::size_t episodes = kDefaultEpisodes;
    AdaptMethod method = AdaptMethod::inheritance;
    bool constrain_decode = false;
    bool binary_metric = false;
};

/// Predicts every post and pools token counts against its gold tags.
inline TokenCounts score_posts(const ModelConfig& model, const ParamSet& params,
                               const std::vector<const LabeledPost*>& posts, bool constrain, bool binary) {
    TokenCounts total;
    for (const LabeledPost* lp : posts) total += token_counts(decode_post(model, params, lp->post, constrain).tags, lp->tags, binary);
    return total;
}

inline AdaptResult adapt(AdaptMethod method, const ModelConfig& model, const ParamSet& init, const Dataset& data,
                         const MetaTask& task, const TrainConfig& cfg) {
    return method == AdaptMethod::inheritance ? adapt_with_inheritance(model, init, data, task, cfg)
                                              : fine_tune(model, init, data, task, cfg);
}

/// One test episode: sample S/Q from the latest period with the episode seed, adapt, then
/// score Q. Gold Q labels are read only after adaptation has finished.
inline EpisodeScore run_episode(const Checkpoint& ck, const Dataset& data, const TimeSplit& split,
                                const TrainConfig& cfg, const EvalOptions& opt, std::uint64_t seed) {
    Rng rng(seed);
    const MetaTask task = sample_test_task(split, opt.k, rng, cfg.eval_size);
    TrainConfig episode_cfg = cfg;
    episode_cfg.seed = derive_seed(seed, 1);
    const AdaptResult adapted = adapt(opt.method, ck.model, ck.params, data, task, episode_cfg);
    TaskView view(data, task);
    EpisodeScore e;
    e.seed = seed;
    e.counts = score_posts(ck.model, adapted.params, view.eval_labeled(), opt.constrain_decode, opt.binary_metric);
    e.scores = prf_from_counts(e.counts);
    return e;
}

/// Episode i uses seed derive_seed(cfg.seed, i), so results do not depend on `cfg.workers`.
inline EvalSection kshot_eval(const Checkpoint& ck, const Dataset& data, const TimeSplit& split,
                              const TrainConfig& cfg, const EvalOptions& opt, std::string method_label = {}) {
    if (opt.episodes == 0) throw UsageError("episodes must be at least 1");
    TrainConfig c = cfg;
    c.k = opt.k;
    c.validate();
    // Fail fast on infeasible sampling before spawning workers.
    if (split.latest.size() < opt.k + c.eval_size) {
        Rng probe(0);
        sample_test_task(split, opt.k, probe, c.eval_size);
    }
    EvalSection s;
    s.method = method_label.empty() ? (opt.method == AdaptMethod::inheritance ? "MISE" : "fine-tune") : method_label;
    s.k = opt.k;
    s.episodes.resize(opt.episodes);
    parallel_for(opt.episodes, c.workers,
                 [&](std::size_t i) { s.episodes[i] = run_episode(ck, data, split, c, opt, derive_seed(c.seed, i)); });
    s.aggregate();
    return s;
}

struct ForgettingOptions {
    std::size_t k = 5;
    std::size_t repeats = kDefaultRepeats;
    double holdout = kDefaultHoldout;
    std::size_t adapt_tasks = 1; // test tasks per repeat; retained scores are pooled over them
    bool constrain_decode = false;
    bool binary_metric = false;
};

struct ForgettingResult {
    EvalSection inheritance; // MISE
    EvalSection fine_tune;   // lambda = 0 comparator
};

/// Random `fraction` of the labeled past-period posts (at least one).
inline std::vector<std::size_t> sample_holdout(const TimeSplit& split, double fraction, Rng& rng) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw UsageError("holdout fraction must lie in (0, 1)");
    const auto pool = split.past_pool();
    const auto n = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(pool.size())));
    if (n == 0 || n >= pool.size())
        throw DataError("past periods have " + std::to_string(pool.size()) + " labeled posts; cannot hold out " +
                        std::to_string(fraction));
    return rng.sample(pool, n);
}

/// Per repeat: hold out part of D_p, meta-train on the rest, adapt on latest-period support
/// sets with and without inheritance, and score both on the held-out past posts.
inline ForgettingResult forgetting_study(const Dataset& data, const TimeSplit& split, const ModelConfig& model,
                                         const TrainConfig& cfg, const ForgettingOptions& opt) {
    if (opt.repeats == 0) throw UsageError("repeats must be at least 1");
    if (opt.adapt_tasks == 0) throw UsageError("adapt tasks must be at least 1");
    TrainConfig c = cfg;
    c.k = opt.k;
    c.validate();

    ForgettingResult out;
    out.inheritance.method = "MISE";
    out.fine_tune.method = "lambda=0";
    out.inheritance.k = out.fine_tune.k = opt.k;
    out.inheritance.episodes.resize(opt.repeats);
    out.fine_tune.episodes.resize(opt.repeats);

    for (std::size_t r = 0; r < opt.repeats; ++r) {
        const std::uint64_t seed = derive_seed(c.seed, r);
        Rng rng(seed);
        const auto held = sample_holdout(split, opt.holdout, rng);
        const TimeSplit reduced = exclude_posts(split, held);

        TrainConfig train_cfg = c;
        train_cfg.seed = derive_seed(seed, 1);
        train_cfg.snapshot_every = 0;
        const Checkpoint meta = meta_train(data, reduced, model, train_cfg).checkpoint;

        std::vector<const LabeledPost*> retained;
        for (std::size_t i : held) retained.push_back(&data.posts[i]);

        std::vector<TokenCounts> mise_counts(opt.adapt_tasks), ft_counts(opt.adapt_tasks);
        parallel_for(opt.adapt_tasks, c.workers, [&](std::size_t a) {
            Rng task_rng(derive_seed(seed, 100 + a));
            const MetaTask task = sample_test_task(reduced, opt.k, task_rng, c.eval_size);
            TrainConfig adapt_cfg = c;
            adapt_cfg.seed = derive_seed(seed, 200 + a);
            const auto with = adapt_with_inheritance(model, meta.params, data, task, adapt_cfg);
            const auto without = fine_tune(model, meta.params, data, task, adapt_cfg);
            mise_counts[a] = score_posts(model, with.params, retained, opt.constrain_decode, opt.binary_metric);
            ft_counts[a] = score_posts(model, without.params, retained, opt.constrain_decode, opt.binary_metric);
        });
        TokenCounts mise_total, ft_total;
        for (std::size_t a = 0; a < opt.adapt_tasks; ++a) {
            mise_total += mise_counts[a];
            ft_total += ft_counts[a];
        }
        out.inheritance.episodes[r] = {seed, mise_total, prf_from_counts(mise_total)};
        out.fine_tune.episodes[r] = {seed, ft_total, prf_from_counts(ft_total)};
    }
    out.inheritance.aggregate();
    out.fine_tune.aggregate();
    return out;
}

} // namespace mise
