#pragma once

// Time-partitioned corpus (past periods D_p, latest period D_l) and meta-task sampling.

#include <algorithm>
#include <charconv>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mise/corpus.hpp"
#include "mise/model.hpp"
#include "mise/rng.hpp"

namespace mise {

inline constexpr std::size_t kDefaultEvalSize = 15;

/// "YYYYH1" / "YYYYH2" -> chronological ordinal (year * 2 + half - 1).
inline std::optional<int> period_ordinal(const std::string& label) {
    if (label.size() != 6 || label[4] != 'H' || (label[5] != '1' && label[5] != '2')) return std::nullopt;
    int year = 0;
    auto res = std::from_chars(label.data(), label.data() + 4, year);
    if (res.ec != std::errc() || res.ptr != label.data() + 4) return std::nullopt;
    return year * 2 + (label[5] - '1');
}

/// All corpus tokens in order of first appearance, after the reserved ids.
inline Vocabulary build_vocabulary(const Corpus& corpus) {
    Vocabulary v;
    for (const auto& p : corpus.posts)
        for (const auto& t : p.tokens) v.add(t);
    return v;
}

/// Corpus resolved against a vocabulary: the model-facing view of the posts.
struct Dataset {
    Vocabulary vocab;
    std::vector<LabeledPost> posts;
    std::vector<bool> labeled;
    std::vector<std::string> periods;

    std::size_t size() const noexcept { return posts.size(); }

    static Dataset build(const Corpus& corpus, Vocabulary vocab) {
        Dataset d;
        d.vocab = std::move(vocab);
        for (const auto& p : corpus.posts) {
            LabeledPost lp;
            lp.post.ids = d.vocab.ids(p.tokens);
            if (p.tags) lp.tags = *p.tags;
            d.posts.push_back(std::move(lp));
            d.labeled.push_back(p.tags.has_value());
            d.periods.push_back(p.period);
        }
        return d;
    }

    static Dataset build(const Corpus& corpus) { return build(corpus, build_vocabulary(corpus)); }

    /// Replaces token inputs with externally computed representations.
    void attach_representations(std::vector<Tensor> reps) {
        if (reps.size() != posts.size())
            throw DataError("representation file covers " + std::to_string(reps.size()) + " posts, corpus has " +
                            std::to_string(posts.size()));
        for (std::size_t i = 0; i < posts.size(); ++i) {
            if (reps[i].rows() != posts[i].post.ids.size())
                throw DataError("post " + std::to_string(i) + ": representation rows do not match token count");
            posts[i].post.reps = std::make_shared<const Tensor>(std::move(reps[i]));
        }
    }
};

struct TimeSplit {
    std::vector<std::string> past_labels;         // chronological
    std::string latest_label;
    std::vector<std::vector<std::size_t>> past;   // labeled post indices per past period
    std::vector<std::size_t> latest;              // labeled post indices of the latest period
    std::map<std::string, std::size_t> counts;    // all posts per period label

    std::size_t num_past() const noexcept { return past.size(); }

    std::vector<std::size_t> past_pool() const {
        std::vector<std::size_t> all;
        for (const auto& p : past) all.insert(all.end(), p.begin(), p.end());
        return all;
    }
};

/// Groups posts by half-year label; the latest label is D_l, all earlier ones D_p.
inline TimeSplit split_periods(const std::vector<std::string>& labels, const std::vector<bool>& labeled) {
    std::map<int, std::string> by_ordinal;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto ord = period_ordinal(labels[i]);
        if (!ord) throw DataError("post " + std::to_string(i) + ": unparseable period label '" + labels[i] + "'");
        by_ordinal.emplace(*ord, labels[i]);
    }
    if (by_ordinal.size() < 2)
        throw DataError("need at least two time periods for a past/latest split, found " +
                        std::to_string(by_ordinal.size()));

    TimeSplit split;
    std::map<std::string, std::size_t> slot;
    for (const auto& [_, label] : by_ordinal) {
        slot.emplace(label, split.past_labels.size());
        split.past_labels.push_back(label);
    }
    split.latest_label = split.past_labels.back();
    split.past_labels.pop_back();
    split.past.resize(split.past_labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        ++split.counts[labels[i]];
        if (!labeled[i]) continue;
        const std::size_t s = slot.at(labels[i]);
        if (s == split.past.size())
            split.latest.push_back(i);
        else
            split.past[s].push_back(i);
    }
    return split;
}

inline TimeSplit split_periods(const Dataset& data) { return split_periods(data.periods, data.labeled); }

/// Same split with the given post indices removed from every sampling pool.
inline TimeSplit exclude_posts(const TimeSplit& split, const std::vector<std::size_t>& removed) {
    const std::set<std::size_t> drop(removed.begin(), removed.end());
    TimeSplit out = split;
    auto filter = [&](std::vector<std::size_t>& v) {
        v.erase(std::remove_if(v.begin(), v.end(), [&](std::size_t i) { return drop.count(i) != 0; }), v.end());
    };
    for (auto& p : out.past) filter(p);
    filter(out.latest);
    return out;
}

enum class TaskKind { train, test };

struct MetaTask {
    TaskKind kind = TaskKind::train;
    std::size_t period = 0;             // index into past periods; num_past() for the latest period
    std::vector<std::size_t> support;   // S, |S| = K
    std::vector<std::size_t> eval;      // V (train) or Q (test)
    friend bool operator==(const MetaTask&, const MetaTask&) = default;
};

/// Uniform period among those with at least K + eval_size labeled posts, then S and V
/// drawn from it without replacement.
inline MetaTask sample_train_task(const TimeSplit& split, std::size_t k, Rng& rng,
                                  std::size_t eval_size = kDefaultEvalSize) {
    if (k == 0) throw UsageError("K must be positive");
    std::vector<std::size_t> eligible;
    for (std::size_t p = 0; p < split.past.size(); ++p)
        if (split.past[p].size() >= k + eval_size) eligible.push_back(p);
    if (eligible.empty())
        throw DataError("no past period has " + std::to_string(k + eval_size) + " labeled posts for K=" +
                        std::to_string(k));
    MetaTask task;
    task.kind = TaskKind::train;
    task.period = eligible[rng.below(eligible.size())];
    auto drawn = rng.sample(split.past[task.period], k + eval_size);
    task.support.assign(drawn.begin(), drawn.begin() + static_cast<std::ptrdiff_t>(k));
    task.eval.assign(drawn.begin() + static_cast<std::ptrdiff_t>(k), drawn.end());
    return task;
}

/// S and Q drawn disjointly from the latest period. Never samples with replacement.
inline MetaTask sample_test_task(const TimeSplit& split, std::size_t k, Rng& rng,
                                 std::size_t eval_size = kDefaultEvalSize) {
    if (k == 0) throw UsageError("K must be positive");
    if (split.latest.size() < k + eval_size)
        throw DataError("latest period " + split.latest_label + " has " + std::to_string(split.latest.size()) +
                        " labeled posts; K=" + std::to_string(k) + " with query size " + std::to_string(eval_size) +
                        " needs " + std::to_string(k + eval_size));
    MetaTask task;
    task.kind = TaskKind::test;
    task.period = split.num_past();
    auto drawn = rng.sample(split.latest, k + eval_size);
    task.support.assign(drawn.begin(), drawn.begin() + static_cast<std::ptrdiff_t>(k));
    task.eval.assign(drawn.begin() + static_cast<std::ptrdiff_t>(k), drawn.end());
    return task;
}

/// A MetaTask resolved against its dataset. Eval-set labels can be sealed; reading them
/// while sealed is a contract violation.
class TaskView {
public:
    TaskView(const Dataset& data, const MetaTask& task) : data_(&data), task_(&task) {}

    const MetaTask& task() const noexcept { return *task_; }

    std::vector<const LabeledPost*> support() const { return resolve(task_->support); }

    std::vector<const Post*> eval_inputs() const {
        std::vector<const Post*> out;
        for (std::size_t i : task_->eval) out.push_back(&data_->posts.at(i).post);
        return out;
    }

    std::vector<const LabeledPost*> eval_labeled() const {
        if (sealed_)
            throw ContractViolation("eval-set gold labels were read while sealed (adaptation must not see query labels)");
        return resolve(task_->eval);
    }

    void seal_eval_labels() noexcept { sealed_ = true; }
    void unseal_eval_labels() noexcept { sealed_ = false; }
    bool sealed() const noexcept { return sealed_; }

private:
    std::vector<const LabeledPost*> resolve(const std::vector<std::size_t>& ids) const {
        std::vector<const LabeledPost*> out;
        for (std::size_t i : ids) {
            if (!data_->labeled.at(i)) throw DataError("post " + std::to_string(i) + " is unlabeled");
            out.push_back(&data_->posts[i]);
        }
        return out;
    }

    const Dataset* data_;
    const MetaTask* task_;
    bool sealed_ = false;
};

} // namespace mise
