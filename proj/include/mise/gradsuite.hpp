#pragma once

// Gradient self-check over seeded tiny models: the CRF loss, the inheritance loss and
// the blended adaptation objective, each against central differences.

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "mise/gradcheck.hpp"
#include "mise/meta.hpp"
#include "mise/parallel.hpp"

namespace mise {

inline constexpr double kGradTolerance = 1e-4;

struct GradSuiteCase {
    std::uint64_t seed = 0;
    double nll = 0.0;   // max relative error of each loss
    double ki = 0.0;
    double total = 0.0;
};

struct GradSuiteResult {
    std::vector<GradSuiteCase> cases;
    double worst() const {
        double w = 0.0;
        for (const auto& c : cases) w = std::max({w, c.nll, c.ki, c.total});
        return w;
    }
    bool passed(double tol = kGradTolerance) const { return worst() < tol; }
};

struct TinyProblem {
    ModelConfig model;
    ParamSet student, teacher;
    std::vector<LabeledPost> support;
    std::vector<Post> query;
    double lambda = 0.2, temperature = 5.0;
};

/// A random model small enough for coordinate-wise finite differences (< 500 parameters).
inline TinyProblem make_tiny_problem(std::uint64_t seed) {
    Rng rng(seed);
    TinyProblem p;
    p.model.vocab_size = 7;
    p.model.embed_dim = 3;
    p.model.hidden_dim = 2 + rng.below(2);
    p.model.dropout = 0.0;
    p.model.boundary_terms = rng.bernoulli(0.5);
    p.model.init_scale = 0.8;
    p.student = init_params(p.model, derive_seed(seed, 1));
    p.teacher = init_params(p.model, derive_seed(seed, 2));
    auto random_post = [&] {
        Post post;
        const std::size_t n = 2 + rng.below(3);
        for (std::size_t i = 0; i < n; ++i) post.ids.push_back(static_cast<int>(rng.below(p.model.vocab_size)));
        return post;
    };
    for (std::size_t s = 0; s < 2; ++s) {
        LabeledPost lp;
        lp.post = random_post();
        for (std::size_t i = 0; i < lp.post.size(); ++i) lp.tags.push_back(tag_from_index(rng.below(kNumTags)));
        p.support.push_back(std::move(lp));
    }
    for (std::size_t q = 0; q < 2; ++q) p.query.push_back(random_post());
    p.lambda = rng.uniform(0.05, 0.95);
    p.temperature = rng.uniform(1.0, 6.0);
    return p;
}

inline GradSuiteCase check_tiny_problem(const TinyProblem& p, std::uint64_t seed) {
    std::vector<const LabeledPost*> support;
    for (const auto& lp : p.support) support.push_back(&lp);
    std::vector<const Post*> query;
    for (const auto& q : p.query) query.push_back(&q);
    const SoftLabelGrid grid = soft_labels(p.model, p.teacher, query, p.temperature);

    GradSuiteCase c;
    c.seed = seed;
    c.nll = grad_check([&](Graph& g) { return mean_nll(g, p.model, support, Mode::eval, nullptr); }, p.student);
    c.ki = grad_check([&](Graph& g) { return ki_loss(g, p.model, query, grid, p.temperature); }, p.student);
    c.total = grad_check(
        [&](Graph& g) {
            return total_loss(mean_nll(g, p.model, support, Mode::eval, nullptr),
                              ki_loss(g, p.model, query, grid, p.temperature), p.lambda);
        },
        p.student);
    return c;
}

inline GradSuiteResult run_grad_suite(std::size_t models, std::uint64_t seed, std::size_t workers = 1) {
    GradSuiteResult r;
    r.cases.resize(models);
    parallel_for(models, workers, [&](std::size_t m) {
        const std::uint64_t s = derive_seed(seed, m);
        r.cases[m] = check_tiny_problem(make_tiny_problem(s), s);
    });
    return r;
}

} // namespace mise
