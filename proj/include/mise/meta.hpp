#pragma once

// Meta-training, meta-knowledge inheritance, and the two ablation paths.
//
//   inner update      theta'  = theta - alpha * grad L_S(theta)                (plain descent)
//   outer update      theta  <- AdamW(beta) on sum_tau grad L_V(theta'_tau)    (first-order)
//   soft labels       P^M_c(e_i, t) = softmax_c(f(e_i) / t) from the frozen meta-model
//   inheritance loss  L_ki = t^2 * sum_posts sum_tokens KL(P^M || P^I)
//   adaptation        theta* = theta - alpha * grad[(1 - lambda) L_S + lambda L_ki]

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "mise/episodes.hpp"
#include "mise/model.hpp"
#include "mise/optim.hpp"
#include "mise/parallel.hpp"

namespace mise {

/// sum: the inheritance loss sums over query posts. post_mean: divides by |Q|, putting it on
/// the same per-post scale as the support-set CRF loss.
enum class KiReduction { sum, post_mean, token_mean };

inline const char* to_string(KiReduction r) {
    switch (r) {
    case KiReduction::sum: return "sum";
    case KiReduction::post_mean: return "post_mean";
    case KiReduction::token_mean: return "token_mean";
    }
    return "?";
}

inline KiReduction parse_ki_reduction(const std::string& s) {
    if (s == "sum") return KiReduction::sum;
    if (s == "post_mean") return KiReduction::post_mean;
    if (s == "token_mean") return KiReduction::token_mean;
    throw UsageError("unknown KI reduction '" + s + "' (expected sum, post_mean or token_mean)");
}

struct TrainConfig {
    double alpha = 1e-2;          // inner / adaptation learning rate
    double beta = 5e-3;           // outer learning rate (AdamW)
    double weight_decay = 0.01;
    std::size_t k = 5;
    std::size_t eval_size = kDefaultEvalSize;
    std::size_t meta_batch = 4;
    std::size_t max_steps = 5000;
    std::size_t inner_steps = 1;
    std::size_t adapt_steps = 10;
    double lambda = 0.2;
    double temperature = 5.0;
    bool adapt_dropout = false;   // dropout during meta-test adaptation
    bool second_order = false;    // exact meta-gradient via finite-difference HVPs (tiny models only)
    KiReduction ki_reduction = KiReduction::sum;
    std::size_t snapshot_every = 250;
    std::size_t snapshot_tasks = 4;
    std::size_t workers = 1;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(alpha >= 0.0)) throw UsageError("alpha must be non-negative");
        if (!(beta > 0.0)) throw UsageError("beta must be positive");
        if (!(lambda >= 0.0 && lambda <= 1.0)) throw UsageError("lambda must lie in [0, 1]");
        if (!(temperature > 0.0)) throw UsageError("temperature must be positive");
        if (k == 0) throw UsageError("K must be positive");
        if (eval_size == 0) throw UsageError("eval size must be positive");
        if (meta_batch == 0) throw UsageError("meta batch must be positive");
        if (!(weight_decay >= 0.0)) throw UsageError("weight decay must be non-negative");
    }
};

inline nlohmann::ordered_json to_json(const TrainConfig& c) {
    return {{"alpha", c.alpha},
            {"beta", c.beta},
            {"weight_decay", c.weight_decay},
            {"k", c.k},
            {"eval_size", c.eval_size},
            {"meta_batch", c.meta_batch},
            {"max_steps", c.max_steps},
            {"inner_steps", c.inner_steps},
            {"adapt_steps", c.adapt_steps},
            {"lambda", c.lambda},
            {"temperature", c.temperature},
            {"adapt_dropout", c.adapt_dropout},
            {"second_order", c.second_order},
            {"ki_reduction", to_string(c.ki_reduction)},
            {"seed", c.seed}};
}

using PostRefs = std::vector<const LabeledPost*>;

// ---------------------------------------------------------------------------
// Task loss and inner adaptation
// ---------------------------------------------------------------------------

/// Mean CRF NLL over `posts` (evaluation mode).
inline double task_loss(const ModelConfig& model, const ParamSet& params, const PostRefs& posts) {
    Graph g(&params);
    return mean_nll(g, model, posts, Mode::eval, nullptr).item();
}

inline ParamSet task_gradient(const ModelConfig& model, const ParamSet& params, const PostRefs& posts, Mode mode,
                              Rng* rng, double* loss_out = nullptr) {
    Graph g(&params);
    Var loss = mean_nll(g, model, posts, mode, rng);
    if (loss_out) *loss_out = loss.item();
    return g.backward(loss);
}

/// theta' = theta - alpha * grad L_S(theta), repeated `steps` times on a copy.
inline ParamSet inner_adapt(const ModelConfig& model, const ParamSet& theta, const PostRefs& support, std::size_t steps,
                            double alpha, Mode mode = Mode::eval, Rng* rng = nullptr) {
    ParamSet adapted = theta;
    auto opt = OptimizerState::plain(alpha);
    for (std::size_t s = 0; s < steps; ++s) {
        const ParamSet grads = task_gradient(model, adapted, support, mode, rng);
        optimizer_step(opt, adapted, grads);
    }
    return adapted;
}

// ---------------------------------------------------------------------------
// Meta-gradients and the outer step
// ---------------------------------------------------------------------------

/// First-order meta-gradient of one task: grad L_V evaluated at theta'_tau.
inline ParamSet meta_gradient_first_order(const ModelConfig& model, const ParamSet& theta, const PostRefs& support,
                                          const PostRefs& validation, const TrainConfig& cfg, Mode mode, Rng* rng,
                                          double* val_loss = nullptr) {
    const ParamSet adapted = inner_adapt(model, theta, support, cfg.inner_steps, cfg.alpha, mode, rng);
    return task_gradient(model, adapted, validation, mode, rng, val_loss);
}

/// Exact meta-gradient d/dtheta L_V(theta'(theta)), differentiating through the inner steps
/// with central-difference Hessian-vector products. Evaluation mode only; meant for tiny models.
inline ParamSet meta_gradient_second_order(const ModelConfig& model, const ParamSet& theta, const PostRefs& support,
                                           const PostRefs& validation, const TrainConfig& cfg,
                                           double hvp_eps = 1e-5, double* val_loss = nullptr) {
    std::vector<ParamSet> path{theta};
    auto plain = OptimizerState::plain(cfg.alpha);
    for (std::size_t s = 0; s < cfg.inner_steps; ++s) {
        ParamSet next = path.back();
        optimizer_step(plain, next, task_gradient(model, path.back(), support, Mode::eval, nullptr));
        path.push_back(std::move(next));
    }
    ParamSet v = task_gradient(model, path.back(), validation, Mode::eval, nullptr, val_loss);
    for (std::size_t s = cfg.inner_steps; s-- > 0;) {
        const double norm = std::sqrt(v.dot(v));
        if (norm == 0.0) break;
        const double eps = hvp_eps / norm;
        ParamSet up = path[s], down = path[s];
        up.axpy(eps, v);
        down.axpy(-eps, v);
        ParamSet hv = task_gradient(model, up, support, Mode::eval, nullptr);
        hv.axpy(-1.0, task_gradient(model, down, support, Mode::eval, nullptr));
        v.axpy(-cfg.alpha / (2.0 * eps), hv);
    }
    return v;
}

struct OuterStepResult {
    double mean_validation_loss = 0.0;
    ParamSet meta_gradient; // sum over tasks
};

/// One outer update over a batch of train-kind tasks; returns the summed meta-gradient that
/// was applied. Dropout masks for task i are drawn from derive_seed(dropout_seed, i).
inline OuterStepResult meta_outer_step(const ModelConfig& model, ParamSet& theta, OptimizerState& opt,
                                       const Dataset& data, const std::vector<MetaTask>& tasks,
                                       const TrainConfig& cfg, std::uint64_t dropout_seed) {
    if (tasks.empty()) throw UsageError("meta_outer_step: empty task batch");
    for (const auto& t : tasks)
        if (t.kind != TaskKind::train) throw UsageError("meta_outer_step: tasks must be train-kind");

    std::vector<ParamSet> grads(tasks.size());
    std::vector<double> losses(tasks.size(), 0.0);
    parallel_for(tasks.size(), cfg.workers, [&](std::size_t i) {
        TaskView view(data, tasks[i]);
        const PostRefs support = view.support();
        const PostRefs validation = view.eval_labeled();
        if (cfg.second_order) {
            grads[i] = meta_gradient_second_order(model, theta, support, validation, cfg, 1e-5, &losses[i]);
        } else {
            Rng rng(derive_seed(dropout_seed, i));
            const Mode mode = model.dropout > 0.0 ? Mode::train : Mode::eval;
            grads[i] = meta_gradient_first_order(model, theta, support, validation, cfg, mode, &rng, &losses[i]);
        }
    });

    OuterStepResult out;
    out.meta_gradient = theta.zeros_like();
    double total = 0.0;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        if (!std::isfinite(losses[i])) throw NumericError("non-finite validation loss in task " + std::to_string(i));
        out.meta_gradient.axpy(1.0, grads[i]);
        total += losses[i];
    }
    out.mean_validation_loss = total / static_cast<double>(tasks.size());
    optimizer_step(opt, theta, out.meta_gradient);
    return out;
}

struct Snapshot {
    std::size_t step = 0;
    double validation_loss = 0.0;
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<Snapshot> snapshots;
};

namespace detail {

inline Checkpoint make_checkpoint(const Dataset& data, const ModelConfig& model, ParamSet params,
                                  const TrainConfig& cfg, std::string kind, std::size_t steps) {
    Checkpoint ck;
    ck.model = model;
    ck.params = std::move(params);
    ck.vocab = data.vocab;
    ck.train_config = to_json(cfg);
    ck.kind = std::move(kind);
    ck.seed = cfg.seed;
    ck.steps = steps;
    return ck;
}

// Mean eval-mode adapted validation loss over fixed tasks; the curve reported in snapshots.
inline double snapshot_loss(const ModelConfig& model, const ParamSet& theta, const Dataset& data,
                            const std::vector<MetaTask>& tasks, const TrainConfig& cfg) {
    double total = 0.0;
    for (const auto& t : tasks) {
        TaskView view(data, t);
        const ParamSet adapted = inner_adapt(model, theta, view.support(), cfg.inner_steps, cfg.alpha);
        total += task_loss(model, adapted, view.eval_labeled());
    }
    return total / static_cast<double>(tasks.size());
}

inline std::vector<MetaTask> snapshot_tasks(const TimeSplit& split, const TrainConfig& cfg) {
    Rng rng(derive_seed(cfg.seed, 0x5A5A5A5AULL));
    std::vector<MetaTask> tasks;
    for (std::size_t i = 0; i < cfg.snapshot_tasks; ++i)
        tasks.push_back(sample_train_task(split, cfg.k, rng, cfg.eval_size));
    return tasks;
}

} // namespace detail

using SnapshotObserver = std::function<void(const Snapshot&)>;

/// Bilevel meta-training over the past periods. Initialization is seeded from cfg.seed;
/// returns the meta-model checkpoint after cfg.max_steps outer updates.
inline TrainResult meta_train(const Dataset& data, const TimeSplit& split, const ModelConfig& model,
                              const TrainConfig& cfg, const SnapshotObserver& observer = {}) {
    cfg.validate();
    ParamSet theta = init_params(model, derive_seed(cfg.seed, 0x1D1DULL));
    auto opt = OptimizerState::adaptive(cfg.beta, cfg.weight_decay);
    TrainResult result;

    std::vector<MetaTask> probe;
    if (cfg.snapshot_every > 0 && cfg.max_steps > 0) probe = detail::snapshot_tasks(split, cfg);
    auto snapshot = [&](std::size_t step) {
        Snapshot s{step, detail::snapshot_loss(model, theta, data, probe, cfg)};
        result.snapshots.push_back(s);
        if (observer) observer(s);
    };

    for (std::size_t step = 0; step < cfg.max_steps; ++step) {
        if (!probe.empty() && step % cfg.snapshot_every == 0) snapshot(step);
        Rng rng(derive_seed(cfg.seed, 2 * step + 1));
        std::vector<MetaTask> batch;
        for (std::size_t b = 0; b < cfg.meta_batch; ++b)
            batch.push_back(sample_train_task(split, cfg.k, rng, cfg.eval_size));
        meta_outer_step(model, theta, opt, data, batch, cfg, derive_seed(cfg.seed, 2 * step + 2));
    }
    if (!probe.empty()) snapshot(cfg.max_steps);
    result.checkpoint = detail::make_checkpoint(data, model, std::move(theta), cfg, "meta", cfg.max_steps);
    return result;
}

/// Non-meta ablation: supervised AdamW training on minibatches pooled from all past periods,
/// with the same step budget and per-step post count as meta-training.
inline TrainResult train_scratch_baseline(const Dataset& data, const TimeSplit& split, const ModelConfig& model,
                                          const TrainConfig& cfg, const SnapshotObserver& observer = {}) {
    cfg.validate();
    ParamSet theta = init_params(model, derive_seed(cfg.seed, 0x1D1DULL));
    auto opt = OptimizerState::adaptive(cfg.beta, cfg.weight_decay);
    const auto pool = split.past_pool();
    const std::size_t batch = std::min(pool.size(), cfg.meta_batch * (cfg.k + cfg.eval_size));
    if (cfg.max_steps > 0 && batch == 0) throw DataError("no labeled past-period posts to train on");
    TrainResult result;

    std::vector<MetaTask> probe;
    if (cfg.snapshot_every > 0 && cfg.max_steps > 0) probe = detail::snapshot_tasks(split, cfg);
    auto snapshot = [&](std::size_t step) {
        Snapshot s{step, detail::snapshot_loss(model, theta, data, probe, cfg)};
        result.snapshots.push_back(s);
        if (observer) observer(s);
    };

    for (std::size_t step = 0; step < cfg.max_steps; ++step) {
        if (!probe.empty() && step % cfg.snapshot_every == 0) snapshot(step);
        Rng rng(derive_seed(cfg.seed, 2 * step + 1));
        PostRefs posts;
        for (std::size_t i : rng.sample(pool, batch)) posts.push_back(&data.posts[i]);
        Rng drop(derive_seed(cfg.seed, 2 * step + 2));
        const Mode mode = model.dropout > 0.0 ? Mode::train : Mode::eval;
        optimizer_step(opt, theta, task_gradient(model, theta, posts, mode, &drop));
    }
    if (!probe.empty()) snapshot(cfg.max_steps);
    result.checkpoint = detail::make_checkpoint(data, model, std::move(theta), cfg, "scratch", cfg.max_steps);
    return result;
}

// ---------------------------------------------------------------------------
// Meta-knowledge inheritance
// ---------------------------------------------------------------------------

/// Per query post, an n x 5 matrix of teacher probabilities.
using SoftLabelGrid = std::vector<Tensor>;

inline Tensor softmax_rows(const Tensor& logits, double temperature) {
    Tensor out = logits;
    for (std::size_t i = 0; i < out.rows(); ++i) {
        auto row = out.row(i);
        double m = -std::numeric_limits<double>::infinity();
        for (double& v : row) {
            v /= temperature;
            m = std::max(m, v);
        }
        double s = 0.0;
        for (double& v : row) {
            v = std::exp(v - m);
            s += v;
        }
        for (double& v : row) v /= s;
    }
    return out;
}

/// Teacher distributions from emission logits scaled by 1/t. For the linear emission map,
/// scaling the representation and scaling the logits differ only in the bias term, and the
/// logit form is the one used here.
inline SoftLabelGrid soft_labels(const ModelConfig& model, const ParamSet& teacher, const std::vector<const Post*>& query,
                                 double temperature) {
    if (!(temperature > 0.0)) throw UsageError("temperature must be positive");
    SoftLabelGrid grid;
    grid.reserve(query.size());
    for (const Post* p : query) grid.push_back(softmax_rows(emission_scores(model, teacher, *p), temperature));
    return grid;
}

/// t^2 * sum_i sum_c P(i,c) log(P(i,c) / Q(i,c)),  Q = softmax(logits / t).
/// d/d logits = t * (Q - P).
inline Var distill_kl(Var logits, const Tensor& teacher, double temperature) {
    const Tensor& Z = logits.value();
    if (Z.shape() != teacher.shape())
        throw UsageError("distill_kl: logits " + shape_str(Z.shape()) + " vs teacher " + shape_str(teacher.shape()));
    const Tensor q = softmax_rows(Z, temperature);
    double kl = 0.0;
    for (std::size_t i = 0; i < Z.size(); ++i) {
        const double p = teacher[i];
        if (p > 0.0) kl += p * (std::log(p) - std::log(q[i]));
    }
    const double t = temperature;
    return logits.graph->record("distill_kl", {logits}, Tensor::scalar(t * t * kl),
                                [teacher, q, t](Graph& g, std::size_t self) {
        const double G = g.grad(self)[0];
        if (Tensor* d = g.grad_target(g.input(self, 0)))
            for (std::size_t i = 0; i < q.size(); ++i) (*d)[i] += G * t * (q[i] - teacher[i]);
    });
}

/// Knowledge-inheritance loss of the student on the query inputs, as a graph node.
inline Var ki_loss(Graph& g, const ModelConfig& model, const std::vector<const Post*>& query,
                   const SoftLabelGrid& teacher, double temperature, Mode mode = Mode::eval, Rng* rng = nullptr,
                   KiReduction reduction = KiReduction::sum) {
    if (teacher.size() != query.size())
        throw UsageError("soft-label grid covers " + std::to_string(teacher.size()) + " posts, query has " +
                         std::to_string(query.size()));
    if (query.empty()) throw UsageError("knowledge-inheritance loss over an empty query set");
    std::vector<Var> terms;
    for (std::size_t j = 0; j < query.size(); ++j)
        terms.push_back(distill_kl(emissions(g, model, *query[j], mode, rng), teacher[j], temperature));
    switch (reduction) {
    case KiReduction::sum: return add_scalars(terms);
    case KiReduction::post_mean: return mean(terms);
    case KiReduction::token_mean: {
        std::size_t tokens = 0;
        for (const Post* p : query) tokens += p->size();
        return weighted_sum(terms, std::vector<double>(terms.size(), 1.0 / static_cast<double>(tokens)));
    }
    }
    return add_scalars(terms);
}

inline double ki_loss(const SoftLabelGrid& teacher, const ModelConfig& model, const ParamSet& student,
                      const std::vector<const Post*>& query, double temperature) {
    Graph g(&student);
    return ki_loss(g, model, query, teacher, temperature).item();
}

/// (1 - lambda) * crf + lambda * ki
inline double total_loss(double crf, double ki, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw UsageError("lambda must lie in [0, 1]");
    return (1.0 - lambda) * crf + lambda * ki;
}

inline Var total_loss(Var crf, Var ki, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw UsageError("lambda must lie in [0, 1]");
    return weighted_sum({crf, ki}, {1.0 - lambda, lambda});
}

struct AdaptStep {
    std::size_t step = 0;
    double crf = 0.0;
    double ki = 0.0;
    double total = 0.0;
};

struct AdaptResult {
    ParamSet params;
    std::vector<AdaptStep> trace;
};

using AdaptObserver = std::function<void(std::size_t step, const ParamSet& params)>;

/// Inheritor-model: starts from the meta-model and takes `adapt_steps` plain-descent steps on
/// the blended objective. CRF term on S (gold labels), inheritance term on Q (teacher soft
/// labels only). Query labels are sealed for the whole adaptation.
inline AdaptResult adapt_with_inheritance(const ModelConfig& model, const ParamSet& meta, const Dataset& data,
                                          const MetaTask& task, const TrainConfig& cfg,
                                          const AdaptObserver& observer = {}) {
    cfg.validate();
    if (task.kind != TaskKind::test) throw UsageError("adaptation expects a test-kind task");
    TaskView view(data, task);
    view.seal_eval_labels();
    const PostRefs support = view.support();
    const std::vector<const Post*> query = view.eval_inputs();
    const SoftLabelGrid teacher = soft_labels(model, meta, query, cfg.temperature);

    AdaptResult out;
    out.params = meta;
    auto opt = OptimizerState::plain(cfg.alpha);
    const Mode mode = cfg.adapt_dropout && model.dropout > 0.0 ? Mode::train : Mode::eval;
    if (observer) observer(0, out.params);
    for (std::size_t s = 0; s < cfg.adapt_steps; ++s) {
        Rng rng_s(derive_seed(cfg.seed, 2 * s));
        Rng rng_q(derive_seed(cfg.seed, 2 * s + 1));
        Graph g(&out.params);
        Var crf = mean_nll(g, model, support, mode, &rng_s);
        Var ki = ki_loss(g, model, query, teacher, cfg.temperature, mode, &rng_q, cfg.ki_reduction);
        Var total = total_loss(crf, ki, cfg.lambda);
        const ParamSet grads = g.backward(total);
        out.trace.push_back({s, crf.item(), ki.item(), total.item()});
        optimizer_step(opt, out.params, grads);
        if (observer) observer(s + 1, out.params);
    }
    return out;
}

/// The "without inheritance" path: plain fine-tuning on S with the CRF loss only.
inline AdaptResult fine_tune(const ModelConfig& model, const ParamSet& init, const Dataset& data, const MetaTask& task,
                             const TrainConfig& cfg, const AdaptObserver& observer = {}) {
    cfg.validate();
    TaskView view(data, task);
    view.seal_eval_labels();
    const PostRefs support = view.support();
    AdaptResult out;
    out.params = init;
    auto opt = OptimizerState::plain(cfg.alpha);
    const Mode mode = cfg.adapt_dropout && model.dropout > 0.0 ? Mode::train : Mode::eval;
    if (observer) observer(0, out.params);
    for (std::size_t s = 0; s < cfg.adapt_steps; ++s) {
        Rng rng_s(derive_seed(cfg.seed, 2 * s));
        Graph g(&out.params);
        Var crf = mean_nll(g, model, support, mode, &rng_s);
        const ParamSet grads = g.backward(crf);
        out.trace.push_back({s, crf.item(), 0.0, crf.item()});
        optimizer_step(opt, out.params, grads);
        if (observer) observer(s + 1, out.params);
    }
    return out;
}

} // namespace mise
