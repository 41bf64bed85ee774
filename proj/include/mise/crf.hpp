#pragma once

// Linear-chain CRF over the five BIOES classes.
//
// score(y) = sum_i em(i, y_i) + sum_i T(y_i, y_{i+1})  [+ start(y_0) + end(y_{n-1})]
// All dynamic programs run in log space with max-shifted log-sum-exp.

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "mise/autodiff.hpp"
#include "mise/tagging.hpp"

namespace mise {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Optional learned boundary scores (off by default).
struct CrfBoundary {
    const Tensor* start = nullptr;
    const Tensor* end = nullptr;
};

namespace detail {

inline double log_sum_exp(const double* x, std::size_t n) {
    double m = kNegInf;
    for (std::size_t i = 0; i < n; ++i) m = std::max(m, x[i]);
    if (m == kNegInf) return kNegInf;
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::exp(x[i] - m);
    return m + std::log(s);
}

inline void check_crf_shapes(const Tensor& em, const Tensor& trans, const CrfBoundary& bd) {
    if (em.rank() != 2 || em.cols() != kNumTags)
        throw UsageError("emission scores must be n x 5, got " + shape_str(em.shape()));
    if (trans.rank() != 2 || trans.rows() != kNumTags || trans.cols() != kNumTags)
        throw UsageError("transition matrix must be 5 x 5, got " + shape_str(trans.shape()));
    if ((bd.start && bd.start->size() != kNumTags) || (bd.end && bd.end->size() != kNumTags))
        throw UsageError("boundary vectors must have 5 entries");
}

inline double boundary_at(const Tensor* v, std::size_t c) { return v ? (*v)[c] : 0.0; }

// Forward (alpha) and backward (beta) tables, n x 5 each, plus log Z.
struct Lattice {
    std::vector<std::array<double, kNumTags>> alpha;
    std::vector<std::array<double, kNumTags>> beta;
    double log_z = 0.0;
};

inline Lattice forward_backward(const Tensor& em, const Tensor& trans, const CrfBoundary& bd, bool need_beta) {
    const std::size_t n = em.rows();
    Lattice lat;
    lat.alpha.resize(n);
    std::array<double, kNumTags> buf{};
    for (std::size_t c = 0; c < kNumTags; ++c) lat.alpha[0][c] = em.at(0, c) + boundary_at(bd.start, c);
    for (std::size_t i = 1; i < n; ++i)
        for (std::size_t c = 0; c < kNumTags; ++c) {
            for (std::size_t a = 0; a < kNumTags; ++a) buf[a] = lat.alpha[i - 1][a] + trans.at(a, c);
            lat.alpha[i][c] = em.at(i, c) + log_sum_exp(buf.data(), kNumTags);
        }
    for (std::size_t c = 0; c < kNumTags; ++c) buf[c] = lat.alpha[n - 1][c] + boundary_at(bd.end, c);
    lat.log_z = log_sum_exp(buf.data(), kNumTags);
    if (!need_beta) return lat;

    lat.beta.resize(n);
    for (std::size_t c = 0; c < kNumTags; ++c) lat.beta[n - 1][c] = boundary_at(bd.end, c);
    for (std::size_t i = n - 1; i-- > 0;)
        for (std::size_t a = 0; a < kNumTags; ++a) {
            for (std::size_t c = 0; c < kNumTags; ++c) buf[c] = trans.at(a, c) + em.at(i + 1, c) + lat.beta[i + 1][c];
            lat.beta[i][a] = log_sum_exp(buf.data(), kNumTags);
        }
    return lat;
}

} // namespace detail

inline double path_score(const Tensor& em, const Tensor& trans, const TagSequence& tags, CrfBoundary bd = {}) {
    detail::check_crf_shapes(em, trans, bd);
    if (tags.size() != em.rows())
        throw UsageError("path_score: " + std::to_string(tags.size()) + " tags for " + std::to_string(em.rows()) +
                         " emission rows");
    double s = 0.0;
    for (std::size_t i = 0; i < tags.size(); ++i) {
        s += em.at(i, tag_index(tags[i]));
        if (i + 1 < tags.size()) s += trans.at(tag_index(tags[i]), tag_index(tags[i + 1]));
    }
    if (!tags.empty()) {
        s += detail::boundary_at(bd.start, tag_index(tags.front()));
        s += detail::boundary_at(bd.end, tag_index(tags.back()));
    }
    return s;
}

/// log of the sum over all 5^n tag sequences of exp(path_score), by the forward algorithm.
inline double log_partition(const Tensor& em, const Tensor& trans, CrfBoundary bd = {}) {
    detail::check_crf_shapes(em, trans, bd);
    return detail::forward_backward(em, trans, bd, false).log_z;
}

/// -log p(gold | emissions) = log Z - score(gold).
inline double nll(const Tensor& em, const Tensor& trans, const TagSequence& gold, CrfBoundary bd = {}) {
    return log_partition(em, trans, bd) - path_score(em, trans, gold, bd);
}

/// Per-position marginals p(y_i = c), n x 5. Diagnostic and gradient helper.
inline Tensor marginals(const Tensor& em, const Tensor& trans, CrfBoundary bd = {}) {
    detail::check_crf_shapes(em, trans, bd);
    const auto lat = detail::forward_backward(em, trans, bd, true);
    Tensor out(Shape{em.rows(), kNumTags});
    for (std::size_t i = 0; i < em.rows(); ++i)
        for (std::size_t c = 0; c < kNumTags; ++c)
            out.at(i, c) = std::exp(lat.alpha[i][c] + lat.beta[i][c] - lat.log_z);
    return out;
}

struct ViterbiResult {
    TagSequence tags;
    double score = 0.0;
};

/// Transition matrix with forbidden BIOES edges set to -inf.
inline Tensor constrained_transitions(const Tensor& trans) {
    Tensor out = trans;
    for (std::size_t a = 0; a < kNumTags; ++a)
        for (std::size_t b = 0; b < kNumTags; ++b)
            if (!transition_allowed(tag_from_index(a), tag_from_index(b))) out.at(a, b) = kNegInf;
    return out;
}

/// Highest-scoring sequence. Ties resolve to the lowest class index. With `constrain`,
/// the BIOES grammar (including start/end boundaries) is enforced as a hard mask.
inline ViterbiResult viterbi(const Tensor& em, const Tensor& trans, bool constrain = false, CrfBoundary bd = {}) {
    detail::check_crf_shapes(em, trans, bd);
    const std::size_t n = em.rows();
    const Tensor T = constrain ? constrained_transitions(trans) : trans;
    auto start_ok = [&](std::size_t c) { return !constrain || transition_allowed(std::nullopt, tag_from_index(c)); };
    auto end_ok = [&](std::size_t c) { return !constrain || transition_allowed(tag_from_index(c), std::nullopt); };

    std::vector<std::array<double, kNumTags>> score(n);
    std::vector<std::array<std::uint8_t, kNumTags>> back(n);
    for (std::size_t c = 0; c < kNumTags; ++c)
        score[0][c] = start_ok(c) ? em.at(0, c) + detail::boundary_at(bd.start, c) : kNegInf;
    for (std::size_t i = 1; i < n; ++i)
        for (std::size_t c = 0; c < kNumTags; ++c) {
            double best = kNegInf;
            std::uint8_t arg = 0;
            for (std::size_t a = 0; a < kNumTags; ++a) {
                const double s = score[i - 1][a] + T.at(a, c);
                if (s > best) {
                    best = s;
                    arg = static_cast<std::uint8_t>(a);
                }
            }
            score[i][c] = best + em.at(i, c);
            back[i][c] = arg;
        }

    double best = kNegInf;
    std::size_t last = 0;
    for (std::size_t c = 0; c < kNumTags; ++c) {
        if (!end_ok(c)) continue;
        const double s = score[n - 1][c] + detail::boundary_at(bd.end, c);
        if (s > best) {
            best = s;
            last = c;
        }
    }

    ViterbiResult out;
    out.tags.resize(n);
    out.tags[n - 1] = tag_from_index(last);
    for (std::size_t i = n - 1; i > 0; --i) {
        last = back[i][last];
        out.tags[i - 1] = tag_from_index(last);
    }
    out.score = best;
    return out;
}

/// Differentiable CRF negative log-likelihood. Gradients come from forward-backward marginals:
/// d/d em(i,c) = p(y_i=c) - [gold_i=c],  d/d T(a,b) = E[#(a->b)] - #gold(a->b).
inline Var crf_nll(Var em, Var trans, const TagSequence& gold, std::optional<Var> start = std::nullopt,
                   std::optional<Var> end = std::nullopt) {
    CrfBoundary bd{start ? &start->value() : nullptr, end ? &end->value() : nullptr};
    const Tensor& E = em.value();
    detail::check_crf_shapes(E, trans.value(), bd);
    if (gold.size() != E.rows())
        throw UsageError("crf_nll: " + std::to_string(gold.size()) + " gold tags for " + std::to_string(E.rows()) +
                         " tokens");
    const double value = log_partition(E, trans.value(), bd) - path_score(E, trans.value(), gold, bd);

    std::vector<Var> inputs{em, trans};
    if (start) inputs.push_back(*start);
    if (end) inputs.push_back(*end);
    const bool has_start = start.has_value();
    const bool has_end = end.has_value();

    return em.graph->record("crf_nll", inputs, Tensor::scalar(value),
                            [gold, has_start, has_end](Graph& g, std::size_t self) {
        const double G = g.grad(self)[0];
        const Tensor& E = g.value(g.input(self, 0));
        const Tensor& T = g.value(g.input(self, 1));
        std::size_t next = 2;
        const std::size_t start_id = has_start ? g.input(self, next++) : 0;
        const std::size_t end_id = has_end ? g.input(self, next++) : 0;
        CrfBoundary bd{has_start ? &g.value(start_id) : nullptr, has_end ? &g.value(end_id) : nullptr};
        const std::size_t n = E.rows();
        const auto lat = detail::forward_backward(E, T, bd, true);

        if (Tensor* dE = g.grad_target(g.input(self, 0)))
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t c = 0; c < kNumTags; ++c) {
                    const double p = std::exp(lat.alpha[i][c] + lat.beta[i][c] - lat.log_z);
                    dE->at(i, c) += G * (p - (tag_index(gold[i]) == c ? 1.0 : 0.0));
                }
        if (Tensor* dT = g.grad_target(g.input(self, 1))) {
            for (std::size_t i = 0; i + 1 < n; ++i) {
                for (std::size_t a = 0; a < kNumTags; ++a)
                    for (std::size_t b = 0; b < kNumTags; ++b) {
                        const double p = std::exp(lat.alpha[i][a] + T.at(a, b) + E.at(i + 1, b) + lat.beta[i + 1][b] -
                                                  lat.log_z);
                        dT->at(a, b) += G * p;
                    }
                dT->at(tag_index(gold[i]), tag_index(gold[i + 1])) -= G;
            }
        }
        if (has_start)
            if (Tensor* dS = g.grad_target(start_id))
                for (std::size_t c = 0; c < kNumTags; ++c) {
                    const double p = std::exp(lat.alpha[0][c] + lat.beta[0][c] - lat.log_z);
                    (*dS)[c] += G * (p - (tag_index(gold[0]) == c ? 1.0 : 0.0));
                }
        if (has_end)
            if (Tensor* dN = g.grad_target(end_id))
                for (std::size_t c = 0; c < kNumTags; ++c) {
                    const double p = std::exp(lat.alpha[n - 1][c] + lat.beta[n - 1][c] - lat.log_z);
                    (*dN)[c] += G * (p - (tag_index(gold[n - 1]) == c ? 1.0 : 0.0));
                }
    });
}

} // namespace mise
