#pragma once

// Synthetic continual-stressor corpus.
//
// Posts are filler tokens with 0-2 embedded stressor spans. Each stressor class
// has two fixed surface forms of 1-3 tokens, drawn from a three-word pool the
// class picks out of a shared stressor lexicon, so classes overlap in vocabulary
// the way real stressor phrases do. Lexicon words also appear outside spans as
// distractors. Class frequencies over the past periods follow a Zipf law; the
// latest period draws a configurable share of its spans from classes that never
// occur earlier.
//
// Context cues: an opener token from a shared pool usually precedes a span and a
// closer token usually follows it (class-independent, so they transfer to novel
// classes); a class-specific neighbor token sometimes precedes the opener.

#include <cmath>
#include <string>
#include <vector>

#include "mise/corpus.hpp"
#include "mise/rng.hpp"

namespace mise {

struct SynthConfig {
    std::size_t vocab_size = 600;
    std::size_t classes = 50;       // classes seen in past periods
    std::size_t novel_classes = 4;  // classes reserved for the latest period
    double zipf_exponent = 1.2;
    std::size_t periods = 8;        // the last one is the latest period
    double novel_fraction = 0.3;
    std::size_t posts_per_period = 120;
    std::size_t min_length = 8;
    std::size_t max_length = 20;
    double opener_prob = 0.6;
    double closer_prob = 0.4;
    double neighbor_prob = 0.5;
    std::size_t lexicon_size = 40;  // shared stressor words
    std::size_t novel_lexicon_size = 12; // words only novel classes use; 0 = novel classes share the lexicon
    double distractor_prob = 0.3;   // chance a filler slot holds a stressor word instead
    int start_year = 2018;
    int start_half = 2;
    std::uint64_t seed = 0;
};

struct PlantedSpan {
    Span span;
    std::size_t class_id = 0;
    bool novel = false;
};

struct SynthCorpus {
    Corpus corpus;
    std::vector<std::vector<PlantedSpan>> planted; // per post
};

inline constexpr std::size_t kOpenerTokens = 6;
inline constexpr std::size_t kCloserTokens = 4;
inline constexpr std::size_t kWordsPerClass = 3;

namespace detail {
inline std::vector<std::size_t> iota(std::size_t n) {
    std::vector<std::size_t> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = i;
    return v;
}
} // namespace detail

inline std::string period_label(int year, int half) { return std::to_string(year) + "H" + std::to_string(half); }

inline void validate(const SynthConfig& cfg) {
    if (!(cfg.novel_fraction >= 0.0 && cfg.novel_fraction <= 1.0)) throw UsageError("novel fraction must lie in [0, 1]");
    if (!(cfg.zipf_exponent > 0.0)) throw UsageError("Zipf exponent must be positive");
    if (cfg.classes == 0) throw UsageError("need at least one past stressor class");
    if (cfg.novel_fraction > 0.0 && cfg.novel_classes == 0)
        throw UsageError("novel fraction > 0 requires novel classes");
    if (cfg.periods < 2) throw UsageError("need at least two periods (past + latest)");
    if (cfg.posts_per_period == 0) throw UsageError("posts per period must be positive");
    if (cfg.min_length == 0 || cfg.min_length > cfg.max_length) throw UsageError("invalid post length range");
    if (cfg.start_half != 1 && cfg.start_half != 2) throw UsageError("start half must be 1 or 2");
    if (cfg.lexicon_size < kWordsPerClass) throw UsageError("stressor lexicon needs at least 3 words");
    if (!(cfg.distractor_prob >= 0.0 && cfg.distractor_prob < 1.0)) throw UsageError("distractor probability must lie in [0, 1)");
    for (double p : {cfg.opener_prob, cfg.closer_prob, cfg.neighbor_prob})
        if (!(p >= 0.0 && p <= 1.0)) throw UsageError("cue probabilities must lie in [0, 1]");
    if (cfg.novel_lexicon_size > 0 && cfg.novel_lexicon_size < kWordsPerClass)
        throw UsageError("novel lexicon needs 0 or at least 3 words");
    const std::size_t reserved =
        kOpenerTokens + kCloserTokens + cfg.lexicon_size + cfg.novel_lexicon_size + cfg.classes + cfg.novel_classes;
    if (cfg.vocab_size < reserved + 8)
        throw UsageError("vocabulary of " + std::to_string(cfg.vocab_size) + " too small for " +
                         std::to_string(cfg.classes + cfg.novel_classes) + " classes (need at least " +
                         std::to_string(reserved + 8) + ")");
}

inline SynthCorpus generate_corpus(const SynthConfig& cfg) {
    validate(cfg);
    Rng rng(cfg.seed);
    const std::size_t total_classes = cfg.classes + cfg.novel_classes;
    const std::size_t fillers =
        cfg.vocab_size - kOpenerTokens - kCloserTokens - cfg.lexicon_size - cfg.novel_lexicon_size - total_classes;
    auto lexicon_word = [](std::size_t w) { return "s" + std::to_string(w); };
    auto novel_word = [](std::size_t w) { return "z" + std::to_string(w); };

    // Surface forms: two variants per class over the class's 3-word pool.
    struct ClassForms {
        std::vector<std::string> variants[2];
        std::string neighbor;
    };
    std::vector<ClassForms> forms(total_classes);
    for (std::size_t c = 0; c < total_classes; ++c) {
        const bool own_words = c >= cfg.classes && cfg.novel_lexicon_size > 0;
        std::vector<std::string> pool;
        for (std::size_t w : rng.sample(detail::iota(own_words ? cfg.novel_lexicon_size : cfg.lexicon_size), kWordsPerClass))
            pool.push_back(own_words ? novel_word(w) : lexicon_word(w));
        const double u = rng.uniform();
        const std::size_t len = u < 0.35 ? 1 : (u < 0.75 ? 2 : 3);
        for (auto& variant : forms[c].variants) {
            auto picked = rng.sample(pool, len);
            variant = picked;
        }
        forms[c].neighbor = "n" + std::to_string(c);
    }

    std::vector<double> zipf(cfg.classes);
    for (std::size_t r = 0; r < cfg.classes; ++r)
        zipf[r] = 1.0 / std::pow(static_cast<double>(r + 1), cfg.zipf_exponent);

    SynthCorpus out;
    int year = cfg.start_year;
    int half = cfg.start_half;
    for (std::size_t p = 0; p < cfg.periods; ++p) {
        const bool latest = p + 1 == cfg.periods;
        const std::string label = period_label(year, half);
        Rng prng(derive_seed(cfg.seed, p));
        for (std::size_t k = 0; k < cfg.posts_per_period; ++k) {
            const double u = prng.uniform();
            const std::size_t n_spans = u < 0.2 ? 0 : (u < 0.75 ? 1 : 2);

            struct Chunk {
                std::vector<std::string> tokens;
                std::size_t span_offset = 0, span_len = 0;
                std::size_t class_id = 0;
                bool novel = false;
            };
            std::vector<Chunk> chunks;
            std::size_t used = 0;
            for (std::size_t s = 0; s < n_spans; ++s) {
                Chunk ch;
                ch.novel = latest && prng.bernoulli(cfg.novel_fraction);
                ch.class_id = ch.novel ? cfg.classes + prng.below(cfg.novel_classes) : prng.categorical(zipf);
                const auto& form = forms[ch.class_id].variants[prng.below(2)];
                if (prng.bernoulli(cfg.neighbor_prob)) ch.tokens.push_back(forms[ch.class_id].neighbor);
                if (prng.bernoulli(cfg.opener_prob)) ch.tokens.push_back("cue" + std::to_string(prng.below(kOpenerTokens)));
                ch.span_offset = ch.tokens.size();
                ch.span_len = form.size();
                ch.tokens.insert(ch.tokens.end(), form.begin(), form.end());
                if (prng.bernoulli(cfg.closer_prob)) ch.tokens.push_back("end" + std::to_string(prng.below(kCloserTokens)));
                used += ch.tokens.size();
                chunks.push_back(std::move(ch));
            }

            const std::size_t target = cfg.min_length + prng.below(cfg.max_length - cfg.min_length + 1);
            const std::size_t n_fill = target > used ? target - used : 1;
            // Distribute fillers into the gaps around chunks (chunks.size() + 1 gaps).
            std::vector<std::size_t> gap(chunks.size() + 1, 0);
            for (std::size_t f = 0; f < n_fill; ++f) ++gap[prng.below(gap.size())];
            // Adjacent spans must be separated so they decode as two spans.
            for (std::size_t gi = 1; gi < chunks.size(); ++gi)
                if (gap[gi] == 0) gap[gi] = 1;

            CorpusPost post;
            post.period = label;
            std::vector<PlantedSpan> planted;
            auto emit_fillers = [&](std::size_t count) {
                for (std::size_t f = 0; f < count; ++f)
                    post.tokens.push_back(prng.bernoulli(cfg.distractor_prob) ? lexicon_word(prng.below(cfg.lexicon_size))
                                                                               : "w" + std::to_string(prng.below(fillers)));
            };
            for (std::size_t ci = 0; ci < chunks.size(); ++ci) {
                emit_fillers(gap[ci]);
                const std::size_t base = post.tokens.size();
                const Chunk& ch = chunks[ci];
                post.tokens.insert(post.tokens.end(), ch.tokens.begin(), ch.tokens.end());
                planted.push_back({{base + ch.span_offset, base + ch.span_offset + ch.span_len - 1}, ch.class_id, ch.novel});
            }
            emit_fillers(gap.back());

            SpanSet spans;
            for (const auto& ps : planted) spans.push_back(ps.span);
            post.tags = encode_spans(spans, post.tokens.size());
            out.corpus.posts.push_back(std::move(post));
            out.planted.push_back(std::move(planted));
        }
        if (half == 2) {
            ++year;
            half = 1;
        } else {
            half = 2;
        }
    }
    return out;
}

} // namespace mise
