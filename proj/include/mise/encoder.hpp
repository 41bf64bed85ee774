#pragma once

// Per-token representations for the CRF head.
//
// The default encoder is token embeddings followed by one bidirectional Elman
// layer whose two directions are concatenated. Alternatively, representations
// exported from an external model can be loaded and used as constants.

#include <charconv>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "mise/autodiff.hpp"
#include "mise/optim.hpp"
#include "mise/rng.hpp"
#include "mise/tagging.hpp"

namespace mise {

class Vocabulary {
public:
    static constexpr int kUnknown = 0;
    static constexpr int kPadding = 1;

    Vocabulary() {
        add("<unk>");
        add("<pad>");
    }

    int add(const std::string& token) {
        auto [it, inserted] = index_.emplace(token, static_cast<int>(tokens_.size()));
        if (inserted) tokens_.push_back(token);
        return it->second;
    }

    int id(const std::string& token) const {
        auto it = index_.find(token);
        return it == index_.end() ? kUnknown : it->second;
    }

    const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
    std::size_t size() const noexcept { return tokens_.size(); }
    const std::vector<std::string>& tokens() const noexcept { return tokens_; }

    std::vector<int> ids(const std::vector<std::string>& toks) const {
        std::vector<int> out;
        out.reserve(toks.size());
        for (const auto& t : toks) out.push_back(id(t));
        return out;
    }

    static Vocabulary from_tokens(const std::vector<std::string>& tokens) {
        Vocabulary v;
        if (tokens.size() < 2 || tokens[0] != "<unk>" || tokens[1] != "<pad>")
            throw DataError("vocabulary must start with <unk>, <pad>");
        for (std::size_t i = 2; i < tokens.size(); ++i) v.add(tokens[i]);
        if (v.size() != tokens.size()) throw DataError("vocabulary contains duplicate tokens");
        return v;
    }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

enum class Mode { train, eval };

struct ModelConfig {
    std::size_t vocab_size = 2;
    std::size_t embed_dim = 64;
    std::size_t hidden_dim = 64;
    std::size_t input_dim = 0; // > 0: precomputed representations of this width replace the encoder
    double dropout = 0.10;
    bool boundary_terms = false;
    double init_scale = 0.1;

    bool precomputed() const noexcept { return input_dim > 0; }
    std::size_t rep_dim() const noexcept { return precomputed() ? input_dim : 2 * hidden_dim; }
};

/// A tokenized post: vocabulary ids, and optionally externally computed representations.
struct Post {
    std::vector<int> ids;
    std::shared_ptr<const Tensor> reps;

    std::size_t size() const noexcept { return reps ? reps->rows() : ids.size(); }
};

/// Uniform(-scale, scale) initialization of every encoder and CRF parameter.
inline ParamSet init_params(const ModelConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    ParamSet p;
    auto uniform = [&](Shape shape) {
        Tensor t(std::move(shape));
        for (double& v : t.values()) v = rng.uniform(-cfg.init_scale, cfg.init_scale);
        return t;
    };
    if (!cfg.precomputed()) {
        if (cfg.vocab_size < 1) throw UsageError("vocabulary must not be empty");
        p.add("encoder.embed", uniform({cfg.vocab_size, cfg.embed_dim}));
        for (const char* dir : {"fwd", "bwd"}) {
            const std::string base = std::string("encoder.") + dir;
            p.add(base + ".wx", uniform({cfg.hidden_dim, cfg.embed_dim}));
            p.add(base + ".wh", uniform({cfg.hidden_dim, cfg.hidden_dim}));
            p.add(base + ".b", uniform({cfg.hidden_dim}));
        }
    }
    p.add("crf.emit.w", uniform({kNumTags, cfg.rep_dim()}));
    p.add("crf.emit.b", uniform({kNumTags}));
    p.add("crf.trans", uniform({kNumTags, kNumTags}));
    if (cfg.boundary_terms) {
        p.add("crf.start", uniform({kNumTags}));
        p.add("crf.end", uniform({kNumTags}));
    }
    return p;
}

/// H = {h_1..h_n} as a graph node (n x rep_dim). Train mode applies dropout to the input
/// layer using `dropout_rng`; eval mode is deterministic.
inline Var encode(Graph& g, const ModelConfig& cfg, const Post& post, Mode mode, Rng* dropout_rng) {
    if (post.size() == 0) throw DataError("cannot encode an empty post");
    Var input = [&] {
        if (post.reps) {
            if (post.reps->cols() != cfg.input_dim)
                throw DataError("representation width " + std::to_string(post.reps->cols()) + " != model input " +
                                std::to_string(cfg.input_dim));
            return g.constant(*post.reps, "precomputed");
        }
        if (cfg.precomputed()) throw DataError("model expects precomputed representations");
        for (int id : post.ids)
            if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size)
                throw DataError("token id " + std::to_string(id) + " outside vocabulary of " +
                                std::to_string(cfg.vocab_size));
        return gather_rows(g.param("encoder.embed"), post.ids);
    }();
    if (mode == Mode::train && cfg.dropout > 0.0) {
        if (!dropout_rng) throw UsageError("train-mode encoding needs a dropout generator");
        input = mul(input, g.constant(dropout_mask(input.value().shape(), cfg.dropout, *dropout_rng), "dropout"));
    }
    if (post.reps) return input;
    Var fwd = rnn_scan(input, g.param("encoder.fwd.wx"), g.param("encoder.fwd.wh"), g.param("encoder.fwd.b"), false);
    Var bwd = rnn_scan(input, g.param("encoder.bwd.wx"), g.param("encoder.bwd.wh"), g.param("encoder.bwd.b"), true);
    return concat_cols(fwd, bwd);
}

/// Emission logits f_c(h_i) = W h_i + b, n x 5.
inline Var emissions(Graph& g, const ModelConfig& cfg, const Post& post, Mode mode, Rng* dropout_rng) {
    Var h = encode(g, cfg, post, mode, dropout_rng);
    return add_bias(matmul_nt(h, g.param("crf.emit.w")), g.param("crf.emit.b"));
}

/// Evaluation-mode representations as a plain tensor.
inline Tensor encode_post(const ModelConfig& cfg, const ParamSet& params, const Post& post) {
    Graph g(&params);
    return encode(g, cfg, post, Mode::eval, nullptr).value();
}

inline Tensor emission_scores(const ModelConfig& cfg, const ParamSet& params, const Post& post) {
    Graph g(&params);
    return emissions(g, cfg, post, Mode::eval, nullptr).value();
}

// ---------------------------------------------------------------------------
// Precomputed-representation files
//
//   dim=<d>
//   <post-index> <token-index> <v_1> ... <v_d>
// ---------------------------------------------------------------------------

namespace detail {

inline std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline std::size_t parse_index(std::string_view s, std::size_t line_no) {
    std::size_t v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw DataError("line " + std::to_string(line_no) + ": invalid index '" + std::string(s) + "'");
    return v;
}

inline double parse_double(std::string_view s, std::size_t line_no) {
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw DataError("line " + std::to_string(line_no) + ": invalid number '" + std::string(s) + "'");
    return v;
}

} // namespace detail

inline void export_precomputed(const std::string& path, const std::vector<Tensor>& reps) {
    if (reps.empty()) throw DataError("no representations to export");
    const std::size_t d = reps.front().cols();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open " + path + " for writing");
    out << "dim=" << d << '\n';
    for (std::size_t p = 0; p < reps.size(); ++p) {
        if (reps[p].cols() != d) throw DataError("post " + std::to_string(p) + " has inconsistent width");
        for (std::size_t t = 0; t < reps[p].rows(); ++t) {
            out << p << ' ' << t;
            for (double v : reps[p].row(t)) out << ' ' << detail::format_double(v);
            out << '\n';
        }
    }
    if (!out) throw DataError("write failed: " + path);
}

/// Loads representations aligned to posts of the given lengths.
inline std::vector<Tensor> load_precomputed(const std::string& path, const std::vector<std::size_t>& post_lengths) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line.rfind("dim=", 0) != 0) throw DataError(path + ": missing 'dim=<d>' header");
    std::size_t d = 0;
    {
        const std::string_view s(line.data() + 4, line.size() - 4);
        auto res = std::from_chars(s.data(), s.data() + s.size(), d);
        if (res.ec != std::errc() || d == 0) throw DataError(path + ": invalid dimension in header");
    }

    std::vector<Tensor> out;
    std::vector<std::vector<bool>> seen;
    for (std::size_t len : post_lengths) {
        out.emplace_back(Shape{len, d});
        seen.emplace_back(len, false);
    }

    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream fields(line);
        std::string tok;
        std::vector<std::string> parts;
        while (fields >> tok) parts.push_back(tok);
        if (parts.size() != d + 2)
            throw DataError("line " + std::to_string(line_no) + ": expected " + std::to_string(d + 2) + " fields, got " +
                            std::to_string(parts.size()));
        const auto post = detail::parse_index(parts[0], line_no);
        const auto token = detail::parse_index(parts[1], line_no);
        if (post >= out.size())
            throw DataError("post index " + std::to_string(post) + " exceeds corpus size " + std::to_string(out.size()));
        if (token >= post_lengths[post])
            throw DataError("post " + std::to_string(post) + ": token index " + std::to_string(token) +
                            " exceeds post length " + std::to_string(post_lengths[post]));
        if (seen[post][token])
            throw DataError("post " + std::to_string(post) + ": duplicate token " + std::to_string(token));
        seen[post][token] = true;
        auto row = out[post].row(token);
        for (std::size_t j = 0; j < d; ++j) row[j] = detail::parse_double(parts[j + 2], line_no);
    }
    for (std::size_t p = 0; p < seen.size(); ++p)
        for (std::size_t t = 0; t < seen[p].size(); ++t)
            if (!seen[p][t])
                throw DataError("post " + std::to_string(p) + ": missing representation rows (length mismatch at token " +
                                std::to_string(t) + ")");
    for (std::size_t p = 0; p < out.size(); ++p)
        if (!out[p].all_finite()) throw DataError("post " + std::to_string(p) + ": non-finite representation");
    return out;
}

} // namespace mise
