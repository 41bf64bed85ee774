#pragma once

// Corpus ingestion and serialization.
//
// JSONL: one object per line, {"tokens": [...], "tags": [...], "period": "2019H1"};
//        "tags" may be absent for unlabeled input.
// CoNLL: "# period: <label>" before each post, then one "token<TAB>tag" (or bare
//        "token" when unlabeled) per line, and a blank line after each post.

#include <array>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "mise/tagging.hpp"

namespace mise {

struct CorpusPost {
    std::vector<std::string> tokens;
    std::optional<TagSequence> tags;
    std::string period;
    friend bool operator==(const CorpusPost&, const CorpusPost&) = default;
};

struct Corpus {
    std::vector<CorpusPost> posts;
    friend bool operator==(const Corpus&, const Corpus&) = default;
};

enum class CorpusFormat { jsonl, conll };

inline CorpusFormat parse_corpus_format(const std::string& s) {
    if (s == "jsonl") return CorpusFormat::jsonl;
    if (s == "conll") return CorpusFormat::conll;
    throw UsageError("unknown corpus format '" + s + "' (expected jsonl or conll)");
}

/// JSONL field names, for datasets whose records use different keys.
struct FieldMap {
    std::string tokens = "tokens";
    std::string tags = "tags";
    std::string period = "period";
};

struct CorpusSummary {
    std::size_t posts = 0;
    std::size_t labeled_posts = 0;
    std::size_t spans = 0;
    std::map<std::string, std::size_t> posts_per_period;
    std::array<std::size_t, kNumTags> tag_histogram{};
};

inline CorpusSummary summarize(const Corpus& corpus) {
    CorpusSummary s;
    s.posts = corpus.posts.size();
    for (const auto& p : corpus.posts) {
        ++s.posts_per_period[p.period];
        if (!p.tags) continue;
        ++s.labeled_posts;
        s.spans += decode_tags(*p.tags).spans.size();
        for (Tag t : *p.tags) ++s.tag_histogram[tag_index(t)];
    }
    return s;
}

struct LoadedCorpus {
    Corpus corpus;
    CorpusSummary summary;
};

namespace detail {

inline TagSequence parse_tag_list(const std::vector<std::string>& names, std::size_t line_no) {
    TagSequence tags;
    tags.reserve(names.size());
    for (const auto& n : names) {
        auto t = parse_tag(n);
        if (!t) throw DataError("line " + std::to_string(line_no) + ": unknown tag '" + n + "'");
        tags.push_back(*t);
    }
    return tags;
}

inline Corpus parse_jsonl(std::istream& in, const FieldMap& fields) {
    Corpus corpus;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception&) {
            throw DataError("line " + std::to_string(line_no) + ": malformed JSON");
        }
        CorpusPost post;
        try {
            post.tokens = rec.at(fields.tokens).get<std::vector<std::string>>();
            post.period = rec.at(fields.period).get<std::string>();
            if (rec.contains(fields.tags) && !rec.at(fields.tags).is_null())
                post.tags = parse_tag_list(rec.at(fields.tags).get<std::vector<std::string>>(), line_no);
        } catch (const nlohmann::json::exception&) {
            throw DataError("line " + std::to_string(line_no) + ": record lacks '" + fields.tokens + "'/'" +
                            fields.period + "' or has wrongly typed fields");
        }
        if (post.tokens.empty()) throw DataError("line " + std::to_string(line_no) + ": empty post");
        if (post.tags && post.tags->size() != post.tokens.size())
            throw DataError("line " + std::to_string(line_no) + ": " + std::to_string(post.tokens.size()) +
                            " tokens but " + std::to_string(post.tags->size()) + " tags");
        corpus.posts.push_back(std::move(post));
    }
    return corpus;
}

inline Corpus parse_conll(std::istream& in) {
    Corpus corpus;
    std::string line;
    std::size_t line_no = 0;
    std::optional<std::string> period;
    CorpusPost current;
    std::optional<bool> labeled;
    std::size_t post_line = 0;

    auto flush = [&] {
        if (current.tokens.empty()) return;
        if (!period) throw DataError("line " + std::to_string(post_line) + ": post without '# period:' header");
        current.period = *period;
        corpus.posts.push_back(std::move(current));
        current = CorpusPost{};
        labeled.reset();
        period.reset();
    };

    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) {
            flush();
            continue;
        }
        if (line.rfind("#", 0) == 0) {
            const std::string key = "# period:";
            if (line.rfind(key, 0) == 0) {
                if (!current.tokens.empty())
                    throw DataError("line " + std::to_string(line_no) + ": period header inside a post");
                std::string label = line.substr(key.size());
                label.erase(0, label.find_first_not_of(' '));
                period = label;
            }
            continue;
        }
        if (current.tokens.empty()) post_line = line_no;
        const auto tab = line.find('\t');
        const bool has_tag = tab != std::string::npos;
        if (labeled && *labeled != has_tag)
            throw DataError("line " + std::to_string(line_no) + ": post mixes tagged and untagged tokens");
        labeled = has_tag;
        if (!has_tag) {
            current.tokens.push_back(line);
            continue;
        }
        const std::string tok = line.substr(0, tab);
        const std::string tag = line.substr(tab + 1);
        if (tok.empty() || tag.find('\t') != std::string::npos)
            throw DataError("line " + std::to_string(line_no) + ": expected 'token<TAB>tag'");
        auto t = parse_tag(tag);
        if (!t) throw DataError("line " + std::to_string(line_no) + ": unknown tag '" + tag + "'");
        current.tokens.push_back(tok);
        if (!current.tags) current.tags = TagSequence{};
        current.tags->push_back(*t);
    }
    flush();
    return corpus;
}

} // namespace detail

inline LoadedCorpus parse_corpus(std::istream& in, CorpusFormat format, const FieldMap& fields = {}) {
    LoadedCorpus out;
    out.corpus = format == CorpusFormat::jsonl ? detail::parse_jsonl(in, fields) : detail::parse_conll(in);
    out.summary = summarize(out.corpus);
    return out;
}

inline LoadedCorpus load_corpus(const std::string& path, CorpusFormat format, const FieldMap& fields = {}) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open corpus " + path);
    return parse_corpus(in, format, fields);
}

inline std::string format_corpus(const Corpus& corpus, CorpusFormat format) {
    std::ostringstream out;
    for (const auto& p : corpus.posts) {
        if (p.tags && p.tags->size() != p.tokens.size()) throw DataError("post with misaligned tags");
        if (format == CorpusFormat::jsonl) {
            nlohmann::ordered_json rec;
            rec["tokens"] = p.tokens;
            if (p.tags) {
                std::vector<std::string> names;
                for (Tag t : *p.tags) names.emplace_back(tag_name(t));
                rec["tags"] = names;
            }
            rec["period"] = p.period;
            out << rec.dump() << '\n';
        } else {
            out << "# period: " << p.period << '\n';
            for (std::size_t i = 0; i < p.tokens.size(); ++i) {
                out << p.tokens[i];
                if (p.tags) out << '\t' << tag_name((*p.tags)[i]);
                out << '\n';
            }
            out << '\n';
        }
    }
    return out.str();
}

inline void save_corpus(const std::string& path, const Corpus& corpus, CorpusFormat format) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open " + path + " for writing");
    out << format_corpus(corpus, format);
    if (!out) throw DataError("write failed: " + path);
}

} // namespace mise
