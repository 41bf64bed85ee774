#pragma once

// Token-level micro precision / recall / F1 and the evaluation report.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "mise/error.hpp"
#include "mise/tagging.hpp"

namespace mise {

struct TokenCounts {
    std::size_t true_positive = 0;
    std::size_t predicted = 0; // pred != O
    std::size_t gold = 0;      // gold != O

    TokenCounts& operator+=(const TokenCounts& o) {
        true_positive += o.true_positive;
        predicted += o.predicted;
        gold += o.gold;
        return *this;
    }
    friend bool operator==(const TokenCounts&, const TokenCounts&) = default;
};

struct Prf {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    bool precision_undefined = false; // no predicted non-O tokens
    bool recall_undefined = false;    // no gold non-O tokens
    friend bool operator==(const Prf&, const Prf&) = default;
};

/// Exact-tag match on non-O tokens; with `binary`, any non-O vs non-O counts as a match.
inline TokenCounts token_counts(const TagSequence& pred, const TagSequence& gold, bool binary = false) {
    if (pred.size() != gold.size())
        throw UsageError("prediction has " + std::to_string(pred.size()) + " tags, gold has " +
                         std::to_string(gold.size()));
    TokenCounts c;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        const bool p = pred[i] != Tag::O, g = gold[i] != Tag::O;
        c.predicted += p;
        c.gold += g;
        if (g && p && (binary || pred[i] == gold[i])) ++c.true_positive;
    }
    return c;
}

inline Prf prf_from_counts(const TokenCounts& c) {
    Prf r;
    r.precision_undefined = c.predicted == 0;
    r.recall_undefined = c.gold == 0;
    r.precision = r.precision_undefined ? 0.0 : static_cast<double>(c.true_positive) / static_cast<double>(c.predicted);
    r.recall = r.recall_undefined ? 0.0 : static_cast<double>(c.true_positive) / static_cast<double>(c.gold);
    r.f1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
    return r;
}

/// Micro-averaged over all posts (counts pooled before dividing).
inline Prf token_prf(std::span<const TagSequence> pred, std::span<const TagSequence> gold, bool binary = false) {
    if (pred.size() != gold.size())
        throw UsageError(std::to_string(pred.size()) + " predicted posts vs " + std::to_string(gold.size()) + " gold");
    TokenCounts total;
    for (std::size_t i = 0; i < pred.size(); ++i) total += token_counts(pred[i], gold[i], binary);
    return prf_from_counts(total);
}

inline Prf token_prf(const TagSequence& pred, const TagSequence& gold, bool binary = false) {
    return prf_from_counts(token_counts(pred, gold, binary));
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

inline constexpr int kReportSchemaVersion = 1;

struct Stat {
    double mean = 0.0;
    double std = 0.0; // sample standard deviation (n - 1); 0 for a single value
    friend bool operator==(const Stat&, const Stat&) = default;
};

inline Stat mean_std(const std::vector<double>& xs) {
    Stat s;
    if (xs.empty()) return s;
    double sum = 0.0;
    for (double x : xs) sum += x;
    s.mean = sum / static_cast<double>(xs.size());
    if (xs.size() > 1) {
        double ss = 0.0;
        for (double x : xs) ss += (x - s.mean) * (x - s.mean);
        s.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    }
    return s;
}

struct EpisodeScore {
    std::uint64_t seed = 0;
    TokenCounts counts;
    Prf scores;
    friend bool operator==(const EpisodeScore&, const EpisodeScore&) = default;
};

/// One row of results: a method at one K (or one sweep cell), with its episodes.
struct EvalSection {
    std::string method;
    std::size_t k = 0;
    nlohmann::ordered_json settings = nlohmann::ordered_json::object(); // per-section overrides, e.g. lambda/t
    std::vector<EpisodeScore> episodes;
    Stat precision, recall, f1;
    std::size_t undefined_precision = 0;
    std::size_t undefined_recall = 0;

    void aggregate() {
        std::vector<double> p, r, f;
        undefined_precision = undefined_recall = 0;
        for (const auto& e : episodes) {
            p.push_back(e.scores.precision);
            r.push_back(e.scores.recall);
            f.push_back(e.scores.f1);
            undefined_precision += e.scores.precision_undefined;
            undefined_recall += e.scores.recall_undefined;
        }
        precision = mean_std(p);
        recall = mean_std(r);
        f1 = mean_std(f);
    }

    /// True when the stored aggregates equal a fresh recomputation from the episodes.
    bool consistent() const {
        EvalSection copy = *this;
        copy.aggregate();
        return copy.precision == precision && copy.recall == recall && copy.f1 == f1 &&
               copy.undefined_precision == undefined_precision && copy.undefined_recall == undefined_recall;
    }

    friend bool operator==(const EvalSection&, const EvalSection&) = default;
};

struct Report {
    int schema_version = kReportSchemaVersion;
    std::string command;
    nlohmann::ordered_json config = nlohmann::ordered_json::object();
    std::vector<EvalSection> sections;
    friend bool operator==(const Report&, const Report&) = default;
};

inline nlohmann::ordered_json to_json(const EvalSection& s) {
    nlohmann::ordered_json eps = nlohmann::ordered_json::array();
    for (const auto& e : s.episodes)
        eps.push_back({{"seed", e.seed},
                       {"true_positive", e.counts.true_positive},
                       {"predicted", e.counts.predicted},
                       {"gold", e.counts.gold},
                       {"precision", e.scores.precision},
                       {"recall", e.scores.recall},
                       {"f1", e.scores.f1},
                       {"precision_undefined", e.scores.precision_undefined},
                       {"recall_undefined", e.scores.recall_undefined}});
    auto stat = [](const Stat& st) { return nlohmann::ordered_json{{"mean", st.mean}, {"std", st.std}}; };
    return {{"method", s.method},
            {"k", s.k},
            {"settings", s.settings},
            {"episodes", eps},
            {"aggregate",
             {{"precision", stat(s.precision)},
              {"recall", stat(s.recall)},
              {"f1", stat(s.f1)},
              {"flags",
               {{"undefined_precision", s.undefined_precision}, {"undefined_recall", s.undefined_recall}}}}}};
}

inline nlohmann::ordered_json to_json(const Report& r) {
    nlohmann::ordered_json sections = nlohmann::ordered_json::array();
    for (const auto& s : r.sections) sections.push_back(to_json(s));
    return {{"schema_version", r.schema_version}, {"command", r.command}, {"config", r.config}, {"sections", sections}};
}

inline Report report_from_json(const nlohmann::ordered_json& j) {
    try {
        Report r;
        r.schema_version = j.at("schema_version").get<int>();
        if (r.schema_version != kReportSchemaVersion)
            throw DataError("unsupported report schema version " + std::to_string(r.schema_version));
        r.command = j.at("command").get<std::string>();
        r.config = j.at("config");
        for (const auto& js : j.at("sections")) {
            EvalSection s;
            s.method = js.at("method").get<std::string>();
            s.k = js.at("k").get<std::size_t>();
            s.settings = js.at("settings");
            for (const auto& je : js.at("episodes")) {
                EpisodeScore e;
                e.seed = je.at("seed").get<std::uint64_t>();
                e.counts.true_positive = je.at("true_positive").get<std::size_t>();
                e.counts.predicted = je.at("predicted").get<std::size_t>();
                e.counts.gold = je.at("gold").get<std::size_t>();
                e.scores.precision = je.at("precision").get<double>();
                e.scores.recall = je.at("recall").get<double>();
                e.scores.f1 = je.at("f1").get<double>();
                e.scores.precision_undefined = je.at("precision_undefined").get<bool>();
                e.scores.recall_undefined = je.at("recall_undefined").get<bool>();
                s.episodes.push_back(e);
            }
            const auto& agg = js.at("aggregate");
            auto stat = [](const nlohmann::ordered_json& st) {
                return Stat{st.at("mean").get<double>(), st.at("std").get<double>()};
            };
            s.precision = stat(agg.at("precision"));
            s.recall = stat(agg.at("recall"));
            s.f1 = stat(agg.at("f1"));
            s.undefined_precision = agg.at("flags").at("undefined_precision").get<std::size_t>();
            s.undefined_recall = agg.at("flags").at("undefined_recall").get<std::size_t>();
            r.sections.push_back(std::move(s));
        }
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed report: ") + e.what());
    }
}

inline std::string format_report_json(const Report& r) { return to_json(r).dump(2) + "\n"; }

namespace detail {

inline std::string fixed4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

inline std::string pad(std::string s, std::size_t width) {
    if (s.size() < width) s.append(width - s.size(), ' ');
    return s;
}

} // namespace detail

/// Methods as rows, K values as column groups of P / R / F1 (means over episodes).
inline std::string format_report_text(const Report& r) {
    std::vector<std::string> rows;
    std::vector<std::size_t> ks;
    for (const auto& s : r.sections) {
        if (std::find(rows.begin(), rows.end(), s.method) == rows.end()) rows.push_back(s.method);
        if (std::find(ks.begin(), ks.end(), s.k) == ks.end()) ks.push_back(s.k);
    }
    std::size_t width = 8;
    for (const auto& m : rows) width = std::max(width, m.size() + 2);

    std::ostringstream out;
    out << "command: " << r.command << "\n";
    std::string head = detail::pad("method", width), sub = detail::pad("", width);
    for (std::size_t k : ks) {
        head += detail::pad(std::to_string(k) + "-shot", 24);
        sub += "P       R       F1      ";
    }
    out << head << "\n" << sub << "\n";
    for (const auto& m : rows) {
        std::string line = detail::pad(m, width);
        for (std::size_t k : ks) {
            auto it = std::find_if(r.sections.begin(), r.sections.end(),
                                   [&](const EvalSection& s) { return s.method == m && s.k == k; });
            if (it == r.sections.end()) {
                line += detail::pad("-", 24);
                continue;
            }
            line += detail::fixed4(it->precision.mean) + "  " + detail::fixed4(it->recall.mean) + "  " +
                    detail::fixed4(it->f1.mean) + "  ";
        }
        while (!line.empty() && line.back() == ' ') line.pop_back();
        out << line << "\n";
    }
    for (const auto& s : r.sections) {
        out << "\n" << s.method << " k=" << s.k;
        if (!s.settings.empty()) out << " " << s.settings.dump();
        out << ": episodes=" << s.episodes.size() << " F1 " << detail::fixed4(s.f1.mean) << " +/- "
            << detail::fixed4(s.f1.std);
        if (s.undefined_precision || s.undefined_recall)
            out << " (undefined precision in " << s.undefined_precision << ", recall in " << s.undefined_recall
                << " episodes)";
    }
    out << "\n\nconfig: " << r.config.dump() << "\n";
    return out.str();
}

enum class ReportFormat { json, text };

inline ReportFormat parse_report_format(const std::string& s) {
    if (s == "json") return ReportFormat::json;
    if (s == "text") return ReportFormat::text;
    throw UsageError("unknown report format '" + s + "' (expected json or text)");
}

inline void write_report(const Report& r, const std::string& path, ReportFormat format) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open " + path + " for writing");
    out << (format == ReportFormat::json ? format_report_json(r) : format_report_text(r));
    if (!out) throw DataError("write failed: " + path);
}

inline Report read_report(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open report " + path);
    nlohmann::ordered_json j;
    try {
        j = nlohmann::ordered_json::parse(in);
    } catch (const nlohmann::json::exception&) {
        throw DataError("report " + path + " is not valid JSON");
    }
    return report_from_json(j);
}

} // namespace mise
