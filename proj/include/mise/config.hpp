#pragma once

// Run configuration: command-line flags over a key=value file over the
// MISE_LAB_SEED environment variable (seed only) over built-in defaults.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "mise/error.hpp"

namespace mise {

enum class KeyType { string, integer, real, flag, integer_list, real_list };

struct KeySpec {
    std::string name;
    KeyType type;
    std::string fallback; // default, in file syntax
    std::string help;
};

inline const std::vector<KeySpec>& known_keys() {
    static const std::vector<KeySpec> keys = {
        // data
        {"data", KeyType::string, "", "input corpus path"},
        {"format", KeyType::string, "jsonl", "corpus format: jsonl or conll"},
        {"field-tokens", KeyType::string, "tokens", "JSONL key holding the token list"},
        {"field-tags", KeyType::string, "tags", "JSONL key holding the tag list"},
        {"field-period", KeyType::string, "period", "JSONL key holding the period label"},
        {"representations", KeyType::string, "", "precomputed per-token representations file"},
        {"out", KeyType::string, "", "output path"},
        {"report-format", KeyType::string, "json", "report format: json or text"},
        {"checkpoint", KeyType::string, "", "model checkpoint path"},
        {"scratch-checkpoint", KeyType::string, "", "non-meta checkpoint for the w/o M row"},
        // protocol
        {"k", KeyType::integer_list, "3,5,10", "support-set sizes"},
        {"eval-size", KeyType::integer, "15", "validation / query set size"},
        {"episodes", KeyType::integer, "50", "test episodes per K"},
        {"repeats", KeyType::integer, "5", "forgetting-study repeats"},
        {"holdout", KeyType::real, "0.2", "fraction of past-period posts held out in the forgetting study"},
        {"adapt-tasks", KeyType::integer, "1", "latest-period adaptation tasks per forgetting repeat"},
        {"ablation", KeyType::flag, "false", "add the w/o I row (and w/o M with --scratch-checkpoint) to eval"},
        {"lambdas", KeyType::real_list, "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9", "sweep grid for lambda"},
        {"temperatures", KeyType::real_list, "1,3,5,7,9", "sweep grid for the temperature"},
        {"gradcheck-models", KeyType::integer, "20", "seeded tiny models in the gradient suite"},
        {"constrain-decode", KeyType::flag, "false", "mask BIOES-invalid transitions when decoding"},
        {"binary-token-metric", KeyType::flag, "false", "score any non-O vs non-O as a token match"},
        // training
        {"alpha", KeyType::real, "0.01", "inner / adaptation learning rate"},
        {"beta", KeyType::real, "0.005", "outer learning rate"},
        {"weight-decay", KeyType::real, "0.01", "AdamW weight decay"},
        {"lambda", KeyType::real, "0.2", "trade-off between support CRF loss and inheritance loss"},
        {"temperature", KeyType::real, "5", "soft-label temperature"},
        {"ki-reduction", KeyType::string, "post_mean", "inheritance loss reduction: sum, post_mean or token_mean"},
        {"adapt-steps", KeyType::integer, "10", "adaptation steps at meta-test time"},
        {"inner-steps", KeyType::integer, "1", "inner steps during meta-training"},
        {"meta-batch", KeyType::integer, "4", "tasks per outer step"},
        {"max-steps", KeyType::integer, "5000", "outer steps"},
        {"snapshot-every", KeyType::integer, "250", "outer steps between validation snapshots (0 = off)"},
        {"adapt-dropout", KeyType::flag, "false", "apply dropout during adaptation"},
        {"no-meta", KeyType::flag, "false", "train the pooled supervised baseline instead"},
        {"seed", KeyType::integer, "0", "base random seed"},
        {"workers", KeyType::integer, "1", "parallel episodes"},
        // model
        {"embed-dim", KeyType::integer, "64", "token embedding width"},
        {"hidden-dim", KeyType::integer, "64", "recurrent state width per direction"},
        {"dropout", KeyType::real, "0.1", "embedding dropout during training"},
        // synthetic corpus
        {"vocab-size", KeyType::integer, "600", "synthetic vocabulary size"},
        {"classes", KeyType::integer, "50", "stressor classes in past periods"},
        {"novel-classes", KeyType::integer, "4", "classes reserved for the latest period"},
        {"novel-fraction", KeyType::real, "0.3", "share of latest-period spans from novel classes"},
        {"zipf", KeyType::real, "1.2", "Zipf exponent of class frequencies"},
        {"periods", KeyType::integer, "8", "half-year periods (the last is the latest)"},
        {"posts-per-period", KeyType::integer, "120", "posts per period"},
        {"min-length", KeyType::integer, "8", "minimum post length"},
        {"max-length", KeyType::integer, "20", "maximum post length"},
        {"lexicon-size", KeyType::integer, "40", "shared stressor words"},
        {"novel-lexicon-size", KeyType::integer, "12", "stressor words only novel classes use (0 = shared)"},
        {"distractor-prob", KeyType::real, "0.3", "chance a filler slot holds a stressor word"},
        {"opener-prob", KeyType::real, "0.6", "chance of a cue token before a span"},
        {"closer-prob", KeyType::real, "0.4", "chance of a cue token after a span"},
    };
    return keys;
}

inline const KeySpec* find_key(const std::string& name) {
    for (const auto& k : known_keys())
        if (k.name == name) return &k;
    return nullptr;
}

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = s.find(',', start);
        out.push_back(trim(s.substr(start, comma - start)));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

inline std::int64_t parse_int(const std::string& key, const std::string& v) {
    std::int64_t x = 0;
    auto res = std::from_chars(v.data(), v.data() + v.size(), x);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size())
        throw UsageError("--" + key + ": expected an integer, got '" + v + "'");
    return x;
}

inline double parse_real(const std::string& key, const std::string& v) {
    double x = 0.0;
    auto res = std::from_chars(v.data(), v.data() + v.size(), x);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size() || !std::isfinite(x))
        throw UsageError("--" + key + ": expected a number, got '" + v + "'");
    return x;
}

inline bool parse_flag(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw UsageError("--" + key + ": expected true or false, got '" + v + "'");
}

} // namespace detail

/// Where an effective value came from.
enum class Source { fallback, environment, file, flag };

class RunConfig {
public:
    RunConfig() {
        for (const auto& k : known_keys()) values_[k.name] = {k.fallback, Source::fallback};
    }

    /// Command-specific default, e.g. a single K for training commands.
    void set_default(const std::string& key, const std::string& value) {
        const KeySpec* spec = find_key(key);
        if (!spec) throw ContractViolation("unknown configuration key '" + key + "'");
        check(*spec, value);
        auto& slot = values_[key];
        if (slot.source == Source::fallback) slot.value = value;
    }

    void set(const std::string& key, const std::string& value, Source source) {
        const KeySpec* spec = find_key(key);
        if (!spec) throw UsageError("unknown configuration key '" + key + "'");
        check(*spec, value);
        auto& slot = values_[key];
        if (source >= slot.source) slot = {value, source};
    }

    /// key=value lines; '#' starts a comment. Unknown keys are rejected.
    void load_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw UsageError("cannot open config file " + path);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            line = detail::trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw UsageError(path + ":" + std::to_string(line_no) + ": expected key=value");
            const std::string key = detail::trim(line.substr(0, eq));
            try {
                set(key, detail::trim(line.substr(eq + 1)), Source::file);
            } catch (const UsageError& e) {
                throw UsageError(path + ":" + std::to_string(line_no) + ": " + e.what());
            }
        }
    }

    void load_environment() {
        if (const char* env = std::getenv("MISE_LAB_SEED"); env && *env) {
            try {
                set("seed", env, Source::environment);
            } catch (const UsageError&) {
                throw UsageError(std::string("MISE_LAB_SEED: expected an integer, got '") + env + "'");
            }
        }
    }

    const std::string& str(const std::string& key) const { return slot(key).value; }
    Source source(const std::string& key) const { return slot(key).source; }
    bool given(const std::string& key) const { return slot(key).source != Source::fallback; }

    std::int64_t integer(const std::string& key) const { return detail::parse_int(key, str(key)); }
    std::size_t count(const std::string& key) const {
        const auto v = integer(key);
        if (v < 0) throw UsageError("--" + key + " must be non-negative");
        return static_cast<std::size_t>(v);
    }
    std::uint64_t seed() const { return static_cast<std::uint64_t>(integer("seed")); }
    double real(const std::string& key) const { return detail::parse_real(key, str(key)); }
    bool flag(const std::string& key) const { return detail::parse_flag(key, str(key)); }

    std::vector<std::size_t> counts(const std::string& key) const {
        std::vector<std::size_t> out;
        for (const auto& v : detail::split_list(str(key))) {
            const auto x = detail::parse_int(key, v);
            if (x <= 0) throw UsageError("--" + key + ": values must be positive");
            out.push_back(static_cast<std::size_t>(x));
        }
        return out;
    }

    std::vector<double> reals(const std::string& key) const {
        std::vector<double> out;
        for (const auto& v : detail::split_list(str(key))) out.push_back(detail::parse_real(key, v));
        return out;
    }

    /// Effective values of `keys`, typed, in the given order.
    nlohmann::ordered_json echo(const std::vector<std::string>& keys) const {
        nlohmann::ordered_json j = nlohmann::ordered_json::object();
        for (const auto& key : keys) {
            const KeySpec* spec = find_key(key);
            if (!spec) throw ContractViolation("echo of unknown key '" + key + "'");
            switch (spec->type) {
            case KeyType::string: j[key] = str(key); break;
            case KeyType::integer: j[key] = integer(key); break;
            case KeyType::real: j[key] = real(key); break;
            case KeyType::flag: j[key] = flag(key); break;
            case KeyType::integer_list: j[key] = counts(key); break;
            case KeyType::real_list: j[key] = reals(key); break;
            }
        }
        return j;
    }

private:
    struct Slot {
        std::string value;
        Source source = Source::fallback;
    };

    const Slot& slot(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ContractViolation("unknown configuration key '" + key + "'");
        return it->second;
    }

    static void check(const KeySpec& spec, const std::string& v) {
        switch (spec.type) {
        case KeyType::string: break;
        case KeyType::integer: detail::parse_int(spec.name, v); break;
        case KeyType::real: detail::parse_real(spec.name, v); break;
        case KeyType::flag: detail::parse_flag(spec.name, v); break;
        case KeyType::integer_list:
            for (const auto& x : detail::split_list(v)) detail::parse_int(spec.name, x);
            break;
        case KeyType::real_list:
            for (const auto& x : detail::split_list(v)) detail::parse_real(spec.name, x);
            break;
        }
    }

    std::map<std::string, Slot> values_;
};

} // namespace mise
