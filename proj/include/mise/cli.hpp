#pragma once

// mise_lab command-line front end. run() is callable in-process; it never exits.
//
// Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric error, 1 internal error.
// Failures print one JSON error record on the error stream.

#include <chrono>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "mise/config.hpp"
#include "mise/gradsuite.hpp"
#include "mise/protocols.hpp"
#include "mise/synth.hpp"

namespace mise::cli {

using nlohmann::ordered_json;

inline int exit_code(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::usage: return 2;
    case ErrorKind::data: return 3;
    case ErrorKind::numeric: return 4;
    case ErrorKind::contract: return 1;
    }
    return 1;
}

inline std::string error_record(const std::string& kind, int code, const std::string& message) {
    return ordered_json{{"error", {{"kind", kind}, {"exit_code", code}, {"message", message}}}}.dump();
}

struct Command {
    std::string name;
    std::string help;
    std::vector<std::string> keys;
    std::map<std::string, std::string> defaults;
};

namespace detail {

inline const std::vector<std::string> kDataKeys = {"data", "format", "field-tokens", "field-tags", "field-period",
                                                    "representations"};
inline const std::vector<std::string> kModelKeys = {"embed-dim", "hidden-dim", "dropout"};
inline const std::vector<std::string> kTrainKeys = {"k",           "eval-size",  "alpha",          "beta",
                                                    "weight-decay", "inner-steps", "meta-batch",    "max-steps",
                                                    "snapshot-every"};
inline const std::vector<std::string> kAdaptKeys = {"alpha",        "lambda",       "temperature",
                                                    "ki-reduction", "adapt-steps",  "adapt-dropout"};
inline const std::vector<std::string> kScoreKeys = {"constrain-decode", "binary-token-metric"};

inline std::vector<std::string> concat(std::initializer_list<std::vector<std::string>> parts) {
    std::vector<std::string> out;
    for (const auto& p : parts)
        for (const auto& k : p)
            if (std::find(out.begin(), out.end(), k) == out.end()) out.push_back(k);
    return out;
}

} // namespace detail

inline const std::vector<Command>& commands() {
    using namespace detail;
    static const std::vector<Command> cmds = {
        {"synth", "generate a synthetic continual-stressor corpus",
         {"out", "format", "seed", "vocab-size", "classes", "novel-classes", "novel-fraction", "zipf", "periods",
          "posts-per-period", "min-length", "max-length", "lexicon-size", "novel-lexicon-size", "distractor-prob",
          "opener-prob",
          "closer-prob"},
         {}},
        {"train", "meta-train a model (or the pooled baseline with --no-meta)",
         concat({kDataKeys, kModelKeys, kTrainKeys, {"no-meta", "out", "seed", "workers"}}),
         {{"k", "5"}}},
        {"adapt", "adapt a checkpoint to one latest-period task with knowledge inheritance",
         concat({{"checkpoint"}, kDataKeys, {"k", "eval-size"}, kAdaptKeys, {"out", "seed"}}),
         {{"k", "5"}}},
        {"eval", "K-shot episodic evaluation on the latest period",
         concat({{"checkpoint", "scratch-checkpoint", "ablation"}, kDataKeys, {"k", "eval-size", "episodes"}, kAdaptKeys,
                 kScoreKeys, {"out", "report-format", "seed", "workers"}}),
         {}},
        {"decode", "tag a corpus and emit spans",
         concat({{"checkpoint"}, kDataKeys, {"constrain-decode", "out", "workers"}}),
         {}},
        {"forget", "catastrophic-forgetting study on held-out past-period posts",
         concat({kDataKeys, kModelKeys, kTrainKeys, kAdaptKeys, kScoreKeys,
                 {"repeats", "holdout", "adapt-tasks", "out", "report-format", "seed", "workers"}}),
         {{"k", "5"}}},
        {"sweep", "evaluate a grid of lambda and temperature values",
         concat({{"checkpoint"}, kDataKeys, {"k", "eval-size", "episodes", "lambdas", "temperatures"}, kAdaptKeys,
                 kScoreKeys, {"out", "report-format", "seed", "workers"}}),
         {{"k", "5"}}},
        {"gradcheck", "finite-difference check of the training losses on tiny models",
         {"gradcheck-models", "seed", "out", "workers"},
         {}},
    };
    return cmds;
}

/// Values that do not change results are left out of report echoes.
inline bool echoed(const std::string& key) { return key != "workers" && key != "out" && key != "report-format"; }

struct Context {
    const Command* command = nullptr;
    RunConfig config;
    std::ostream* out = nullptr;
    std::ostream* err = nullptr;

    ordered_json echo() const {
        std::vector<std::string> keys;
        for (const auto& k : command->keys)
            if (echoed(k)) keys.push_back(k);
        return config.echo(keys);
    }
};

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

inline std::string required(const Context& ctx, const std::string& key) {
    const std::string& v = ctx.config.str(key);
    if (v.empty()) throw UsageError(ctx.command->name + " requires --" + key);
    return v;
}

inline std::size_t single_k(const RunConfig& rc) {
    const auto ks = rc.counts("k");
    if (ks.size() != 1) throw UsageError("--k: this command takes a single K");
    return ks.front();
}

struct LoadedData {
    Corpus corpus;
    Dataset data;
    std::size_t input_dim = 0;
};

inline LoadedData load_data(const Context& ctx, const Vocabulary* vocab) {
    const RunConfig& rc = ctx.config;
    FieldMap fields{rc.str("field-tokens"), rc.str("field-tags"), rc.str("field-period")};
    LoadedData out;
    out.corpus = load_corpus(required(ctx, "data"), parse_corpus_format(rc.str("format")), fields).corpus;
    if (out.corpus.posts.empty()) throw DataError("corpus " + rc.str("data") + " has no posts");
    out.data = vocab ? Dataset::build(out.corpus, *vocab) : Dataset::build(out.corpus);
    if (const auto& reps = rc.str("representations"); !reps.empty()) {
        std::vector<std::size_t> lengths;
        for (const auto& p : out.corpus.posts) lengths.push_back(p.tokens.size());
        auto tensors = load_precomputed(reps, lengths);
        out.input_dim = tensors.front().cols();
        out.data.attach_representations(std::move(tensors));
    }
    return out;
}

inline ModelConfig model_config(const RunConfig& rc, const LoadedData& d) {
    ModelConfig m;
    m.vocab_size = d.data.vocab.size();
    m.embed_dim = rc.count("embed-dim");
    m.hidden_dim = rc.count("hidden-dim");
    m.input_dim = d.input_dim;
    m.dropout = rc.real("dropout");
    if (m.embed_dim == 0 || m.hidden_dim == 0) throw UsageError("model widths must be positive");
    if (!(m.dropout >= 0.0 && m.dropout < 1.0)) throw UsageError("--dropout must lie in [0, 1)");
    return m;
}

inline TrainConfig train_config(const Context& ctx) {
    const RunConfig& rc = ctx.config;
    const auto& keys = ctx.command->keys;
    auto has = [&](const char* k) { return std::find(keys.begin(), keys.end(), k) != keys.end(); };
    TrainConfig c;
    if (has("alpha")) c.alpha = rc.real("alpha");
    if (has("beta")) c.beta = rc.real("beta");
    if (has("weight-decay")) c.weight_decay = rc.real("weight-decay");
    if (has("k") && rc.counts("k").size() == 1) c.k = rc.counts("k").front();
    if (has("eval-size")) c.eval_size = rc.count("eval-size");
    if (has("meta-batch")) c.meta_batch = rc.count("meta-batch");
    if (has("max-steps")) c.max_steps = rc.count("max-steps");
    if (has("inner-steps")) c.inner_steps = rc.count("inner-steps");
    if (has("adapt-steps")) c.adapt_steps = rc.count("adapt-steps");
    if (has("lambda")) c.lambda = rc.real("lambda");
    if (has("temperature")) c.temperature = rc.real("temperature");
    if (has("ki-reduction")) c.ki_reduction = parse_ki_reduction(rc.str("ki-reduction"));
    if (has("adapt-dropout")) c.adapt_dropout = rc.flag("adapt-dropout");
    if (has("snapshot-every")) c.snapshot_every = rc.count("snapshot-every");
    if (has("workers")) c.workers = std::max<std::size_t>(1, rc.count("workers"));
    c.seed = rc.seed();
    c.validate();
    return c;
}

inline void emit(const Context& ctx, const std::string& text) {
    const std::string& path = ctx.config.str("out");
    if (path.empty()) {
        *ctx.out << text;
        return;
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open " + path + " for writing");
    f << text;
    if (!f) throw DataError("write failed: " + path);
}

inline void emit_report(const Context& ctx, const Report& report) {
    const auto format = parse_report_format(ctx.config.str("report-format"));
    if (ctx.config.str("out").empty()) {
        *ctx.out << (format == ReportFormat::json ? format_report_json(report) : format_report_text(report));
        return;
    }
    write_report(report, ctx.config.str("out"), format);
    *ctx.out << format_report_text(report);
}

inline ordered_json summary_json(const CorpusSummary& s) {
    ordered_json hist = ordered_json::object();
    for (std::size_t t = 0; t < kNumTags; ++t) hist[std::string(kTagNames[t])] = s.tag_histogram[t];
    return {{"posts", s.posts},
            {"labeled_posts", s.labeled_posts},
            {"spans", s.spans},
            {"posts_per_period", s.posts_per_period},
            {"tag_histogram", hist}};
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

inline void cmd_synth(Context& ctx) {
    const RunConfig& rc = ctx.config;
    SynthConfig sc;
    sc.vocab_size = rc.count("vocab-size");
    sc.classes = rc.count("classes");
    sc.novel_classes = rc.count("novel-classes");
    sc.novel_fraction = rc.real("novel-fraction");
    sc.zipf_exponent = rc.real("zipf");
    sc.periods = rc.count("periods");
    sc.posts_per_period = rc.count("posts-per-period");
    sc.min_length = rc.count("min-length");
    sc.max_length = rc.count("max-length");
    sc.lexicon_size = rc.count("lexicon-size");
    sc.novel_lexicon_size = rc.count("novel-lexicon-size");
    sc.distractor_prob = rc.real("distractor-prob");
    sc.opener_prob = rc.real("opener-prob");
    sc.closer_prob = rc.real("closer-prob");
    sc.seed = rc.seed();
    const std::string path = required(ctx, "out");
    const auto synth = generate_corpus(sc);
    save_corpus(path, synth.corpus, parse_corpus_format(rc.str("format")));
    *ctx.out << ordered_json{{"command", "synth"}, {"config", ctx.echo()}, {"summary", summary_json(summarize(synth.corpus))}}
                    .dump(2)
             << "\n";
}

inline void cmd_train(Context& ctx) {
    const std::string path = required(ctx, "out");
    single_k(ctx.config);
    const auto loaded = load_data(ctx, nullptr);
    const TimeSplit split = split_periods(loaded.data);
    const ModelConfig model = model_config(ctx.config, loaded);
    const TrainConfig cfg = train_config(ctx);
    const bool scratch = ctx.config.flag("no-meta");
    auto observer = [&](const Snapshot& s) {
        *ctx.err << "step " << s.step << " validation loss " << s.validation_loss << "\n";
    };
    const TrainResult result = scratch ? train_scratch_baseline(loaded.data, split, model, cfg, observer)
                                       : meta_train(loaded.data, split, model, cfg, observer);
    save_checkpoint(path, result.checkpoint);
    ordered_json snaps = ordered_json::array();
    for (const auto& s : result.snapshots) snaps.push_back({{"step", s.step}, {"validation_loss", s.validation_loss}});
    *ctx.out << ordered_json{{"command", "train"},
                             {"config", ctx.echo()},
                             {"kind", result.checkpoint.kind},
                             {"past_periods", split.past_labels},
                             {"latest_period", split.latest_label},
                             {"snapshots", snaps}}
                    .dump(2)
             << "\n";
}

inline void cmd_adapt(Context& ctx) {
    const std::string path = required(ctx, "out");
    const Checkpoint meta = load_checkpoint(required(ctx, "checkpoint"));
    const auto loaded = load_data(ctx, &meta.vocab);
    const TimeSplit split = split_periods(loaded.data);
    TrainConfig cfg = train_config(ctx);
    cfg.k = single_k(ctx.config);
    Rng rng(ctx.config.seed());
    const MetaTask task = sample_test_task(split, cfg.k, rng, cfg.eval_size);
    cfg.seed = derive_seed(ctx.config.seed(), 1);
    const AdaptResult adapted = adapt_with_inheritance(meta.model, meta.params, loaded.data, task, cfg);

    Checkpoint out = meta;
    out.params = adapted.params;
    out.kind = "inheritor";
    out.steps = cfg.adapt_steps;
    out.seed = ctx.config.seed();
    out.train_config = to_json(cfg);
    save_checkpoint(path, out);

    ordered_json trace = ordered_json::array();
    for (const auto& s : adapted.trace)
        trace.push_back({{"step", s.step}, {"crf", s.crf}, {"ki", s.ki}, {"total", s.total}});
    *ctx.out << ordered_json{{"command", "adapt"},
                             {"config", ctx.echo()},
                             {"task", {{"support", task.support}, {"query", task.eval}}},
                             {"trace", trace}}
                    .dump(2)
             << "\n";
}

inline EvalOptions eval_options(const RunConfig& rc, std::size_t k, AdaptMethod method) {
    EvalOptions o;
    o.k = k;
    o.episodes = rc.count("episodes");
    o.method = method;
    o.constrain_decode = rc.flag("constrain-decode");
    o.binary_metric = rc.flag("binary-token-metric");
    return o;
}

inline void cmd_eval(Context& ctx) {
    const Checkpoint meta = load_checkpoint(required(ctx, "checkpoint"));
    std::unique_ptr<Checkpoint> scratch;
    if (const auto& sp = ctx.config.str("scratch-checkpoint"); !sp.empty()) {
        scratch = std::make_unique<Checkpoint>(load_checkpoint(sp));
        if (!(scratch->vocab.tokens() == meta.vocab.tokens()))
            throw DataError("scratch checkpoint vocabulary differs from the meta checkpoint");
    }
    const auto loaded = load_data(ctx, &meta.vocab);
    const TimeSplit split = split_periods(loaded.data);
    const TrainConfig cfg = train_config(ctx);
    const bool ablation = ctx.config.flag("ablation");

    Report report;
    report.command = "eval";
    report.config = ctx.echo();
    for (std::size_t k : ctx.config.counts("k"))
        report.sections.push_back(
            kshot_eval(meta, loaded.data, split, cfg, eval_options(ctx.config, k, AdaptMethod::inheritance), "MISE"));
    if (ablation)
        for (std::size_t k : ctx.config.counts("k"))
            report.sections.push_back(
                kshot_eval(meta, loaded.data, split, cfg, eval_options(ctx.config, k, AdaptMethod::fine_tune), "w/o I"));
    if (scratch)
        for (std::size_t k : ctx.config.counts("k"))
            report.sections.push_back(kshot_eval(*scratch, loaded.data, split, cfg,
                                                 eval_options(ctx.config, k, AdaptMethod::fine_tune), "w/o M"));
    emit_report(ctx, report);
}

inline void cmd_decode(Context& ctx) {
    const Checkpoint ck = load_checkpoint(required(ctx, "checkpoint"));
    const auto loaded = load_data(ctx, &ck.vocab);
    const bool constrain = ctx.config.flag("constrain-decode");
    std::vector<std::string> lines(loaded.data.posts.size());
    parallel_for(lines.size(), std::max<std::size_t>(1, ctx.config.count("workers")), [&](std::size_t i) {
        const auto tags = decode_post(ck.model, ck.params, loaded.data.posts[i].post, constrain).tags;
        ordered_json spans = ordered_json::array();
        for (const Span& s : decode_tags(tags).spans) spans.push_back({s.start, s.end});
        std::vector<std::string> names;
        for (Tag t : tags) names.emplace_back(tag_name(t));
        lines[i] = ordered_json{{"post", i}, {"spans", spans}, {"tags", names}}.dump() + "\n";
    });
    std::string out;
    for (const auto& l : lines) out += l;
    emit(ctx, out);
}

inline void cmd_forget(Context& ctx) {
    const auto loaded = load_data(ctx, nullptr);
    const TimeSplit split = split_periods(loaded.data);
    const ModelConfig model = model_config(ctx.config, loaded);
    const TrainConfig cfg = train_config(ctx);
    ForgettingOptions opt;
    opt.k = single_k(ctx.config);
    opt.repeats = ctx.config.count("repeats");
    opt.holdout = ctx.config.real("holdout");
    opt.adapt_tasks = ctx.config.count("adapt-tasks");
    opt.constrain_decode = ctx.config.flag("constrain-decode");
    opt.binary_metric = ctx.config.flag("binary-token-metric");
    const ForgettingResult r = forgetting_study(loaded.data, split, model, cfg, opt);
    Report report;
    report.command = "forget";
    report.config = ctx.echo();
    report.sections = {r.inheritance, r.fine_tune};
    emit_report(ctx, report);
}

inline std::string format_number(double v) {
    std::ostringstream s;
    s << v;
    return s.str();
}

inline void cmd_sweep(Context& ctx) {
    const Checkpoint meta = load_checkpoint(required(ctx, "checkpoint"));
    const auto loaded = load_data(ctx, &meta.vocab);
    const TimeSplit split = split_periods(loaded.data);
    const TrainConfig base = train_config(ctx);
    const std::size_t k = single_k(ctx.config);
    Report report;
    report.command = "sweep";
    report.config = ctx.echo();
    for (double lambda : ctx.config.reals("lambdas"))
        for (double t : ctx.config.reals("temperatures")) {
            TrainConfig c = base;
            c.lambda = lambda;
            c.temperature = t;
            c.validate();
            EvalSection s = kshot_eval(meta, loaded.data, split, c, eval_options(ctx.config, k, AdaptMethod::inheritance),
                                       "lambda=" + format_number(lambda) + " t=" + format_number(t));
            s.settings = {{"lambda", lambda}, {"temperature", t}};
            report.sections.push_back(std::move(s));
        }
    emit_report(ctx, report);
}

inline int cmd_gradcheck(Context& ctx) {
    const auto result = run_grad_suite(ctx.config.count("gradcheck-models"), ctx.config.seed(),
                                       std::max<std::size_t>(1, ctx.config.count("workers")));
    ordered_json cases = ordered_json::array();
    for (const auto& c : result.cases)
        cases.push_back({{"seed", c.seed}, {"nll", c.nll}, {"ki", c.ki}, {"total", c.total}});
    emit(ctx, ordered_json{{"command", "gradcheck"},
                           {"config", ctx.echo()},
                           {"tolerance", kGradTolerance},
                           {"max_rel_error", result.worst()},
                           {"passed", result.passed()},
                           {"cases", cases}}
                      .dump(2) +
                  "\n");
    if (!result.passed()) {
        const std::string msg = "gradient check failed: max relative error " + format_number(result.worst());
        *ctx.err << error_record("numeric", 4, msg) << "\n";
        return 4;
    }
    return 0;
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"mise_lab: few-shot continual sequence labeling with meta-learning and knowledge inheritance"};
    app.name("mise_lab");
    app.require_subcommand(1);

    struct Bound {
        const Command* command;
        CLI::App* app;
        std::map<std::string, std::string> values;
        std::map<std::string, CLI::Option*> options;
        std::string config_file;
    };
    std::vector<std::unique_ptr<Bound>> bound;
    for (const auto& cmd : commands()) {
        auto b = std::make_unique<Bound>();
        b->command = &cmd;
        b->app = app.add_subcommand(cmd.name, cmd.help);
        b->app->add_option("--config", b->config_file, "key=value configuration file");
        for (const auto& key : cmd.keys) {
            const KeySpec* spec = find_key(key);
            std::string help = spec->help;
            const auto d = cmd.defaults.find(key);
            help += " (default: " + (d != cmd.defaults.end() ? d->second : spec->fallback) + ")";
            if (spec->type == KeyType::flag)
                b->options[key] = b->app->add_flag("--" + key)->description(help);
            else
                b->options[key] = b->app->add_option("--" + key, b->values[key], help);
        }
        bound.push_back(std::move(b));
    }

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            app.exit(e, out, err);
            return 0;
        }
        err << error_record("usage", 2, e.what()) << "\n";
        return 2;
    }

    try {
        Bound* active = nullptr;
        for (auto& b : bound)
            if (b->app->parsed()) active = b.get();
        if (!active) throw UsageError("no command given");

        Context ctx;
        ctx.command = active->command;
        ctx.out = &out;
        ctx.err = &err;
        for (const auto& [k, v] : active->command->defaults) ctx.config.set_default(k, v);
        ctx.config.load_environment();
        if (!active->config_file.empty()) ctx.config.load_file(active->config_file);
        for (const auto& [key, opt] : active->options) {
            if (opt->count() == 0) continue;
            const KeySpec* spec = find_key(key);
            ctx.config.set(key, spec->type == KeyType::flag ? "true" : active->values[key], Source::flag);
        }

        const auto start = std::chrono::steady_clock::now();
        int code = 0;
        const std::string& name = active->command->name;
        if (name == "synth") cmd_synth(ctx);
        else if (name == "train") cmd_train(ctx);
        else if (name == "adapt") cmd_adapt(ctx);
        else if (name == "eval") cmd_eval(ctx);
        else if (name == "decode") cmd_decode(ctx);
        else if (name == "forget") cmd_forget(ctx);
        else if (name == "sweep") cmd_sweep(ctx);
        else if (name == "gradcheck") code = cmd_gradcheck(ctx);
        const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        err << "elapsed " << elapsed << " s\n";
        return code;
    } catch (const Error& e) {
        const int code = exit_code(e.kind());
        err << error_record(to_string(e.kind()), code, e.what()) << "\n";
        return code;
    } catch (const std::exception& e) {
        err << error_record("internal", 1, e.what()) << "\n";
        return 1;
    }
}

inline int main(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args);
}

} // namespace mise::cli
