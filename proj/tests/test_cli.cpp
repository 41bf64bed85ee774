#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mise/cli.hpp"

using namespace mise;

namespace {

struct Result {
    int code = 0;
    std::string out, err;
};

Result run(std::vector<std::string> args) {
    std::ostringstream out, err;
    Result r;
    r.code = cli::run(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::filesystem::path scratch_dir() {
    static const auto dir = [] {
        auto d = std::filesystem::temp_directory_path() / "mise_cli_test";
        std::filesystem::remove_all(d);
        std::filesystem::create_directories(d);
        return d;
    }();
    return dir;
}

std::string path(const std::string& name) { return (scratch_dir() / name).string(); }

std::string slurp(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// A small corpus and a briefly trained checkpoint shared by the tests below.
const std::string& corpus() {
    static const std::string p = [] {
        const auto c = path("corpus.jsonl");
        EXPECT_EQ(run({"synth", "--out", c, "--posts-per-period", "40", "--seed", "3"}).code, 0);
        return c;
    }();
    return p;
}

const std::string& checkpoint() {
    static const std::string p = [] {
        const auto ck = path("meta.ckpt");
        const auto r = run({"train", "--data", corpus(), "--out", ck, "--max-steps", "4", "--embed-dim", "8",
                            "--hidden-dim", "6", "--snapshot-every", "2"});
        EXPECT_EQ(r.code, 0) << r.err;
        return ck;
    }();
    return p;
}

nlohmann::json error_of(const Result& r) {
    const auto line = r.err.substr(0, r.err.find('\n'));
    return nlohmann::json::parse(line);
}

} // namespace

TEST(Cli, HelpAndUsageErrors) {
    EXPECT_EQ(run({"--help"}).code, 0);
    EXPECT_EQ(run({"eval", "--help"}).code, 0);
    const auto none = run({});
    EXPECT_EQ(none.code, 2);
    EXPECT_EQ(error_of(none)["error"]["kind"], "usage");
    EXPECT_EQ(run({"frobnicate"}).code, 2);
    EXPECT_EQ(run({"eval", "--lambda", "0.2", "--bogus"}).code, 2);
    const auto missing = run({"eval"});
    EXPECT_EQ(missing.code, 2);
    EXPECT_NE(missing.err.find("--checkpoint"), std::string::npos);
}

TEST(Cli, DataErrorsExitThree) {
    const auto bad = path("bad.jsonl");
    std::ofstream(bad) << R"({"tokens":["a","b"],"tags":["O"],"period":"2019H1"})" << "\n";
    const auto r = run({"train", "--data", bad, "--out", path("x.ckpt")});
    EXPECT_EQ(r.code, 3);
    const auto e = error_of(r);
    EXPECT_EQ(e["error"]["kind"], "data");
    EXPECT_EQ(e["error"]["exit_code"], 3);
    EXPECT_NE(e["error"]["message"].get<std::string>().find("line 1"), std::string::npos);
    EXPECT_EQ(run({"eval", "--checkpoint", path("missing.ckpt"), "--data", corpus()}).code, 3);
}

TEST(Cli, InvalidValuesExitTwo) {
    EXPECT_EQ(run({"eval", "--checkpoint", checkpoint(), "--data", corpus(), "--lambda", "1.5"}).code, 2);
    EXPECT_EQ(run({"eval", "--checkpoint", checkpoint(), "--data", corpus(), "--episodes", "ten"}).code, 2);
    EXPECT_EQ(run({"train", "--data", corpus(), "--out", path("y.ckpt"), "--k", "3,5"}).code, 2);
}

TEST(Cli, SynthIsDeterministic) {
    const auto a = path("a.conll"), b = path("b.conll");
    ASSERT_EQ(run({"synth", "--out", a, "--format", "conll", "--posts-per-period", "10", "--seed", "5"}).code, 0);
    ASSERT_EQ(run({"synth", "--out", b, "--format", "conll", "--posts-per-period", "10", "--seed", "5"}).code, 0);
    EXPECT_EQ(slurp(a), slurp(b));
    EXPECT_NE(slurp(a).find("# period: 2018H2"), std::string::npos);
}

TEST(Cli, EvalReportEchoesProtocolAndIsWorkerIndependent) {
    const auto r1 = path("r1.json"), r2 = path("r2.json");
    const std::vector<std::string> base = {"eval", "--checkpoint", checkpoint(), "--data", corpus(), "--episodes", "3",
                                           "--adapt-steps", "2"};
    auto a = base;
    a.insert(a.end(), {"--out", r1, "--workers", "1"});
    auto b = base;
    b.insert(b.end(), {"--out", r2, "--workers", "3"});
    ASSERT_EQ(run(a).code, 0);
    ASSERT_EQ(run(b).code, 0);
    EXPECT_EQ(slurp(r1), slurp(r2));
    const Report rep = read_report(r1);
    EXPECT_EQ(rep.command, "eval");
    EXPECT_EQ(rep.config["k"], nlohmann::ordered_json::parse("[3,5,10]"));
    EXPECT_EQ(rep.config["eval-size"], 15);
    EXPECT_EQ(rep.config["lambda"], 0.2);
    EXPECT_EQ(rep.config["temperature"], 5.0);
    ASSERT_EQ(rep.sections.size(), 3u);
    EXPECT_EQ(rep.sections[0].k, 3u);
    EXPECT_EQ(rep.sections[2].k, 10u);
    for (const auto& s : rep.sections) EXPECT_TRUE(s.consistent());
}

TEST(Cli, EvalAblationRows) {
    const auto scratch = path("scratch.ckpt");
    ASSERT_EQ(run({"train", "--data", corpus(), "--out", scratch, "--no-meta", "--max-steps", "3", "--embed-dim", "8",
                   "--hidden-dim", "6"})
                  .code,
              0);
    const auto r = run({"eval", "--checkpoint", checkpoint(), "--scratch-checkpoint", scratch, "--ablation", "--data",
                        corpus(), "--k", "5", "--episodes", "2", "--adapt-steps", "1"});
    ASSERT_EQ(r.code, 0) << r.err;
    const Report rep = report_from_json(nlohmann::ordered_json::parse(r.out));
    ASSERT_EQ(rep.sections.size(), 3u);
    EXPECT_EQ(rep.sections[0].method, "MISE");
    EXPECT_EQ(rep.sections[1].method, "w/o I");
    EXPECT_EQ(rep.sections[2].method, "w/o M");
}

TEST(Cli, SweepCoversGrid) {
    const auto r = run({"sweep", "--checkpoint", checkpoint(), "--data", corpus(), "--episodes", "1", "--adapt-steps",
                        "1"});
    ASSERT_EQ(r.code, 0) << r.err;
    const Report rep = report_from_json(nlohmann::ordered_json::parse(r.out));
    EXPECT_EQ(rep.sections.size(), 45u);
    EXPECT_EQ(rep.sections.front().settings["lambda"], 0.1);
    EXPECT_EQ(rep.sections.back().settings["temperature"], 9.0);
}

TEST(Cli, AdaptAndDecode) {
    const auto inheritor = path("inheritor.ckpt");
    const auto r = run({"adapt", "--checkpoint", checkpoint(), "--data", corpus(), "--out", inheritor, "--k", "3",
                        "--adapt-steps", "2"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(load_checkpoint(inheritor).kind, "inheritor");
    const auto j = nlohmann::json::parse(r.out);
    EXPECT_EQ(j["trace"].size(), 2u);
    EXPECT_EQ(j["task"]["support"].size(), 3u);

    const auto decoded = path("decoded.jsonl");
    ASSERT_EQ(run({"decode", "--checkpoint", inheritor, "--data", corpus(), "--out", decoded, "--constrain-decode"}).code,
              0);
    std::istringstream lines(slurp(decoded));
    std::string line;
    std::size_t n = 0;
    while (std::getline(lines, line)) {
        const auto rec = nlohmann::json::parse(line);
        ASSERT_EQ(rec["post"], n);
        TagSequence tags;
        for (const auto& t : rec["tags"]) tags.push_back(*parse_tag(t.get<std::string>()));
        ASSERT_TRUE(is_valid_bioes(tags));
        ++n;
    }
    EXPECT_EQ(n, 320u);
}

TEST(Cli, ConfigFileAndEnvironmentSeed) {
    const auto cfg = path("run.cfg");
    std::ofstream(cfg) << "episodes = 2\nadapt-steps = 1\nk = 5\n";
    const auto a = run({"eval", "--config", cfg, "--checkpoint", checkpoint(), "--data", corpus()});
    ASSERT_EQ(a.code, 0) << a.err;
    const Report rep = report_from_json(nlohmann::ordered_json::parse(a.out));
    EXPECT_EQ(rep.config["episodes"], 2);
    ASSERT_EQ(rep.sections.size(), 1u);
    EXPECT_EQ(rep.sections[0].episodes.size(), 2u);

    ::setenv("MISE_LAB_SEED", "77", 1);
    const auto b = run({"eval", "--config", cfg, "--checkpoint", checkpoint(), "--data", corpus()});
    const auto c = run({"eval", "--config", cfg, "--checkpoint", checkpoint(), "--data", corpus(), "--seed", "77"});
    ::unsetenv("MISE_LAB_SEED");
    EXPECT_EQ(report_from_json(nlohmann::ordered_json::parse(b.out)).config["seed"], 77);
    EXPECT_EQ(b.out, c.out);
    EXPECT_NE(a.out, b.out);
}

TEST(Cli, GradcheckPasses) {
    const auto r = run({"gradcheck", "--gradcheck-models", "3"});
    EXPECT_EQ(r.code, 0);
    const auto j = nlohmann::json::parse(r.out);
    EXPECT_TRUE(j["passed"].get<bool>());
    EXPECT_EQ(j["cases"].size(), 3u);
}

TEST(Cli, ForgetReportsBothMethods) {
    const auto r = run({"forget", "--data", corpus(), "--repeats", "1", "--max-steps", "2", "--embed-dim", "6",
                        "--hidden-dim", "4", "--adapt-steps", "1"});
    ASSERT_EQ(r.code, 0) << r.err;
    const Report rep = report_from_json(nlohmann::ordered_json::parse(r.out));
    ASSERT_EQ(rep.sections.size(), 2u);
    EXPECT_EQ(rep.sections[0].method, "MISE");
    EXPECT_EQ(rep.sections[1].method, "lambda=0");
    EXPECT_EQ(rep.config["repeats"], 1);
}

TEST(Cli, BinaryIsBuilt) {
    // The installed executable answers --help with exit status 0.
    const std::string cmd = std::string("\"") + MISE_LAB_BINARY + "\" --help > /dev/null 2>&1";
    EXPECT_EQ(std::system(cmd.c_str()), 0);
}
