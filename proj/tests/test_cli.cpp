#include "mtlforge/cli.hpp"
#include "mtlforge/config.hpp"
#include "mtlforge/error.hpp"
#include "mtlforge/experiments.hpp"

#include "reference_grids.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace mtlforge;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code = 0;
    std::string out;
    std::string err;
};

Result cli(std::vector<std::string> args) {
    args.insert(args.begin(), "mtlforge");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("mtlforge-cli-" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::size_t count_files(const fs::path& dir) {
    std::size_t n = 0;
    for (const auto& e : fs::directory_iterator(dir)) n += e.is_regular_file();
    return n;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> files_in(const fs::path& dir) {
    std::vector<std::string> out;
    for (const auto& e : fs::directory_iterator(dir)) out.push_back(e.path().string());
    std::sort(out.begin(), out.end());
    return out;
}

// Seed variable set for the lifetime of the guard.
struct EnvSeed {
    explicit EnvSeed(const char* v) { ::setenv("MTLFORGE_SEED", v, 1); }
    ~EnvSeed() { ::unsetenv("MTLFORGE_SEED"); }
};

} // namespace

TEST_CASE("help documents every config key") {
    const auto top = cli({"--help"});
    CHECK(top.code == 0);
    const auto sub = cli({"plan", "--help"});
    CHECK(sub.code == 0);
    for (const auto& k : config_keys()) {
        CAPTURE(k.name);
        CHECK(top.out.find(k.name) != std::string::npos);
        CHECK(sub.out.find(k.name) != std::string::npos);
    }
    for (const auto* flag : {"--config", "--rq", "--schemes", "--mixing", "--seed", "--budget", "--quantum",
                             "--order", "--jobs", "--out"})
        CHECK(sub.out.find(flag) != std::string::npos);
}

TEST_CASE("config keys match the config file parser") {
    Config c;
    for (const auto& k : config_keys()) {
        // Every documented key is accepted; the value type errors are fine.
        try {
            apply_config_json("{\"" + k.name + "\": null}", c);
        } catch (const UsageError& e) {
            CHECK(std::string(e.what()).find("unknown config key") == std::string::npos);
        }
    }
    CHECK_THROWS_WITH_AS(apply_config_json(R"({"bogus": 1})", c), doctest::Contains("'bogus'"), UsageError);
    CHECK_THROWS_WITH_AS(apply_config_json(R"({"hyperparameters": {"lr": 1}})", c),
                         doctest::Contains("hyperparameters.lr"), UsageError);
    const auto h = apply_config_json(R"({"hyperparameters": {"epochs": 5}})", c).hparams;
    CHECK(h.epochs == 5);
    CHECK(h.learning_rate == 5e-05);
}

TEST_CASE("hyperparameter defaults") {
    const Hyperparameters h;
    CHECK(h.optimizer == "AdamW");
    CHECK(h.learning_rate == 5e-05);
    CHECK(h.lr_scheduler == "linear");
    CHECK(h.dropout == 0.1);
    CHECK(h.weight_decay == 0.0);
    CHECK(h.warmup_steps == 0);
    CHECK(h.max_source_length == 512);
    CHECK(h.max_target_length == 128);
    CHECK(h.finetune_max_source_length == 1024);
    CHECK(h.finetune_max_target_length == 512);
    CHECK(Hyperparameters::from_json(h.canonical_json()).canonical_json() == h.canonical_json());
}

TEST_CASE("plan subcommand") {
    const auto dir = scratch("plan");
    auto r = cli({"plan", "--rq", "rq3", "--out", (dir / "a").string()});
    CHECK(r.code == 0);
    CHECK(count_files(dir / "a" / "plans") == 30);
    r = cli({"plan", "--rq", "rq1", "--schemes", "seq", "--out", (dir / "b").string()});
    CHECK(r.code == 0);
    CHECK(count_files(dir / "b" / "plans") == 7);
    r = cli({"plan", "--rq", "rq9", "--out", (dir / "c").string()});
    CHECK(r.code == 2);
    CHECK(r.err.find("rq9") != std::string::npos);
    r = cli({"plan", "--frobnicate"});
    CHECK(r.code == 2);
    r = cli({});
    CHECK(r.code == 2);

    std::ofstream(dir / "bad.json") << R"({"rq": "rq1", "colour": "blue"})";
    r = cli({"plan", "--config", (dir / "bad.json").string(), "--out", (dir / "d").string()});
    CHECK(r.code == 2);
    CHECK(r.err.find("colour") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("flags override the config file") {
    const auto dir = scratch("precedence");
    std::ofstream(dir / "c.json") << R"({"rq": "rq2", "schemes": ["sim"], "seed": 5})";
    auto r = cli({"plan", "--config", (dir / "c.json").string(), "--out", (dir / "a").string()});
    CHECK(r.code == 0);
    CHECK(count_files(dir / "a" / "plans") == 5);
    r = cli({"plan", "--config", (dir / "c.json").string(), "--rq", "rq3", "--seed", "9", "--out",
             (dir / "b").string()});
    CHECK(r.code == 0);
    const auto plans = files_in(dir / "b" / "plans");
    REQUIRE(plans.size() == 10);
    CHECK(ExperimentPlan::parse(slurp(plans[0])).seed == 9);
    fs::remove_all(dir);
}

TEST_CASE("seed from the environment") {
    const auto dir = scratch("env");
    {
        EnvSeed guard("42");
        CHECK(cli({"plan", "--rq", "rq2", "--out", (dir / "a").string()}).code == 0);
        CHECK(ExperimentPlan::parse(slurp(files_in(dir / "a" / "plans")[0])).seed == 42);
        CHECK(cli({"plan", "--rq", "rq2", "--seed", "3", "--out", (dir / "b").string()}).code == 0);
        CHECK(ExperimentPlan::parse(slurp(files_in(dir / "b" / "plans")[0])).seed == 3);
    }
    {
        EnvSeed guard("not-a-number");
        CHECK(cli({"plan", "--rq", "rq2", "--out", (dir / "c").string()}).code == 2);
    }
    CHECK(cli({"plan", "--rq", "rq2", "--out", (dir / "d").string()}).code == 0);
    CHECK(ExperimentPlan::parse(slurp(files_in(dir / "d" / "plans")[0])).seed == 0);
    fs::remove_all(dir);
}

TEST_CASE("schedule is reproducible and checks the registry") {
    const auto dir = scratch("schedule");
    REQUIRE(cli({"plan", "--rq", "rq1", "--schemes", "cmtl", "--out", dir.string()}).code == 0);
    const auto all = dir / "plans" / "rq1-cls+cmns+nli+rc+rc_plus+sum-cmtl-reddit_tifu.json";
    REQUIRE(fs::exists(all));
    const auto first = cli({"schedule", all.string(), "--out", dir.string()});
    CHECK(first.code == 0);
    const auto manifest = dir / "manifests" / "rq1-cls+cmns+nli+rc+rc_plus+sum-cmtl-reddit_tifu.jsonl";
    const auto bytes = slurp(manifest);
    const auto second = cli({"schedule", all.string(), "--out", dir.string()});
    CHECK(second.out == first.out);
    CHECK(slurp(manifest) == bytes);

    const auto m = read_manifest(manifest);
    REQUIRE(m.stages.size() == 18);
    const auto& s3 = m.stages[2].entries;
    REQUIRE(s3.size() == 3);
    CHECK(s3[0].n_batches == 1500);
    CHECK(s3[1].n_batches == 500);
    CHECK(s3[2].n_batches == 500);

    // A registry whose task file is gone fails naming the task.
    REQUIRE(cli({"synth", "--size", "4", "--out", (dir / "syn").string()}).code == 0);
    const auto reg = dir / "syn" / "registry" / "registry.json";
    REQUIRE(fs::exists(dir / "syn" / "registry" / "data" / "squad.jsonl"));
    fs::remove(dir / "syn" / "registry" / "data" / "squad.jsonl");
    const auto missing = cli({"schedule", all.string(), "--registry", reg.string(), "--out", dir.string()});
    CHECK(missing.code == 1);
    CHECK(missing.err.find("squad") != std::string::npos);
    CHECK(cli({"schedule", "--out", dir.string()}).code == 2);
    fs::remove_all(dir);
}

TEST_CASE("materialize writes the wire stream") {
    const auto dir = scratch("materialize");
    REQUIRE(cli({"plan", "--rq", "rq2", "--schemes", "sim", "--budget", "30", "--out", dir.string()}).code == 0);
    const auto plan = files_in(dir / "plans")[0];
    REQUIRE(cli({"schedule", plan, "--out", dir.string()}).code == 0);
    const auto manifest = files_in(dir / "manifests")[0];
    const auto r = cli({"materialize", manifest, "--stream", (dir / "s.jsonl").string(), "--out", dir.string()});
    CHECK(r.code == 0);
    CHECK(r.out.find("wrote 30 batch(es)") != std::string::npos);
    const auto stdout_stream = cli({"materialize", manifest, "--out", dir.string()});
    CHECK(stdout_stream.out == slurp(dir / "s.jsonl"));
    fs::remove_all(dir);
}

TEST_CASE("eval subcommand") {
    const auto dir = scratch("eval");
    std::ofstream(dir / "p.txt") << "the cat sat on the mat\nsummaries are short\n";
    std::ofstream(dir / "q.txt") << "only one line\n";
    const auto r = cli({"eval", "--pred", (dir / "p.txt").string(), "--ref", (dir / "p.txt").string()});
    CHECK(r.code == 0);
    const auto rep = r.out;
    CHECK(rep.find("\"bertscore\":null") != std::string::npos);
    CHECK(rep.find("\"bleu\":1.0") != std::string::npos);
    CHECK(rep.find("\"rouge1\":1.0") != std::string::npos);
    CHECK(rep.find("\"rouge2\":1.0") != std::string::npos);
    CHECK(rep.find("\"rougeL\":1.0") != std::string::npos);
    const auto mismatch = cli({"eval", "--pred", (dir / "p.txt").string(), "--ref", (dir / "q.txt").string()});
    CHECK(mismatch.code == 1);
    CHECK(cli({"eval", "--pred", (dir / "p.txt").string()}).code == 2);
    fs::remove_all(dir);
}

TEST_CASE("run, tabulate, compare and plot") {
    const auto dir = scratch("run");
    const auto out = dir.string();
    const auto r = cli({"run", "--rq", "rq2", "--budget", "40", "--quantum", "2", "--jobs", "2", "--out", out});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("appended 15 run(s)") != std::string::npos);
    const auto records = RunLog(dir / "runs.jsonl").read();
    REQUIRE(records.size() == 16);
    CHECK(records[0].is_baseline);
    for (const auto& rec : records) CHECK(rec.report.rouge1_f == 1.0);
    CHECK(fs::exists(dir / "config.json"));

    const auto t = cli({"tabulate", "--metric", "rouge1", "--plot", "--out", out});
    CHECK(t.code == 0);
    CHECK(fs::exists(dir / "table-rouge1.txt"));
    CHECK(fs::exists(dir / "table-rouge1.json"));
    CHECK(fs::exists(dir / "plots" / "rouge1.svg"));
    CHECK(t.out.find("SUM+CLS") != std::string::npos);
    const auto c = cli({"compare", "--metric", "rouge1", "--out", out});
    CHECK(c.code == 0);
    CHECK(c.out.find("+0.000") != std::string::npos);
    CHECK(cli({"plot", "--out", out}).code == 0);
    CHECK(cli({"tabulate", "--metric", "cider", "--out", out}).code != 0);
    CHECK(cli({"tabulate", "--out", (dir / "empty").string()}).code == 1);
    fs::remove_all(dir);
}

TEST_CASE("tabulate ingests reference values") {
    const auto dir = scratch("ingest");
    std::ofstream(dir / "t.csv") << reference::csv(reference::grids()[0]);
    const auto r = cli({"tabulate", "--csv", (dir / "t.csv").string(), "--out", dir.string()});
    CHECK(r.code == 0);
    CHECK(r.out.find("_*0.235*_") != std::string::npos);
    CHECK(r.out.find("_*0.289*_") != std::string::npos);
    CHECK(r.out.find("*0.231*") != std::string::npos);
    const auto cmp = cli({"compare", "--csv", (dir / "t.csv").string(), "--out", dir.string()});
    CHECK(cmp.code == 0);
    CHECK(cmp.out.find("SUM  reddit_tifu  seq  0.231000  0.087000  +0.144000") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("installed binary exit codes") {
    const std::string tool = MTLFORGE_TOOL;
    auto status = [](const std::string& cmd) {
        const int s = std::system((cmd + " >/dev/null 2>&1").c_str());
        return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
    };
    CHECK(status(tool + " --help") == 0);
    CHECK(status(tool + " plan --rq rq7") == 2);
    CHECK(status(tool + " eval --pred /nonexistent/p --ref /nonexistent/r") == 2);
}
