#include "mtlforge/cli.hpp"

#include "mtlforge/config.hpp"
#include "mtlforge/error.hpp"
#include "mtlforge/experiments.hpp"
#include "mtlforge/manifest_io.hpp"
#include "mtlforge/metrics.hpp"
#include "mtlforge/registry.hpp"
#include "mtlforge/schemes.hpp"
#include "mtlforge/tabulate.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <fstream>
#include <sstream>

namespace mtlforge {

namespace {

namespace fs = std::filesystem;

struct Flags {
    std::string config;
    std::string rq, schemes, mixing, order, out, trainer, registry, embeddings;
    std::uint64_t seed = 0;
    std::int64_t budget = 0, quantum = 0;
    std::size_t jobs = 0;
    // One option object per subcommand; a flag is set if any of them was given.
    std::map<std::string, std::vector<CLI::Option*>> given;

    bool has(const std::string& name) const {
        auto it = given.find(name);
        if (it == given.end()) return false;
        return std::any_of(it->second.begin(), it->second.end(), [](auto* o) { return o->count() > 0; });
    }
};

std::string config_key_help() {
    std::ostringstream s;
    s << "\nConfig file keys (JSON object given with --config; flags override the file):\n";
    for (const auto& k : config_keys()) s << "  " << k.name << "\n      " << k.help << "\n";
    s << "\nEnvironment: MTLFORGE_SEED is the seed when neither --seed nor the config sets one.\n"
      << "Exit codes: 0 ok, 1 runtime error, 2 usage error.\n";
    return s.str();
}

void add_common(CLI::App* cmd, Flags& f) {
    f.given["config"].push_back(cmd->add_option("--config", f.config, "JSON config file"));
    f.given["rq"].push_back(cmd->add_option("--rq", f.rq, "research question: rq1, rq2, rq3, rq4"));
    f.given["schemes"].push_back(cmd->add_option("--schemes", f.schemes, "comma-separated schemes: seq,sim,cmtl"));
    f.given["mixing"].push_back(cmd->add_option("--mixing", f.mixing, "proportional or equal (seq and sim)"));
    f.given["seed"].push_back(cmd->add_option("--seed", f.seed, "master seed"));
    f.given["budget"].push_back(cmd->add_option("--budget", f.budget, "pre-finetuning batches for seq and sim"));
    f.given["quantum"].push_back(cmd->add_option("--quantum", f.quantum, "cmtl batches per stage unit"));
    f.given["order"].push_back(cmd->add_option("--order", f.order, "cmtl queue order: ascending or descending"));
    f.given["jobs"].push_back(cmd->add_option("--jobs", f.jobs, "plans run concurrently"));
    f.given["out"].push_back(cmd->add_option("--out", f.out, "output directory"));
    f.given["trainer"].push_back(cmd->add_option("--trainer", f.trainer, "lead-<n> or process:<command>"));
    f.given["registry"].push_back(cmd->add_option("--registry", f.registry, "registry manifest"));
    f.given["embeddings"].push_back(cmd->add_option("--embeddings", f.embeddings, "token vector table for BERTScore"));
    cmd->footer(config_key_help());
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

Config effective_config(const Flags& f) {
    Config c;
    if (auto env = seed_from_env()) c.seed = *env;
    if (f.has("config")) c = load_config(f.config, c);
    if (f.has("rq")) c.rq = parse_rq(f.rq);
    if (f.has("schemes")) {
        c.schemes.clear();
        for (const auto& s : split_list(f.schemes)) c.schemes.push_back(parse_scheme(s));
        if (c.schemes.empty()) throw UsageError("--schemes is empty");
    }
    if (f.has("mixing")) c.mixing = parse_mixing(f.mixing);
    if (f.has("seed")) c.seed = f.seed;
    if (f.has("budget")) {
        if (f.budget <= 0) throw UsageError("--budget must be positive");
        c.budget = f.budget;
    }
    if (f.has("quantum")) {
        if (f.quantum <= 0) throw UsageError("--quantum must be positive");
        c.quantum = f.quantum;
    }
    if (f.has("order")) c.order = parse_order(f.order);
    if (f.has("jobs")) {
        if (f.jobs == 0) throw UsageError("--jobs must be positive");
        c.jobs = f.jobs;
    }
    if (f.has("out")) c.out = f.out;
    if (f.has("trainer")) c.trainer = f.trainer;
    if (f.has("registry")) c.registry = f.registry;
    if (f.has("embeddings")) c.embeddings = f.embeddings;
    return c;
}

Registry open_registry(const Config& c) {
    if (c.registry.empty()) return synthetic_registry(c.seed, c.synthetic_size);
    return load_registry_manifest(c.registry);
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw Error(p.string() + ": cannot open");
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    out << text;
    if (!out) throw Error(p.string() + ": cannot write");
}

std::vector<std::string> read_lines(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw Error(p.string() + ": cannot open");
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        out.push_back(line);
    }
    return out;
}

TrainerFactory make_factory(const Config& c) {
    const auto& t = c.trainer;
    if (t.rfind("lead-", 0) == 0) {
        std::size_t n = 0;
        try {
            std::size_t used = 0;
            n = std::stoul(t.substr(5), &used);
            if (used != t.size() - 5) n = 0;
        } catch (const std::exception&) {
        }
        if (n == 0) throw UsageError("trainer '" + t + "' needs a positive sentence count");
        return [n] { return lead_n_trainer(n); };
    }
    if (t.rfind("process:", 0) == 0 && t.size() > 8) {
        auto counter = std::make_shared<std::atomic<int>>(0);
        const auto command = t.substr(8);
        const auto work = c.out / "work";
        const auto hparams = c.hparams;
        return [=] {
            const auto dir = work / std::to_string((*counter)++);
            return std::make_unique<ProcessTrainer>(command, dir, hparams);
        };
    }
    throw UsageError("unknown trainer '" + t + "' (expected lead-<n> or process:<command>)");
}

std::vector<DownstreamData> downstream_data(const Config& c, const std::vector<std::string>& names) {
    std::vector<DownstreamData> out;
    for (const auto& name : names) {
        if (!c.eval_set.empty()) {
            if (c.finetune_set.empty()) throw UsageError("config key 'finetune_set' is required with 'eval_set'");
            out.push_back({name, load_eval_pairs(c.finetune_set), load_eval_pairs(c.eval_set)});
        } else {
            out.push_back(synth_downstream(name, c.finetune_size, c.eval_size, c.seed));
        }
    }
    return out;
}

std::optional<Embedder> open_embedder(const Config& c) {
    if (c.embeddings.empty()) return std::nullopt;
    return lookup_embedder(c.embeddings);
}

std::vector<ExperimentPlan> load_plans(const std::vector<std::string>& files) {
    std::vector<ExperimentPlan> plans;
    for (const auto& f : files) {
        try {
            plans.push_back(ExperimentPlan::parse(read_file(f)));
            plans.back().validate();
        } catch (const UsageError&) {
            throw;
        } catch (const Error& e) {
            throw Error(f + ": " + e.what());
        }
    }
    return plans;
}

std::vector<RunRecord> records_from(const std::string& log, const std::string& csv, const Config& c,
                                    std::string& metric) {
    if (!csv.empty() && !log.empty()) throw UsageError("give either --log or --csv, not both");
    if (!csv.empty()) {
        std::ifstream in(csv);
        if (!in) throw Error(csv + ": cannot open");
        auto res = ingest_results_csv(in, csv);
        if (metric.empty()) metric = res.metric;
        else if (metric != res.metric)
            throw UsageError("--metric " + metric + " but " + csv + " holds " + res.metric);
        return latest_per_cell(res.records);
    }
    const fs::path path = log.empty() ? c.out / "runs.jsonl" : fs::path(log);
    if (!fs::exists(path)) throw Error(path.string() + ": no run log");
    if (metric.empty()) metric = "meteor";
    return latest_per_cell(RunLog(path).read());
}

// ---------------------------------------------------------------------------

int cmd_plan(const Config& c, std::ostream& out) {
    const auto registry = open_registry(c);
    const auto plans = plan_rq(c.rq, registry, c.plan_options());
    const auto dir = c.out / "plans";
    fs::create_directories(dir);
    for (const auto& p : plans) write_file(dir / (p.id() + ".json"), p.serialize());
    out << "wrote " << plans.size() << " plan(s) to " << dir.string() << '\n';
    return 0;
}

int cmd_schedule(const Config& c, const std::vector<std::string>& files, std::ostream& out) {
    if (files.empty()) throw UsageError("schedule needs at least one plan file");
    const auto registry = open_registry(c);
    const auto dir = c.out / "manifests";
    for (const auto& p : load_plans(files)) {
        const auto m = build_schedule(registry, p.families, p.scheme);
        const auto path = dir / (p.id() + ".jsonl");
        fs::create_directories(dir);
        write_manifest(path, m);
        out << m.digest() << "  " << path.string() << '\n';
    }
    return 0;
}

int cmd_materialize(const Config& c, const std::string& manifest_path, const std::string& stream_path,
                    std::ostream& out) {
    const auto registry = open_registry(c);
    const auto m = read_manifest(manifest_path);
    MaterializeOptions opts;
    opts.truncation = TruncationLimits{static_cast<std::size_t>(c.hparams.max_source_length),
                                       static_cast<std::size_t>(c.hparams.max_target_length)};
    BatchStream stream(m, registry, Rng(m.config.seed), opts);
    if (stream_path.empty()) {
        write_batch_stream(out, stream);
        return 0;
    }
    std::ofstream file(stream_path);
    if (!file) throw Error(stream_path + ": cannot write");
    const auto n = write_batch_stream(file, stream);
    out << "wrote " << n << " batch(es) to " << stream_path << '\n';
    return 0;
}

int cmd_run(const Config& c, const std::vector<std::string>& files, std::ostream& out) {
    const auto registry = open_registry(c);
    auto plans = files.empty() ? plan_rq(c.rq, registry, c.plan_options()) : load_plans(files);
    std::vector<std::string> names = c.downstream;
    for (const auto& p : plans)
        if (std::find(names.begin(), names.end(), p.downstream) == names.end()) names.push_back(p.downstream);
    const auto data = downstream_data(c, names);
    const auto embedder = open_embedder(c);
    RunOptions opts;
    opts.hparams = c.hparams;
    opts.embedder = embedder ? &*embedder : nullptr;
    const auto factory = make_factory(c);

    fs::create_directories(c.out);
    write_file(c.out / "config.json", c.to_json());
    RunLog log(c.out / "runs.jsonl", c.record_wall_time);
    log.verify();
    for (const auto& d : data) {
        if (std::none_of(plans.begin(), plans.end(), [&](const auto& p) { return p.downstream == d.name; }))
            continue;
        auto trainer = factory();
        log.append(run_baseline(d, *trainer, opts));
    }
    const auto records = run_all(plans, factory, registry, data, opts, c.jobs);
    for (const auto& r : records) {
        log.append(r);
        out << r.plan.id() << "  batches=" << r.batches << "  rouge1=" << r.report.rouge1_f
            << "  meteor=" << r.report.meteor << '\n';
    }
    out << "appended " << records.size() << " run(s) to " << log.path().string() << '\n';
    return 0;
}

int cmd_eval(const Config& c, const std::string& pred, const std::string& ref, std::ostream& out) {
    if (pred.empty() || ref.empty()) throw UsageError("eval needs --pred and --ref");
    const auto p = read_lines(pred);
    const auto r = read_lines(ref);
    const auto embedder = open_embedder(c);
    const auto report = evaluate_corpus(p, r, embedder ? &*embedder : nullptr);
    out << report_to_json_text(report) << '\n';
    return 0;
}

int cmd_tabulate(const Config& c, const std::string& log, const std::string& csv, std::string metric, bool plot,
                 std::ostream& out) {
    const auto records = records_from(log, csv, c, metric);
    const auto table = tabulate(records, metric);
    const auto text = table.to_text();
    out << text;
    write_file(c.out / ("table-" + metric + ".txt"), text);
    write_file(c.out / ("table-" + metric + ".json"), table.to_json());
    if (plot) write_file(c.out / "plots" / (metric + ".svg"), table.to_svg());
    return 0;
}

int cmd_plot(const Config& c, const std::string& log, const std::string& csv, std::string metric,
             std::ostream& out) {
    const bool all = metric.empty() && csv.empty();
    const auto records = records_from(log, csv, c, metric);
    std::vector<std::string> metrics = all ? metric_names() : std::vector<std::string>{metric};
    for (const auto& m : metrics) {
        if (m == "bertscore" && all &&
            std::any_of(records.begin(), records.end(), [](const auto& r) { return !r.report.bertscore_f; }))
            continue;
        const auto path = c.out / "plots" / (m + ".svg");
        write_file(path, tabulate(records, m).to_svg());
        out << "wrote " << path.string() << '\n';
    }
    return 0;
}

int cmd_compare(const Config& c, const std::string& log, const std::string& csv, std::string metric,
                std::ostream& out) {
    const auto records = records_from(log, csv, c, metric);
    for (const auto& d : compare_to_baseline(records, metric)) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "%.6f  %.6f  %+.6f", d.value, d.baseline, d.delta);
        out << combination_label(d.families) << "  " << d.dataset << "  " << to_string(d.scheme) << "  " << buf
            << '\n';
    }
    return 0;
}

int cmd_synth(const Config& c, std::size_t size, std::ostream& out) {
    const auto registry = synthetic_registry(c.seed, size == 0 ? c.synthetic_size : size);
    const auto dir = c.out / "registry";
    fs::create_directories(dir / "data");
    // Manifest paths are relative to the manifest, so point every task at
    // its file before writing.
    Registry located;
    for (auto spec : registry.tasks()) {
        spec.source_path = fs::path("data") / (spec.name + ".jsonl");
        write_dataset(dir / spec.source_path, registry.examples(spec.name));
        located.register_task(spec);
    }
    write_registry_manifest(dir / "registry.json", located);
    fs::create_directories(c.out / "downstream");
    for (const auto& name : c.downstream) {
        const auto d = synth_downstream(name, c.finetune_size, c.eval_size, c.seed);
        write_eval_pairs(c.out / "downstream" / (name + ".train.jsonl"), d.train);
        write_eval_pairs(c.out / "downstream" / (name + ".test.jsonl"), d.test);
    }
    out << "wrote " << registry.tasks().size() << " task(s) to " << dir.string() << '\n';
    return 0;
}

} // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"mtlforge: multi-task pre-finetuning schedules, runs and result tables", "mtlforge"};
    app.require_subcommand(1);
    app.footer(config_key_help());

    Flags f;
    std::vector<std::string> files;
    std::string manifest, stream, pred, ref, log, csv, metric;
    std::size_t synth_size = 0;
    bool plot = false;

    auto* plan = app.add_subcommand("plan", "write one plan file per experiment of a research question");
    auto* schedule = app.add_subcommand("schedule", "build the manifest of each plan file and print its digest");
    schedule->add_option("plans", files, "plan files")->check(CLI::ExistingFile);
    auto* materialize = app.add_subcommand("materialize", "write the batch stream of a manifest");
    materialize->add_option("manifest", manifest, "manifest file")->required()->check(CLI::ExistingFile);
    materialize->add_option("--stream", stream, "output file (default standard output)");
    auto* run = app.add_subcommand("run", "run plan files (or the --rq matrix) and append to the run log");
    run->add_option("plans", files, "plan files")->check(CLI::ExistingFile);
    auto* eval = app.add_subcommand("eval", "score predictions against references, one per line");
    eval->add_option("--pred", pred, "prediction file")->check(CLI::ExistingFile);
    eval->add_option("--ref", ref, "reference file")->check(CLI::ExistingFile);
    auto* tab = app.add_subcommand("tabulate", "render the results table of a run log or CSV");
    auto* plt = app.add_subcommand("plot", "render per-metric bar charts as SVG");
    auto* cmp = app.add_subcommand("compare", "print signed deltas against the baseline");
    for (auto* cmd : {tab, plt, cmp}) {
        cmd->add_option("--log", log, "run log (default <out>/runs.jsonl)");
        cmd->add_option("--csv", csv, "CSV with header families,dataset,scheme,<metric>");
        cmd->add_option("--metric", metric, "bertscore, bleu, meteor, rouge1, rouge2 or rougeL");
    }
    tab->add_flag("--plot", plot, "also write an SVG chart");
    auto* synth = app.add_subcommand("synth", "write a synthetic registry and downstream splits");
    synth->add_option("--size", synth_size, "base example count per task");
    for (auto* cmd : {plan, schedule, materialize, run, eval, tab, plt, cmp, synth}) add_common(cmd, f);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return 2;
    }

    try {
        const auto c = effective_config(f);
        if (plan->parsed()) return cmd_plan(c, out);
        if (schedule->parsed()) return cmd_schedule(c, files, out);
        if (materialize->parsed()) return cmd_materialize(c, manifest, stream, out);
        if (run->parsed()) return cmd_run(c, files, out);
        if (eval->parsed()) return cmd_eval(c, pred, ref, out);
        if (tab->parsed()) return cmd_tabulate(c, log, csv, metric, plot, out);
        if (plt->parsed()) return cmd_plot(c, log, csv, metric, out);
        if (cmp->parsed()) return cmd_compare(c, log, csv, metric, out);
        if (synth->parsed()) return cmd_synth(c, synth_size, out);
        return 2;
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

} // namespace mtlforge
