// Command-line front end: synth | stats | train | eval | report.
// Exit codes: 0 ok, 2 usage, 3 data, 4 numeric or internal.
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "CLI11.hpp"
#include "acc/checkpoint.hpp"
#include "acc/config.hpp"
#include "acc/evaluation.hpp"

namespace fs = std::filesystem;
using namespace acc;

namespace {

void apply_thread_cap() {
    const char* v = std::getenv("ACC_THREADS");
    if (!v || !*v) return;
    const int n = std::atoi(v);
    if (n < 1) {
        std::cerr << "warning: ignoring ACC_THREADS=\"" << v << "\" (want a positive integer)\n";
        return;
    }
#ifdef _OPENMP
    omp_set_num_threads(n);
#else
    (void)n;
#endif
}

std::string fmt4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

std::string format_histogram(const Histogram& h, Rational fps) {
    size_t name_w = 8;  // "excluded"
    for (const HistogramRow& r : h.rows) name_w = std::max(name_w, r.name.size());
    auto pad = [&](const std::string& s) { return s + std::string(name_w - s.size() + 2, ' '); };
    char buf[64];
    std::string out = dim_name(h.dim) + " frames at " + std::to_string(fps.num) + "/" +
                      std::to_string(fps.den) + " fps\n";
    out += pad("class") + "  frames       %\n";
    for (const HistogramRow& r : h.rows) {
        std::snprintf(buf, sizeof buf, "%8lld  %6.2f\n", static_cast<long long>(r.count), r.pct);
        out += pad(r.name) + buf;
    }
    if (h.dim == Dimension::Place) {
        const double pct = h.total > 0 ? 100.0 * double(h.excluded) / double(h.total) : 0.0;
        std::snprintf(buf, sizeof buf, "%8lld  %6.2f\n", static_cast<long long>(h.excluded), pct);
        out += pad("excluded") + buf;
    }
    std::snprintf(buf, sizeof buf, "%8lld\n", static_cast<long long>(h.total));
    out += pad("total") + buf;
    return out;
}

struct SynthArgs {
    std::string out, spec, map = ACC_DEFAULT_PHONEME_MAP;
    uint64_t seed = 0;
    bool seed_set = false;
};

// Flag values and config files are operator input; surface their problems as
// usage errors (exit 2) rather than data errors.
template <class F>
auto as_usage(F f) -> decltype(f()) {
    try {
        return f();
    } catch (const DataError& e) {
        throw UsageError(e.what());
    }
}

int run_synth(const SynthArgs& a) {
    RunConfig rc =
        as_usage([&] { return a.spec.empty() ? RunConfig{} : load_run_config(a.spec); });
    if (a.seed_set) rc.synth.seed = a.seed;
    const PhonemeMap pm = PhonemeMap::load(a.map);
    const Manifest m = synthesize_corpus(rc.synth, a.out, pm);
    std::cout << "manifest: " << (fs::path(a.out) / "manifest.json").string() << "\n";
    std::cout << "utterances: " << m.utterances.size() << ", speakers: "
              << speaker_roster(m).size() << "\n\n";
    for (Dimension d : {Dimension::Manner, Dimension::Place, Dimension::Voicing})
        std::cout << format_histogram(class_histogram(m, d, pm, rc.pipeline.fps_target),
                                      rc.pipeline.fps_target)
                  << "\n";
    return 0;
}

struct StatsArgs {
    std::string manifest, dimension, map = ACC_DEFAULT_PHONEME_MAP;
    std::string fps = "15/1";
};

int run_stats(const StatsArgs& a) {
    const Dimension dim = as_usage([&] { return dim_from_name(a.dimension); });
    const Rational fps = as_usage([&] {
        return parse_run_config("[pipeline]\nfps = " + a.fps + "\n", "--fps")
            .pipeline.fps_target;
    });
    const PhonemeMap pm = PhonemeMap::load(a.map);
    const Manifest m = load_manifest(a.manifest, {true, false, true});
    std::cout << format_histogram(class_histogram(m, dim, pm, fps), fps);
    return 0;
}

// Flags shared by train and eval; value fields are applied only when the
// option was actually passed, so the config file keeps its say otherwise.
struct RunArgs {
    std::string manifest, dimension, mode, config, out, map = ACC_DEFAULT_PHONEME_MAP;
    std::string policy;
    int fold = 0;
    int folds_k = 0;
    uint64_t seed = 0;
    int epochs = 0;
    int64_t batch_size = 0;
    double lr = 0, lambda = 0;
    CLI::Option *o_fold = nullptr, *o_folds_k = nullptr, *o_seed = nullptr, *o_epochs = nullptr,
                *o_batch = nullptr, *o_lr = nullptr, *o_lambda = nullptr, *o_policy = nullptr;
};

RunConfig resolve_config(const RunArgs& a) {
    return as_usage([&] {
        RunConfig rc = a.config.empty() ? RunConfig{} : load_run_config(a.config);
        rc.model.mode = mode_from_name(a.mode);
        rc.model.dim = dim_from_name(a.dimension);
        if (a.o_fold && a.o_fold->count()) rc.train.fold = a.fold;
        if (a.o_folds_k && a.o_folds_k->count()) rc.folds.k = a.folds_k;
        if (a.o_seed && a.o_seed->count()) rc.train.seed = a.seed;
        if (a.o_epochs && a.o_epochs->count()) rc.train.epochs = a.epochs;
        if (a.o_batch && a.o_batch->count()) rc.train.batch_size = a.batch_size;
        if (a.o_lr && a.o_lr->count()) rc.train.lr = static_cast<real>(a.lr);
        if (a.o_lambda && a.o_lambda->count()) rc.model.lambda_cos = static_cast<real>(a.lambda);
        if (a.o_policy && a.o_policy->count()) rc.folds.policy = fold_policy_from_name(a.policy);
        rc.finalize();
        return rc;
    });
}

int run_train(const RunArgs& a) {
    RunConfig rc = resolve_config(a);
    const PhonemeMap pm = PhonemeMap::load(a.map);
    const bool needs_audio = rc.model.mode == Mode::UniA || rc.model.mode == Mode::Fusion;
    bool want_audio = needs_audio || rc.model.mode == Mode::Contrast;

    Manifest m;
    if (want_audio && !needs_audio) {
        try {
            m = load_manifest(a.manifest, {true, true, true});
        } catch (const IoError&) {
            m = load_manifest(a.manifest, {true, false, true});
            want_audio = false;
            std::cerr << "note: audio files missing; training without the alignment term\n";
        }
    } else {
        m = load_manifest(a.manifest, {true, want_audio, true});
    }

    std::cout << format_run_config(rc) << "\n";
    const Dataset ds = build_dataset(m, pm, rc.pipeline, want_audio);
    const FoldPlan plan = make_folds(speaker_roster(m), rc.folds.k, rc.folds.seed,
                                     rc.folds.policy);
    const fs::path out = a.out.empty()
                             ? fs::path("runs") / (mode_name(rc.model.mode) + "-" +
                                                   dim_name(rc.model.dim) + "-fold" +
                                                   std::to_string(rc.train.fold))
                             : fs::path(a.out);

    const TrainResult res = train_run(ds, m, plan, rc.model, rc.train, out, arch_hash(rc));
    std::cout << "epochs run: " << res.epochs_run << "\n";
    std::cout << "best epoch: " << res.best_epoch << " (val macro F1 "
              << fmt4(double(res.best_val_macro_f1)) << ")\n";
    std::cout << "best checkpoint: " << res.best_checkpoint.string() << "\n";
    std::cout << "final checkpoint: " << res.final_checkpoint.string() << "\n";
    std::cout << "history: " << res.history.string() << "\n";
    std::cout << "summary: " << res.summary.string() << "\n";
    return 0;
}

struct EvalArgs {
    RunArgs run;
    std::string checkpoint, split = "test";
    std::vector<std::string> report = {"csv"};
};

int run_eval(const EvalArgs& a) {
    RunConfig rc = resolve_config(a.run);
    std::set<std::string> formats(a.report.begin(), a.report.end());
    for (const std::string& f : formats)
        if (f != "csv" && f != "svg")
            throw UsageError("unknown report format \"" + f + "\" (expected csv or svg)");
    if (a.split != "train" && a.split != "val" && a.split != "test")
        throw UsageError("unknown split \"" + a.split + "\" (expected train, val, or test)");

    const PhonemeMap pm = PhonemeMap::load(a.run.map);
    // Only the bimodal head needs audio at inference; Contrast classifies
    // from images alone.
    const bool needs_audio = rc.model.mode == Mode::UniA || rc.model.mode == Mode::Fusion;
    const Manifest m = load_manifest(a.run.manifest, {true, needs_audio, true});
    const Dataset ds = build_dataset(m, pm, rc.pipeline, needs_audio);
    const FoldPlan plan = make_folds(speaker_roster(m), rc.folds.k, rc.folds.seed,
                                     rc.folds.policy);
    if (rc.train.fold < 0 || rc.train.fold >= static_cast<int>(plan.folds.size()))
        throw UsageError("fold " + std::to_string(rc.train.fold) + " of a " +
                         std::to_string(plan.folds.size()) + "-fold plan");
    const SplitIndices si = split_examples(ds, m, plan, rc.train.fold);
    const std::vector<size_t>& idx =
        a.split == "train" ? si.train : (a.split == "val" ? si.val : si.test);
    if (idx.empty()) throw DataError("the " + a.split + " split has no frames");

    ParamStore ps;
    Rng rng(0);  // initial values are immediately overwritten by the checkpoint
    const Classifier clf(rc.model, ds.window, ps, rng);
    load_checkpoint(ps, a.checkpoint, arch_hash(rc));

    const int64_t batch = rc.train.batch_size;
    const ConfusionMatrix cm = eval_confusion(clf, ds, idx, rc.model.dim, batch);
    const std::vector<Prf> per = prf(cm);
    const std::vector<MetricColumn> cols = {{mode_name(rc.model.mode), per}};

    const fs::path out = a.run.out.empty() ? fs::path(a.checkpoint).parent_path()
                                           : fs::path(a.run.out);
    fs::create_directories(out.empty() ? fs::path(".") : out);
    const std::string stem = dim_name(rc.model.dim);
    const fs::path csv = out / (stem + "_metrics.csv");
    const fs::path conf = out / (stem + "_confusion.json");
    write_metrics_csv(csv, rc.model.dim, cols);
    write_confusion_json(conf, rc.model.dim, cm);

    std::cout << "split: " << a.split << " (" << idx.size() << " frames, " << cm.total()
              << " scored)\n\n";
    std::cout << format_metrics(rc.model.dim, cols) << "\n";
    std::cout << "macro F1: " << fmt4(double(macro(per).f1)) << "\n";
    std::cout << "metrics: " << csv.string() << "\n";
    std::cout << "confusion: " << conf.string() << "\n";
    if (formats.count("svg")) {
        const fs::path svg = out / (stem + "_f1.svg");
        write_f1_svg(svg, {{dim_name(rc.model.dim), mode_name(rc.model.mode), macro(per).f1}});
        std::cout << "chart: " << svg.string() << "\n";
    }
    return 0;
}

struct ReportArgs {
    std::vector<std::string> inputs;
    std::string out = ".";
    bool svg = false;
};

int run_report(const ReportArgs& a) {
    std::map<int, std::vector<ConfusionMatrix>> by_dim;
    for (const std::string& path : a.inputs) {
        Dimension d = Dimension::Manner;
        ConfusionMatrix cm = read_confusion_json(path, &d);
        by_dim[static_cast<int>(d)].push_back(std::move(cm));
    }
    fs::create_directories(a.out);
    std::vector<F1Bar> bars;
    for (const auto& [di, cms] : by_dim) {
        const Dimension dim = static_cast<Dimension>(di);
        ConfusionMatrix pooled = cms.front();
        for (size_t i = 1; i < cms.size(); ++i) pooled.merge(cms[i]);
        const std::vector<Prf> pooled_prf = prf(pooled);

        // Mean-over-folds: average the per-class metrics of each input file.
        std::vector<Prf> mean(pooled_prf.size());
        for (const ConfusionMatrix& cm : cms) {
            const std::vector<Prf> one = prf(cm);
            for (size_t c = 0; c < mean.size(); ++c) {
                mean[c].precision += one[c].precision / real(cms.size());
                mean[c].recall += one[c].recall / real(cms.size());
                mean[c].f1 += one[c].f1 / real(cms.size());
            }
        }

        const std::vector<MetricColumn> cols = {{"pooled", pooled_prf}, {"mean_folds", mean}};
        const fs::path csv = fs::path(a.out) / ("report_" + dim_name(dim) + ".csv");
        write_metrics_csv(csv, dim, cols);
        std::cout << format_metrics(dim, cols) << "(" << cms.size() << " folds pooled)\n";
        std::cout << "report: " << csv.string() << "\n\n";
        bars.push_back({dim_name(dim), "pooled", macro(pooled_prf).f1});
        bars.push_back({dim_name(dim), "mean_folds", macro(mean).f1});
    }
    if (a.svg) {
        const fs::path svg = fs::path(a.out) / "report_f1.svg";
        write_f1_svg(svg, bars);
        std::cout << "chart: " << svg.string() << "\n";
    }
    return 0;
}

void add_run_options(CLI::App* cmd, RunArgs& a, bool training) {
    cmd->add_option("--manifest", a.manifest, "corpus manifest.json")->required();
    cmd->add_option("--dimension", a.dimension, "manner, place, or voicing")->required();
    cmd->add_option("--mode", a.mode, "univ, unia, fusion, or contrast")->required();
    cmd->add_option("--config", a.config, "run config file");
    cmd->add_option("--out", a.out, "output directory");
    cmd->add_option("--phoneme-map", a.map, "phoneme class table (TSV)");
    a.o_fold = cmd->add_option("--fold", a.fold, "fold index (default 0)");
    a.o_folds_k = cmd->add_option("--folds-k", a.folds_k, "number of folds (default 5)");
    a.o_policy = cmd->add_option("--policy", a.policy, "fold policy: default or paper-literal");
    a.o_batch = cmd->add_option("--batch-size", a.batch_size, "examples per batch");
    if (training) {
        a.o_seed = cmd->add_option("--seed", a.seed, "training seed");
        a.o_epochs = cmd->add_option("--epochs", a.epochs, "training epochs");
        a.o_lr = cmd->add_option("--lr", a.lr, "learning rate");
        a.o_lambda = cmd->add_option("--lambda", a.lambda, "alignment loss weight");
    }
}

}  // namespace

int main(int argc, char** argv) {
    apply_thread_cap();
    CLI::App app{"articulatory frame classification toolkit"};
    app.require_subcommand(1);

    SynthArgs synth_args;
    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic corpus");
    synth->add_option("--out", synth_args.out, "corpus output directory")->required();
    synth->add_option("--spec", synth_args.spec, "config file with a [synth] section");
    CLI::Option* synth_seed = synth->add_option("--seed", synth_args.seed, "generator seed");
    synth->add_option("--phoneme-map", synth_args.map, "phoneme class table (TSV)");

    StatsArgs stats_args;
    CLI::App* stats = app.add_subcommand("stats", "per-class frame counts");
    stats->add_option("--manifest", stats_args.manifest, "corpus manifest.json")->required();
    stats->add_option("--dimension", stats_args.dimension, "manner, place, or voicing")
        ->required();
    stats->add_option("--fps", stats_args.fps, "target frame rate (num or num/den)");
    stats->add_option("--phoneme-map", stats_args.map, "phoneme class table (TSV)");

    RunArgs train_args;
    CLI::App* train = app.add_subcommand("train", "train one classifier on one fold");
    add_run_options(train, train_args, true);

    EvalArgs eval_args;
    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on one split");
    add_run_options(eval, eval_args.run, false);
    eval->add_option("--checkpoint", eval_args.checkpoint, "trained .acck file")->required();
    eval->add_option("--split", eval_args.split, "train, val, or test (default test)");
    eval->add_option("--report", eval_args.report, "output formats: csv and/or svg")
        ->delimiter(',');

    ReportArgs report_args;
    CLI::App* report = app.add_subcommand("report", "pool per-fold confusion matrices");
    report->add_option("inputs", report_args.inputs, "confusion.json files")->required();
    report->add_option("--out", report_args.out, "output directory (default .)");
    report->add_flag("--svg", report_args.svg, "also draw the macro-F1 chart");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*synth) {
            synth_args.seed_set = synth_seed->count() > 0;
            return run_synth(synth_args);
        }
        if (*stats) return run_stats(stats_args);
        if (*train) return run_train(train_args);
        if (*eval) return run_eval(eval_args);
        if (*report) return run_report(report_args);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const LogicError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
    return 0;
}
