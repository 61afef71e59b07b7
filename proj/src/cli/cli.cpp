#include "cryda/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cryda/config.hpp"
#include "cryda/diag.hpp"
#include "cryda/errors.hpp"
#include "cryda/metrics.hpp"
#include "cryda/model.hpp"
#include "cryda/rng.hpp"
#include "cryda/synth.hpp"
#include "cryda/uda.hpp"

namespace fs = std::filesystem;

namespace cryda::cli {

namespace {

std::string num(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write \"" + path.string() + "\"");
    out << text;
    if (!out) throw IoError("write failed for \"" + path.string() + "\"");
}

void write_json(const fs::path& path, const nlohmann::json& j) {
    write_text(path, j.dump(2) + "\n");
}

void make_out_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory \"" + dir.string() + "\"");
}

config::ExperimentConfig load_or_default(const std::string& path) {
    if (path.empty()) return config::default_config();
    return config::load_config(path);
}

std::string corpus_dir(const config::ExperimentConfig& cfg, const std::string& flag) {
    if (!flag.empty()) return flag;
    return (fs::path(cfg.work_dir) / "corpus").string();
}

uda::FeatureStore load_store(const config::ExperimentConfig& cfg, const std::string& flag,
                             bool keep_audio) {
    std::string dir = corpus_dir(cfg, flag);
    if (!fs::exists(fs::path(dir) / "manifest.csv")) {
        throw DependencyError("no corpus manifest at \"" + dir +
                              "\"; generate one with cryda synth");
    }
    return uda::FeatureStore::load(dir, cfg.features, keep_audio);
}

std::vector<dsp::AudioClip> target_noise_pool(const config::ExperimentConfig& cfg,
                                              const uda::TrainRunConfig& t) {
    auto profile = synth::DomainProfile::by_id(t.target_domain);
    std::uint64_t pool_seed = Rng::keyed(t.seed, {504}).next_u64();
    return uda::build_noise_pool(profile, cfg.noise_pool_recordings, cfg.noise_pool_seconds,
                                 cfg.noise_pool_rms, pool_seed);
}

std::pair<double, double> summarize(const std::vector<double>& values) {
    if (values.size() < 2) return {values.at(0), 0.0};
    return metrics::mean_stderr(values);
}

struct SynthArgs {
    std::string config;
    std::string out;
    std::uint64_t seed = 0;
    bool seed_set = false;
    bool print_config = false;
};

void cmd_synth(const SynthArgs& a, CLI::App* sub) {
    if (a.print_config) {
        std::cout << config::to_ini(load_or_default(a.config));
        return;
    }
    if (a.config.empty()) {
        std::cerr << sub->help();
        throw ConfigError("synth: --config is required");
    }
    auto cfg = config::load_config(a.config);
    auto cc = cfg.corpus;
    cc.out_dir = a.out.empty() ? corpus_dir(cfg, "") : a.out;
    std::uint64_t seed = a.seed_set ? a.seed : cfg.corpus_seed;
    auto manifest = synth::generate_corpus(cc, seed);
    auto echoed = cfg;
    echoed.corpus_seed = seed;
    write_text(fs::path(cc.out_dir) / "config.ini", config::to_ini(echoed));
    std::cout << "wrote " << manifest.rows.size() << " clips to " << cc.out_dir << " (seed "
              << seed << ")\n";
}

struct TrainArgs {
    std::string config;
    std::string method;
    std::string out;
    std::string corpus;
    std::string from_checkpoint;
    std::uint64_t seed = 0;
};

void cmd_train(const TrainArgs& a) {
    auto cfg = config::load_config(a.config);
    auto t = config::resolve_train(cfg, a.method, a.seed);
    auto store = load_store(cfg, a.corpus, a.method == "tni");
    make_out_dir(a.out);

    model::ModelState best;
    uda::TrainHistory history;
    history.method = a.method;
    if (a.method == "bn") {
        if (a.from_checkpoint.empty()) {
            throw DependencyError(
                "method bn re-estimates normalization statistics of an existing model; pass "
                "--from-checkpoint <model.ckpt> from a baseline run");
        }
        if (!fs::exists(a.from_checkpoint)) {
            throw DependencyError("checkpoint not found: \"" + a.from_checkpoint + "\"");
        }
        auto source_model = model::load_checkpoint(a.from_checkpoint);
        auto target_train = store.select(t.target_domain, synth::Split::Train);
        best = uda::adapt_bn(source_model, store, target_train, t.batch_size,
                             t.window_seconds);
    } else {
        std::vector<dsp::AudioClip> pool;
        const std::vector<dsp::AudioClip>* pool_ptr = nullptr;
        if (a.method == "tni") {
            pool = target_noise_pool(cfg, t);
            pool_ptr = &pool;
        }
        auto result = uda::train_run(t, store, pool_ptr);
        best = std::move(result.state);
        history = std::move(result.history);
    }

    model::save_checkpoint(best, (fs::path(a.out) / "model.ckpt").string());
    uda::write_history_jsonl((fs::path(a.out) / "history.jsonl").string(), history);

    bool average_heads = a.method == "symnet";
    double source_auc =
        uda::eval_auc(best, store, store.select(t.source_domain, synth::Split::Test),
                      t.batch_size, t.window_seconds, average_heads);
    double target_auc =
        uda::eval_auc(best, store, store.select(t.target_domain, synth::Split::Test),
                      t.batch_size, t.window_seconds, average_heads);

    nlohmann::json m;
    m["method"] = a.method;
    m["seed"] = a.seed;
    m["source_test_auc"] = source_auc;
    m["target_test_auc"] = target_auc;
    write_json(fs::path(a.out) / "metrics.json", m);
    write_text(fs::path(a.out) / "config.ini", config::to_ini(cfg));
    std::cout << a.method << " seed " << a.seed << ": source test AUC " << num(source_auc)
              << ", target test AUC " << num(target_auc) << "\n";
}

struct SweepArgs {
    std::string config;
    std::string method;
    std::string param;
    std::string values;
    std::string corpus;
    std::string out;
};

std::vector<double> parse_values(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ',')) {
        auto b = part.find_first_not_of(" \t");
        auto e = part.find_last_not_of(" \t");
        if (b == std::string::npos) {
            throw ConfigError("sweep: empty entry in --values \"" + text + "\"");
        }
        part = part.substr(b, e - b + 1);
        double v = 0.0;
        auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
        if (ec != std::errc() || ptr != part.data() + part.size()) {
            throw ConfigError("sweep: \"" + part + "\" in --values is not a number");
        }
        out.push_back(v);
    }
    if (out.empty()) throw ConfigError("sweep: --values must list at least one number");
    return out;
}

void cmd_sweep(const SweepArgs& a) {
    auto cfg = config::load_config(a.config);
    if (a.method != "tni") {
        throw ConfigError("sweep: only method tni has sweepable parameters, got \"" +
                          a.method + "\"");
    }
    if (a.param != "alpha" && a.param != "noise-fraction") {
        throw ConfigError("sweep: unsupported parameter \"" + a.param +
                          "\" (supported: alpha, noise-fraction)");
    }
    auto values = parse_values(a.values);
    std::sort(values.begin(), values.end());

    auto store = load_store(cfg, a.corpus, true);
    fs::path out_dir = a.out.empty() ? fs::path(cfg.work_dir) : fs::path(a.out);
    make_out_dir(out_dir);

    std::map<std::uint64_t, std::vector<dsp::AudioClip>> pools;
    std::string csv = "value,mean_auc_target,stderr\n";
    for (double value : values) {
        std::vector<double> aucs;
        for (int s = 0; s < cfg.eval.n_seeds; ++s) {
            auto t = config::resolve_train(cfg, "tni", std::uint64_t(s));
            if (a.param == "alpha") {
                t.alpha = value;
            } else {
                t.noise_pool_fraction = value;
            }
            t.validate();
            auto [it, inserted] = pools.try_emplace(t.seed);
            if (inserted) it->second = target_noise_pool(cfg, t);
            auto result = uda::train_run(t, store, &it->second);
            double auc = uda::eval_auc(result.state, store,
                                       store.select(t.target_domain, synth::Split::Test),
                                       t.batch_size, t.window_seconds);
            aucs.push_back(auc);
        }
        auto [mean, se] = summarize(aucs);
        csv += num(value) + "," + num(mean) + "," + num(se) + "\n";
        std::cout << a.param << " = " << num(value) << ": mean target AUC " << num(mean)
                  << " (stderr " << num(se) << ", " << aucs.size() << " seeds)\n";
    }
    fs::path csv_path = out_dir / ("sweep_" + a.param + ".csv");
    write_text(csv_path, csv);
    write_text(out_dir / "config.ini", config::to_ini(cfg));
    std::cout << "wrote " << csv_path.string() << "\n";
}

struct DiagnoseArgs {
    std::string config;
    std::string task;
    std::string corpus;
    std::string out;
    std::uint64_t seed = 0;
};

diag::PitchDistribution pooled_pitch(const uda::FeatureStore& store,
                                     const std::string& domain) {
    diag::PitchDistribution total;
    bool first = true;
    for (auto split : {synth::Split::Train, synth::Split::Valid, synth::Split::Test}) {
        auto d = diag::pitch_distribution(store, domain, split);
        if (first) {
            total = std::move(d);
            first = false;
            continue;
        }
        for (std::size_t i = 0; i < total.histogram.counts.size(); ++i) {
            total.histogram.counts[i] += d.histogram.counts[i];
        }
        total.histogram.total += d.histogram.total;
        total.voiced_frames += d.voiced_frames;
        total.clips += d.clips;
        total.empty_warning = total.empty_warning && d.empty_warning;
    }
    return total;
}

std::string histogram_csv(const metrics::Histogram& h) {
    std::string csv = "f0_hz,count\n";
    for (int i = 0; i < h.bins(); ++i) {
        double center = 0.5 * (h.edges[std::size_t(i)] + h.edges[std::size_t(i) + 1]);
        csv += num(center) + "," + std::to_string(h.counts[std::size_t(i)]) + "\n";
    }
    return csv;
}

void cmd_diagnose(const DiagnoseArgs& a) {
    auto cfg = config::load_config(a.config);
    fs::path out_dir =
        a.out.empty() ? fs::path(cfg.work_dir) / "diagnostics" : fs::path(a.out);

    if (a.task == "domain-id") {
        auto store = load_store(cfg, a.corpus, false);
        diag::DomainIdConfig dc;
        dc.epochs = cfg.eval.domain_id_epochs;
        dc.batch_size = cfg.train.batch_size;
        dc.lr_backbone = cfg.train.lr_backbone;
        dc.lr_classifier = cfg.train.lr_classifier;
        dc.window_seconds = cfg.train.window_seconds;
        dc.seed = a.seed;
        auto r = diag::domain_id_experiment(store, dc);
        make_out_dir(out_dir);
        std::string csv = "domain";
        for (const auto& d : r.domains) csv += "," + d;
        csv += "\n";
        for (std::size_t i = 0; i < r.domains.size(); ++i) {
            csv += r.domains[i];
            for (double cell : r.confusion[i]) csv += "," + num(cell);
            csv += "\n";
        }
        write_text(out_dir / "confusion.csv", csv);
        nlohmann::json j;
        j["accuracy"] = r.accuracy;
        j["domains"] = r.domains;
        write_json(out_dir / "domain_id.json", j);
        std::cout << "domain-id accuracy " << num(r.accuracy) << "\n";
    } else if (a.task == "pitch-dist") {
        auto store = load_store(cfg, a.corpus, true);
        const auto& src = cfg.train.source_domain;
        const auto& tgt = cfg.train.target_domain;
        auto ps = pooled_pitch(store, src);
        auto pt = pooled_pitch(store, tgt);
        if (ps.histogram.total == 0 || pt.histogram.total == 0) {
            throw DataError("pitch-dist: no voiced frames in " +
                            std::string(ps.histogram.total == 0 ? src : tgt));
        }
        double w1 = metrics::wasserstein1d(ps.histogram, pt.histogram);
        make_out_dir(out_dir);
        write_text(out_dir / "pitch_source.csv", histogram_csv(ps.histogram));
        write_text(out_dir / "pitch_target.csv", histogram_csv(pt.histogram));
        nlohmann::json j;
        j["wasserstein1_hz"] = w1;
        j["source_domain"] = src;
        j["target_domain"] = tgt;
        j["source_voiced_frames"] = ps.voiced_frames;
        j["target_voiced_frames"] = pt.voiced_frames;
        write_json(out_dir / "pitch_distance.json", j);
        std::cout << "pitch distribution distance " << num(w1) << " Hz\n";
    } else if (a.task == "xgen") {
        auto store = load_store(cfg, a.corpus, false);
        auto t = config::resolve_train(cfg, "baseline", a.seed);
        t.epochs = cfg.eval.xgen_epochs;
        auto r = diag::xgen_experiment(store, t);
        make_out_dir(out_dir);
        nlohmann::json j;
        j["source_on_source"] = r.source_on_source;
        j["source_on_target"] = r.source_on_target;
        j["target_on_target"] = r.target_on_target;
        j["gap_from_source"] = r.gap_from_source;
        j["gap_from_target"] = r.gap_from_target;
        write_json(out_dir / "xgen.json", j);
        std::cout << "source->source AUC " << num(r.source_on_source)
                  << ", source->target AUC " << num(r.source_on_target)
                  << ", target->target AUC " << num(r.target_on_target) << "\n";
    } else {
        throw ConfigError("diagnose: unknown task \"" + a.task +
                          "\" (valid: domain-id, pitch-dist, xgen)");
    }
    write_text(out_dir / "config.ini", config::to_ini(cfg));
}

struct ReportArgs {
    std::string runs;
    std::string out;
};

void cmd_report(const ReportArgs& a) {
    if (!fs::is_directory(a.runs)) {
        throw ConfigError("report: runs directory \"" + a.runs + "\" does not exist");
    }
    std::vector<fs::path> metric_files;
    for (const auto& entry : fs::recursive_directory_iterator(a.runs)) {
        if (entry.is_regular_file() && entry.path().filename() == "metrics.json") {
            metric_files.push_back(entry.path());
        }
    }
    std::sort(metric_files.begin(), metric_files.end());

    std::map<std::string, std::vector<double>> aucs;
    for (const auto& path : metric_files) {
        std::ifstream in(path);
        nlohmann::json j;
        try {
            in >> j;
            aucs[j.at("method").get<std::string>()].push_back(
                j.at("target_test_auc").get<double>());
        } catch (const nlohmann::json::exception& e) {
            throw IoError("report: malformed metrics file \"" + path.string() +
                          "\": " + e.what());
        }
    }
    if (!aucs.count("baseline")) {
        throw DependencyError("report: no baseline run under \"" + a.runs +
                              "\"; train method baseline first");
    }
    auto report = diag::build_report(aucs);
    fs::path out_dir = a.out.empty() ? fs::path(a.runs) : fs::path(a.out);
    make_out_dir(out_dir);
    std::string text = report.to_text();
    write_text(out_dir / "report.txt", text);
    write_text(out_dir / "report.json", report.to_json() + "\n");
    std::cout << text;
}

}  // namespace

int run_cli(std::vector<std::string> args) {
    CLI::App app{"Cry-classification domain shift toolkit: synthesizes a two-hospital "
                 "corpus, trains adaptation methods, and reports results."};
    app.name("cryda");
    app.require_subcommand(1);

    SynthArgs sa;
    auto* synth_cmd =
        app.add_subcommand("synth", "Generate the two-domain synthetic cry corpus");
    synth_cmd->add_option("--config", sa.config, "Experiment config file");
    synth_cmd->add_option("--out", sa.out,
                          "Corpus output directory (default: <work_dir>/corpus)");
    auto* synth_seed =
        synth_cmd->add_option("--seed", sa.seed, "Corpus seed (default: [corpus] seed)");
    synth_cmd->add_flag("--print-config", sa.print_config,
                        "Print the fully resolved config and exit");
    synth_cmd->callback([&] {
        sa.seed_set = synth_seed->count() > 0;
        cmd_synth(sa, synth_cmd);
    });

    TrainArgs ta;
    auto* train_cmd = app.add_subcommand("train", "Train one method on the corpus");
    train_cmd->add_option("--config", ta.config, "Experiment config file")->required();
    train_cmd
        ->add_option("--method", ta.method,
                     "Training method (baseline, bn, em, hafn, safn, symnet, tni)")
        ->required();
    train_cmd->add_option("--out", ta.out, "Run output directory")->required();
    train_cmd->add_option("--seed", ta.seed, "Run seed");
    train_cmd->add_option("--corpus", ta.corpus,
                          "Corpus directory (default: <work_dir>/corpus)");
    train_cmd->add_option("--from-checkpoint", ta.from_checkpoint,
                          "Source checkpoint to adapt (required for method bn)");
    train_cmd->callback([&] { cmd_train(ta); });

    SweepArgs wa;
    auto* sweep_cmd =
        app.add_subcommand("sweep", "Train across parameter values and tabulate target AUC");
    sweep_cmd->add_option("--config", wa.config, "Experiment config file")->required();
    sweep_cmd->add_option("--method", wa.method, "Training method (tni)")->required();
    sweep_cmd->add_option("--param", wa.param, "Swept parameter (alpha, noise-fraction)")
        ->required();
    sweep_cmd->add_option("--values", wa.values, "Comma-separated parameter values")
        ->required();
    sweep_cmd->add_option("--corpus", wa.corpus,
                          "Corpus directory (default: <work_dir>/corpus)");
    sweep_cmd->add_option("--out", wa.out, "Output directory (default: <work_dir>)");
    sweep_cmd->callback([&] { cmd_sweep(wa); });

    DiagnoseArgs da;
    auto* diag_cmd = app.add_subcommand("diagnose", "Quantify the shift between domains");
    diag_cmd->add_option("--config", da.config, "Experiment config file")->required();
    diag_cmd->add_option("--task", da.task, "Diagnostic task (domain-id, pitch-dist, xgen)")
        ->required();
    diag_cmd->add_option("--corpus", da.corpus,
                         "Corpus directory (default: <work_dir>/corpus)");
    diag_cmd->add_option("--out", da.out,
                         "Output directory (default: <work_dir>/diagnostics)");
    diag_cmd->add_option("--seed", da.seed, "Diagnostic seed");
    diag_cmd->callback([&] { cmd_diagnose(da); });

    ReportArgs ra;
    auto* report_cmd =
        app.add_subcommand("report", "Aggregate run metrics into a results table");
    report_cmd->add_option("--runs", ra.runs, "Directory scanned for run metrics")
        ->required();
    report_cmd->add_option("--out", ra.out, "Output directory (default: --runs)");
    report_cmd->callback([&] { cmd_report(ra); });

    std::reverse(args.begin(), args.end());
    try {
        app.parse(args);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const DependencyError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

}  // namespace cryda::cli
