#include <doctest.h>

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "cryda/cli.hpp"

using namespace cryda;
namespace fs = std::filesystem;

namespace {

// run_cli prints through std::cout and std::cerr; capture both so test
// output stays readable and assertions can inspect the text.
struct Capture {
    std::stringstream out, err;
    std::streambuf* old_out;
    std::streambuf* old_err;
    Capture()
        : old_out(std::cout.rdbuf(out.rdbuf())), old_err(std::cerr.rdbuf(err.rdbuf())) {}
    ~Capture() {
        std::cout.rdbuf(old_out);
        std::cerr.rdbuf(old_err);
    }
};

int run(std::vector<std::string> args, std::string* out = nullptr,
        std::string* err = nullptr) {
    Capture cap;
    int code = cli::run_cli(std::move(args));
    if (out) *out = cap.out.str();
    if (err) *err = cap.err.str();
    return code;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(bool(in));
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) out.push_back(line);
    return out;
}

struct Workspace {
    fs::path root;
    std::string config;
    std::string corpus;

    Workspace() {
        root = fs::temp_directory_path() / "cryda_cli_test";
        fs::remove_all(root);
        fs::create_directories(root);
        config = (root / "exp.ini").string();
        corpus = (root / "work" / "corpus").string();
        std::ofstream cfg(config);
        cfg << "[corpus]\n"
               "patients_per_domain = 8\n"
               "clips_per_patient = 2\n"
               "train_frac = 0.5\n"
               "valid_frac = 0.25\n"
               "test_frac = 0.25\n"
               "[methods]\n"
               "epochs = 2\n"
               "batch_size = 4\n"
               "[eval]\n"
               "n_seeds = 2\n"
               "domain_id_epochs = 2\n"
               "xgen_epochs = 2\n"
               "[paths]\n"
               "work_dir = "
            << (root / "work").string() << "\n";
        cfg.close();
        REQUIRE(run({"synth", "--config", config}) == 0);
    }
};

Workspace& ws() {
    static Workspace w;
    return w;
}

}  // namespace

TEST_CASE("usage errors exit with code 2") {
    CHECK(run({}) == 2);
    CHECK(run({"frobnicate"}) == 2);
    CHECK(run({"synth"}) == 2);
    CHECK(run({"train", "--config", ws().config}) == 2);
    CHECK(run({"train", "--config", ws().config, "--method", "dann", "--out",
               (ws().root / "x").string()}) == 2);
    CHECK(run({"sweep", "--config", ws().config, "--method", "em", "--param", "alpha",
               "--values", "0.5"}) == 2);
    CHECK(run({"sweep", "--config", ws().config, "--method", "tni", "--param", "gamma",
               "--values", "0.5"}) == 2);
    CHECK(run({"sweep", "--config", ws().config, "--method", "tni", "--param", "alpha",
               "--values", "0.5,abc"}) == 2);
    CHECK(run({"diagnose", "--config", ws().config, "--task", "nope"}) == 2);
    CHECK(run({"report", "--runs", (ws().root / "missing").string()}) == 2);
    CHECK(run({"train", "--config", (ws().root / "absent.ini").string(), "--method",
               "baseline", "--out", (ws().root / "x").string()}) == 2);

    std::string err;
    CHECK(run({"train", "--config", ws().config, "--method", "dann", "--out",
               (ws().root / "x").string()},
              nullptr, &err) == 2);
    CHECK(err.find("baseline") != std::string::npos);
    CHECK(err.find("symnet") != std::string::npos);
}

TEST_CASE("help and print-config exit cleanly") {
    std::string out;
    CHECK(run({"--help"}, &out) == 0);
    CHECK(out.find("synth") != std::string::npos);
    CHECK(run({"synth", "--print-config"}, &out) == 0);
    CHECK(out.find("[corpus]") != std::string::npos);
    CHECK(out.find("patients_per_domain = 60") != std::string::npos);
    CHECK(out.find("afn_radius = 30") != std::string::npos);
    CHECK(run({"synth", "--config", ws().config, "--print-config"}, &out) == 0);
    CHECK(out.find("patients_per_domain = 8") != std::string::npos);
}

TEST_CASE("synth writes the corpus and echoes the resolved config") {
    auto dir = fs::path(ws().corpus);
    CHECK(fs::exists(dir / "manifest.csv"));
    CHECK(fs::exists(dir / "corpus.json"));
    CHECK(fs::exists(dir / "config.ini"));
    auto manifest = slurp(dir / "manifest.csv");
    CHECK(lines_of(manifest).size() == 33);
    CHECK(lines_of(manifest)[0] == "path,patient_id,label,domain,split");
    CHECK(slurp(dir / "config.ini").find("patients_per_domain = 8") != std::string::npos);
}

TEST_CASE("synth is deterministic for a fixed seed") {
    auto c1 = (ws().root / "c1").string();
    auto c2 = (ws().root / "c2").string();
    REQUIRE(run({"synth", "--config", ws().config, "--out", c1, "--seed", "5"}) == 0);
    REQUIRE(run({"synth", "--config", ws().config, "--out", c2, "--seed", "5"}) == 0);
    CHECK(slurp(fs::path(c1) / "manifest.csv") == slurp(fs::path(c2) / "manifest.csv"));
    CHECK(slurp(fs::path(c1) / "hospital_a" / "a000" / "c0.wav") ==
          slurp(fs::path(c2) / "hospital_a" / "a000" / "c0.wav"));
    REQUIRE(run({"synth", "--config", ws().config, "--out", c2, "--seed", "6"}) == 0);
    CHECK(slurp(fs::path(c1) / "hospital_a" / "a000" / "c0.wav") !=
          slurp(fs::path(c2) / "hospital_a" / "a000" / "c0.wav"));
}

TEST_CASE("train writes checkpoint, history, and metrics") {
    auto out = (ws().root / "runs" / "baseline_s0").string();
    std::string text;
    REQUIRE(run({"train", "--config", ws().config, "--method", "baseline", "--seed", "0",
                 "--out", out},
                &text) == 0);
    CHECK(text.find("target test AUC") != std::string::npos);
    CHECK(fs::exists(fs::path(out) / "model.ckpt"));
    CHECK(fs::exists(fs::path(out) / "history.jsonl"));
    CHECK(fs::exists(fs::path(out) / "config.ini"));
    auto m = nlohmann::json::parse(slurp(fs::path(out) / "metrics.json"));
    CHECK(m.at("method") == "baseline");
    CHECK(m.at("seed") == 0);
    double src = m.at("source_test_auc").get<double>();
    double tgt = m.at("target_test_auc").get<double>();
    CHECK(src >= 0.0);
    CHECK(src <= 1.0);
    CHECK(tgt >= 0.0);
    CHECK(tgt <= 1.0);
    CHECK(lines_of(slurp(fs::path(out) / "history.jsonl")).size() == 2);
}

TEST_CASE("train is deterministic for a fixed seed") {
    auto r1 = (ws().root / "runs" / "det_a").string();
    auto r2 = (ws().root / "runs" / "det_b").string();
    REQUIRE(run({"train", "--config", ws().config, "--method", "em", "--seed", "1", "--out",
                 r1}) == 0);
    REQUIRE(run({"train", "--config", ws().config, "--method", "em", "--seed", "1", "--out",
                 r2}) == 0);
    CHECK(slurp(fs::path(r1) / "model.ckpt") == slurp(fs::path(r2) / "model.ckpt"));
    CHECK(slurp(fs::path(r1) / "metrics.json") == slurp(fs::path(r2) / "metrics.json"));
    CHECK(slurp(fs::path(r1) / "history.jsonl") == slurp(fs::path(r2) / "history.jsonl"));
}

TEST_CASE("bn adapts a checkpoint and fails without one") {
    auto baseline = (ws().root / "runs" / "baseline_s0").string();
    if (!fs::exists(fs::path(baseline) / "model.ckpt")) {
        REQUIRE(run({"train", "--config", ws().config, "--method", "baseline", "--seed", "0",
                     "--out", baseline}) == 0);
    }
    auto out = (ws().root / "runs" / "bn_s0").string();
    CHECK(run({"train", "--config", ws().config, "--method", "bn", "--out", out}) == 3);
    CHECK(run({"train", "--config", ws().config, "--method", "bn", "--from-checkpoint",
               (ws().root / "nothing.ckpt").string(), "--out", out}) == 3);
    REQUIRE(run({"train", "--config", ws().config, "--method", "bn", "--from-checkpoint",
                 (fs::path(baseline) / "model.ckpt").string(), "--out", out}) == 0);
    CHECK(fs::exists(fs::path(out) / "model.ckpt"));
    auto m = nlohmann::json::parse(slurp(fs::path(out) / "metrics.json"));
    CHECK(m.at("method") == "bn");
}

TEST_CASE("train without a corpus reports a missing dependency") {
    auto cfg2 = (ws().root / "empty.ini").string();
    {
        std::ofstream out(cfg2);
        out << "[paths]\nwork_dir = " << (ws().root / "nowhere").string() << "\n";
    }
    CHECK(run({"train", "--config", cfg2, "--method", "baseline", "--out",
               (ws().root / "x").string()}) == 3);
    CHECK(run({"diagnose", "--config", cfg2, "--task", "domain-id"}) == 3);
}

TEST_CASE("sweep emits ordered rows with mean and stderr") {
    auto out = (ws().root / "sweeps").string();
    REQUIRE(run({"sweep", "--config", ws().config, "--method", "tni", "--param", "alpha",
                 "--values", "0.5,0", "--out", out}) == 0);
    auto rows = lines_of(slurp(fs::path(out) / "sweep_alpha.csv"));
    REQUIRE(rows.size() == 3);
    CHECK(rows[0] == "value,mean_auc_target,stderr");
    CHECK(rows[1].substr(0, 2) == "0,");
    CHECK(rows[2].substr(0, 4) == "0.5,");
    for (std::size_t i = 1; i < rows.size(); ++i) {
        double value = 0.0, mean = 0.0, se = 0.0;
        char comma = 0;
        std::stringstream ss(rows[i]);
        ss >> value >> comma >> mean >> comma >> se;
        CHECK(mean >= 0.0);
        CHECK(mean <= 1.0);
        CHECK(se >= 0.0);
    }
}

TEST_CASE("diagnose tasks write their artifacts") {
    auto out = ws().root / "diag";

    REQUIRE(run({"diagnose", "--config", ws().config, "--task", "domain-id", "--out",
                 out.string()}) == 0);
    auto rows = lines_of(slurp(out / "confusion.csv"));
    REQUIRE(rows.size() == 3);
    CHECK(rows[0] == "domain,hospital_a,hospital_b");
    for (std::size_t i = 1; i < rows.size(); ++i) {
        std::stringstream ss(rows[i]);
        std::string cell;
        std::getline(ss, cell, ',');
        double sum = 0.0;
        while (std::getline(ss, cell, ',')) sum += std::stod(cell);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
    auto dj = nlohmann::json::parse(slurp(out / "domain_id.json"));
    CHECK(dj.at("accuracy").get<double>() >= 0.0);
    CHECK(dj.at("accuracy").get<double>() <= 1.0);

    REQUIRE(run({"diagnose", "--config", ws().config, "--task", "pitch-dist", "--out",
                 out.string()}) == 0);
    CHECK(fs::exists(out / "pitch_source.csv"));
    CHECK(fs::exists(out / "pitch_target.csv"));
    auto pd = nlohmann::json::parse(slurp(out / "pitch_distance.json"));
    CHECK(pd.at("wasserstein1_hz").get<double>() >= 0.0);
    CHECK(lines_of(slurp(out / "pitch_source.csv"))[0] == "f0_hz,count");

    REQUIRE(run({"diagnose", "--config", ws().config, "--task", "xgen", "--out",
                 out.string()}) == 0);
    auto xj = nlohmann::json::parse(slurp(out / "xgen.json"));
    for (const char* key : {"source_on_source", "source_on_target", "target_on_target"}) {
        CHECK(xj.at(key).get<double>() >= 0.0);
        CHECK(xj.at(key).get<double>() <= 1.0);
    }
}

TEST_CASE("report aggregates runs and rejects baseline-free directories") {
    auto runs = ws().root / "report_runs";
    fs::create_directories(runs);
    auto write_metrics = [&](const std::string& name, const std::string& method, int seed,
                             double auc) {
        fs::create_directories(runs / name);
        std::ofstream out(runs / name / "metrics.json");
        out << "{\"method\": \"" << method << "\", \"seed\": " << seed
            << ", \"source_test_auc\": 0.8, \"target_test_auc\": " << auc << "}\n";
    };
    write_metrics("baseline_s0", "baseline", 0, 0.70);
    write_metrics("baseline_s1", "baseline", 1, 0.72);
    write_metrics("symnet_s0", "symnet", 0, 0.78);
    write_metrics("symnet_s1", "symnet", 1, 0.76);

    std::string text;
    REQUIRE(run({"report", "--runs", runs.string()}, &text) == 0);
    CHECK(text.find("baseline") != std::string::npos);
    CHECK(text.find("symnet") != std::string::npos);
    CHECK(text.find("0.7100") != std::string::npos);
    CHECK(text.find("0.7700") != std::string::npos);
    CHECK(slurp(runs / "report.txt") == text);
    auto rj = nlohmann::json::parse(slurp(runs / "report.json"));
    REQUIRE(rj.size() == 2);
    CHECK(rj[0].at("method") == "baseline");
    CHECK(rj[0].at("mean_auc").get<double>() == 0.71);
    CHECK(rj[1].at("mean_auc").get<double>() == 0.77);
    CHECK(rj[1].at("n_seeds") == 2);

    // Every number in the text table appears in the JSON rendering.
    for (double v : {0.71, 0.77}) {
        char formatted[32];
        std::snprintf(formatted, sizeof(formatted), "%.4f", v);
        CHECK(text.find(formatted) != std::string::npos);
    }

    auto no_base = ws().root / "report_nobase";
    fs::create_directories(no_base / "em_s0");
    fs::copy_file(runs / "symnet_s0" / "metrics.json", no_base / "em_s0" / "metrics.json");
    CHECK(run({"report", "--runs", no_base.string()}) == 3);
}
