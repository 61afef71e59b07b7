#include "cryda/config.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "cryda/errors.hpp"

namespace cryda::config {

namespace {

const std::array<std::string, 7> kMethods = {"baseline", "bn",     "em",  "hafn",
                                             "safn",     "symnet", "tni"};

bool known_method(const std::string& m) {
    return std::find(kMethods.begin(), kMethods.end(), m) != kMethods.end();
}

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

[[noreturn]] void bad_value(const std::string& section, const std::string& key,
                            const std::string& value, const std::string& want) {
    throw ConfigError("config: [" + section + "] " + key + " = \"" + value + "\" is not " +
                      want);
}

double parse_double(const std::string& section, const std::string& key, const std::string& v) {
    double out = 0.0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(section, key, v, "a number");
    return out;
}

int parse_int(const std::string& section, const std::string& key, const std::string& v) {
    int out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
        bad_value(section, key, v, "an integer");
    }
    return out;
}

std::uint64_t parse_u64(const std::string& section, const std::string& key,
                        const std::string& v) {
    std::uint64_t out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
        bad_value(section, key, v, "a non-negative integer");
    }
    return out;
}

bool parse_bool(const std::string& section, const std::string& key, const std::string& v) {
    if (v == "true") return true;
    if (v == "false") return false;
    bad_value(section, key, v, "true or false");
}

std::vector<int> parse_int_list(const std::string& section, const std::string& key,
                                const std::string& v) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string part;
    while (std::getline(ss, part, ',')) {
        part = trim(part);
        if (part.empty()) bad_value(section, key, v, "a comma-separated integer list");
        out.push_back(parse_int(section, key, part));
    }
    if (out.empty()) bad_value(section, key, v, "a comma-separated integer list");
    return out;
}

std::string fmt(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

std::string fmt(int v) { return std::to_string(v); }
std::string fmt(std::uint64_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

std::string fmt(const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(v[i]);
    }
    return out;
}

// Numeric training hyperparameters that a per-method override may replace.
// batch_size and epochs are stored as doubles and rounded when applied.
struct OverrideField {
    const char* key;
    std::function<void(uda::TrainRunConfig&, double)> apply;
};

const std::vector<OverrideField>& override_fields() {
    static const std::vector<OverrideField> fields = {
        {"lr_backbone", [](uda::TrainRunConfig& t, double v) { t.lr_backbone = v; }},
        {"lr_classifier", [](uda::TrainRunConfig& t, double v) { t.lr_classifier = v; }},
        {"batch_size",
         [](uda::TrainRunConfig& t, double v) { t.batch_size = int(std::llround(v)); }},
        {"epochs", [](uda::TrainRunConfig& t, double v) { t.epochs = int(std::llround(v)); }},
        {"lambda_em", [](uda::TrainRunConfig& t, double v) { t.lambda_em = v; }},
        {"lambda_afn", [](uda::TrainRunConfig& t, double v) { t.lambda_afn = v; }},
        {"lambda_confusion",
         [](uda::TrainRunConfig& t, double v) { t.lambda_confusion = v; }},
        {"afn_radius", [](uda::TrainRunConfig& t, double v) { t.afn_radius = v; }},
        {"afn_delta", [](uda::TrainRunConfig& t, double v) { t.afn_delta = v; }},
        {"alpha", [](uda::TrainRunConfig& t, double v) { t.alpha = v; }},
        {"noise_pool_fraction",
         [](uda::TrainRunConfig& t, double v) { t.noise_pool_fraction = v; }},
        {"window_seconds", [](uda::TrainRunConfig& t, double v) { t.window_seconds = v; }},
    };
    return fields;
}

bool known_override_key(const std::string& key) {
    for (const auto& f : override_fields()) {
        if (key == f.key) return true;
    }
    return false;
}

void set_corpus(ExperimentConfig& c, const std::string& key, const std::string& v) {
    auto& cc = c.corpus;
    if (key == "patients_per_domain") {
        cc.patients_per_domain = parse_int("corpus", key, v);
    } else if (key == "clips_per_patient") {
        cc.clips_per_patient = parse_int("corpus", key, v);
    } else if (key == "clip_seconds") {
        cc.clip_seconds = parse_double("corpus", key, v);
    } else if (key == "healthy_fraction") {
        cc.healthy_fraction = parse_double("corpus", key, v);
    } else if (key == "train_frac") {
        cc.train_frac = parse_double("corpus", key, v);
    } else if (key == "valid_frac") {
        cc.valid_frac = parse_double("corpus", key, v);
    } else if (key == "test_frac") {
        cc.test_frac = parse_double("corpus", key, v);
    } else if (key == "no_shift") {
        cc.no_shift = parse_bool("corpus", key, v);
    } else if (key == "seed") {
        c.corpus_seed = parse_u64("corpus", key, v);
    } else {
        throw ConfigError("config: unknown key \"" + key + "\" in [corpus]");
    }
}

void set_features(ExperimentConfig& c, const std::string& key, const std::string& v) {
    auto& f = c.features;
    if (key == "sample_rate") {
        f.sample_rate = parse_int("features", key, v);
    } else if (key == "win_ms") {
        f.win_ms = parse_double("features", key, v);
    } else if (key == "hop_ms") {
        f.hop_ms = parse_double("features", key, v);
    } else if (key == "n_fft") {
        f.n_fft = parse_int("features", key, v);
    } else if (key == "n_mels") {
        f.n_mels = parse_int("features", key, v);
    } else if (key == "fmin") {
        f.fmin = parse_double("features", key, v);
    } else if (key == "fmax") {
        f.fmax = parse_double("features", key, v);
    } else {
        throw ConfigError("config: unknown key \"" + key + "\" in [features]");
    }
}

void set_model(ExperimentConfig& c, const std::string& key, const std::string& v) {
    if (key == "channels") {
        c.encoder.channels = parse_int_list("model", key, v);
    } else if (key == "kernel") {
        c.encoder.kernel = parse_int("model", key, v);
    } else {
        throw ConfigError("config: unknown key \"" + key + "\" in [model]");
    }
}

void set_methods(ExperimentConfig& c, const std::string& key, const std::string& v) {
    auto& t = c.train;
    if (key == "source_domain") {
        t.source_domain = v;
        return;
    }
    if (key == "target_domain") {
        t.target_domain = v;
        return;
    }
    if (key == "lr_backbone") {
        t.lr_backbone = parse_double("methods", key, v);
        return;
    }
    if (key == "lr_classifier") {
        t.lr_classifier = parse_double("methods", key, v);
        return;
    }
    if (key == "batch_size") {
        t.batch_size = parse_int("methods", key, v);
        return;
    }
    if (key == "epochs") {
        t.epochs = parse_int("methods", key, v);
        return;
    }
    if (key == "lambda_em") {
        t.lambda_em = parse_double("methods", key, v);
        return;
    }
    if (key == "lambda_afn") {
        t.lambda_afn = parse_double("methods", key, v);
        return;
    }
    if (key == "lambda_confusion") {
        t.lambda_confusion = parse_double("methods", key, v);
        return;
    }
    if (key == "afn_radius") {
        t.afn_radius = parse_double("methods", key, v);
        return;
    }
    if (key == "afn_delta") {
        t.afn_delta = parse_double("methods", key, v);
        return;
    }
    if (key == "alpha") {
        t.alpha = parse_double("methods", key, v);
        return;
    }
    if (key == "noise_pool_fraction") {
        t.noise_pool_fraction = parse_double("methods", key, v);
        return;
    }
    if (key == "window_seconds") {
        t.window_seconds = parse_double("methods", key, v);
        return;
    }
    if (key == "noise_pool_recordings") {
        c.noise_pool_recordings = parse_int("methods", key, v);
        return;
    }
    if (key == "noise_pool_seconds") {
        c.noise_pool_seconds = parse_double("methods", key, v);
        return;
    }
    if (key == "noise_pool_rms") {
        c.noise_pool_rms = parse_double("methods", key, v);
        return;
    }
    auto dot = key.find('.');
    if (dot != std::string::npos) {
        std::string m = key.substr(0, dot);
        std::string field = key.substr(dot + 1);
        if (!known_method(m)) {
            throw ConfigError("config: [methods] override \"" + key +
                              "\" names an unknown method \"" + m + "\"");
        }
        if (!known_override_key(field)) {
            throw ConfigError("config: [methods] override \"" + key +
                              "\" names an unknown hyperparameter \"" + field + "\"");
        }
        c.method_overrides[m][field] = parse_double("methods", key, v);
        return;
    }
    throw ConfigError("config: unknown key \"" + key + "\" in [methods]");
}

void set_eval(ExperimentConfig& c, const std::string& key, const std::string& v) {
    if (key == "n_seeds") {
        c.eval.n_seeds = parse_int("eval", key, v);
    } else if (key == "domain_id_epochs") {
        c.eval.domain_id_epochs = parse_int("eval", key, v);
    } else if (key == "xgen_epochs") {
        c.eval.xgen_epochs = parse_int("eval", key, v);
    } else if (key == "probe_steps") {
        c.eval.probe_steps = parse_int("eval", key, v);
    } else {
        throw ConfigError("config: unknown key \"" + key + "\" in [eval]");
    }
}

void set_paths(ExperimentConfig& c, const std::string& key, const std::string& v) {
    if (key == "work_dir") {
        c.work_dir = v;
    } else {
        throw ConfigError("config: unknown key \"" + key + "\" in [paths]");
    }
}

void check_ranges(const ExperimentConfig& c) {
    if (c.eval.n_seeds < 1) throw ConfigError("config: [eval] n_seeds must be >= 1");
    if (c.eval.domain_id_epochs < 1) {
        throw ConfigError("config: [eval] domain_id_epochs must be >= 1");
    }
    if (c.eval.xgen_epochs < 1) throw ConfigError("config: [eval] xgen_epochs must be >= 1");
    if (c.eval.probe_steps < 1) throw ConfigError("config: [eval] probe_steps must be >= 1");
    if (c.noise_pool_recordings < 1) {
        throw ConfigError("config: [methods] noise_pool_recordings must be >= 1");
    }
    if (c.noise_pool_seconds <= 0.0) {
        throw ConfigError("config: [methods] noise_pool_seconds must be > 0");
    }
    if (c.noise_pool_rms <= 0.0) {
        throw ConfigError("config: [methods] noise_pool_rms must be > 0");
    }
    if (c.encoder.channels.empty()) {
        throw ConfigError("config: [model] channels must not be empty");
    }
    for (int ch : c.encoder.channels) {
        if (ch < 1) throw ConfigError("config: [model] channels must be positive");
    }
    if (c.encoder.kernel < 1 || c.encoder.kernel % 2 == 0) {
        throw ConfigError("config: [model] kernel must be a positive odd integer");
    }
    if (c.work_dir.empty()) throw ConfigError("config: [paths] work_dir must not be empty");
}

// The encoder always matches the front end, and its embedding width is the
// last channel count.
void sync_derived(ExperimentConfig& c) {
    c.encoder.in_channels = 1;
    c.encoder.n_mels = c.features.n_mels;
    c.encoder.embedding_dim = c.encoder.channels.back();
    c.train.encoder = c.encoder;
}

}  // namespace

ExperimentConfig default_config() {
    ExperimentConfig c;
    sync_derived(c);
    return c;
}

ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig c = default_config();
    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    std::string section;
    while (std::getline(in, raw)) {
        ++line_no;
        auto cut = raw.find_first_of("#;");
        if (cut != std::string::npos) raw.resize(cut);
        std::string line = trim(raw);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']' || line.size() < 3) {
                throw ConfigError("config: malformed section header at line " +
                                  std::to_string(line_no));
            }
            section = trim(line.substr(1, line.size() - 2));
            if (section != "corpus" && section != "features" && section != "model" &&
                section != "methods" && section != "eval" && section != "paths") {
                throw ConfigError("config: unknown section [" + section + "] at line " +
                                  std::to_string(line_no));
            }
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config: expected key = value at line " +
                              std::to_string(line_no));
        }
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError("config: empty key at line " + std::to_string(line_no));
        }
        if (section.empty()) {
            throw ConfigError("config: key \"" + key + "\" before any section at line " +
                              std::to_string(line_no));
        }
        if (section == "corpus") {
            set_corpus(c, key, value);
        } else if (section == "features") {
            set_features(c, key, value);
        } else if (section == "model") {
            set_model(c, key, value);
        } else if (section == "methods") {
            set_methods(c, key, value);
        } else if (section == "eval") {
            set_eval(c, key, value);
        } else {
            set_paths(c, key, value);
        }
    }
    check_ranges(c);
    sync_derived(c);
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("config: cannot read \"" + path + "\"");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string to_ini(const ExperimentConfig& c) {
    std::ostringstream out;
    out << "[corpus]\n";
    out << "patients_per_domain = " << fmt(c.corpus.patients_per_domain) << "\n";
    out << "clips_per_patient = " << fmt(c.corpus.clips_per_patient) << "\n";
    out << "clip_seconds = " << fmt(c.corpus.clip_seconds) << "\n";
    out << "healthy_fraction = " << fmt(c.corpus.healthy_fraction) << "\n";
    out << "train_frac = " << fmt(c.corpus.train_frac) << "\n";
    out << "valid_frac = " << fmt(c.corpus.valid_frac) << "\n";
    out << "test_frac = " << fmt(c.corpus.test_frac) << "\n";
    out << "no_shift = " << fmt(c.corpus.no_shift) << "\n";
    out << "seed = " << fmt(c.corpus_seed) << "\n";
    out << "\n[features]\n";
    out << "sample_rate = " << fmt(c.features.sample_rate) << "\n";
    out << "win_ms = " << fmt(c.features.win_ms) << "\n";
    out << "hop_ms = " << fmt(c.features.hop_ms) << "\n";
    out << "n_fft = " << fmt(c.features.n_fft) << "\n";
    out << "n_mels = " << fmt(c.features.n_mels) << "\n";
    out << "fmin = " << fmt(c.features.fmin) << "\n";
    out << "fmax = " << fmt(c.features.fmax) << "\n";
    out << "\n[model]\n";
    out << "channels = " << fmt(c.encoder.channels) << "\n";
    out << "kernel = " << fmt(c.encoder.kernel) << "\n";
    out << "\n[methods]\n";
    out << "source_domain = " << c.train.source_domain << "\n";
    out << "target_domain = " << c.train.target_domain << "\n";
    out << "lr_backbone = " << fmt(c.train.lr_backbone) << "\n";
    out << "lr_classifier = " << fmt(c.train.lr_classifier) << "\n";
    out << "batch_size = " << fmt(c.train.batch_size) << "\n";
    out << "epochs = " << fmt(c.train.epochs) << "\n";
    out << "lambda_em = " << fmt(c.train.lambda_em) << "\n";
    out << "lambda_afn = " << fmt(c.train.lambda_afn) << "\n";
    out << "lambda_confusion = " << fmt(c.train.lambda_confusion) << "\n";
    out << "afn_radius = " << fmt(c.train.afn_radius) << "\n";
    out << "afn_delta = " << fmt(c.train.afn_delta) << "\n";
    out << "alpha = " << fmt(c.train.alpha) << "\n";
    out << "noise_pool_fraction = " << fmt(c.train.noise_pool_fraction) << "\n";
    out << "window_seconds = " << fmt(c.train.window_seconds) << "\n";
    out << "noise_pool_recordings = " << fmt(c.noise_pool_recordings) << "\n";
    out << "noise_pool_seconds = " << fmt(c.noise_pool_seconds) << "\n";
    out << "noise_pool_rms = " << fmt(c.noise_pool_rms) << "\n";
    for (const auto& [method, fields] : c.method_overrides) {
        for (const auto& [key, value] : fields) {
            out << method << "." << key << " = " << fmt(value) << "\n";
        }
    }
    out << "\n[eval]\n";
    out << "n_seeds = " << fmt(c.eval.n_seeds) << "\n";
    out << "domain_id_epochs = " << fmt(c.eval.domain_id_epochs) << "\n";
    out << "xgen_epochs = " << fmt(c.eval.xgen_epochs) << "\n";
    out << "probe_steps = " << fmt(c.eval.probe_steps) << "\n";
    out << "\n[paths]\n";
    out << "work_dir = " << c.work_dir << "\n";
    return out.str();
}

uda::TrainRunConfig resolve_train(const ExperimentConfig& cfg, const std::string& method,
                                  std::uint64_t seed) {
    if (!known_method(method)) {
        std::string valid;
        for (const auto& m : kMethods) {
            if (!valid.empty()) valid += ", ";
            valid += m;
        }
        throw ConfigError("unknown method \"" + method + "\" (valid: " + valid + ")");
    }
    uda::TrainRunConfig t = cfg.train;
    t.method = method;
    t.seed = seed;
    t.encoder = cfg.encoder;
    t.encoder.n_mels = cfg.features.n_mels;
    auto it = cfg.method_overrides.find(method);
    if (it != cfg.method_overrides.end()) {
        for (const auto& [key, value] : it->second) {
            for (const auto& f : override_fields()) {
                if (key == f.key) {
                    f.apply(t, value);
                    break;
                }
            }
        }
    }
    t.validate();
    return t;
}

}  // namespace cryda::config
