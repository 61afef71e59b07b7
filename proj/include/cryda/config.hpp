#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "cryda/dsp.hpp"
#include "cryda/model.hpp"
#include "cryda/synth.hpp"
#include "cryda/uda.hpp"

namespace cryda::config {

struct EvalConfig {
    int n_seeds = 5;
    int domain_id_epochs = 6;
    int xgen_epochs = 12;
    int probe_steps = 300;
};

// One experiment description: corpus geometry, feature extraction, encoder,
// shared training defaults with per-method numeric overrides, evaluation
// protocol, and output locations. Parsed from a sectioned key-value file;
// every key is optional and unknown keys are rejected.
struct ExperimentConfig {
    synth::CorpusConfig corpus;
    std::uint64_t corpus_seed = 0;
    dsp::FeatureConfig features;
    model::EncoderConfig encoder;
    uda::TrainRunConfig train;
    int noise_pool_recordings = 10;
    double noise_pool_seconds = 3.0;
    double noise_pool_rms = 0.1;
    EvalConfig eval;
    std::string work_dir = "work";
    // method -> hyperparameter -> value, applied on top of the shared
    // training defaults when that method is resolved.
    std::map<std::string, std::map<std::string, double>> method_overrides;
};

ExperimentConfig default_config();

// Parses config text on top of the defaults. ConfigError on unknown
// sections or keys, malformed lines, or invalid values.
ExperimentConfig parse_config(const std::string& text);

// Reads and parses a config file; IoError when unreadable.
ExperimentConfig load_config(const std::string& path);

// Serializes the fully resolved config; parse_config(to_ini(c)) == c.
std::string to_ini(const ExperimentConfig& cfg);

// Training configuration for one method and seed: shared defaults, then the
// method's overrides, then validation.
uda::TrainRunConfig resolve_train(const ExperimentConfig& cfg, const std::string& method,
                                  std::uint64_t seed);

}  // namespace cryda::config
