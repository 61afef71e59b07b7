#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cryda/metrics.hpp"
#include "cryda/model.hpp"
#include "cryda/uda.hpp"

namespace cryda::diag {

// Shift diagnostics: can a classifier tell the domains apart, how well do
// cry classifiers transfer across them, and do the pitch distributions
// stay put while they drift.

struct DomainIdConfig {
    int epochs = 6;
    int batch_size = 32;
    double lr_backbone = 0.01;
    double lr_classifier = 0.01;
    double window_seconds = 3.0;
    std::uint64_t seed = 0;
};

struct DomainIdResult {
    double accuracy = 0.0;
    // Row-normalized over true domains: confusion[true][predicted].
    std::vector<std::vector<double>> confusion;
    std::vector<std::string> domains;
};

// Trains a fresh CNN to predict the domain of each clip from its features
// and reports accuracy on the test split.
DomainIdResult domain_id_experiment(const uda::FeatureStore& store,
                                    const DomainIdConfig& cfg = {});

struct XGenResult {
    double source_on_source = 0.0;
    double source_on_target = 0.0;
    double target_on_target = 0.0;
    // Transfer penalties: how much AUC is lost by crossing the shift.
    double gap_from_source = 0.0;  // source_on_source - source_on_target
    double gap_from_target = 0.0;  // target_on_target - source_on_target
};

// Trains plain supervised classifiers on each domain and evaluates them on
// both test splits. cfg.method must be "baseline".
XGenResult xgen_experiment(const uda::FeatureStore& store, const uda::TrainRunConfig& cfg);

struct PitchDistribution {
    metrics::Histogram histogram;
    std::int64_t voiced_frames = 0;
    std::int64_t clips = 0;
    // No voiced frame anywhere in the split; the histogram is all zeros.
    bool empty_warning = false;
};

// Pools voiced pitch estimates from the active spans of every clip of one
// domain and split into a fixed-width histogram. Needs a FeatureStore
// loaded with keep_audio.
PitchDistribution pitch_distribution(const uda::FeatureStore& store, const std::string& domain,
                                     synth::Split split, double fmin = 250.0,
                                     double fmax = 1000.0, double bin_width = 10.0);

struct ProbeConfig {
    int steps = 300;
    double lr = 0.05;
    int batch_size = 32;
    double window_seconds = 3.0;
    std::uint64_t seed = 0;
};

// Fits a logistic head on frozen embeddings to predict the domain, training
// on the train split and reporting test-split accuracy. Measures how much
// domain information an encoder retains.
double domain_probe_accuracy(model::ModelState& state, const uda::FeatureStore& store,
                             const ProbeConfig& cfg = {});

struct ReportRow {
    std::string method;
    double mean_auc = 0.0;
    double stderr_auc = 0.0;
    int n_seeds = 0;
    // Relative improvement over the baseline in percent; unset for the
    // baseline row itself.
    double improvement_pct = 0.0;
    bool has_improvement = false;
};

struct Report {
    std::vector<ReportRow> rows;

    std::string to_text() const;
    std::string to_json() const;
};

// Summarizes per-seed target-domain AUCs of each method against the
// required "baseline" entry.
Report build_report(const std::map<std::string, std::vector<double>>& target_aucs);

}  // namespace cryda::diag
