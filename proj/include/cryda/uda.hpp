#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cryda/dsp.hpp"
#include "cryda/model.hpp"
#include "cryda/synth.hpp"

namespace cryda::uda {

// One training run: method choice plus every tunable that a method reads.
struct TrainRunConfig {
    std::string method = "baseline";  // baseline, bn, em, hafn, safn, symnet, tni
    std::string source_domain = "hospital_a";
    std::string target_domain = "hospital_b";
    double lr_backbone = 0.01;
    double lr_classifier = 0.01;
    int batch_size = 32;
    int epochs = 30;
    std::uint64_t seed = 0;
    double lambda_em = 0.1;
    double lambda_afn = 0.05;
    double lambda_confusion = 0.1;
    double afn_radius = 30.0;
    double afn_delta = 0.2;
    double alpha = 0.3;
    double noise_pool_fraction = 1.0;
    double window_seconds = 3.0;
    model::EncoderConfig encoder;

    void validate() const;
};

// Indices into a FeatureStore plus integer labels (health or domain).
struct DataSet {
    std::vector<int> items;
    std::vector<int> labels;

    std::size_t size() const { return items.size(); }
};

// Log-mel features (and optionally raw audio) for every manifest row of a
// corpus, loaded once and shared by trainers and diagnostics.
class FeatureStore {
  public:
    static FeatureStore load(const std::string& corpus_dir, const dsp::FeatureConfig& fcfg,
                             bool keep_audio = false);

    const std::vector<synth::ManifestRow>& rows() const { return rows_; }
    const dsp::SpectrogramFeatures& features(int item) const;
    const dsp::AudioClip& audio(int item) const;
    bool has_audio() const { return !audio_.empty(); }
    const dsp::FeatureConfig& feature_config() const { return fcfg_; }
    const std::vector<std::string>& domains() const { return domains_; }
    const std::string& corpus_dir() const { return dir_; }

    // Clips of one domain and split, labeled 0 = healthy, 1 = injury.
    DataSet select(const std::string& domain, synth::Split split) const;

    // Clips of every domain in one split, labeled by domain index.
    DataSet select_domain_labeled(synth::Split split) const;

  private:
    std::string dir_;
    dsp::FeatureConfig fcfg_;
    std::vector<synth::ManifestRow> rows_;
    std::vector<dsp::SpectrogramFeatures> feats_;
    std::vector<dsp::AudioClip> audio_;
    std::vector<std::string> domains_;
};

// Frame count of a fixed analysis window under a feature config.
int window_frames(const dsp::FeatureConfig& fcfg, double seconds);

// Stacks cropped feature windows into a [B, 1, W, n_mels] batch tensor.
// offsets give the first frame of each crop.
ad::Tensor gather_batch(const FeatureStore& store, const std::vector<int>& items,
                        const std::vector<int>& offsets, int window);

// Renders pure noise recordings under a domain profile and cuts them into
// pool clips via quiet-span extraction. noise_rms scales each recording.
std::vector<dsp::AudioClip> build_noise_pool(const synth::DomainProfile& profile,
                                             int n_recordings, double seconds,
                                             double noise_rms, std::uint64_t seed);

// s' = s + alpha * n with n drawn uniformly from the pool and cropped or
// cyclically extended to the length of s. Samples are soft-limited only
// where |s'| exceeds 1.
dsp::AudioClip tni_augment(const dsp::AudioClip& s, const std::vector<dsp::AudioClip>& pool,
                           double alpha, std::uint64_t seed);

struct EpochRecord {
    int epoch = 0;                        // 1-based
    std::map<std::string, double> losses; // "loss_*" components plus "total"
    double source_valid_auc = 0.0;
    double target_valid_auc = 0.0;
    double mean_embedding_norm = 0.0;
    std::map<std::string, double> diagnostics;
};

struct TrainHistory {
    std::string method;
    std::vector<EpochRecord> epochs;
};

void write_history_jsonl(const std::string& path, const TrainHistory& history);
TrainHistory read_history_jsonl(const std::string& path);

struct TrainResult {
    model::ModelState state;  // best epoch by source-valid AUC
    TrainHistory history;
};

// Trains one method end to end. The noise pool is required for tni and
// ignored elsewhere; "bn" is not trainable from scratch and is rejected
// here (see adapt_bn).
TrainResult train_run(const TrainRunConfig& cfg, const FeatureStore& store,
                      const std::vector<dsp::AudioClip>* noise_pool = nullptr);

// Stats-only passes over target data: running statistics follow a
// cumulative batch average while every learnable parameter stays
// bit-identical.
model::ModelState adapt_bn(const model::ModelState& source_model, const FeatureStore& store,
                           const DataSet& target, int batch_size, double window_seconds,
                           int passes = 1);

// AUC of the positive-class score over a labeled dataset, eval forward with
// center crops. average_heads scores by the mean softmax of heads 0 and 1.
double eval_auc(model::ModelState& state, const FeatureStore& store, const DataSet& ds,
                int batch_size, double window_seconds, bool average_heads = false);

// Argmax accuracy; optionally fills a row-normalized confusion matrix
// indexed [true][predicted].
double eval_accuracy(model::ModelState& state, const FeatureStore& store, const DataSet& ds,
                     int batch_size, double window_seconds,
                     std::vector<std::vector<double>>* confusion = nullptr);

}  // namespace cryda::uda
