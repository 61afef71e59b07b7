#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "cryda/errors.hpp"
#include "cryda/rng.hpp"
#include "cryda/uda.hpp"

namespace cryda::uda {

namespace {

constexpr std::uint64_t kKeyNoisePool = 504;
constexpr std::uint64_t kKeyAugment = 506;

}  // namespace

void TrainRunConfig::validate() const {
    static const std::set<std::string> known = {"baseline", "bn",     "em",  "hafn",
                                               "safn",     "symnet", "tni"};
    if (!known.count(method)) {
        throw ConfigError("unknown training method \"" + method + "\"");
    }
    if (batch_size < 2) {
        throw ConfigError("batch_size must be at least 2, got " + std::to_string(batch_size));
    }
    if (epochs < 1) throw ConfigError("epochs must be positive");
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw ConfigError("alpha must lie in [0, 1], got " + std::to_string(alpha));
    }
    if (!(noise_pool_fraction > 0.0 && noise_pool_fraction <= 1.0)) {
        throw ConfigError("noise_pool_fraction must lie in (0, 1]");
    }
    if (!(lr_backbone > 0.0) || !(lr_classifier > 0.0)) {
        throw ConfigError("learning rates must be positive");
    }
    if (!(window_seconds > 0.0)) throw ConfigError("window_seconds must be positive");
    if (lambda_em < 0.0 || lambda_afn < 0.0 || lambda_confusion < 0.0) {
        throw ConfigError("loss weights must be non-negative");
    }
    if (!(afn_radius > 0.0) || !(afn_delta > 0.0)) {
        throw ConfigError("afn_radius and afn_delta must be positive");
    }
    if (source_domain == target_domain) {
        throw ConfigError("source and target domain must differ");
    }
}

FeatureStore FeatureStore::load(const std::string& corpus_dir, const dsp::FeatureConfig& fcfg,
                                bool keep_audio) {
    namespace fs = std::filesystem;
    FeatureStore store;
    store.dir_ = corpus_dir;
    store.fcfg_ = fcfg;
    auto manifest = synth::read_manifest((fs::path(corpus_dir) / "manifest.csv").string());
    if (manifest.rows.empty()) {
        throw DataError("corpus at " + corpus_dir + " has an empty manifest");
    }
    store.rows_ = manifest.rows;

    std::set<std::string> domain_set;
    for (const auto& row : store.rows_) domain_set.insert(row.domain);
    store.domains_.assign(domain_set.begin(), domain_set.end());

    store.feats_.reserve(store.rows_.size());
    if (keep_audio) store.audio_.reserve(store.rows_.size());
    for (const auto& row : store.rows_) {
        auto clip = dsp::read_wav((fs::path(corpus_dir) / row.path).string());
        store.feats_.push_back(dsp::log_mel(clip, fcfg));
        if (keep_audio) store.audio_.push_back(std::move(clip));
    }
    return store;
}

const dsp::SpectrogramFeatures& FeatureStore::features(int item) const {
    if (item < 0 || static_cast<std::size_t>(item) >= feats_.size()) {
        throw ValueError("feature index " + std::to_string(item) + " out of range");
    }
    return feats_[static_cast<std::size_t>(item)];
}

const dsp::AudioClip& FeatureStore::audio(int item) const {
    if (audio_.empty()) {
        throw ValueError("this FeatureStore was loaded without keep_audio");
    }
    if (item < 0 || static_cast<std::size_t>(item) >= audio_.size()) {
        throw ValueError("audio index " + std::to_string(item) + " out of range");
    }
    return audio_[static_cast<std::size_t>(item)];
}

DataSet FeatureStore::select(const std::string& domain, synth::Split split) const {
    DataSet ds;
    for (std::size_t i = 0; i < rows_.size(); ++i) {
        const auto& row = rows_[i];
        if (row.domain != domain || row.split != split) continue;
        ds.items.push_back(static_cast<int>(i));
        ds.labels.push_back(row.label == synth::Label::Injury ? 1 : 0);
    }
    return ds;
}

DataSet FeatureStore::select_domain_labeled(synth::Split split) const {
    DataSet ds;
    for (std::size_t i = 0; i < rows_.size(); ++i) {
        const auto& row = rows_[i];
        if (row.split != split) continue;
        auto it = std::find(domains_.begin(), domains_.end(), row.domain);
        ds.items.push_back(static_cast<int>(i));
        ds.labels.push_back(static_cast<int>(it - domains_.begin()));
    }
    return ds;
}

int window_frames(const dsp::FeatureConfig& fcfg, double seconds) {
    auto samples = static_cast<std::int64_t>(std::llround(seconds * fcfg.sample_rate));
    if (samples < fcfg.win_length()) {
        throw ParamError("analysis window shorter than one feature frame");
    }
    return static_cast<int>((samples - fcfg.win_length()) / fcfg.hop_length() + 1);
}

ad::Tensor gather_batch(const FeatureStore& store, const std::vector<int>& items,
                        const std::vector<int>& offsets, int window) {
    if (items.empty()) throw ValueError("gather_batch: empty item list");
    if (items.size() != offsets.size()) {
        throw ShapeError("gather_batch: items and offsets differ in length");
    }
    int mels = store.features(items[0]).frames.shape[1];
    auto batch = ad::Tensor::zeros(
        {static_cast<int>(items.size()), 1, window, mels});
    std::size_t plane = static_cast<std::size_t>(window) * static_cast<std::size_t>(mels);
    for (std::size_t b = 0; b < items.size(); ++b) {
        const ad::Tensor& f = store.features(items[b]).frames;
        int frames = f.shape[0];
        int off = offsets[b];
        if (f.shape[1] != mels) throw ShapeError("gather_batch: mixed mel counts");
        if (off < 0 || off + window > frames) {
            throw ShapeError("gather_batch: crop [" + std::to_string(off) + ", " +
                             std::to_string(off + window) + ") outside " +
                             std::to_string(frames) + " frames");
        }
        std::copy_n(f.data.begin() + static_cast<std::size_t>(off) * mels, plane,
                    batch.data.begin() + b * plane);
    }
    return batch;
}

std::vector<dsp::AudioClip> build_noise_pool(const synth::DomainProfile& profile,
                                             int n_recordings, double seconds,
                                             double noise_rms, std::uint64_t seed) {
    if (n_recordings < 1) throw ParamError("build_noise_pool: need at least one recording");
    if (!(seconds > 0.0) || !(noise_rms > 0.0)) {
        throw ParamError("build_noise_pool: seconds and noise_rms must be positive");
    }
    constexpr int kSampleRate = 16000;
    auto n_samples = static_cast<std::int64_t>(std::llround(seconds * kSampleRate));
    std::vector<dsp::AudioClip> pool;
    for (int i = 0; i < n_recordings; ++i) {
        auto rec_seed =
            Rng::keyed(seed, {kKeyNoisePool, static_cast<std::uint64_t>(i)}).next_u64();
        auto samples = synth::render_noise(profile, n_samples, kSampleRate, rec_seed);
        dsp::AudioClip rec;
        rec.sample_rate = kSampleRate;
        rec.id = profile.id + "_noise_" + std::to_string(i);
        rec.samples.resize(samples.size());
        for (std::size_t j = 0; j < samples.size(); ++j) {
            rec.samples[j] = static_cast<float>(noise_rms) * samples[j];
        }
        auto quiet = dsp::extract_noise(rec);
        for (auto& seg : quiet) {
            seg.id = rec.id + "_" + std::to_string(pool.size());
            pool.push_back(std::move(seg));
        }
    }
    if (pool.empty()) {
        throw DataError("build_noise_pool: no quiet spans extracted from " +
                        std::to_string(n_recordings) + " recordings");
    }
    return pool;
}

dsp::AudioClip tni_augment(const dsp::AudioClip& s, const std::vector<dsp::AudioClip>& pool,
                           double alpha, std::uint64_t seed) {
    if (pool.empty()) throw DataError("tni_augment: empty noise pool");
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw ParamError("tni_augment: alpha must lie in [0, 1]");
    }
    if (s.samples.empty()) throw ValueError("tni_augment: empty input clip");
    if (alpha == 0.0) return s;

    Rng rng = Rng::keyed(seed, {kKeyAugment});
    const dsp::AudioClip& noise =
        pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(pool.size()) - 1))];
    if (noise.samples.empty()) throw DataError("tni_augment: empty pool clip");
    auto len = s.samples.size();
    auto n_len = noise.samples.size();

    std::vector<float> crop(len);
    if (n_len >= len) {
        auto off = static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<int>(n_len - len)));
        std::copy_n(noise.samples.begin() + static_cast<std::ptrdiff_t>(off), len, crop.begin());
    } else {
        auto start = static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<int>(n_len) - 1));
        for (std::size_t i = 0; i < len; ++i) {
            crop[i] = noise.samples[(start + i) % n_len];
        }
    }

    dsp::AudioClip out = s;
    out.id = s.id + "_aug";
    auto a = static_cast<float>(alpha);
    for (std::size_t i = 0; i < len; ++i) {
        float v = s.samples[i] + a * crop[i];
        float mag = std::fabs(v);
        if (mag > 1.0f) {
            // Soft knee above full scale; values inside [-1, 1] pass through.
            v = std::copysign(1.0f + std::tanh(4.0f * (mag - 1.0f)) * 0.25f, v);
        }
        out.samples[i] = v;
    }
    out.metadata["augmented"] = "1";
    out.metadata["noise_id"] = noise.id;
    return out;
}

}  // namespace cryda::uda
