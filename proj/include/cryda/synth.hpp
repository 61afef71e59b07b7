#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cryda/dsp.hpp"
#include "cryda/errors.hpp"

namespace cryda::synth {

enum class Contour { Arc, Flat, Falling };

// Source parameters for one synthetic cry.
struct CryParams {
    double f0_mean = 450.0;           // Hz, in [250, 800]
    Contour f0_contour = Contour::Arc;
    double jitter = 0.01;             // relative f0 perturbation sigma, in [0, 0.1]
    int n_harmonics = 8;
    double expiration_dur = 0.9;      // seconds per expiration
    int n_expirations = 2;
    double gap_dur = 0.4;             // silence between expirations
    double total_seconds = 3.0;
    int sample_rate = 16000;
};

// synth_cry output: the rendered clip plus sample-aligned ground truth used
// by the oracles (never serialized to disk).
struct CrySynthesis {
    dsp::AudioClip clip;
    std::vector<float> truth_f0;       // Hz per sample; 0 outside voicing
    std::vector<std::uint8_t> voiced;  // per-sample mask
};

// Direct form I RBJ biquad.
struct Biquad {
    double b0 = 1.0, b1 = 0.0, b2 = 0.0, a1 = 0.0, a2 = 0.0;

    static Biquad lowpass(double fc, double q, double sample_rate);
    static Biquad highpass(double fc, double q, double sample_rate);
    static Biquad high_shelf(double fc, double gain_db, double sample_rate);

    void apply(std::vector<float>& x) const;
};

enum class NoiseKind { PinkHum50, BabbleModHum60 };

// One "hospital": its background noise, its recording channel, its SNR range.
struct DomainProfile {
    std::string id;
    NoiseKind noise_kind = NoiseKind::PinkHum50;
    std::vector<Biquad> channel;
    double snr_lo = 5.0;
    double snr_hi = 20.0;

    static DomainProfile hospital_a();
    static DomainProfile hospital_b();
    static DomainProfile by_id(const std::string& id);
};

enum class Label { Healthy, Injury };
enum class Split { Train, Valid, Test };

std::string to_string(Label v);
std::string to_string(Split v);
Label label_from_string(const std::string& s);
Split split_from_string(const std::string& s);

struct ManifestRow {
    std::string path;  // relative to the manifest's directory
    std::string patient_id;
    Label label = Label::Healthy;
    std::string domain;
    Split split = Split::Train;

    bool operator==(const ManifestRow&) const = default;
};

struct CorpusManifest {
    std::vector<ManifestRow> rows;

    std::vector<ManifestRow> select(const std::string& domain, Split split) const;
};

struct CorpusConfig {
    int patients_per_domain = 60;
    int clips_per_patient = 5;
    double clip_seconds = 3.0;
    double healthy_fraction = 0.5;
    double train_frac = 0.6;
    double valid_frac = 0.2;
    double test_frac = 0.2;
    // Control corpus: render both domains with hospital_a's noise and
    // channel (independent draws), keeping the hospital_b name.
    bool no_shift = false;
    std::string out_dir = "corpus";
};

// Harmonic source with 1/k rolloff following the jittered f0 contour, one
// raised-cosine envelope per expiration, peak normalized to 0.9. Pure
// function of (params, seed).
CrySynthesis synth_cry(const CryParams& params, std::uint64_t seed);

// Renders profile noise for a standalone clip (unit RMS before scaling);
// used for the target-noise pool as well as by apply_domain.
std::vector<float> render_noise(const DomainProfile& profile, std::int64_t n_samples,
                                int sample_rate, std::uint64_t seed);

// Channel-filters the clip, then adds profile noise at snr_db measured over
// the clip's detected active segments. Metadata records domain, snr_db and
// the final anti-clipping scale.
dsp::AudioClip apply_domain(const dsp::AudioClip& clip, const DomainProfile& profile,
                            double snr_db, std::uint64_t seed);

// Writes WAVs under cfg.out_dir/{domain}/{patient}/c{i}.wav plus
// manifest.csv and corpus.json, and returns the manifest. Class-conditional
// cry distributions are identical across domains; only the profile differs.
CorpusManifest generate_corpus(const CorpusConfig& cfg, std::uint64_t seed);

void write_manifest(const std::string& path, const CorpusManifest& m);
CorpusManifest read_manifest(const std::string& path);

}  // namespace cryda::synth
