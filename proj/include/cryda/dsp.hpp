#pragma once

#include <complex>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cryda/errors.hpp"
#include "cryda/tensor.hpp"

namespace cryda::dsp {

// Mono PCM recording plus provenance. Samples live in [-1, 1].
struct AudioClip {
    std::vector<float> samples;
    int sample_rate = 16000;
    std::string id;
    std::map<std::string, std::string> metadata;

    std::int64_t length() const { return std::int64_t(samples.size()); }
    double duration() const { return double(samples.size()) / sample_rate; }
};

// Front-end settings shared by feature extraction and the corpus tools.
struct FeatureConfig {
    int sample_rate = 16000;
    double win_ms = 25.0;
    double hop_ms = 10.0;
    int n_fft = 512;
    int n_mels = 64;
    double fmin = 50.0;
    double fmax = 8000.0;

    int win_length() const { return int(win_ms * sample_rate / 1000.0 + 0.5); }
    int hop_length() const { return int(hop_ms * sample_rate / 1000.0 + 0.5); }
};

// One-sided complex spectrogram, frames outermost.
struct Spectrogram {
    int n_frames = 0;
    int n_bins = 0;
    double frame_rate = 0.0;
    std::vector<std::complex<float>> data;  // [n_frames][n_bins]

    std::complex<float> at(int t, int k) const {
        return data[std::size_t(t) * n_bins + std::size_t(k)];
    }
};

struct SpectrogramFeatures {
    ad::Tensor frames;  // [T, n_mels], natural-log mel power
    double frame_rate = 0.0;
    std::string source_id;
};

struct PitchFrame {
    float f0 = 0.0f;  // Hz; meaningful only when voiced
    float confidence = 0.0f;
    bool voiced = false;
};

struct PitchTrack {
    std::vector<PitchFrame> frames;
    int frame_length = 0;
    int hop = 0;
    int sample_rate = 0;

    std::vector<float> voiced_f0() const;
    // Median of the voiced frames; 0 when none are voiced.
    float median_voiced_f0() const;
};

enum class SegmentKind { Activity, Noise };

struct Segment {
    std::int64_t start = 0;  // inclusive sample index
    std::int64_t end = 0;    // exclusive
    SegmentKind kind = SegmentKind::Activity;

    std::int64_t length() const { return end - start; }
};

using SegmentList = std::vector<Segment>;

// Windowed one-sided FFT frames; periodic Hann window, tail zero-padding up
// to n_fft. Frame t starts at sample t*hop, so
// n_frames = floor((len - win_length)/hop) + 1.
Spectrogram stft(const AudioClip& clip, int n_fft, int win_length, int hop);

// Triangular peak-1 filters with centers equally spaced on the HTK mel
// scale, mel(f) = 2595 log10(1 + f/700). Shape [n_mels, n_fft/2 + 1].
ad::Tensor mel_filterbank(int n_fft, int n_mels, double sample_rate, double fmin, double fmax);

// ln(mel power + 1e-10) per frame.
SpectrogramFeatures log_mel(const AudioClip& clip, const FeatureConfig& cfg);

// YIN: cumulative-mean-normalized difference function, absolute threshold
// 0.15, parabolic interpolation around the chosen lag. Frames whose minimum
// stays above the threshold are unvoiced.
PitchTrack estimate_pitch(const AudioClip& clip, double fmin = 250.0, double fmax = 1000.0,
                          int frame = 1024, int hop = 160);

// Energy detector: frame RMS in dB against a noise floor estimated as
// max(10th percentile, peak - 40 dB, -70 dB); active above floor + 6 dB.
// Gaps under 50 ms are bridged, segments under 100 ms dropped. A clip whose
// peak stays under -80 dBFS is treated as digital silence.
SegmentList detect_activity(const AudioClip& clip, int frame = 400, int hop = 160);

// Complement of detect_activity, returning every quiet span of at least
// 200 ms as its own clip (metadata kind=noise).
std::vector<AudioClip> extract_noise(const AudioClip& clip);

// RIFF PCM, 16-bit signed little-endian, mono.
void write_wav(const std::string& path, const AudioClip& clip);
AudioClip read_wav(const std::string& path);

}  // namespace cryda::dsp
