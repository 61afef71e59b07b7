#include <cmath>
#include <complex>
#include <vector>

#include "cryda/dsp.hpp"

namespace cryda::dsp {

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

// In-place iterative radix-2 Cooley-Tukey, double precision.
void fft(std::vector<std::complex<double>>& a) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * kPi / double(len);
        const std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                const std::complex<double> u = a[i + k];
                const std::complex<double> v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

}  // namespace

Spectrogram stft(const AudioClip& clip, int n_fft, int win_length, int hop) {
    if (!is_pow2(n_fft)) throw ParamError("stft: n_fft must be a power of two");
    if (win_length <= 0 || win_length > n_fft)
        throw ParamError("stft: need 0 < win_length <= n_fft, got win_length=" +
                         std::to_string(win_length) + " n_fft=" + std::to_string(n_fft));
    if (hop <= 0) throw ParamError("stft: hop must be positive");
    if (clip.length() < win_length)
        throw ValueError("stft: clip of " + std::to_string(clip.length()) +
                         " samples is shorter than the " + std::to_string(win_length) +
                         "-sample window; output would be empty");

    const int n_frames = int((clip.length() - win_length) / hop) + 1;
    const int n_bins = n_fft / 2 + 1;

    std::vector<double> window(std::size_t(win_length), 0.0);
    for (int i = 0; i < win_length; ++i)
        window[std::size_t(i)] = 0.5 * (1.0 - std::cos(2.0 * kPi * i / win_length));

    Spectrogram spec;
    spec.n_frames = n_frames;
    spec.n_bins = n_bins;
    spec.frame_rate = double(clip.sample_rate) / hop;
    spec.data.resize(std::size_t(n_frames) * n_bins);

    std::vector<std::complex<double>> buf(std::size_t(n_fft), std::complex<double>(0.0, 0.0));
    for (int t = 0; t < n_frames; ++t) {
        const std::int64_t off = std::int64_t(t) * hop;
        for (int i = 0; i < win_length; ++i)
            buf[std::size_t(i)] = clip.samples[std::size_t(off + i)] * window[std::size_t(i)];
        for (int i = win_length; i < n_fft; ++i) buf[std::size_t(i)] = 0.0;
        fft(buf);
        for (int k = 0; k < n_bins; ++k)
            spec.data[std::size_t(t) * n_bins + k] =
                std::complex<float>(float(buf[std::size_t(k)].real()),
                                    float(buf[std::size_t(k)].imag()));
    }
    return spec;
}

ad::Tensor mel_filterbank(int n_fft, int n_mels, double sample_rate, double fmin, double fmax) {
    if (!is_pow2(n_fft)) throw ParamError("mel_filterbank: n_fft must be a power of two");
    if (n_mels < 1) throw ParamError("mel_filterbank: n_mels must be >= 1");
    if (!(0.0 <= fmin && fmin < fmax && fmax <= sample_rate / 2.0))
        throw ParamError("mel_filterbank: need 0 <= fmin < fmax <= sample_rate/2, got fmin=" +
                         std::to_string(fmin) + " fmax=" + std::to_string(fmax) +
                         " sample_rate=" + std::to_string(sample_rate));

    const int n_bins = n_fft / 2 + 1;
    const double mel_lo = hz_to_mel(fmin);
    const double mel_hi = hz_to_mel(fmax);
    std::vector<double> edges(std::size_t(n_mels) + 2);
    for (int m = 0; m < n_mels + 2; ++m)
        edges[std::size_t(m)] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * m / (n_mels + 1));

    ad::Tensor fb = ad::Tensor::zeros({n_mels, n_bins});
    for (int m = 0; m < n_mels; ++m) {
        const double lo = edges[std::size_t(m)];
        const double center = edges[std::size_t(m) + 1];
        const double hi = edges[std::size_t(m) + 2];
        for (int k = 0; k < n_bins; ++k) {
            const double f = double(k) * sample_rate / n_fft;
            double w = 0.0;
            if (f > lo && f < center)
                w = (f - lo) / (center - lo);
            else if (f == center)
                w = 1.0;
            else if (f > center && f < hi)
                w = (hi - f) / (hi - center);
            fb.data[std::size_t(m) * n_bins + k] = float(w);
        }
    }
    return fb;
}

SpectrogramFeatures log_mel(const AudioClip& clip, const FeatureConfig& cfg) {
    if (clip.sample_rate != cfg.sample_rate)
        throw ValueError("log_mel: clip is " + std::to_string(clip.sample_rate) +
                         " Hz but the front-end expects " + std::to_string(cfg.sample_rate));

    const Spectrogram spec = stft(clip, cfg.n_fft, cfg.win_length(), cfg.hop_length());
    const ad::Tensor fb =
        mel_filterbank(cfg.n_fft, cfg.n_mels, cfg.sample_rate, cfg.fmin, cfg.fmax);

    SpectrogramFeatures out;
    out.frames = ad::Tensor::zeros({spec.n_frames, cfg.n_mels});
    out.frame_rate = spec.frame_rate;
    out.source_id = clip.id;

    std::vector<double> power(std::size_t(spec.n_bins), 0.0);
    for (int t = 0; t < spec.n_frames; ++t) {
        for (int k = 0; k < spec.n_bins; ++k) {
            const std::complex<float> x = spec.at(t, k);
            power[std::size_t(k)] = double(x.real()) * x.real() + double(x.imag()) * x.imag();
        }
        for (int m = 0; m < cfg.n_mels; ++m) {
            double acc = 0.0;
            const float* row = fb.data.data() + std::size_t(m) * spec.n_bins;
            for (int k = 0; k < spec.n_bins; ++k) acc += row[k] * power[std::size_t(k)];
            out.frames.data[std::size_t(t) * cfg.n_mels + m] = float(std::log(acc + 1e-10));
        }
    }
    return out;
}

}  // namespace cryda::dsp
