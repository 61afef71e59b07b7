#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <vector>

#include "cryda/dsp.hpp"
#include "cryda/rng.hpp"
#include "support/golden_clip.hpp"

using namespace cryda;
using namespace cryda::dsp;

namespace {

constexpr double kTau = 6.283185307179586;

AudioClip make_clip(std::vector<float> samples, int sr = 16000) {
    AudioClip c;
    c.samples = std::move(samples);
    c.sample_rate = sr;
    c.id = "test";
    return c;
}

AudioClip sine_clip(double freq, double seconds, double amp = 0.5, int sr = 16000) {
    std::vector<float> s(std::size_t(seconds * sr), 0.0f);
    for (std::size_t i = 0; i < s.size(); ++i)
        s[i] = float(amp * std::sin(kTau * freq * double(i) / sr));
    return make_clip(std::move(s), sr);
}

AudioClip noise_clip(double seconds, double amp, std::uint64_t seed, int sr = 16000) {
    std::vector<float> s(std::size_t(seconds * sr), 0.0f);
    Rng rng(seed);
    for (auto& v : s) v = float(amp * (rng.uniform() * 2.0 - 1.0));
    return make_clip(std::move(s), sr);
}

}  // namespace

TEST_CASE("stft concentrates a DC signal in bin zero") {
    AudioClip clip = make_clip(std::vector<float>(4000, 0.5f));
    Spectrogram spec = stft(clip, 512, 512, 160);
    CHECK(spec.n_bins == 257);
    CHECK(spec.n_frames == (4000 - 512) / 160 + 1);

    double total = 0.0, dc = 0.0;
    for (int k = 0; k < spec.n_bins; ++k) {
        const double m = std::norm(std::complex<double>(spec.at(0, k)));
        total += m;
        if (k == 0) dc = m;
    }
    CHECK(dc > 0.5 * total);
    for (int k = 4; k < spec.n_bins; ++k)
        CHECK(std::abs(spec.at(0, k)) < 1e-3 * std::sqrt(dc));
}

TEST_CASE("stft puts a 1 kHz tone at bin 32 for n_fft 512") {
    AudioClip clip = sine_clip(1000.0, 0.5);
    Spectrogram spec = stft(clip, 512, 512, 256);
    int peak = 0;
    for (int k = 1; k < spec.n_bins; ++k)
        if (std::abs(spec.at(1, k)) > std::abs(spec.at(1, peak))) peak = k;
    CHECK(peak == 32);
}

TEST_CASE("stft satisfies Parseval per frame") {
    AudioClip clip = noise_clip(0.3, 0.4, 42);
    const int n_fft = 512, win = 400, hop = 160;
    Spectrogram spec = stft(clip, n_fft, win, hop);

    for (int t = 0; t < spec.n_frames; ++t) {
        // Independent time-domain energy of the same windowed frame.
        double time_energy = 0.0;
        for (int i = 0; i < win; ++i) {
            const double w = 0.5 * (1.0 - std::cos(kTau * i / win));
            const double x = double(clip.samples[std::size_t(t) * hop + std::size_t(i)]) * w;
            time_energy += x * x;
        }
        double freq_energy = std::norm(std::complex<double>(spec.at(t, 0))) +
                             std::norm(std::complex<double>(spec.at(t, spec.n_bins - 1)));
        for (int k = 1; k < spec.n_bins - 1; ++k)
            freq_energy += 2.0 * std::norm(std::complex<double>(spec.at(t, k)));
        freq_energy /= n_fft;
        CHECK(std::abs(freq_energy - time_energy) < 1e-3 * time_energy);
    }
}

TEST_CASE("stft rejects bad parameters and short clips") {
    AudioClip clip = sine_clip(440.0, 0.1);
    CHECK_THROWS_AS(stft(clip, 500, 400, 160), ParamError);   // not a power of two
    CHECK_THROWS_AS(stft(clip, 512, 600, 160), ParamError);   // window > n_fft
    CHECK_THROWS_AS(stft(clip, 512, 400, 0), ParamError);
    AudioClip tiny = make_clip(std::vector<float>(100, 0.0f));
    CHECK_THROWS_AS(stft(tiny, 512, 400, 160), ValueError);
}

TEST_CASE("mel filterbank shape, coverage and nonnegativity") {
    ad::Tensor fb = mel_filterbank(512, 64, 16000.0, 50.0, 8000.0);
    CHECK(fb.shape == ad::Shape{64, 257});
    for (float v : fb.data) CHECK(v >= 0.0f);

    for (int k = 0; k < 257; ++k) {
        const double f = k * 16000.0 / 512.0;
        if (f <= 50.0 || f >= 8000.0) continue;
        float col_max = 0.0f;
        for (int m = 0; m < 64; ++m) col_max = std::max(col_max, fb.data[std::size_t(m) * 257 + k]);
        CHECK(col_max > 0.0f);
    }
}

TEST_CASE("mel filterbank peaks match the closed-form mel scale") {
    const int n_mels = 64;
    ad::Tensor fb = mel_filterbank(512, n_mels, 16000.0, 50.0, 8000.0);

    auto mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
    auto hz = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
    const double lo = mel(50.0), hi = mel(8000.0);
    const double bin_hz = 16000.0 / 512.0;

    for (int m = 0; m < n_mels; ++m) {
        int peak = 0;
        for (int k = 1; k < 257; ++k)
            if (fb.data[std::size_t(m) * 257 + k] > fb.data[std::size_t(m) * 257 + peak])
                peak = k;
        CHECK(fb.data[std::size_t(m) * 257 + peak] > 0.0f);
        const double expect_center = hz(lo + (hi - lo) * (m + 1) / (n_mels + 1));
        CHECK(std::abs(peak * bin_hz - expect_center) <= bin_hz);
    }
}

TEST_CASE("mel filterbank rejects invalid band edges") {
    CHECK_THROWS_AS(mel_filterbank(512, 64, 16000.0, 8000.0, 50.0), ParamError);
    CHECK_THROWS_AS(mel_filterbank(512, 64, 16000.0, 50.0, 9000.0), ParamError);
    CHECK_THROWS_AS(mel_filterbank(512, 0, 16000.0, 50.0, 8000.0), ParamError);
}

TEST_CASE("log_mel maps silence to the log floor") {
    AudioClip clip = make_clip(std::vector<float>(8000, 0.0f));
    SpectrogramFeatures feats = log_mel(clip, FeatureConfig{});
    CHECK(feats.frames.dim(0) == (8000 - 400) / 160 + 1);
    CHECK(feats.frames.dim(1) == 64);
    const float floor_val = float(std::log(1e-10));
    for (float v : feats.frames.data) CHECK(v == doctest::Approx(floor_val));
}

TEST_CASE("log_mel rises by ln 4 when amplitude doubles") {
    AudioClip clip = noise_clip(0.5, 0.3, 7);
    AudioClip doubled = clip;
    for (auto& v : doubled.samples) v *= 2.0f;
    SpectrogramFeatures a = log_mel(clip, FeatureConfig{});
    SpectrogramFeatures b = log_mel(doubled, FeatureConfig{});
    for (std::size_t i = 0; i < a.frames.data.size(); ++i)
        CHECK(double(b.frames.data[i]) - double(a.frames.data[i]) ==
              doctest::Approx(std::log(4.0)).epsilon(1e-3));
}

TEST_CASE("log_mel ignores clip identity and metadata") {
    AudioClip clip = noise_clip(0.3, 0.2, 11);
    AudioClip renamed = clip;
    renamed.id = "other";
    renamed.metadata["domain"] = "x";
    CHECK(log_mel(clip, FeatureConfig{}).frames.data ==
          log_mel(renamed, FeatureConfig{}).frames.data);
}

TEST_CASE("log_mel matches the committed reference output") {
    SpectrogramFeatures feats = log_mel(testsupport::golden_clip(), FeatureConfig{});
    std::ifstream in(std::string(CRYDA_TEST_DATA_DIR) + "/logmel_golden.bin", std::ios::binary);
    REQUIRE_MESSAGE(bool(in), "missing committed reference tests/data/logmel_golden.bin");
    std::vector<float> want(feats.frames.data.size());
    in.read(reinterpret_cast<char*>(want.data()), std::streamsize(want.size() * sizeof(float)));
    REQUIRE(in.gcount() == std::streamsize(want.size() * sizeof(float)));
    for (std::size_t i = 0; i < want.size(); ++i)
        CHECK(feats.frames.data[i] == doctest::Approx(want[i]).epsilon(1e-5));
}

TEST_CASE("estimate_pitch recovers a pure tone within one percent") {
    PitchTrack track = estimate_pitch(sine_clip(440.0, 1.0));
    const float med = track.median_voiced_f0();
    CHECK(med == doctest::Approx(440.0f).epsilon(0.01));
    int voiced = 0;
    for (const PitchFrame& f : track.frames) voiced += f.voiced ? 1 : 0;
    CHECK(voiced > int(track.frames.size()) / 2);
    for (const PitchFrame& f : track.frames)
        if (f.voiced) {
            CHECK(f.f0 >= 250.0f);
            CHECK(f.f0 <= 1000.0f);
            CHECK(f.confidence >= 0.0f);
            CHECK(f.confidence <= 1.0f);
        }
}

TEST_CASE("estimate_pitch leaves white noise mostly unvoiced") {
    PitchTrack track = estimate_pitch(noise_clip(1.0, 0.5, 99));
    int unvoiced = 0;
    for (const PitchFrame& f : track.frames) unvoiced += f.voiced ? 0 : 1;
    CHECK(double(unvoiced) >= 0.9 * double(track.frames.size()));
}

TEST_CASE("estimate_pitch is invariant to whole-period delays") {
    AudioClip base = sine_clip(440.0, 1.0);
    // 400 samples = exactly 11 periods of 440 Hz at 16 kHz.
    AudioClip delayed = base;
    delayed.samples.insert(delayed.samples.begin(), 400, 0.0f);
    const float a = estimate_pitch(base).median_voiced_f0();
    const float b = estimate_pitch(delayed).median_voiced_f0();
    CHECK(std::abs(a - b) / a < 0.005f);
}

TEST_CASE("estimate_pitch rejects invalid bands and frames") {
    AudioClip clip = sine_clip(440.0, 0.2);
    CHECK_THROWS_AS(estimate_pitch(clip, 40.0, 1000.0), ParamError);
    CHECK_THROWS_AS(estimate_pitch(clip, 250.0, 9000.0), ParamError);
    CHECK_THROWS_AS(estimate_pitch(clip, 600.0, 1000.0), ParamError);
    CHECK_THROWS_AS(estimate_pitch(clip, 250.0, 1000.0, 100), ParamError);
}

TEST_CASE("detect_activity returns nothing for digital silence") {
    AudioClip clip = make_clip(std::vector<float>(16000, 0.0f));
    CHECK(detect_activity(clip).empty());
}

TEST_CASE("detect_activity finds one segment for a flanked tone") {
    std::vector<float> s(48000, 0.0f);
    for (int i = 16000; i < 32000; ++i)
        s[std::size_t(i)] = float(0.5 * std::sin(kTau * 500.0 * i / 16000.0));
    SegmentList segs = detect_activity(make_clip(std::move(s)));
    REQUIRE(segs.size() == 1);
    CHECK(std::abs(double(segs[0].start) - 16000.0) <= 400.0);
    CHECK(std::abs(double(segs[0].end) - 32000.0) <= 400.0);
    CHECK(segs[0].kind == SegmentKind::Activity);
}

TEST_CASE("detect_activity bridges short gaps and drops slivers") {
    // 150 ms bursts split by 40 ms rests; the rests are under the 50 ms
    // bridge so one segment must come back.
    std::vector<float> s;
    Rng rng(5);
    for (int burst = 0; burst < 5; ++burst) {
        for (int i = 0; i < 2400; ++i)
            s.push_back(float(0.4 * std::sin(kTau * 600.0 * double(i) / 16000.0)));
        if (burst < 4)
            for (int i = 0; i < 640; ++i) s.push_back(0.0f);
    }
    SegmentList segs = detect_activity(make_clip(std::move(s)));
    REQUIRE(segs.size() == 1);
    CHECK(segs[0].start <= 400);
    CHECK(segs[0].end >= std::int64_t(5 * 2400 + 4 * 640 - 400));
}

TEST_CASE("segment lists are sorted, disjoint and in bounds on random input") {
    for (std::uint64_t seed = 1; seed <= 8; ++seed) {
        Rng rng(seed);
        std::vector<float> s(std::size_t(rng.uniform_int(8000, 48000)), 0.0f);
        const int bursts = int(rng.uniform_int(0, 4));
        for (int b = 0; b < bursts; ++b) {
            const auto start = std::size_t(rng.uniform_int(0, std::int64_t(s.size()) - 1600));
            const auto len = std::size_t(rng.uniform_int(800, 8000));
            for (std::size_t i = start; i < std::min(s.size(), start + len); ++i)
                s[i] = float(0.5 * std::sin(kTau * 500.0 * double(i) / 16000.0));
        }
        AudioClip clip = make_clip(std::move(s));
        SegmentList segs = detect_activity(clip);
        std::int64_t cursor = 0;
        for (const Segment& seg : segs) {
            CHECK(seg.start >= cursor);
            CHECK(seg.end > seg.start);
            CHECK(seg.end <= clip.length());
            cursor = seg.end;
        }
    }
}

TEST_CASE("extract_noise returns the whole clip when nothing is active") {
    AudioClip clip = noise_clip(1.0, 0.01, 3);
    std::vector<AudioClip> noise = extract_noise(clip);
    REQUIRE(noise.size() == 1);
    CHECK(noise[0].samples == clip.samples);
    CHECK(noise[0].metadata.at("kind") == "noise");
}

TEST_CASE("extract_noise returns nothing when everything is active") {
    std::vector<float> s;
    for (int burst = 0; burst < 6; ++burst) {
        for (int i = 0; i < 2400; ++i)
            s.push_back(float(0.4 * std::sin(kTau * 600.0 * double(i) / 16000.0)));
        if (burst < 5)
            for (int i = 0; i < 640; ++i) s.push_back(0.0f);
    }
    CHECK(extract_noise(make_clip(std::move(s))).empty());
}

TEST_CASE("silence splits fully into noise: activity and noise partition it") {
    AudioClip clip = make_clip(std::vector<float>(16000, 0.0f));
    SegmentList active = detect_activity(clip);
    std::vector<AudioClip> noise = extract_noise(clip);
    CHECK(active.empty());
    REQUIRE(noise.size() == 1);
    CHECK(noise[0].length() == clip.length());
}

TEST_CASE("wav roundtrip preserves samples to 16-bit resolution") {
    AudioClip clip = noise_clip(0.25, 0.8, 21);
    clip.samples[0] = 1.0f;
    clip.samples[1] = -1.0f;
    const std::string path = "roundtrip_test.wav";
    write_wav(path, clip);
    AudioClip back = read_wav(path);
    std::remove(path.c_str());

    CHECK(back.sample_rate == clip.sample_rate);
    REQUIRE(back.samples.size() == clip.samples.size());
    for (std::size_t i = 0; i < clip.samples.size(); ++i)
        CHECK(std::abs(back.samples[i] - clip.samples[i]) < 1.01f / 32767.0f);
}

TEST_CASE("wav reader rejects missing and malformed files") {
    CHECK_THROWS_AS(read_wav("does_not_exist.wav"), IoError);
    const std::string path = "malformed_test.wav";
    {
        std::ofstream out(path, std::ios::binary);
        out << "not a wav file at all";
    }
    CHECK_THROWS_AS(read_wav(path), IoError);
    std::remove(path.c_str());
}
