#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cryda/rng.hpp"
#include "cryda/synth.hpp"

namespace cryda::synth {

namespace {

constexpr double kPi = 3.141592653589793;
constexpr double kHumRelative = 0.3;

constexpr std::uint64_t kKeyNoiseBase = 201;
constexpr std::uint64_t kKeyNoiseHum = 202;
constexpr std::uint64_t kKeyNoiseMod = 203;
constexpr std::uint64_t kKeyMix = 204;

double rms(const std::vector<float>& x) {
    double acc = 0.0;
    for (float v : x) acc += double(v) * double(v);
    return x.empty() ? 0.0 : std::sqrt(acc / double(x.size()));
}

}  // namespace

Biquad Biquad::lowpass(double fc, double q, double sample_rate) {
    const double w = 2.0 * kPi * fc / sample_rate;
    const double alpha = std::sin(w) / (2.0 * q);
    const double c = std::cos(w);
    const double a0 = 1.0 + alpha;
    Biquad f;
    f.b0 = (1.0 - c) / 2.0 / a0;
    f.b1 = (1.0 - c) / a0;
    f.b2 = (1.0 - c) / 2.0 / a0;
    f.a1 = -2.0 * c / a0;
    f.a2 = (1.0 - alpha) / a0;
    return f;
}

Biquad Biquad::highpass(double fc, double q, double sample_rate) {
    const double w = 2.0 * kPi * fc / sample_rate;
    const double alpha = std::sin(w) / (2.0 * q);
    const double c = std::cos(w);
    const double a0 = 1.0 + alpha;
    Biquad f;
    f.b0 = (1.0 + c) / 2.0 / a0;
    f.b1 = -(1.0 + c) / a0;
    f.b2 = (1.0 + c) / 2.0 / a0;
    f.a1 = -2.0 * c / a0;
    f.a2 = (1.0 - alpha) / a0;
    return f;
}

Biquad Biquad::high_shelf(double fc, double gain_db, double sample_rate) {
    const double a = std::pow(10.0, gain_db / 40.0);
    const double w = 2.0 * kPi * fc / sample_rate;
    const double c = std::cos(w);
    const double alpha = std::sin(w) / 2.0 * std::sqrt(2.0);
    const double sa = 2.0 * std::sqrt(a) * alpha;
    const double a0 = (a + 1.0) - (a - 1.0) * c + sa;
    Biquad f;
    f.b0 = a * ((a + 1.0) + (a - 1.0) * c + sa) / a0;
    f.b1 = -2.0 * a * ((a - 1.0) + (a + 1.0) * c) / a0;
    f.b2 = a * ((a + 1.0) + (a - 1.0) * c - sa) / a0;
    f.a1 = 2.0 * ((a - 1.0) - (a + 1.0) * c) / a0;
    f.a2 = ((a + 1.0) - (a - 1.0) * c - sa) / a0;
    return f;
}

void Biquad::apply(std::vector<float>& x) const {
    double x1 = 0.0, x2 = 0.0, y1 = 0.0, y2 = 0.0;
    for (float& v : x) {
        const double x0 = double(v);
        const double y0 = b0 * x0 + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
        x2 = x1;
        x1 = x0;
        y2 = y1;
        y1 = y0;
        v = float(y0);
    }
}

DomainProfile DomainProfile::hospital_a() {
    DomainProfile p;
    p.id = "hospital_a";
    p.noise_kind = NoiseKind::PinkHum50;
    p.channel = {Biquad::highpass(300.0, 0.707, 16000.0), Biquad::lowpass(3400.0, 0.707, 16000.0)};
    return p;
}

DomainProfile DomainProfile::hospital_b() {
    DomainProfile p;
    p.id = "hospital_b";
    p.noise_kind = NoiseKind::BabbleModHum60;
    p.channel = {Biquad::highpass(100.0, 0.707, 16000.0), Biquad::high_shelf(1500.0, 4.0, 16000.0)};
    return p;
}

DomainProfile DomainProfile::by_id(const std::string& id) {
    if (id == "hospital_a") return hospital_a();
    if (id == "hospital_b") return hospital_b();
    throw ParamError("unknown domain profile: " + id);
}

std::vector<float> render_noise(const DomainProfile& profile, std::int64_t n_samples,
                                int sample_rate, std::uint64_t seed) {
    if (n_samples <= 0) throw ParamError("render_noise needs n_samples > 0");
    std::vector<float> base(std::size_t(n_samples), 0.0f);
    Rng rng = Rng::keyed(seed, {kKeyNoiseBase});

    if (profile.noise_kind == NoiseKind::PinkHum50) {
        // Paul Kellet's economy pink filter over white noise.
        double p0 = 0.0, p1 = 0.0, p2 = 0.0;
        for (float& v : base) {
            const double w = rng.uniform(-1.0, 1.0);
            p0 = 0.99765 * p0 + w * 0.0990460;
            p1 = 0.96300 * p1 + w * 0.2965164;
            p2 = 0.57000 * p2 + w * 1.0526913;
            v = float(p0 + p1 + p2 + w * 0.1848);
        }
    } else {
        // Low-passed white noise with a slow multi-sine amplitude
        // modulation, a rough stand-in for ward babble.
        Rng mod_rng = Rng::keyed(seed, {kKeyNoiseMod});
        double mf[3], mp[3];
        for (int j = 0; j < 3; ++j) {
            mf[j] = mod_rng.uniform(0.5, 3.0);
            mp[j] = mod_rng.uniform(0.0, 2.0 * kPi);
        }
        double lp = 0.0;
        for (std::int64_t i = 0; i < n_samples; ++i) {
            const double t = double(i) / double(sample_rate);
            lp = 0.8 * lp + 0.2 * rng.uniform(-1.0, 1.0);
            double m = 0.0;
            for (int j = 0; j < 3; ++j) m += std::sin(2.0 * kPi * mf[j] * t + mp[j]);
            base[std::size_t(i)] = float(lp * (0.8 + 0.2 * (m / 3.0)));
        }
    }

    const double hum_hz = profile.noise_kind == NoiseKind::PinkHum50 ? 50.0 : 60.0;
    Rng hum_rng = Rng::keyed(seed, {kKeyNoiseHum});
    const double ph0 = hum_rng.uniform(0.0, 2.0 * kPi);
    const double ph1 = hum_rng.uniform(0.0, 2.0 * kPi);
    const double hum_amp = kHumRelative * rms(base);
    for (std::int64_t i = 0; i < n_samples; ++i) {
        const double t = double(i) / double(sample_rate);
        base[std::size_t(i)] += float(hum_amp * (std::sin(2.0 * kPi * hum_hz * t + ph0) +
                                                 0.3 * std::sin(4.0 * kPi * hum_hz * t + ph1)));
    }

    const double r = rms(base);
    if (r > 0.0)
        for (float& v : base) v = float(double(v) / r);
    return base;
}

dsp::AudioClip apply_domain(const dsp::AudioClip& clip, const DomainProfile& profile,
                            double snr_db, std::uint64_t seed) {
    if (clip.samples.empty()) throw ValueError("apply_domain: empty clip");
    if (!std::isfinite(snr_db)) throw ParamError("snr_db must be finite");

    dsp::AudioClip out = clip;
    for (const Biquad& f : profile.channel) f.apply(out.samples);

    // SNR is defined over the cry's active segments, detected on the
    // channel-filtered clean signal.
    dsp::SegmentList spans = dsp::detect_activity(out);
    if (spans.empty()) spans.push_back({0, std::int64_t(out.samples.size()), dsp::SegmentKind::Activity});

    const std::vector<float> noise =
        render_noise(profile, std::int64_t(out.samples.size()), out.sample_rate,
                     Rng::keyed(seed, {kKeyMix}).next_u64());

    double sig_sq = 0.0, noise_sq = 0.0;
    std::int64_t n_active = 0;
    for (const dsp::Segment& s : spans) {
        for (std::int64_t i = s.start; i < s.end; ++i) {
            sig_sq += double(out.samples[std::size_t(i)]) * double(out.samples[std::size_t(i)]);
            noise_sq += double(noise[std::size_t(i)]) * double(noise[std::size_t(i)]);
            ++n_active;
        }
    }
    if (n_active == 0 || sig_sq <= 0.0) throw ValueError("apply_domain: clip has no energy");

    const double alpha = std::sqrt(sig_sq / (noise_sq * std::pow(10.0, snr_db / 10.0)));
    for (std::size_t i = 0; i < out.samples.size(); ++i)
        out.samples[i] = float(double(out.samples[i]) + alpha * double(noise[i]));

    double peak = 0.0;
    for (float v : out.samples) peak = std::max(peak, double(std::abs(v)));
    double scale = 1.0;
    if (peak > 1.0) {
        scale = 0.999 / peak;
        for (float& v : out.samples) v = float(double(v) * scale);
    }

    out.metadata["domain"] = profile.id;
    out.metadata["snr_db"] = std::to_string(snr_db);
    out.metadata["mix_scale"] = std::to_string(scale);
    return out;
}

}  // namespace cryda::synth
