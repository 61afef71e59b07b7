#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cryda/rng.hpp"
#include "cryda/synth.hpp"

namespace cryda::synth {

namespace {

constexpr double kLeadSeconds = 0.2;
constexpr double kAttackSeconds = 0.05;
constexpr double kReleaseSeconds = 0.08;
constexpr double kJitterControlSeconds = 0.01;
constexpr double kPeakTarget = 0.9;
constexpr double kPi = 3.141592653589793;

constexpr std::uint64_t kKeyJitter = 101;
constexpr std::uint64_t kKeyAmp = 102;

void validate(const CryParams& p) {
    if (p.f0_mean < 250.0 || p.f0_mean > 800.0)
        throw ParamError("f0_mean must be in [250, 800] Hz, got " + std::to_string(p.f0_mean));
    if (p.jitter < 0.0 || p.jitter > 0.1)
        throw ParamError("jitter must be in [0, 0.1], got " + std::to_string(p.jitter));
    if (p.n_harmonics < 1) throw ParamError("n_harmonics must be >= 1");
    if (p.n_expirations < 1) throw ParamError("n_expirations must be >= 1");
    if (p.expiration_dur <= 0.0) throw ParamError("expiration_dur must be > 0");
    if (p.gap_dur < 0.0) throw ParamError("gap_dur must be >= 0");
    if (p.sample_rate <= 0) throw ParamError("sample_rate must be > 0");
    const double used = kLeadSeconds + p.n_expirations * p.expiration_dur +
                        (p.n_expirations - 1) * p.gap_dur;
    if (used > p.total_seconds)
        throw ParamError("expirations and gaps need " + std::to_string(used) +
                         " s but total_seconds is " + std::to_string(p.total_seconds));
}

// Contour shapes are normalized so their mean over one expiration is 1.
double contour_shape(Contour c, double u) {
    switch (c) {
        case Contour::Flat:
            return 1.0;
        case Contour::Falling:
            return 1.1 - 0.2 * u;
        case Contour::Arc:
        default:
            return (0.9 + 0.2 * std::sin(kPi * u)) / (0.9 + 0.4 / kPi);
    }
}

}  // namespace

CrySynthesis synth_cry(const CryParams& params, std::uint64_t seed) {
    validate(params);

    const int sr = params.sample_rate;
    const auto n = std::int64_t(std::llround(params.total_seconds * sr));
    const auto exp_len = std::int64_t(std::llround(params.expiration_dur * sr));
    const auto gap_len = std::int64_t(std::llround(params.gap_dur * sr));
    const auto lead_len = std::int64_t(std::llround(kLeadSeconds * sr));
    const auto attack = std::int64_t(std::llround(kAttackSeconds * sr));
    const auto release = std::int64_t(std::llround(kReleaseSeconds * sr));

    // Smooth multiplicative jitter: gaussian control points every 10 ms,
    // linearly interpolated between them.
    const auto ctrl_hop = std::int64_t(std::llround(kJitterControlSeconds * sr));
    const auto n_ctrl = std::size_t(n / ctrl_hop + 2);
    std::vector<double> ctrl(n_ctrl, 0.0);
    Rng jit_rng = Rng::keyed(seed, {kKeyJitter});
    for (auto& c : ctrl) c = jit_rng.gaussian();

    Rng amp_rng = Rng::keyed(seed, {kKeyAmp});
    std::vector<double> exp_amp(std::size_t(params.n_expirations), 0.0);
    for (auto& a : exp_amp) a = amp_rng.uniform(0.8, 1.0);

    std::vector<double> f0(std::size_t(n), 0.0);
    std::vector<double> env(std::size_t(n), 0.0);
    CrySynthesis out;
    out.voiced.assign(std::size_t(n), 0);

    for (int e = 0; e < params.n_expirations; ++e) {
        const std::int64_t start = lead_len + e * (exp_len + gap_len);
        const std::int64_t end = std::min(start + exp_len, n);
        for (std::int64_t i = start; i < end; ++i) {
            const double u = double(i - start) / double(exp_len);
            const std::int64_t ci = i / ctrl_hop;
            const double cu = double(i - ci * ctrl_hop) / double(ctrl_hop);
            const double g = ctrl[std::size_t(ci)] * (1.0 - cu) + ctrl[std::size_t(ci) + 1] * cu;
            const double hz =
                params.f0_mean * contour_shape(params.f0_contour, u) * (1.0 + params.jitter * g);
            f0[std::size_t(i)] = std::max(hz, 1.0);

            double a = exp_amp[std::size_t(e)];
            const std::int64_t into = i - start;
            const std::int64_t left = end - 1 - i;
            if (into < attack) a *= 0.5 * (1.0 - std::cos(kPi * double(into) / double(attack)));
            if (left < release) a *= 0.5 * (1.0 - std::cos(kPi * double(left) / double(release)));
            env[std::size_t(i)] = a;
            out.voiced[std::size_t(i)] = 1;
        }
    }

    // Keep every rendered harmonic below 0.45 * sr for the whole clip, so
    // the partial count never changes mid-stream.
    double max_f0 = 1.0;
    for (double v : f0) max_f0 = std::max(max_f0, v);
    const int k_max =
        std::max(1, std::min(params.n_harmonics, int(std::floor(0.45 * sr / max_f0))));

    std::vector<double> x(std::size_t(n), 0.0);
    double phase = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        if (out.voiced[std::size_t(i)]) {
            phase += 2.0 * kPi * f0[std::size_t(i)] / double(sr);
            if (phase > 2.0 * kPi) phase -= 2.0 * kPi;
            double s = 0.0;
            for (int k = 1; k <= k_max; ++k) s += std::sin(double(k) * phase) / double(k);
            x[std::size_t(i)] = env[std::size_t(i)] * s;
        } else {
            phase = 0.0;
        }
    }

    double peak = 0.0;
    for (double v : x) peak = std::max(peak, std::abs(v));
    const double scale = peak > 0.0 ? kPeakTarget / peak : 1.0;

    out.clip.sample_rate = sr;
    out.clip.samples.resize(std::size_t(n));
    for (std::int64_t i = 0; i < n; ++i)
        out.clip.samples[std::size_t(i)] = float(x[std::size_t(i)] * scale);

    out.truth_f0.assign(std::size_t(n), 0.0f);
    double f0_sum = 0.0;
    std::int64_t n_voiced = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        if (!out.voiced[std::size_t(i)]) continue;
        out.truth_f0[std::size_t(i)] = float(f0[std::size_t(i)]);
        f0_sum += f0[std::size_t(i)];
        ++n_voiced;
    }

    auto& md = out.clip.metadata;
    md["f0_mean"] = std::to_string(params.f0_mean);
    md["jitter"] = std::to_string(params.jitter);
    md["contour"] = params.f0_contour == Contour::Arc      ? "arc"
                    : params.f0_contour == Contour::Flat   ? "flat"
                                                           : "falling";
    md["truth_voiced_fraction"] = std::to_string(double(n_voiced) / double(n));
    md["truth_f0_mean"] = std::to_string(n_voiced > 0 ? f0_sum / double(n_voiced) : 0.0);
    return out;
}

}  // namespace cryda::synth
