#include <algorithm>
#include <cmath>
#include <vector>

#include "cryda/dsp.hpp"

namespace cryda::dsp {

namespace {

constexpr double kYinThreshold = 0.15;
// A frame still counts as voiced when the best dip is shallower than the
// search threshold but clearly periodic; this keeps moderate noise bursts
// from censoring valid frames.
constexpr double kVoicedThreshold = 0.35;

}  // namespace

std::vector<float> PitchTrack::voiced_f0() const {
    std::vector<float> out;
    for (const PitchFrame& f : frames)
        if (f.voiced) out.push_back(f.f0);
    return out;
}

float PitchTrack::median_voiced_f0() const {
    std::vector<float> v = voiced_f0();
    if (v.empty()) return 0.0f;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5f * (v[n / 2 - 1] + v[n / 2]);
}

PitchTrack estimate_pitch(const AudioClip& clip, double fmin, double fmax, int frame, int hop) {
    const double sr = clip.sample_rate;
    if (fmin < 50.0) throw ParamError("estimate_pitch: fmin must be >= 50 Hz");
    if (fmax > sr / 2.0) throw ParamError("estimate_pitch: fmax must be <= sample_rate/2");
    if (fmax / fmin < 2.0)
        throw ParamError("estimate_pitch: fmax/fmin must be >= 2, got fmin=" +
                         std::to_string(fmin) + " fmax=" + std::to_string(fmax));
    if (hop <= 0) throw ParamError("estimate_pitch: hop must be positive");
    if (double(frame) / sr < 2.0 / fmin)
        throw ParamError("estimate_pitch: frame of " + std::to_string(frame) +
                         " samples is shorter than two fmin periods");

    PitchTrack track;
    track.frame_length = frame;
    track.hop = hop;
    track.sample_rate = clip.sample_rate;
    if (clip.length() < frame) return track;

    const int tau_min = std::max(2, int(std::ceil(sr / fmax)));
    const int tau_max = int(std::floor(sr / fmin));
    const int half = frame / 2;
    const int n_frames = int((clip.length() - frame) / hop) + 1;
    track.frames.resize(std::size_t(n_frames));

    std::vector<double> diff(std::size_t(tau_max) + 1, 0.0);
    std::vector<double> cmnd(std::size_t(tau_max) + 1, 0.0);

    for (int t = 0; t < n_frames; ++t) {
        const float* x = clip.samples.data() + std::int64_t(t) * hop;

        diff[0] = 0.0;
        for (int tau = 1; tau <= tau_max; ++tau) {
            double acc = 0.0;
            for (int i = 0; i < half; ++i) {
                const double d = double(x[i]) - double(x[i + tau]);
                acc += d * d;
            }
            diff[std::size_t(tau)] = acc;
        }

        cmnd[0] = 1.0;
        double running = 0.0;
        for (int tau = 1; tau <= tau_max; ++tau) {
            running += diff[std::size_t(tau)];
            cmnd[std::size_t(tau)] =
                running > 0.0 ? diff[std::size_t(tau)] * tau / running : 1.0;
        }

        // First dip under the threshold, ridden to its local minimum;
        // otherwise the global minimum of the band.
        int best = -1;
        for (int tau = tau_min; tau <= tau_max; ++tau) {
            if (cmnd[std::size_t(tau)] < kYinThreshold) {
                while (tau + 1 <= tau_max &&
                       cmnd[std::size_t(tau) + 1] < cmnd[std::size_t(tau)])
                    ++tau;
                best = tau;
                break;
            }
        }
        if (best < 0) {
            best = tau_min;
            for (int tau = tau_min + 1; tau <= tau_max; ++tau)
                if (cmnd[std::size_t(tau)] < cmnd[std::size_t(best)]) best = tau;
        }

        PitchFrame& out = track.frames[std::size_t(t)];
        const double dip = cmnd[std::size_t(best)];
        out.confidence = float(std::clamp(1.0 - dip, 0.0, 1.0));
        out.voiced = dip < kVoicedThreshold;
        if (!out.voiced) continue;

        double tau_ref = double(best);
        if (best > 1 && best < tau_max) {
            const double a = cmnd[std::size_t(best) - 1];
            const double b = cmnd[std::size_t(best)];
            const double c = cmnd[std::size_t(best) + 1];
            const double denom = a - 2.0 * b + c;
            if (std::abs(denom) > 1e-12) tau_ref += 0.5 * (a - c) / denom;
        }
        out.f0 = float(std::clamp(sr / tau_ref, fmin, fmax));
    }
    return track;
}

}  // namespace cryda::dsp
