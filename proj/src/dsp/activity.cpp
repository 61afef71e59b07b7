#include <algorithm>
#include <cmath>
#include <vector>

#include "cryda/dsp.hpp"

namespace cryda::dsp {

namespace {

constexpr double kSilencePeakDb = -80.0;
constexpr double kFloorRangeDb = 40.0;
constexpr double kFloorMinDb = -70.0;
constexpr double kOnsetMarginDb = 6.0;
constexpr double kMergeGapMs = 50.0;
constexpr double kMinSegmentMs = 100.0;
constexpr double kMinNoiseMs = 200.0;

double to_db(double rms) { return 20.0 * std::log10(std::max(rms, 1e-10)); }

}  // namespace

SegmentList detect_activity(const AudioClip& clip, int frame, int hop) {
    if (clip.samples.empty()) throw ValueError("detect_activity: empty clip");
    if (frame <= 0 || hop <= 0) throw ParamError("detect_activity: frame and hop must be positive");
    if (clip.length() < frame) return {};

    const int n_frames = int((clip.length() - frame) / hop) + 1;
    std::vector<double> level(std::size_t(n_frames), 0.0);
    for (int t = 0; t < n_frames; ++t) {
        double acc = 0.0;
        const float* x = clip.samples.data() + std::int64_t(t) * hop;
        for (int i = 0; i < frame; ++i) acc += double(x[i]) * x[i];
        level[std::size_t(t)] = to_db(std::sqrt(acc / frame));
    }

    const double peak = *std::max_element(level.begin(), level.end());
    if (peak < kSilencePeakDb) return {};

    std::vector<double> sorted = level;
    std::sort(sorted.begin(), sorted.end());
    const double p10 = sorted[std::size_t(std::floor(0.1 * double(n_frames - 1)))];
    const double floor_db = std::max({p10, peak - kFloorRangeDb, kFloorMinDb});
    const double threshold = floor_db + kOnsetMarginDb;

    // Runs of active frames, as sample spans covering the whole frame.
    SegmentList segs;
    int run_start = -1;
    for (int t = 0; t <= n_frames; ++t) {
        const bool active = t < n_frames && level[std::size_t(t)] > threshold;
        if (active && run_start < 0) run_start = t;
        if (!active && run_start >= 0) {
            Segment s;
            s.start = std::int64_t(run_start) * hop;
            s.end = std::min<std::int64_t>(std::int64_t(t - 1) * hop + frame, clip.length());
            s.kind = SegmentKind::Activity;
            segs.push_back(s);
            run_start = -1;
        }
    }

    const auto merge_gap = std::int64_t(kMergeGapMs / 1000.0 * clip.sample_rate);
    SegmentList merged;
    for (const Segment& s : segs) {
        if (!merged.empty() && s.start - merged.back().end < merge_gap)
            merged.back().end = s.end;
        else
            merged.push_back(s);
    }

    const auto min_len = std::int64_t(kMinSegmentMs / 1000.0 * clip.sample_rate);
    SegmentList kept;
    for (const Segment& s : merged)
        if (s.length() >= min_len) kept.push_back(s);
    return kept;
}

std::vector<AudioClip> extract_noise(const AudioClip& clip) {
    if (clip.samples.empty()) return {};
    const SegmentList active = detect_activity(clip);

    SegmentList quiet;
    std::int64_t cursor = 0;
    for (const Segment& s : active) {
        if (s.start > cursor)
            quiet.push_back({cursor, s.start, SegmentKind::Noise});
        cursor = s.end;
    }
    if (cursor < clip.length()) quiet.push_back({cursor, clip.length(), SegmentKind::Noise});

    const auto min_len = std::int64_t(kMinNoiseMs / 1000.0 * clip.sample_rate);
    std::vector<AudioClip> out;
    for (const Segment& s : quiet) {
        if (s.length() < min_len) continue;
        AudioClip piece;
        piece.sample_rate = clip.sample_rate;
        piece.id = clip.id + "_noise" + std::to_string(out.size());
        piece.metadata = clip.metadata;
        piece.metadata["kind"] = "noise";
        piece.samples.assign(clip.samples.begin() + s.start, clip.samples.begin() + s.end);
        out.push_back(std::move(piece));
    }
    return out;
}

}  // namespace cryda::dsp
