#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cryda/rng.hpp"
#include "cryda/synth.hpp"

namespace cryda::synth {

namespace {

constexpr std::uint64_t kKeyPatient = 301;
constexpr std::uint64_t kKeyClip = 302;
constexpr std::uint64_t kKeyClipLayout = 303;
constexpr std::uint64_t kKeySplit = 304;
constexpr std::uint64_t kKeySnr = 305;

struct SplitCounts {
    std::int64_t train = 0, valid = 0, test = 0;
};

SplitCounts plan_split(const CorpusConfig& cfg, std::int64_t n_patients) {
    SplitCounts c;
    c.train = std::llround(cfg.train_frac * double(n_patients));
    c.valid = std::llround(cfg.valid_frac * double(n_patients));
    c.test = n_patients - c.train - c.valid;
    if (c.train < 1 || c.valid < 1 || c.test < 1)
        throw ConfigError("split fractions leave an empty split for a class of " +
                          std::to_string(n_patients) + " patients (train " +
                          std::to_string(c.train) + ", valid " + std::to_string(c.valid) +
                          ", test " + std::to_string(c.test) + ")");
    return c;
}

void validate(const CorpusConfig& cfg) {
    if (cfg.patients_per_domain < 2) throw ConfigError("patients_per_domain must be >= 2");
    if (cfg.clips_per_patient < 1) throw ConfigError("clips_per_patient must be >= 1");
    if (cfg.clip_seconds < 2.0) throw ConfigError("clip_seconds must be >= 2");
    if (cfg.healthy_fraction <= 0.0 || cfg.healthy_fraction >= 1.0)
        throw ConfigError("healthy_fraction must be strictly between 0 and 1");
    const double frac_sum = cfg.train_frac + cfg.valid_frac + cfg.test_frac;
    if (std::abs(frac_sum - 1.0) > 1e-6)
        throw ConfigError("split fractions must sum to 1, got " + std::to_string(frac_sum));
    if (cfg.out_dir.empty()) throw ConfigError("out_dir must not be empty");
}

// Class-conditional cry parameters. The same patient index gets the same
// draw in both domains, so the corpora differ only through the domain
// profile applied afterwards.
CryParams patient_params(const CorpusConfig& cfg, Label label, std::int64_t patient,
                         std::uint64_t seed) {
    Rng rng = Rng::keyed(seed, {kKeyPatient, std::uint64_t(patient)});
    CryParams p;
    if (label == Label::Healthy) {
        p.f0_mean = rng.gaussian(450.0, 50.0);
        p.f0_contour = Contour::Arc;
        p.jitter = 0.01;
    } else {
        p.f0_mean = rng.gaussian(600.0, 60.0);
        p.f0_contour = Contour::Flat;
        p.jitter = 0.04;
    }
    p.f0_mean = std::clamp(p.f0_mean, 260.0, 790.0);
    p.n_harmonics = 8;
    p.n_expirations = 2;
    p.total_seconds = cfg.clip_seconds;
    return p;
}

std::string patient_name(const std::string& domain, std::int64_t patient) {
    std::string num = std::to_string(patient);
    while (num.size() < 3) num.insert(num.begin(), '0');
    return (domain == "hospital_a" ? "a" : "b") + num;
}

std::string json_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '"' || c == '\\') out.push_back('\\');
        out.push_back(c);
    }
    return out;
}

}  // namespace

std::vector<ManifestRow> CorpusManifest::select(const std::string& domain, Split split) const {
    std::vector<ManifestRow> out;
    for (const ManifestRow& r : rows)
        if (r.domain == domain && r.split == split) out.push_back(r);
    return out;
}

CorpusManifest generate_corpus(const CorpusConfig& cfg, std::uint64_t seed) {
    validate(cfg);

    const auto n_patients = std::int64_t(cfg.patients_per_domain);
    const auto n_healthy = std::llround(cfg.healthy_fraction * double(n_patients));
    if (n_healthy < 1 || n_healthy >= n_patients)
        throw ConfigError("healthy_fraction leaves a class without patients");

    // Patient-level split, shared across domains so matched patient indices
    // land in matched splits.
    std::vector<Split> patient_split(std::size_t(n_patients), Split::Train);
    for (int label_idx = 0; label_idx < 2; ++label_idx) {
        std::vector<std::int64_t> members;
        for (std::int64_t p = 0; p < n_patients; ++p)
            if ((p < n_healthy) == (label_idx == 0)) members.push_back(p);
        const SplitCounts counts = plan_split(cfg, std::int64_t(members.size()));
        Rng rng = Rng::keyed(seed, {kKeySplit, std::uint64_t(label_idx)});
        rng.shuffle(members);
        for (std::size_t i = 0; i < members.size(); ++i) {
            Split s = Split::Test;
            if (std::int64_t(i) < counts.train)
                s = Split::Train;
            else if (std::int64_t(i) < counts.train + counts.valid)
                s = Split::Valid;
            patient_split[std::size_t(members[i])] = s;
        }
    }

    DomainProfile second =
        cfg.no_shift ? DomainProfile::hospital_a() : DomainProfile::hospital_b();
    if (cfg.no_shift) second.id = "hospital_b";
    const DomainProfile profiles[2] = {DomainProfile::hospital_a(), second};
    namespace fs = std::filesystem;
    const fs::path root(cfg.out_dir);
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec) throw IoError("cannot create " + root.string() + ": " + ec.message());

    CorpusManifest manifest;
    for (int d = 0; d < 2; ++d) {
        const DomainProfile& profile = profiles[d];
        for (std::int64_t p = 0; p < n_patients; ++p) {
            const Label label = p < n_healthy ? Label::Healthy : Label::Injury;
            const CryParams params = patient_params(cfg, label, p, seed);
            const std::string pid = patient_name(profile.id, p);
            const fs::path pdir = root / profile.id / pid;
            fs::create_directories(pdir, ec);
            if (ec) throw IoError("cannot create " + pdir.string() + ": " + ec.message());

            for (int i = 0; i < cfg.clips_per_patient; ++i) {
                // Clip layout and source synthesis are keyed without the
                // domain: domain b renders the same cries as domain a.
                Rng layout =
                    Rng::keyed(seed, {kKeyClipLayout, std::uint64_t(p), std::uint64_t(i)});
                CryParams cp = params;
                // Shrink the layout draws when the clip is shorter than the
                // nominal 3 s so the expirations always fit.
                const double fit = std::min(1.0, (cfg.clip_seconds - 0.3) / 2.5);
                cp.expiration_dur = layout.uniform(0.7, 1.0) * fit;
                cp.gap_dur = layout.uniform(0.3, 0.5) * fit;
                const std::uint64_t cry_seed =
                    Rng::keyed(seed, {kKeyClip, std::uint64_t(p), std::uint64_t(i)}).next_u64();
                CrySynthesis cs = synth_cry(cp, cry_seed);

                Rng snr_rng = Rng::keyed(
                    seed, {kKeySnr, std::uint64_t(d), std::uint64_t(p), std::uint64_t(i)});
                const double snr_db = snr_rng.uniform(profile.snr_lo, profile.snr_hi);
                dsp::AudioClip noisy = apply_domain(cs.clip, profile, snr_db, snr_rng.next_u64());

                const std::string fname = "c" + std::to_string(i) + ".wav";
                noisy.id = pid + "_c" + std::to_string(i);
                noisy.metadata["patient_id"] = pid;
                noisy.metadata["label"] = to_string(label);
                dsp::write_wav((pdir / fname).string(), noisy);

                ManifestRow row;
                row.path = profile.id + "/" + pid + "/" + fname;
                row.patient_id = pid;
                row.label = label;
                row.domain = profile.id;
                row.split = patient_split[std::size_t(p)];
                manifest.rows.push_back(row);
            }
        }
    }

    write_manifest((root / "manifest.csv").string(), manifest);

    std::ofstream js(root / "corpus.json");
    if (!js) throw IoError("cannot open " + (root / "corpus.json").string());
    const std::time_t now = std::time(nullptr);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    js << "{\n"
       << "  \"meta\": {\"generated_at\": \"" << stamp << "\"},\n"
       << "  \"seed\": " << seed << ",\n"
       << "  \"patients_per_domain\": " << cfg.patients_per_domain << ",\n"
       << "  \"clips_per_patient\": " << cfg.clips_per_patient << ",\n"
       << "  \"clip_seconds\": " << cfg.clip_seconds << ",\n"
       << "  \"healthy_fraction\": " << cfg.healthy_fraction << ",\n"
       << "  \"splits\": [" << cfg.train_frac << ", " << cfg.valid_frac << ", " << cfg.test_frac
       << "],\n"
       << "  \"domains\": [\"hospital_a\", \"hospital_b\"],\n"
       << "  \"no_shift\": " << (cfg.no_shift ? "true" : "false") << ",\n"
       << "  \"out_dir\": \"" << json_escape(cfg.out_dir) << "\",\n"
       << "  \"n_clips\": " << manifest.rows.size() << "\n"
       << "}\n";
    if (!js) throw IoError("failed writing corpus.json");
    return manifest;
}

}  // namespace cryda::synth
