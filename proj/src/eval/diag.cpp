#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "cryda/diag.hpp"
#include "cryda/errors.hpp"
#include "cryda/graph.hpp"
#include "cryda/ops.hpp"
#include "cryda/rng.hpp"

namespace cryda::diag {

namespace {

constexpr std::uint64_t kKeyDiagShuffle = 601;

std::vector<int> center_offsets(const uda::FeatureStore& store, const std::vector<int>& items,
                                int window) {
    std::vector<int> offsets(items.size(), 0);
    for (std::size_t i = 0; i < items.size(); ++i) {
        int frames = store.features(items[i]).frames.shape[0];
        if (frames < window) {
            throw DataError("clip " + store.rows()[std::size_t(items[i])].path +
                            " is shorter than the analysis window");
        }
        offsets[i] = (frames - window) / 2;
    }
    return offsets;
}

// Embeddings of a whole dataset under eval-mode forwards, stacked [N, D].
ad::Tensor embed_all(model::ModelState& state, const uda::FeatureStore& store,
                     const uda::DataSet& ds, int batch_size, double window_seconds) {
    int window = uda::window_frames(store.feature_config(), window_seconds);
    int d = state.cfg.embedding_dim;
    auto out = ad::Tensor::zeros({static_cast<int>(ds.items.size()), d});
    for (std::size_t start = 0; start < ds.items.size();
         start += static_cast<std::size_t>(batch_size)) {
        auto end = std::min(ds.items.size(), start + static_cast<std::size_t>(batch_size));
        std::vector<int> items(ds.items.begin() + static_cast<std::ptrdiff_t>(start),
                               ds.items.begin() + static_cast<std::ptrdiff_t>(end));
        auto offsets = center_offsets(store, items, window);
        auto batch = uda::gather_batch(store, items, offsets, window);
        ad::Graph g;
        auto fwd = model::forward(state, g, batch, model::Mode::Eval);
        const auto& emb = fwd.embedding.tensor();
        std::copy(emb.data.begin(), emb.data.end(),
                  out.data.begin() + static_cast<std::ptrdiff_t>(start) * d);
    }
    return out;
}

}  // namespace

DomainIdResult domain_id_experiment(const uda::FeatureStore& store, const DomainIdConfig& cfg) {
    if (store.domains().size() < 2) {
        throw ConfigError("domain_id_experiment needs at least two domains");
    }
    if (cfg.epochs < 1 || cfg.batch_size < 2) {
        throw ConfigError("domain_id_experiment: epochs must be positive and batch_size >= 2");
    }
    auto train = store.select_domain_labeled(synth::Split::Train);
    auto test = store.select_domain_labeled(synth::Split::Test);
    if (train.items.empty()) throw DataError("domain_id_experiment: empty train split");
    if (test.items.empty()) throw DataError("domain_id_experiment: empty test split");
    auto n_steps = static_cast<int>(train.items.size()) / cfg.batch_size;
    if (n_steps < 1) {
        throw DataError("domain_id_experiment: batch_size exceeds the train split");
    }

    auto k = static_cast<int>(store.domains().size());
    auto enc = model::EncoderConfig{};
    enc.n_mels = store.feature_config().n_mels;
    auto st = model::init_model(enc, k, cfg.seed);
    model::AdamHp hp;
    hp.lr_backbone = cfg.lr_backbone;
    hp.lr_classifier = cfg.lr_classifier;
    int window = uda::window_frames(store.feature_config(), cfg.window_seconds);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<int> pos(train.items.size());
        for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<int>(i);
        Rng rng = Rng::keyed(cfg.seed, {kKeyDiagShuffle, static_cast<std::uint64_t>(epoch)});
        rng.shuffle(pos);
        for (int stp = 0; stp < n_steps; ++stp) {
            std::vector<int> items(static_cast<std::size_t>(cfg.batch_size));
            std::vector<int> labels(static_cast<std::size_t>(cfg.batch_size));
            for (int j = 0; j < cfg.batch_size; ++j) {
                int p = pos[std::size_t(stp * cfg.batch_size + j)];
                items[std::size_t(j)] = train.items[std::size_t(p)];
                labels[std::size_t(j)] = train.labels[std::size_t(p)];
            }
            auto offsets = center_offsets(store, items, window);
            for (std::size_t i = 0; i < items.size(); ++i) {
                int frames = store.features(items[i]).frames.shape[0];
                if (frames > window) {
                    offsets[i] = static_cast<int>(rng.uniform_int(0, frames - window));
                }
            }
            auto batch = uda::gather_batch(store, items, offsets, window);
            ad::Graph g;
            auto fwd = model::forward(st, g, batch, model::Mode::Train);
            auto ce = ad::softmax_cross_entropy(fwd.logits, labels);
            g.backward(ce);
            model::adam_step(st, hp);
            model::zero_grads(st);
        }
    }

    DomainIdResult result;
    result.domains = store.domains();
    result.accuracy = uda::eval_accuracy(st, store, test, cfg.batch_size, cfg.window_seconds,
                                         &result.confusion);
    return result;
}

XGenResult xgen_experiment(const uda::FeatureStore& store, const uda::TrainRunConfig& cfg) {
    if (cfg.method != "baseline") {
        throw ConfigError("xgen_experiment trains plain classifiers; method must be baseline");
    }
    auto src_test = store.select(cfg.source_domain, synth::Split::Test);
    auto tgt_test = store.select(cfg.target_domain, synth::Split::Test);
    if (src_test.items.empty() || tgt_test.items.empty()) {
        throw DataError("xgen_experiment: empty test split");
    }

    auto on_source = uda::train_run(cfg, store);
    XGenResult r;
    r.source_on_source = uda::eval_auc(on_source.state, store, src_test, cfg.batch_size,
                                       cfg.window_seconds);
    r.source_on_target = uda::eval_auc(on_source.state, store, tgt_test, cfg.batch_size,
                                       cfg.window_seconds);

    auto swapped = cfg;
    std::swap(swapped.source_domain, swapped.target_domain);
    auto on_target = uda::train_run(swapped, store);
    r.target_on_target = uda::eval_auc(on_target.state, store, tgt_test, cfg.batch_size,
                                       cfg.window_seconds);
    r.gap_from_source = r.source_on_source - r.source_on_target;
    r.gap_from_target = r.target_on_target - r.source_on_target;
    return r;
}

PitchDistribution pitch_distribution(const uda::FeatureStore& store, const std::string& domain,
                                     synth::Split split, double fmin, double fmax,
                                     double bin_width) {
    if (!store.has_audio()) {
        throw DataError("pitch_distribution needs a FeatureStore loaded with keep_audio");
    }
    auto ds = store.select(domain, split);
    if (ds.items.empty()) {
        throw DataError("pitch_distribution: no clips for domain " + domain);
    }

    std::vector<double> pooled;
    for (int item : ds.items) {
        const auto& clip = store.audio(item);
        auto active = dsp::detect_activity(clip);
        if (active.empty()) continue;
        auto track = dsp::estimate_pitch(clip, fmin, fmax);
        // A frame overlapping an attack or release measures a decaying
        // waveform, which biases the period estimate; pool only frames whose
        // window sits a half window clear of the span edges.
        auto margin = static_cast<std::int64_t>(track.frame_length / 2);
        for (std::size_t t = 0; t < track.frames.size(); ++t) {
            const auto& frame = track.frames[t];
            if (!frame.voiced) continue;
            auto lo = static_cast<std::int64_t>(t) * track.hop;
            auto hi = lo + track.frame_length;
            bool inside = false;
            for (const auto& seg : active) {
                if (lo >= seg.start + margin && hi <= seg.end - margin) {
                    inside = true;
                    break;
                }
            }
            if (inside) pooled.push_back(static_cast<double>(frame.f0));
        }
    }

    PitchDistribution result;
    result.clips = static_cast<std::int64_t>(ds.items.size());
    result.voiced_frames = static_cast<std::int64_t>(pooled.size());
    result.histogram = metrics::make_histogram(pooled, fmin, fmax, bin_width);
    result.empty_warning = pooled.empty();
    return result;
}

double domain_probe_accuracy(model::ModelState& state, const uda::FeatureStore& store,
                             const ProbeConfig& cfg) {
    if (store.domains().size() < 2) {
        throw ConfigError("domain_probe_accuracy needs at least two domains");
    }
    if (cfg.steps < 1) throw ConfigError("domain_probe_accuracy: steps must be positive");
    auto train = store.select_domain_labeled(synth::Split::Train);
    auto test = store.select_domain_labeled(synth::Split::Test);
    if (train.items.empty() || test.items.empty()) {
        throw DataError("domain_probe_accuracy: empty split");
    }

    auto x_train = embed_all(state, store, train, cfg.batch_size, cfg.window_seconds);
    auto x_test = embed_all(state, store, test, cfg.batch_size, cfg.window_seconds);
    int d = state.cfg.embedding_dim;
    auto k = static_cast<int>(store.domains().size());

    // Full-batch logistic regression from zero weights; the objective is
    // convex, so no randomness is involved.
    auto w = ad::Tensor::zeros({d, k});
    auto b = ad::Tensor::zeros({k});
    w.requires_grad = true;
    b.requires_grad = true;
    auto lr = static_cast<float>(cfg.lr);
    for (int stp = 0; stp < cfg.steps; ++stp) {
        ad::Graph g;
        auto z = ad::linear(g.leaf(x_train), g.leaf(w), g.leaf(b));
        auto ce = ad::softmax_cross_entropy(z, train.labels);
        g.backward(ce);
        for (std::size_t i = 0; i < w.data.size(); ++i) w.data[i] -= lr * w.grad[i];
        for (std::size_t i = 0; i < b.data.size(); ++i) b.data[i] -= lr * b.grad[i];
        w.grad.assign(w.grad.size(), 0.0f);
        b.grad.assign(b.grad.size(), 0.0f);
    }

    ad::Graph g;
    auto z = ad::linear(g.leaf(x_test), g.leaf(w), g.leaf(b));
    const auto& logits = z.tensor();
    std::int64_t correct = 0;
    for (std::size_t i = 0; i < test.items.size(); ++i) {
        int arg = 0;
        for (int j = 1; j < k; ++j) {
            if (logits.data[i * std::size_t(k) + std::size_t(j)] >
                logits.data[i * std::size_t(k) + std::size_t(arg)]) {
                arg = j;
            }
        }
        if (arg == test.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(test.items.size());
}

Report build_report(const std::map<std::string, std::vector<double>>& target_aucs) {
    auto base_it = target_aucs.find("baseline");
    if (base_it == target_aucs.end()) {
        throw DataError("build_report: no baseline entry to compare against");
    }
    for (const auto& [method, aucs] : target_aucs) {
        if (aucs.empty()) throw DataError("build_report: no runs for method " + method);
    }

    auto summarize = [](const std::vector<double>& aucs) {
        if (aucs.size() < 2) return std::pair<double, double>{aucs.front(), 0.0};
        return metrics::mean_stderr(aucs);
    };
    auto [base_mean, base_stderr] = summarize(base_it->second);
    if (base_mean <= 0.0) throw ValueError("build_report: baseline mean AUC must be positive");

    const std::vector<std::string> canonical{"baseline", "bn", "em", "hafn",
                                             "safn", "symnet", "tni"};
    std::vector<std::string> order;
    for (const auto& m : canonical) {
        if (target_aucs.count(m)) order.push_back(m);
    }
    for (const auto& [method, aucs] : target_aucs) {
        if (std::find(canonical.begin(), canonical.end(), method) == canonical.end()) {
            order.push_back(method);
        }
    }

    Report report;
    for (const auto& method : order) {
        const auto& aucs = target_aucs.at(method);
        auto [mean, se] = summarize(aucs);
        ReportRow row;
        row.method = method;
        row.mean_auc = mean;
        row.stderr_auc = se;
        row.n_seeds = static_cast<int>(aucs.size());
        if (method != "baseline") {
            row.improvement_pct = (mean - base_mean) / base_mean * 100.0;
            row.has_improvement = true;
        }
        report.rows.push_back(row);
    }
    return report;
}

namespace {

// Both renderings quote the same rounded figures: AUCs at four decimals,
// improvements at one. Rounding once and printing the rounded double keeps
// the text table and the JSON numerically identical.
double round_places(double v, double scale) { return std::round(v * scale) / scale; }

}  // namespace

std::string Report::to_text() const {
    std::string out;
    char line[128];
    std::snprintf(line, sizeof(line), "%-10s %10s %10s %6s %12s\n", "method", "auc", "stderr",
                  "seeds", "improvement");
    out += line;
    for (const auto& row : rows) {
        if (row.has_improvement) {
            std::snprintf(line, sizeof(line), "%-10s %10.4f %10.4f %6d %+11.1f%%\n",
                          row.method.c_str(), round_places(row.mean_auc, 1e4),
                          round_places(row.stderr_auc, 1e4), row.n_seeds,
                          round_places(row.improvement_pct, 10.0));
        } else {
            std::snprintf(line, sizeof(line), "%-10s %10.4f %10.4f %6d %12s\n",
                          row.method.c_str(), round_places(row.mean_auc, 1e4),
                          round_places(row.stderr_auc, 1e4), row.n_seeds, "-");
        }
        out += line;
    }
    return out;
}

std::string Report::to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& row : rows) {
        nlohmann::json j;
        j["method"] = row.method;
        j["mean_auc"] = round_places(row.mean_auc, 1e4);
        j["stderr_auc"] = round_places(row.stderr_auc, 1e4);
        j["n_seeds"] = row.n_seeds;
        if (row.has_improvement) {
            j["improvement_pct"] = round_places(row.improvement_pct, 10.0);
        } else {
            j["improvement_pct"] = nullptr;
        }
        arr.push_back(j);
    }
    return arr.dump(2);
}

}  // namespace cryda::diag
