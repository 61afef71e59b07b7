#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "cryda/errors.hpp"
#include "cryda/graph.hpp"
#include "cryda/metrics.hpp"
#include "cryda/ops.hpp"
#include "cryda/rng.hpp"
#include "cryda/uda.hpp"

namespace cryda::uda {

namespace {

constexpr std::uint64_t kKeySrcShuffle = 501;
constexpr std::uint64_t kKeyTgtShuffle = 502;
constexpr std::uint64_t kKeySampleAug = 503;
constexpr std::uint64_t kKeyCrop = 505;

using model::Mode;
using model::ModelState;

std::vector<int> shuffled_positions(std::size_t n, std::uint64_t seed,
                                    std::uint64_t role, int epoch) {
    std::vector<int> pos(n);
    for (std::size_t i = 0; i < n; ++i) pos[i] = static_cast<int>(i);
    Rng rng = Rng::keyed(seed, {role, static_cast<std::uint64_t>(epoch)});
    rng.shuffle(pos);
    return pos;
}

// Crop starts for one batch. Clips that already match the window get
// offset zero without consuming randomness, so equal-length corpora give
// identical schedules to every method.
std::vector<int> crop_offsets(const FeatureStore& store, const std::vector<int>& items,
                              int window, std::uint64_t seed, std::uint64_t role,
                              int epoch, int step) {
    Rng rng = Rng::keyed(seed, {kKeyCrop, role, static_cast<std::uint64_t>(epoch),
                                static_cast<std::uint64_t>(step)});
    std::vector<int> offsets(items.size(), 0);
    for (std::size_t i = 0; i < items.size(); ++i) {
        int frames = store.features(items[i]).frames.shape[0];
        if (frames < window) {
            throw DataError("clip " + store.rows()[static_cast<std::size_t>(items[i])].path +
                            " is shorter than the analysis window");
        }
        if (frames > window) offsets[i] = rng.uniform_int(0, frames - window);
    }
    return offsets;
}

std::vector<int> center_offsets(const FeatureStore& store, const std::vector<int>& items,
                                int window) {
    std::vector<int> offsets(items.size(), 0);
    for (std::size_t i = 0; i < items.size(); ++i) {
        int frames = store.features(items[i]).frames.shape[0];
        if (frames < window) {
            throw DataError("clip " + store.rows()[static_cast<std::size_t>(items[i])].path +
                            " is shorter than the analysis window");
        }
        offsets[i] = (frames - window) / 2;
    }
    return offsets;
}

// Row-wise softmax of a logits tensor, computed off the tape.
std::vector<std::vector<double>> softmax_rows(const ad::Tensor& logits) {
    int b = logits.shape[0];
    int k = logits.shape[1];
    std::vector<std::vector<double>> out(static_cast<std::size_t>(b),
                                         std::vector<double>(static_cast<std::size_t>(k)));
    for (int i = 0; i < b; ++i) {
        double mx = -1e300;
        for (int j = 0; j < k; ++j) {
            mx = std::max(mx, static_cast<double>(logits.data[static_cast<std::size_t>(i * k + j)]));
        }
        double sum = 0.0;
        for (int j = 0; j < k; ++j) {
            double e = std::exp(static_cast<double>(
                                    logits.data[static_cast<std::size_t>(i * k + j)]) - mx);
            out[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = e;
            sum += e;
        }
        for (int j = 0; j < k; ++j) out[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] /= sum;
    }
    return out;
}

struct StepStats {
    std::map<std::string, double> losses;
    std::map<std::string, double> diagnostics;
    double mean_norm = 0.0;
};

struct TrainContext {
    const TrainRunConfig& cfg;
    const FeatureStore& store;
    ModelState& st;
    model::AdamHp hp;
    int window = 0;
    const std::vector<dsp::AudioClip>* noise_pool = nullptr;
};

ad::Tensor source_batch(const TrainContext& ctx, const std::vector<int>& items, int epoch,
                        int step) {
    auto offsets = crop_offsets(ctx.store, items, ctx.window, ctx.cfg.seed, 0, epoch, step);
    return gather_batch(ctx.store, items, offsets, ctx.window);
}

ad::Tensor target_batch(const TrainContext& ctx, const std::vector<int>& items, int epoch,
                        int step) {
    auto offsets = crop_offsets(ctx.store, items, ctx.window, ctx.cfg.seed, 1, epoch, step);
    return gather_batch(ctx.store, items, offsets, ctx.window);
}

// Per-step source batch for tni: every clip is re-augmented with a fresh
// noise draw before feature extraction.
ad::Tensor augmented_source_batch(const TrainContext& ctx, const std::vector<int>& items,
                                  int epoch, int step) {
    const auto& fcfg = ctx.store.feature_config();
    std::vector<dsp::SpectrogramFeatures> feats(items.size());
    for (std::size_t j = 0; j < items.size(); ++j) {
        auto sample_seed = Rng::keyed(ctx.cfg.seed,
                                      {kKeySampleAug, static_cast<std::uint64_t>(epoch),
                                       static_cast<std::uint64_t>(step),
                                       static_cast<std::uint64_t>(j)})
                               .next_u64();
        auto clip = tni_augment(ctx.store.audio(items[j]), *ctx.noise_pool, ctx.cfg.alpha,
                                sample_seed);
        feats[j] = dsp::log_mel(clip, fcfg);
    }
    auto offsets = crop_offsets(ctx.store, items, ctx.window, ctx.cfg.seed, 0, epoch, step);
    int mels = fcfg.n_mels;
    auto batch = ad::Tensor::zeros(
        {static_cast<int>(items.size()), 1, ctx.window, mels});
    std::size_t plane = static_cast<std::size_t>(ctx.window) * static_cast<std::size_t>(mels);
    for (std::size_t j = 0; j < items.size(); ++j) {
        const auto& f = feats[j].frames;
        std::copy_n(f.data.begin() + static_cast<std::size_t>(offsets[j]) * mels, plane,
                    batch.data.begin() + j * plane);
    }
    return batch;
}

StepStats step_ce_only(TrainContext& ctx, ad::Tensor& src, const std::vector<int>& labels) {
    ad::Graph g;
    auto out = model::forward(ctx.st, g, src, Mode::Train);
    auto ce = ad::softmax_cross_entropy(out.logits, labels);
    double ce_v = ce.item();
    g.backward(ce);
    model::adam_step(ctx.st, ctx.hp);
    model::zero_grads(ctx.st);
    StepStats s;
    s.losses["loss_ce"] = ce_v;
    s.losses["total"] = ce_v;
    s.mean_norm = ad::mean_row_norm(out.embedding.tensor());
    return s;
}

StepStats step_em(TrainContext& ctx, ad::Tensor& src, const std::vector<int>& labels,
                  ad::Tensor& tgt) {
    ad::Graph g;
    auto s_out = model::forward(ctx.st, g, src, Mode::Train);
    auto ce = ad::softmax_cross_entropy(s_out.logits, labels);
    auto t_out = model::forward(ctx.st, g, tgt, Mode::Eval);
    auto ent = ad::entropy(ad::softmax(t_out.logits));
    auto total = ad::add(ce, ad::scale(ent, static_cast<float>(ctx.cfg.lambda_em)));
    double ce_v = ce.item();
    double ent_v = ent.item();
    double total_v = total.item();
    g.backward(total);
    model::adam_step(ctx.st, ctx.hp);
    model::zero_grads(ctx.st);
    StepStats s;
    s.losses["loss_ce"] = ce_v;
    s.losses["loss_em"] = ctx.cfg.lambda_em * ent_v;
    s.losses["total"] = total_v;
    s.diagnostics["target_entropy"] = ent_v;
    s.mean_norm = 0.5 * (ad::mean_row_norm(s_out.embedding.tensor()) +
                         ad::mean_row_norm(t_out.embedding.tensor()));
    return s;
}

StepStats step_afn(TrainContext& ctx, ad::Tensor& src, const std::vector<int>& labels,
                   ad::Tensor& tgt, ad::NormPenalty variant, float r_or_dr) {
    ad::Graph g;
    auto s_out = model::forward(ctx.st, g, src, Mode::Train);
    auto ce = ad::softmax_cross_entropy(s_out.logits, labels);
    auto t_out = model::forward(ctx.st, g, tgt, Mode::Eval);
    auto pen = ad::add(ad::feature_norm_penalty(s_out.embedding, variant, r_or_dr),
                       ad::feature_norm_penalty(t_out.embedding, variant, r_or_dr));
    auto total = ad::add(ce, ad::scale(pen, static_cast<float>(ctx.cfg.lambda_afn)));
    double ce_v = ce.item();
    double pen_v = pen.item();
    double total_v = total.item();
    g.backward(total);
    model::adam_step(ctx.st, ctx.hp);
    model::zero_grads(ctx.st);
    StepStats s;
    s.losses["loss_ce"] = ce_v;
    s.losses["loss_afn"] = ctx.cfg.lambda_afn * pen_v;
    s.losses["total"] = total_v;
    s.mean_norm = 0.5 * (ad::mean_row_norm(s_out.embedding.tensor()) +
                         ad::mean_row_norm(t_out.embedding.tensor()));
    return s;
}

StepStats step_symnet(TrainContext& ctx, ad::Tensor& src, const std::vector<int>& labels,
                      ad::Tensor& tgt) {
    int k = ctx.st.n_classes;
    auto lam_c = static_cast<float>(ctx.cfg.lambda_confusion);
    auto lam_e = static_cast<float>(ctx.cfg.lambda_em);
    StepStats s;

    // Classifier step: heads learn to discriminate classes and domains
    // while the encoder stays fixed.
    model::set_trainable(ctx.st, "bn", false);
    {
        ad::Graph g;
        auto s_out = model::forward(ctx.st, g, src, Mode::Train);
        auto zs_s = s_out.logits;
        auto zt_s = model::head_logits(ctx.st, g, s_out.embedding, 1);
        auto ce_s = ad::softmax_cross_entropy(zs_s, labels);
        auto ce_t = ad::softmax_cross_entropy(zt_s, labels);
        auto p_src = ad::softmax(ad::concat_cols(zs_s, zt_s));
        auto dd_src = ad::scale(
            ad::mean_vec(ad::log_vec(ad::sum_cols(ad::slice_cols(p_src, 0, k)))), -1.0f);

        auto t_out = model::forward(ctx.st, g, tgt, Mode::Eval);
        auto zs_t = t_out.logits;
        auto zt_t = model::head_logits(ctx.st, g, t_out.embedding, 1);
        auto p_tgt = ad::softmax(ad::concat_cols(zs_t, zt_t));
        auto dd_tgt = ad::scale(
            ad::mean_vec(ad::log_vec(ad::sum_cols(ad::slice_cols(p_tgt, k, 2 * k)))), -1.0f);

        auto dd = ad::add(dd_src, dd_tgt);
        auto total_cls = ad::add(ad::add(ce_s, ce_t), ad::scale(dd, lam_c));
        s.losses["loss_cls_ce_s"] = ce_s.item();
        s.losses["loss_cls_ce_t"] = ce_t.item();
        s.losses["loss_cls_dd"] = ctx.cfg.lambda_confusion * dd.item();
        s.losses["total"] = total_cls.item();
        g.backward(total_cls);
        model::adam_step(ctx.st, ctx.hp);
        model::zero_grads(ctx.st);
    }
    model::set_trainable(ctx.st, "bn", true);

    // Encoder step: the shared encoder moves toward domain confusion and
    // confident target predictions while both heads stay fixed.
    model::set_trainable(ctx.st, "head", false);
    {
        ad::Graph g;
        auto s_out = model::forward(ctx.st, g, src, Mode::Train);
        auto zs_s = s_out.logits;
        auto zt_s = model::head_logits(ctx.st, g, s_out.embedding, 1);
        auto p_src = ad::softmax(ad::concat_cols(zs_s, zt_s));
        std::vector<int> idx_s(labels);
        std::vector<int> idx_t(labels.size());
        for (std::size_t i = 0; i < labels.size(); ++i) idx_t[i] = labels[i] + k;
        auto cat = ad::scale(
            ad::add(ad::mean_vec(ad::log_vec(ad::gather_cols(p_src, idx_s))),
                    ad::mean_vec(ad::log_vec(ad::gather_cols(p_src, idx_t)))),
            -0.5f);

        auto t_out = model::forward(ctx.st, g, tgt, Mode::Eval);
        auto zs_t = t_out.logits;
        auto zt_t = model::head_logits(ctx.st, g, t_out.embedding, 1);
        auto p_tgt = ad::softmax(ad::concat_cols(zs_t, zt_t));
        auto dom = ad::scale(
            ad::add(ad::mean_vec(ad::log_vec(ad::sum_cols(ad::slice_cols(p_tgt, 0, k)))),
                    ad::mean_vec(ad::log_vec(ad::sum_cols(ad::slice_cols(p_tgt, k, 2 * k))))),
            -0.5f);

        auto posterior = ad::add(ad::scale(ad::softmax(zs_t), 0.5f),
                                 ad::scale(ad::softmax(zt_t), 0.5f));
        auto ent = ad::entropy(posterior);
        auto conf = ad::add(cat, dom);
        auto total_enc = ad::add(ad::scale(conf, lam_c), ad::scale(ent, lam_e));
        s.losses["loss_enc_conf"] = ctx.cfg.lambda_confusion * conf.item();
        s.losses["loss_enc_ent"] = ctx.cfg.lambda_em * ent.item();
        s.losses["total"] += total_enc.item();
        s.diagnostics["target_entropy"] = ent.item();
        g.backward(total_enc);
        model::adam_step(ctx.st, ctx.hp);
        model::zero_grads(ctx.st);
        s.mean_norm = 0.5 * (ad::mean_row_norm(s_out.embedding.tensor()) +
                             ad::mean_row_norm(t_out.embedding.tensor()));
    }
    model::set_trainable(ctx.st, "head", true);
    return s;
}

std::vector<double> positive_scores(ModelState& st, ad::Graph& g, const model::Forward& out,
                                    bool average_heads) {
    auto probs0 = softmax_rows(out.logits.tensor());
    if (!average_heads) {
        std::vector<double> p;
        p.reserve(probs0.size());
        for (const auto& row : probs0) p.push_back(row[1]);
        return p;
    }
    auto z1 = model::head_logits(st, g, out.embedding, 1);
    auto probs1 = softmax_rows(z1.tensor());
    std::vector<double> p;
    p.reserve(probs0.size());
    for (std::size_t i = 0; i < probs0.size(); ++i) {
        p.push_back(0.5 * (probs0[i][1] + probs1[i][1]));
    }
    return p;
}

}  // namespace

double eval_auc(ModelState& state, const FeatureStore& store, const DataSet& ds,
                int batch_size, double window_seconds, bool average_heads) {
    if (ds.items.empty()) throw DataError("eval_auc: empty dataset");
    if (batch_size < 1) throw ParamError("eval_auc: batch_size must be positive");
    int window = window_frames(store.feature_config(), window_seconds);
    std::vector<double> scores;
    std::vector<int> labels;
    scores.reserve(ds.size());
    for (std::size_t start = 0; start < ds.items.size();
         start += static_cast<std::size_t>(batch_size)) {
        auto end = std::min(ds.items.size(), start + static_cast<std::size_t>(batch_size));
        std::vector<int> items(ds.items.begin() + static_cast<std::ptrdiff_t>(start),
                               ds.items.begin() + static_cast<std::ptrdiff_t>(end));
        auto offsets = center_offsets(store, items, window);
        auto batch = gather_batch(store, items, offsets, window);
        ad::Graph g;
        auto out = model::forward(state, g, batch, Mode::Eval);
        auto p = positive_scores(state, g, out, average_heads);
        scores.insert(scores.end(), p.begin(), p.end());
        labels.insert(labels.end(), ds.labels.begin() + static_cast<std::ptrdiff_t>(start),
                      ds.labels.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return metrics::auc(scores, labels);
}

double eval_accuracy(ModelState& state, const FeatureStore& store, const DataSet& ds,
                     int batch_size, double window_seconds,
                     std::vector<std::vector<double>>* confusion) {
    if (ds.items.empty()) throw DataError("eval_accuracy: empty dataset");
    if (batch_size < 1) throw ParamError("eval_accuracy: batch_size must be positive");
    int window = window_frames(store.feature_config(), window_seconds);
    int k = state.n_classes;
    std::vector<std::vector<std::int64_t>> counts(
        static_cast<std::size_t>(k), std::vector<std::int64_t>(static_cast<std::size_t>(k), 0));
    std::int64_t correct = 0;
    for (std::size_t start = 0; start < ds.items.size();
         start += static_cast<std::size_t>(batch_size)) {
        auto end = std::min(ds.items.size(), start + static_cast<std::size_t>(batch_size));
        std::vector<int> items(ds.items.begin() + static_cast<std::ptrdiff_t>(start),
                               ds.items.begin() + static_cast<std::ptrdiff_t>(end));
        auto offsets = center_offsets(store, items, window);
        auto batch = gather_batch(store, items, offsets, window);
        ad::Graph g;
        auto out = model::forward(state, g, batch, Mode::Eval);
        const auto& logits = out.logits.tensor();
        for (std::size_t i = 0; i < items.size(); ++i) {
            int arg = 0;
            for (int j = 1; j < k; ++j) {
                if (logits.data[i * static_cast<std::size_t>(k) + static_cast<std::size_t>(j)] >
                    logits.data[i * static_cast<std::size_t>(k) + static_cast<std::size_t>(arg)]) {
                    arg = j;
                }
            }
            int truth = ds.labels[start + i];
            if (truth < 0 || truth >= k) throw ValueError("eval_accuracy: label out of range");
            ++counts[static_cast<std::size_t>(truth)][static_cast<std::size_t>(arg)];
            if (arg == truth) ++correct;
        }
    }
    if (confusion) {
        confusion->assign(static_cast<std::size_t>(k),
                          std::vector<double>(static_cast<std::size_t>(k), 0.0));
        for (int t = 0; t < k; ++t) {
            std::int64_t row_total = 0;
            for (int p = 0; p < k; ++p) row_total += counts[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
            if (row_total == 0) continue;
            for (int p = 0; p < k; ++p) {
                (*confusion)[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)] =
                    static_cast<double>(counts[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)]) /
                    static_cast<double>(row_total);
            }
        }
    }
    return static_cast<double>(correct) / static_cast<double>(ds.items.size());
}

ModelState adapt_bn(const ModelState& source_model, const FeatureStore& store,
                    const DataSet& target, int batch_size, double window_seconds, int passes) {
    if (target.items.empty()) throw DataError("adapt_bn: empty target dataset");
    if (batch_size < 2) throw ParamError("adapt_bn: batch_size must be at least 2");
    if (passes < 1) throw ParamError("adapt_bn: passes must be positive");
    ModelState st = source_model;
    auto saved_policy = st.bn_policy;
    std::vector<float> saved_momentum;
    saved_momentum.reserve(st.bn.size());
    for (const auto& bn : st.bn) saved_momentum.push_back(bn.momentum);

    model::set_bn_policy(st, model::BnPolicy::StatsOnlyAdapt);
    int window = window_frames(store.feature_config(), window_seconds);
    std::int64_t seen = 0;
    for (int pass = 0; pass < passes; ++pass) {
        for (std::size_t start = 0; start < target.items.size();
             start += static_cast<std::size_t>(batch_size)) {
            auto end = std::min(target.items.size(), start + static_cast<std::size_t>(batch_size));
            if (end - start < 2) continue;
            ++seen;
            // Cumulative batch average: after n batches the running stats
            // are the mean of the n per-batch statistics.
            auto momentum = static_cast<float>(1.0 / static_cast<double>(seen));
            for (auto& bn : st.bn) bn.momentum = momentum;
            std::vector<int> items(target.items.begin() + static_cast<std::ptrdiff_t>(start),
                                   target.items.begin() + static_cast<std::ptrdiff_t>(end));
            auto offsets = center_offsets(store, items, window);
            auto batch = gather_batch(store, items, offsets, window);
            ad::Graph g;
            model::forward(st, g, batch, Mode::Train);
        }
    }
    if (seen == 0) throw DataError("adapt_bn: no batch of at least two clips");
    for (std::size_t i = 0; i < st.bn.size(); ++i) st.bn[i].momentum = saved_momentum[i];
    model::set_bn_policy(st, saved_policy);
    return st;
}

TrainResult train_run(const TrainRunConfig& cfg, const FeatureStore& store,
                      const std::vector<dsp::AudioClip>* noise_pool) {
    cfg.validate();
    if (cfg.method == "bn") {
        throw DependencyError(
            "method bn adapts an already trained baseline; train a baseline first and pass "
            "its checkpoint to adapt_bn");
    }

    DataSet src_train = store.select(cfg.source_domain, synth::Split::Train);
    DataSet src_valid = store.select(cfg.source_domain, synth::Split::Valid);
    DataSet tgt_train = store.select(cfg.target_domain, synth::Split::Train);
    DataSet tgt_valid = store.select(cfg.target_domain, synth::Split::Valid);
    if (src_train.items.empty()) {
        throw DataError("empty source training set for domain " + cfg.source_domain);
    }
    if (src_valid.items.empty()) {
        throw DataError("empty source validation set for domain " + cfg.source_domain);
    }
    if (tgt_valid.items.empty()) {
        throw DataError("empty target validation set for domain " + cfg.target_domain);
    }
    bool uses_target_clips = cfg.method == "em" || cfg.method == "hafn" ||
                             cfg.method == "safn" || cfg.method == "symnet";
    if (uses_target_clips && tgt_train.items.empty()) {
        throw DataError("empty target training set for domain " + cfg.target_domain);
    }

    std::vector<dsp::AudioClip> pool_subset;
    if (cfg.method == "tni") {
        if (noise_pool == nullptr || noise_pool->empty()) {
            throw DataError("tni needs a non-empty target noise pool");
        }
        if (!store.has_audio()) {
            throw DataError("tni needs a FeatureStore loaded with keep_audio");
        }
        auto n_use = static_cast<std::size_t>(std::max<std::int64_t>(
            1, std::llround(cfg.noise_pool_fraction * static_cast<double>(noise_pool->size()))));
        n_use = std::min(n_use, noise_pool->size());
        pool_subset.assign(noise_pool->begin(),
                           noise_pool->begin() + static_cast<std::ptrdiff_t>(n_use));
    }

    auto n_steps = static_cast<int>(src_train.items.size()) / cfg.batch_size;
    if (n_steps < 1) {
        throw DataError("batch_size " + std::to_string(cfg.batch_size) +
                        " exceeds the source training set of " +
                        std::to_string(src_train.items.size()) + " clips");
    }

    auto enc = cfg.encoder;
    enc.n_mels = store.feature_config().n_mels;
    ModelState st = model::init_model(enc, 2, cfg.seed);
    if (cfg.method == "symnet") {
        model::add_head(st, cfg.seed);
        // Tied initialization keeps the two heads symmetric at the start.
        st.heads[1].w.data = st.heads[0].w.data;
        st.heads[1].b.data = st.heads[0].b.data;
    }

    TrainContext ctx{cfg, store, st, model::AdamHp{}, window_frames(store.feature_config(),
                                                                    cfg.window_seconds)};
    ctx.hp.lr_backbone = cfg.lr_backbone;
    ctx.hp.lr_classifier = cfg.lr_classifier;
    ctx.noise_pool = &pool_subset;

    TrainHistory history;
    history.method = cfg.method;
    ModelState best = st;
    double best_auc = -1.0;
    bool avg_heads = cfg.method == "symnet";

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        auto src_pos = shuffled_positions(src_train.items.size(), cfg.seed, kKeySrcShuffle, epoch);
        std::vector<int> tgt_pos;
        if (uses_target_clips) {
            tgt_pos = shuffled_positions(tgt_train.items.size(), cfg.seed, kKeyTgtShuffle, epoch);
        }

        std::map<std::string, double> loss_sums;
        std::map<std::string, double> diag_sums;
        double norm_sum = 0.0;
        for (int stp = 0; stp < n_steps; ++stp) {
            std::vector<int> items(static_cast<std::size_t>(cfg.batch_size));
            std::vector<int> labels(static_cast<std::size_t>(cfg.batch_size));
            for (int j = 0; j < cfg.batch_size; ++j) {
                int pos = src_pos[static_cast<std::size_t>(stp * cfg.batch_size + j)];
                items[static_cast<std::size_t>(j)] = src_train.items[static_cast<std::size_t>(pos)];
                labels[static_cast<std::size_t>(j)] = src_train.labels[static_cast<std::size_t>(pos)];
            }

            StepStats stats;
            if (cfg.method == "baseline") {
                auto src = source_batch(ctx, items, epoch, stp);
                stats = step_ce_only(ctx, src, labels);
            } else if (cfg.method == "tni") {
                auto src = augmented_source_batch(ctx, items, epoch, stp);
                stats = step_ce_only(ctx, src, labels);
            } else {
                std::vector<int> t_items(static_cast<std::size_t>(cfg.batch_size));
                for (int j = 0; j < cfg.batch_size; ++j) {
                    auto cycled = static_cast<std::size_t>(stp * cfg.batch_size + j) %
                                  tgt_pos.size();
                    t_items[static_cast<std::size_t>(j)] =
                        tgt_train.items[static_cast<std::size_t>(tgt_pos[cycled])];
                }
                auto src = source_batch(ctx, items, epoch, stp);
                auto tgt = target_batch(ctx, t_items, epoch, stp);
                if (cfg.method == "em") {
                    stats = step_em(ctx, src, labels, tgt);
                } else if (cfg.method == "hafn") {
                    stats = step_afn(ctx, src, labels, tgt, ad::NormPenalty::Hard,
                                     static_cast<float>(cfg.afn_radius));
                } else if (cfg.method == "safn") {
                    stats = step_afn(ctx, src, labels, tgt, ad::NormPenalty::Stepwise,
                                     static_cast<float>(cfg.afn_delta));
                } else {
                    stats = step_symnet(ctx, src, labels, tgt);
                }
            }
            for (const auto& [name, v] : stats.losses) loss_sums[name] += v;
            for (const auto& [name, v] : stats.diagnostics) diag_sums[name] += v;
            norm_sum += stats.mean_norm;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        for (const auto& [name, v] : loss_sums) rec.losses[name] = v / n_steps;
        for (const auto& [name, v] : diag_sums) rec.diagnostics[name] = v / n_steps;
        rec.mean_embedding_norm = norm_sum / n_steps;
        rec.source_valid_auc =
            eval_auc(st, store, src_valid, cfg.batch_size, cfg.window_seconds, avg_heads);
        rec.target_valid_auc =
            eval_auc(st, store, tgt_valid, cfg.batch_size, cfg.window_seconds, avg_heads);
        history.epochs.push_back(rec);

        if (rec.source_valid_auc > best_auc) {
            best_auc = rec.source_valid_auc;
            best = st;
        }
    }
    return {std::move(best), std::move(history)};
}

void write_history_jsonl(const std::string& path, const TrainHistory& history) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    for (const auto& rec : history.epochs) {
        nlohmann::json j;
        j["epoch"] = rec.epoch;
        j["method"] = history.method;
        j["losses"] = rec.losses;
        j["source_valid_auc"] = rec.source_valid_auc;
        j["target_valid_auc"] = rec.target_valid_auc;
        j["mean_embedding_norm"] = rec.mean_embedding_norm;
        if (!rec.diagnostics.empty()) j["diagnostics"] = rec.diagnostics;
        out << j.dump() << "\n";
    }
    if (!out) throw IoError("failed writing " + path);
}

TrainHistory read_history_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    TrainHistory history;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            throw IoError("history line " + std::to_string(line_no) + " is not a JSON object");
        }
        EpochRecord rec;
        try {
            rec.epoch = j.at("epoch").get<int>();
            history.method = j.at("method").get<std::string>();
            rec.losses = j.at("losses").get<std::map<std::string, double>>();
            rec.source_valid_auc = j.at("source_valid_auc").get<double>();
            rec.target_valid_auc = j.at("target_valid_auc").get<double>();
            rec.mean_embedding_norm = j.at("mean_embedding_norm").get<double>();
            if (j.contains("diagnostics")) {
                rec.diagnostics = j.at("diagnostics").get<std::map<std::string, double>>();
            }
        } catch (const nlohmann::json::exception& e) {
            throw IoError("history line " + std::to_string(line_no) + ": " + e.what());
        }
        history.epochs.push_back(std::move(rec));
    }
    return history;
}

}  // namespace cryda::uda
