#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cryda/model.hpp"
#include "cryda/rng.hpp"

namespace cryda::model {

namespace {

constexpr std::uint64_t kKeyConv = 401;
constexpr std::uint64_t kKeyHead = 402;

void validate(const EncoderConfig& cfg) {
    if (cfg.in_channels != 1) throw ParamError("encoder expects a single input channel");
    if (cfg.channels.empty()) throw ParamError("encoder needs at least one block");
    for (int c : cfg.channels)
        if (c < 1) throw ParamError("block channel counts must be positive");
    if (cfg.kernel < 1 || cfg.kernel % 2 == 0)
        throw ParamError("kernel size must be odd and positive, got " + std::to_string(cfg.kernel));
    if (cfg.embedding_dim < 8)
        throw ParamError("embedding_dim must be >= 8, got " + std::to_string(cfg.embedding_dim));
    if (cfg.embedding_dim != cfg.channels.back())
        throw ParamError("embedding_dim must equal the last block's channels");
    const int min_mels = 1 << int(cfg.channels.size());
    if (cfg.n_mels < min_mels)
        throw ParamError("n_mels must be at least " + std::to_string(min_mels) +
                         " for " + std::to_string(cfg.channels.size()) + " pooling stages");
}

ad::Tensor he_tensor(ad::Shape shape, std::int64_t fan_in, Rng& rng) {
    ad::Tensor t = ad::Tensor::zeros(std::move(shape));
    const double sd = std::sqrt(2.0 / double(fan_in));
    for (float& v : t.data) v = float(rng.gaussian(0.0, sd));
    return t;
}

ModelState::Head make_head(int d, int k, std::uint64_t seed, std::uint64_t index) {
    Rng rng = Rng::keyed(seed, {kKeyHead, index});
    ModelState::Head h;
    h.w = he_tensor({d, k}, d, rng);
    h.b = ad::Tensor::zeros({k});
    return h;
}

}  // namespace

std::vector<ModelState::ParamInfo> ModelState::params() {
    std::vector<ParamInfo> out;
    auto push = [&](const std::string& name, ad::Tensor& t, bool classifier) {
        out.push_back({name, &t, frozen.count(name) > 0, classifier});
    };
    for (std::size_t i = 0; i < conv_w.size(); ++i) {
        const std::string b = std::to_string(i);
        push("conv" + b + ".w", conv_w[i], false);
        push("bn" + b + ".gamma", bn[i].gamma, false);
        push("bn" + b + ".beta", bn[i].beta, false);
    }
    for (std::size_t h = 0; h < heads.size(); ++h) {
        const std::string b = std::to_string(h);
        push("head" + b + ".w", heads[h].w, true);
        push("head" + b + ".b", heads[h].b, true);
    }
    return out;
}

std::int64_t ModelState::trainable_count() {
    std::int64_t n = 0;
    for (const ParamInfo& p : params())
        if (!p.frozen) n += p.tensor->size();
    return n;
}

void ModelState::apply_freeze() {
    for (ParamInfo& p : params()) p.tensor->requires_grad = !p.frozen;
}

ModelState init_model(const EncoderConfig& cfg, int n_classes, std::uint64_t seed) {
    validate(cfg);
    if (n_classes < 2) throw ParamError("n_classes must be >= 2");

    ModelState s;
    s.cfg = cfg;
    s.n_classes = n_classes;
    int c_in = cfg.in_channels;
    for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
        const int c_out = cfg.channels[i];
        Rng rng = Rng::keyed(seed, {kKeyConv, std::uint64_t(i)});
        s.conv_w.push_back(he_tensor({c_out, c_in, cfg.kernel, cfg.kernel},
                                     std::int64_t(c_in) * cfg.kernel * cfg.kernel, rng));
        s.bn.push_back(ad::BNState::init(c_out));
        s.frozen.insert("conv" + std::to_string(i) + ".w");
        c_in = c_out;
    }
    s.heads.push_back(make_head(cfg.embedding_dim, n_classes, seed, 0));
    s.apply_freeze();
    return s;
}

void add_head(ModelState& state, std::uint64_t seed) {
    state.heads.push_back(
        make_head(state.cfg.embedding_dim, state.n_classes, seed, state.heads.size()));
    state.apply_freeze();
}

void set_trainable(ModelState& state, const std::string& prefix, bool trainable) {
    for (const ModelState::ParamInfo& p : state.params()) {
        if (p.name.rfind(prefix, 0) != 0) continue;
        if (trainable)
            state.frozen.erase(p.name);
        else
            state.frozen.insert(p.name);
    }
    state.apply_freeze();
}

void set_bn_policy(ModelState& state, BnPolicy policy) { state.bn_policy = policy; }

ad::Tensor make_batch(const std::vector<const dsp::SpectrogramFeatures*>& feats) {
    if (feats.empty()) throw DataError("make_batch: empty feature list");
    const ad::Shape& fs = feats[0]->frames.shape;
    if (fs.size() != 2) throw ShapeError("make_batch: features must be [T, n_mels]");
    for (const dsp::SpectrogramFeatures* f : feats)
        if (f->frames.shape != fs)
            throw ShapeError("make_batch: inconsistent feature shapes " +
                             ad::shape_str(f->frames.shape) + " vs " + ad::shape_str(fs));
    const int b = int(feats.size());
    ad::Tensor out = ad::Tensor::zeros({b, 1, fs[0], fs[1]});
    const std::int64_t stride = std::int64_t(fs[0]) * fs[1];
    for (int i = 0; i < b; ++i)
        std::copy(feats[std::size_t(i)]->frames.data.begin(),
                  feats[std::size_t(i)]->frames.data.end(), out.data.begin() + i * stride);
    return out;
}

Forward forward(ModelState& state, ad::Graph& g, ad::Tensor& batch, Mode mode) {
    if (batch.rank() != 4 || batch.dim(1) != state.cfg.in_channels)
        throw ShapeError("forward: batch must be [B, 1, T, n_mels], got " +
                         ad::shape_str(batch.shape));
    if (batch.dim(3) != state.cfg.n_mels)
        throw ShapeError("forward: expected " + std::to_string(state.cfg.n_mels) +
                         " mel bins, got " + std::to_string(batch.dim(3)));
    const int min_t = 1 << int(state.cfg.channels.size());
    if (batch.dim(2) < min_t)
        throw ShapeError("forward: need at least " + std::to_string(min_t) + " frames, got " +
                         std::to_string(batch.dim(2)));

    ad::BNMode bn_mode = ad::BNMode::Eval;
    if (mode == Mode::Train) {
        switch (state.bn_policy) {
            case BnPolicy::TrainStats: bn_mode = ad::BNMode::Train; break;
            case BnPolicy::EvalStats: bn_mode = ad::BNMode::Eval; break;
            case BnPolicy::StatsOnlyAdapt: bn_mode = ad::BNMode::StatsOnly; break;
        }
    }

    ad::Value x = g.leaf(batch);
    for (std::size_t i = 0; i < state.conv_w.size(); ++i) {
        x = ad::conv2d(x, g.leaf(state.conv_w[i]), 1, state.cfg.kernel / 2);
        x = ad::batchnorm(x, state.bn[i], bn_mode);
        x = ad::relu(x);
        x = ad::maxpool2x2(x);
    }

    Forward out;
    out.embedding = ad::global_mean_pool(x);
    out.logits = head_logits(state, g, out.embedding, 0);
    return out;
}

ad::Value head_logits(ModelState& state, ad::Graph& g, const ad::Value& embedding, int head) {
    if (head < 0 || head >= int(state.heads.size()))
        throw ParamError("head index " + std::to_string(head) + " out of range");
    ModelState::Head& h = state.heads[std::size_t(head)];
    return ad::linear(embedding, g.leaf(h.w), g.leaf(h.b));
}

void adam_step(ModelState& state, const AdamHp& hp) {
    state.step += 1;
    const double t = double(state.step);
    const double bc1 = 1.0 - std::pow(hp.beta1, t);
    const double bc2 = 1.0 - std::pow(hp.beta2, t);

    for (const ModelState::ParamInfo& p : state.params()) {
        if (p.frozen) continue;
        ad::Tensor& w = *p.tensor;
        if (w.grad.size() != w.data.size())
            throw ValueError("adam_step: trainable parameter " + p.name + " has no gradient");
        ModelState::Moments& mo = state.opt[p.name];
        if (mo.m.size() != w.data.size()) {
            mo.m.assign(w.data.size(), 0.0f);
            mo.v.assign(w.data.size(), 0.0f);
        }
        const double lr = p.classifier_group ? hp.lr_classifier : hp.lr_backbone;
        for (std::size_t i = 0; i < w.data.size(); ++i) {
            const double g = double(w.grad[i]);
            const double m = hp.beta1 * double(mo.m[i]) + (1.0 - hp.beta1) * g;
            const double v = hp.beta2 * double(mo.v[i]) + (1.0 - hp.beta2) * g * g;
            mo.m[i] = float(m);
            mo.v[i] = float(v);
            const double update = lr * (m / bc1) / (std::sqrt(v / bc2) + hp.eps);
            w.data[i] = float(double(w.data[i]) - update);
        }
    }
}

void zero_grads(ModelState& state) {
    for (const ModelState::ParamInfo& p : state.params()) {
        ad::Tensor& w = *p.tensor;
        if (!w.grad.empty()) std::fill(w.grad.begin(), w.grad.end(), 0.0f);
    }
}

}  // namespace cryda::model
