#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "cryda/dsp.hpp"
#include "cryda/errors.hpp"
#include "cryda/ops.hpp"

namespace cryda::model {

struct EncoderConfig {
    int in_channels = 1;
    std::vector<int> channels = {16, 32, 64, 128};
    int kernel = 3;  // odd; padding keeps spatial dims
    int n_mels = 64;
    int embedding_dim = 128;  // equals channels.back(), >= 8
};

// How batch norm behaves in a training-mode forward pass. Eval-mode
// forwards always use running stats regardless of policy.
enum class BnPolicy { TrainStats, EvalStats, StatsOnlyAdapt };

enum class Mode { Train, Eval };

struct ModelState {
    EncoderConfig cfg;
    int n_classes = 2;

    std::vector<ad::Tensor> conv_w;  // per block, [C_out, C_in, k, k]
    std::vector<ad::BNState> bn;     // per block

    struct Head {
        ad::Tensor w;  // [D, K]
        ad::Tensor b;  // [K]
    };
    std::vector<Head> heads;

    BnPolicy bn_policy = BnPolicy::TrainStats;
    std::set<std::string> frozen;

    struct Moments {
        std::vector<float> m, v;
    };
    std::map<std::string, Moments> opt;
    std::int64_t step = 0;

    struct ParamInfo {
        std::string name;
        ad::Tensor* tensor;
        bool frozen;
        bool classifier_group;
    };
    // Fixed enumeration order: conv0.w, bn0.gamma, bn0.beta, ..., head0.w,
    // head0.b, head1.w, ...
    std::vector<ParamInfo> params();
    std::int64_t trainable_count();

    // Pushes the frozen set into every tensor's requires_grad flag.
    void apply_freeze();
};

struct Forward {
    ad::Value embedding;  // [B, D]
    ad::Value logits;     // [B, K] from head 0
};

struct AdamHp {
    double lr_backbone = 0.01;
    double lr_classifier = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Deterministic He-style init; conv weights start frozen, BN affines and
// the classifier head trainable.
ModelState init_model(const EncoderConfig& cfg, int n_classes, std::uint64_t seed);

// Appends another classifier head (trainable), seeded independently.
void add_head(ModelState& state, std::uint64_t seed);

// Marks every parameter whose name starts with prefix as trainable or
// frozen ("" matches all).
void set_trainable(ModelState& state, const std::string& prefix, bool trainable);

void set_bn_policy(ModelState& state, BnPolicy policy);

// Stacks equally shaped [T, n_mels] feature frames into a [B, 1, T, n_mels]
// batch tensor.
ad::Tensor make_batch(const std::vector<const dsp::SpectrogramFeatures*>& feats);

// batch: [B, 1, T, n_mels]. The tensor must outlive the graph.
Forward forward(ModelState& state, ad::Graph& g, ad::Tensor& batch, Mode mode);

// Logits of one head applied to an embedding already on the tape.
ad::Value head_logits(ModelState& state, ad::Graph& g, const ad::Value& embedding, int head);

// Bias-corrected Adam on every trainable parameter, reading leaf .grad
// buffers. Frozen parameters are never touched.
void adam_step(ModelState& state, const AdamHp& hp);

// Clears .grad on every parameter.
void zero_grads(ModelState& state);

void save_checkpoint(const ModelState& state, const std::string& path);
ModelState load_checkpoint(const std::string& path);

}  // namespace cryda::model
