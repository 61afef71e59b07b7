#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "cryda/ops.hpp"
#include "cryda/rng.hpp"
#include "support/fdcheck.hpp"
#include "support/refnet.hpp"

using namespace cryda;
using namespace cryda::ad;
using refnet::dvec;
using refnet::to_d;

namespace {

Tensor randt(Shape s, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
    Tensor t = Tensor::zeros(std::move(s));
    for (auto& v : t.data) v = float(rng.uniform(lo, hi));
    return t;
}

// Keeps every element at least 0.01 away from zero so a 1e-3 probe cannot
// cross a relu kink.
Tensor randt_off_zero(Shape s, Rng& rng) {
    Tensor t = randt(std::move(s), rng);
    for (auto& v : t.data) v += v >= 0.0f ? 0.01f : -0.01f;
    return t;
}

// Distinct, well-separated values in random order; safe for maxpool probes.
Tensor randt_distinct(Shape s, Rng& rng) {
    Tensor t = Tensor::zeros(std::move(s));
    std::vector<float> vals(t.data.size());
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = 0.05f * float(i) - 1.0f;
    rng.shuffle(vals);
    t.data = vals;
    return t;
}

// loss = mean over rows of y . p, the standard scalarizer for grad checks.
Value project_mean(Graph& g, const Value& y, Tensor& p) {
    Tensor* zb = new Tensor(Tensor::zeros({1}));  // leaked on purpose: test scope
    return mean_vec(linear(y, g.leaf(p), g.leaf(*zb)));
}

}  // namespace

TEST_CASE("linear forward hand cases") {
    Tensor x({1, 2}, {1.0f, 2.0f});
    Tensor w({2, 1}, {1.0f, 1.0f});
    Tensor b({1}, {0.0f});
    Graph g;
    Value y = linear(g.leaf(x), g.leaf(w), g.leaf(b));
    CHECK(y.tensor().data[0] == doctest::Approx(3.0f));

    Tensor xi({2, 2}, {0.5f, -1.0f, 2.0f, 3.0f});
    Tensor wi({2, 2}, {1.0f, 0.0f, 0.0f, 1.0f});
    Tensor bi = Tensor::zeros({2});
    Value yi = linear(g.leaf(xi), g.leaf(wi), g.leaf(bi));
    for (int i = 0; i < 4; ++i) CHECK(yi.tensor().data[std::size_t(i)] == xi.data[std::size_t(i)]);
}

TEST_CASE("linear rejects nonconforming shapes naming both") {
    Tensor x = Tensor::zeros({2, 3});
    Tensor w = Tensor::zeros({2, 2});
    Tensor b = Tensor::zeros({2});
    Graph g;
    try {
        linear(g.leaf(x), g.leaf(w), g.leaf(b));
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2,3]") != std::string::npos);
        CHECK(msg.find("[2,2]") != std::string::npos);
    }
}

TEST_CASE("linear gradients match finite differences") {
    Rng rng(101);
    Tensor x = randt({4, 3}, rng);
    Tensor w = randt({3, 2}, rng);
    Tensor b = randt({2}, rng);
    Tensor p = randt({2, 1}, rng);
    x.requires_grad = w.requires_grad = b.requires_grad = true;

    Graph g;
    Value y = linear(g.leaf(x), g.leaf(w), g.leaf(b));
    g.backward(project_mean(g, y, p));

    auto loss_ref = [&] {
        return refnet::ref_project_mean(
            refnet::ref_linear(to_d(x.data), 4, 3, 2, to_d(w.data), to_d(b.data)), 4, 2,
            to_d(p.data));
    };
    auto res = fdcheck::check({&x, &w, &b}, loss_ref);
    CHECK(res.finite);
    CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("conv2d forward hand cases") {
    Graph g;
    Tensor x({1, 1, 2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});

    Tensor k1({1, 1, 1, 1}, {1.0f});
    Value y1 = conv2d(g.leaf(x), g.leaf(k1), 1, 0);
    CHECK(y1.shape() == Shape{1, 1, 2, 2});
    for (int i = 0; i < 4; ++i) CHECK(y1.tensor().data[std::size_t(i)] == x.data[std::size_t(i)]);

    Tensor k2 = Tensor::full({1, 1, 2, 2}, 1.0f);
    Value y2 = conv2d(g.leaf(x), g.leaf(k2), 1, 0);
    CHECK(y2.shape() == Shape{1, 1, 1, 1});
    CHECK(y2.tensor().data[0] == doctest::Approx(10.0f));
}

TEST_CASE("conv2d rejects kernels larger than the padded input") {
    Graph g;
    Tensor x = Tensor::zeros({1, 1, 2, 2});
    Tensor k = Tensor::zeros({1, 1, 5, 5});
    CHECK_THROWS_AS(conv2d(g.leaf(x), g.leaf(k), 1, 1), ShapeError);
}

TEST_CASE("conv2d gradients match finite differences") {
    struct Case {
        int stride, pad;
    };
    for (Case c : {Case{1, 1}, Case{2, 0}}) {
        CAPTURE(c.stride);
        Rng rng(202 + c.stride);
        Tensor x = randt({2, 2, 5, 4}, rng);
        Tensor k = randt({3, 2, 3, 2}, rng);
        x.requires_grad = k.requires_grad = true;

        Graph g;
        Value y = conv2d(g.leaf(x), g.leaf(k), c.stride, c.pad);
        const int cols = int(numel(y.shape()) / 2);
        Tensor p = randt({cols, 1}, rng);
        g.backward(project_mean(g, reshape(y, {2, cols}), p));

        auto loss_ref = [&] {
            int oh = 0, ow = 0;
            dvec yd = refnet::ref_conv2d(to_d(x.data), 2, 2, 5, 4, to_d(k.data), 3, 3, 2,
                                         c.stride, c.pad, &oh, &ow);
            return refnet::ref_project_mean(yd, 2, 3 * oh * ow, to_d(p.data));
        };
        auto res = fdcheck::check({&x, &k}, loss_ref);
        CHECK(res.finite);
        CHECK(res.max_rel_err < 1e-4);
    }
}

TEST_CASE("batchnorm train normalizes a two-point batch") {
    BNState st = BNState::init(1);
    Tensor x({2, 1}, {1.0f, 3.0f});
    Graph g;
    Value y = batchnorm(g.leaf(x), st, BNMode::Train);
    const float expect = float(1.0 / std::sqrt(1.0 + 1e-5));
    CHECK(y.tensor().data[0] == doctest::Approx(-expect));
    CHECK(y.tensor().data[1] == doctest::Approx(expect));
}

TEST_CASE("batchnorm running stats follow the momentum rule") {
    BNState st = BNState::init(1, 0.1f);
    st.run_mean[0] = 0.0f;
    Tensor x({2, 1}, {1.0f, 3.0f});  // batch mean 2
    Graph g;
    batchnorm(g.leaf(x), st, BNMode::Train);
    CHECK(st.run_mean[0] == doctest::Approx(0.2f));
    CHECK(st.run_var[0] == doctest::Approx(0.9f * 1.0f + 0.1f * 1.0f));
}

TEST_CASE("batchnorm rejects stats updates from batches under two") {
    BNState st = BNState::init(2);
    Tensor x = Tensor::zeros({1, 2});
    Graph g;
    CHECK_THROWS_AS(batchnorm(g.leaf(x), st, BNMode::Train), ValueError);
    CHECK_THROWS_AS(batchnorm(g.leaf(x), st, BNMode::StatsOnly), ValueError);
    CHECK_NOTHROW(batchnorm(g.leaf(x), st, BNMode::Eval));
}

TEST_CASE("batchnorm stats-only updates stats but never affine or grads") {
    Rng rng(7);
    BNState st = BNState::init(3);
    st.gamma.data = {1.5f, -0.5f, 2.0f};
    st.beta.data = {0.1f, 0.2f, 0.3f};
    st.gamma.requires_grad = st.beta.requires_grad = true;
    const std::vector<float> gamma_before = st.gamma.data;
    const std::vector<float> beta_before = st.beta.data;
    const std::vector<float> rm_before = st.run_mean;

    Tensor x = randt({4, 3}, rng);
    Graph g;
    Value y = batchnorm(g.leaf(x), st, BNMode::StatsOnly);

    CHECK(st.gamma.data == gamma_before);
    CHECK(st.beta.data == beta_before);
    CHECK(st.run_mean != rm_before);
    CHECK(st.gamma.grad.empty());
    CHECK(st.beta.grad.empty());

    // Output equals an eval pass under the pre-update running stats.
    dvec want = refnet::ref_batchnorm_eval(to_d(x.data), 4, 3, 1, to_d(gamma_before),
                                           to_d(beta_before), to_d(rm_before),
                                           dvec(3, 1.0), 1e-5);
    for (std::size_t i = 0; i < want.size(); ++i)
        CHECK(y.tensor().data[i] == doctest::Approx(float(want[i])).epsilon(1e-5));
}

TEST_CASE("batchnorm gradients match finite differences") {
    SUBCASE("train mode, feature-vector input") {
        Rng rng(303);
        BNState st = BNState::init(3);
        st.gamma = randt({3}, rng, 0.5f, 1.5f);
        st.beta = randt({3}, rng);
        st.gamma.requires_grad = st.beta.requires_grad = true;
        Tensor x = randt({6, 3}, rng);
        x.requires_grad = true;
        Tensor p = randt({3, 1}, rng);

        Graph g;
        Value y = batchnorm(g.leaf(x), st, BNMode::Train);
        g.backward(project_mean(g, y, p));

        auto loss_ref = [&] {
            dvec yd = refnet::ref_batchnorm_train(to_d(x.data), 6, 3, 1, to_d(st.gamma.data),
                                                  to_d(st.beta.data), 1e-5);
            return refnet::ref_project_mean(yd, 6, 3, to_d(p.data));
        };
        auto res = fdcheck::check({&x, &st.gamma, &st.beta}, loss_ref);
        CHECK(res.finite);
        CHECK(res.max_rel_err < 1e-4);
    }

    SUBCASE("train mode, feature-map input") {
        Rng rng(304);
        BNState st = BNState::init(2);
        st.gamma = randt({2}, rng, 0.5f, 1.5f);
        st.beta = randt({2}, rng);
        st.gamma.requires_grad = st.beta.requires_grad = true;
        Tensor x = randt({3, 2, 2, 2}, rng);
        x.requires_grad = true;
        Tensor p = randt({8, 1}, rng);

        Graph g;
        Value y = batchnorm(g.leaf(x), st, BNMode::Train);
        g.backward(project_mean(g, reshape(y, {3, 8}), p));

        auto loss_ref = [&] {
            dvec yd = refnet::ref_batchnorm_train(to_d(x.data), 3, 2, 4, to_d(st.gamma.data),
                                                  to_d(st.beta.data), 1e-5);
            return refnet::ref_project_mean(yd, 3, 8, to_d(p.data));
        };
        auto res = fdcheck::check({&x, &st.gamma, &st.beta}, loss_ref);
        CHECK(res.finite);
        CHECK(res.max_rel_err < 1e-4);
    }

    SUBCASE("eval mode") {
        Rng rng(305);
        BNState st = BNState::init(3);
        st.gamma = randt({3}, rng, 0.5f, 1.5f);
        st.beta = randt({3}, rng);
        for (int f = 0; f < 3; ++f) {
            st.run_mean[std::size_t(f)] = float(rng.uniform(-0.5, 0.5));
            st.run_var[std::size_t(f)] = float(rng.uniform(0.5, 2.0));
        }
        st.gamma.requires_grad = st.beta.requires_grad = true;
        Tensor x = randt({4, 3}, rng);
        x.requires_grad = true;
        Tensor p = randt({3, 1}, rng);

        Graph g;
        Value y = batchnorm(g.leaf(x), st, BNMode::Eval);
        g.backward(project_mean(g, y, p));

        auto loss_ref = [&] {
            dvec yd = refnet::ref_batchnorm_eval(to_d(x.data), 4, 3, 1, to_d(st.gamma.data),
                                                 to_d(st.beta.data), to_d(st.run_mean),
                                                 to_d(st.run_var), 1e-5);
            return refnet::ref_project_mean(yd, 4, 3, to_d(p.data));
        };
        auto res = fdcheck::check({&x, &st.gamma, &st.beta}, loss_ref);
        CHECK(res.finite);
        CHECK(res.max_rel_err < 1e-4);
    }
}

TEST_CASE("softmax_cross_entropy hand cases") {
    Graph g;
    Tensor z({1, 2}, {0.0f, 0.0f});
    z.requires_grad = true;
    Value loss = softmax_cross_entropy(g.leaf(z), {0});
    CHECK(loss.item() == doctest::Approx(std::log(2.0f)));
    g.backward(loss);
    CHECK(z.grad[0] == doctest::Approx(-0.5f));
    CHECK(z.grad[1] == doctest::Approx(0.5f));

    Tensor big({1, 2}, {1000.0f, 0.0f});
    Value stable = softmax_cross_entropy(g.leaf(big), {0});
    CHECK(std::isfinite(stable.item()));
    CHECK(stable.item() == doctest::Approx(0.0f).epsilon(1e-6));
}

TEST_CASE("softmax_cross_entropy rejects out-of-range labels") {
    Graph g;
    Tensor z = Tensor::zeros({2, 3});
    CHECK_THROWS_AS(softmax_cross_entropy(g.leaf(z), {0, 3}), ValueError);
    CHECK_THROWS_AS(softmax_cross_entropy(g.leaf(z), {-1, 0}), ValueError);
    CHECK_THROWS_AS(softmax_cross_entropy(g.leaf(z), {0}), ShapeError);
}

TEST_CASE("softmax_cross_entropy gradients match finite differences") {
    Rng rng(404);
    Tensor z = randt({5, 4}, rng, -2.0f, 2.0f);
    z.requires_grad = true;
    const std::vector<int> labels = {1, 3, 0, 2, 2};

    Graph g;
    g.backward(softmax_cross_entropy(g.leaf(z), labels));

    auto loss_ref = [&] { return refnet::ref_softmax_ce(to_d(z.data), 5, 4, labels); };
    auto res = fdcheck::check({&z}, loss_ref);
    CHECK(res.finite);
    CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("entropy hand cases and bounds") {
    Graph g;
    Tensor u({1, 2}, {0.5f, 0.5f});
    CHECK(entropy(g.leaf(u)).item() == doctest::Approx(std::log(2.0f)));

    Tensor onehot({1, 3}, {0.0f, 1.0f, 0.0f});
    CHECK(entropy(g.leaf(onehot)).item() == doctest::Approx(0.0f));

    Tensor skew({1, 2}, {0.75f, 0.25f});
    CHECK(entropy(g.leaf(skew)).item() == doctest::Approx(0.5623f).epsilon(1e-4));

    Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        const int K = 2 + int(rng.uniform_int(0, 3));
        Tensor probs = Tensor::zeros({1, K});
        double sum = 0.0;
        for (auto& v : probs.data) {
            v = float(rng.uniform(0.01, 1.0));
            sum += v;
        }
        for (auto& v : probs.data) v = float(v / sum);
        const float h = entropy(g.leaf(probs)).item();
        CHECK(h >= 0.0f);
        CHECK(h <= float(std::log(double(K))) + 1e-6f);
    }
}

TEST_CASE("entropy rejects rows that do not sum to one") {
    Graph g;
    Tensor bad({1, 2}, {0.6f, 0.5f});
    CHECK_THROWS_AS(entropy(g.leaf(bad)), ValueError);
    Tensor neg({1, 2}, {1.5f, -0.5f});
    CHECK_THROWS_AS(entropy(g.leaf(neg)), ValueError);
}

TEST_CASE("entropy gradients match finite differences") {
    SUBCASE("composed with softmax") {
        Rng rng(505);
        Tensor z = randt({4, 3}, rng, -1.5f, 1.5f);
        z.requires_grad = true;
        Graph g;
        g.backward(entropy(softmax(g.leaf(z))));

        auto loss_ref = [&] {
            return refnet::ref_entropy(refnet::ref_softmax(to_d(z.data), 4, 3), 4, 3);
        };
        auto res = fdcheck::check({&z}, loss_ref);
        CHECK(res.finite);
        CHECK(res.max_rel_err < 1e-4);
    }

    SUBCASE("directly on probabilities") {
        Tensor probs({2, 3}, {0.2f, 0.3f, 0.5f, 0.1f, 0.6f, 0.3f});
        probs.requires_grad = true;
        Graph g;
        g.backward(entropy(g.leaf(probs)));

        auto loss_ref = [&] { return refnet::ref_entropy(to_d(probs.data), 2, 3); };
        auto res = fdcheck::check({&probs}, loss_ref);
        CHECK(res.finite);
        CHECK(res.max_rel_err < 1e-4);
    }
}

TEST_CASE("feature_norm_penalty hand cases") {
    Graph g;
    Tensor f({2, 2}, {3.0f, 0.0f, 0.0f, 5.0f});  // row norms 3 and 5
    CHECK(feature_norm_penalty(g.leaf(f), NormPenalty::Hard, 4.0f).item() ==
          doctest::Approx(1.0f));

    Tensor f3({1, 2}, {3.0f, 0.0f});
    f3.requires_grad = true;
    Value pen = feature_norm_penalty(g.leaf(f3), NormPenalty::Stepwise, 0.2f);
    CHECK(pen.item() == doctest::Approx(0.04f));
    g.backward(pen);
    // Descending this penalty must grow the norm, so grad . f < 0.
    CHECK(f3.grad[0] * f3.data[0] + f3.grad[1] * f3.data[1] < 0.0f);

    CHECK_THROWS_AS(feature_norm_penalty(g.leaf(f), NormPenalty::Hard, 0.0f), ParamError);
    CHECK_THROWS_AS(feature_norm_penalty(g.leaf(f), NormPenalty::Stepwise, -0.2f), ParamError);
}

TEST_CASE("feature_norm_penalty gradients match finite differences") {
    SUBCASE("hard variant") {
        Rng rng(606);
        Tensor f = randt({3, 4}, rng, 0.3f, 1.0f);
        f.requires_grad = true;
        Graph g;
        g.backward(feature_norm_penalty(g.leaf(f), NormPenalty::Hard, 2.0f));

        auto loss_ref = [&] { return refnet::ref_fnp_hard(to_d(f.data), 3, 4, 2.0); };
        auto res = fdcheck::check({&f}, loss_ref);
        CHECK(res.finite);
        CHECK(res.max_rel_err < 1e-4);
    }

    SUBCASE("stepwise variant with frozen targets") {
        Rng rng(607);
        Tensor f = randt({3, 4}, rng, 0.3f, 1.0f);
        f.requires_grad = true;
        Graph g;
        g.backward(feature_norm_penalty(g.leaf(f), NormPenalty::Stepwise, 0.2f));

        dvec targets;
        const dvec base = to_d(f.data);
        for (int b = 0; b < 3; ++b) targets.push_back(refnet::ref_row_norm(base, b, 4) + 0.2);
        auto loss_ref = [&] { return refnet::ref_fnp_stepwise(to_d(f.data), 3, 4, targets); };
        auto res = fdcheck::check({&f}, loss_ref);
        CHECK(res.finite);
        CHECK(res.max_rel_err < 1e-4);
    }
}

TEST_CASE("grad_reverse forward identity and reversed backward") {
    Graph g;
    Tensor x({1, 2}, {1.0f, 2.0f});
    x.requires_grad = true;
    Value y = grad_reverse(g.leaf(x), 1.0f);
    CHECK(y.tensor().data == x.data);  // bit-identical forward

    // Upstream gradient [2, -4] at lambda 0.5 must come back as [-1, 2].
    Value a = scale(mean_vec(slice_cols(grad_reverse(g.leaf(x), 0.5f), 0, 1)), 2.0f);
    Value b = scale(mean_vec(slice_cols(grad_reverse(g.leaf(x), 0.5f), 1, 2)), -4.0f);
    // Two reversal nodes feed one loss; each column's upstream is its scale.
    g.backward(add(a, b));
    CHECK(x.grad[0] == doctest::Approx(-1.0f));
    CHECK(x.grad[1] == doctest::Approx(2.0f));

    Tensor s({1, 1}, {7.0f});
    s.requires_grad = true;
    g.backward(scale(mean_vec(grad_reverse(g.leaf(s), 1.0f)), 0.3f));
    CHECK(s.grad[0] == doctest::Approx(-0.3f));

    CHECK_THROWS_AS(grad_reverse(g.leaf(x), -1.0f), ParamError);
}

TEST_CASE("grad_reverse gradients are minus lambda times finite differences") {
    Rng rng(707);
    Tensor x = randt({3, 4}, rng);
    x.requires_grad = true;
    Tensor p = randt({4, 1}, rng);
    const float lambda = 0.7f;

    Graph g;
    g.backward(project_mean(g, grad_reverse(g.leaf(x), lambda), p));

    auto loss_ref = [&] { return refnet::ref_project_mean(to_d(x.data), 3, 4, to_d(p.data)); };
    auto res = fdcheck::check({&x}, loss_ref, 1e-3f, -double(lambda));
    CHECK(res.finite);
    CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("relu, maxpool and mean pool gradients match finite differences") {
    SUBCASE("relu") {
        Rng rng(808);
        Tensor x = randt_off_zero({3, 4}, rng);
        x.requires_grad = true;
        Tensor p = randt({4, 1}, rng);
        Graph g;
        g.backward(project_mean(g, relu(g.leaf(x)), p));

        auto loss_ref = [&] {
            return refnet::ref_project_mean(refnet::ref_relu(to_d(x.data)), 3, 4, to_d(p.data));
        };
        auto res = fdcheck::check({&x}, loss_ref);
        CHECK(res.finite);
        CHECK(res.max_rel_err < 1e-4);
    }

    SUBCASE("maxpool2x2") {
        Rng rng(809);
        Tensor x = randt_distinct({2, 2, 4, 4}, rng);
        x.requires_grad = true;
        Tensor p = randt({8, 1}, rng);
        Graph g;
        Value y = maxpool2x2(g.leaf(x));
        CHECK(y.shape() == Shape{2, 2, 2, 2});
        g.backward(project_mean(g, reshape(y, {2, 8}), p));

        auto loss_ref = [&] {
            dvec yd = refnet::ref_maxpool2x2(to_d(x.data), 2, 2, 4, 4);
            return refnet::ref_project_mean(yd, 2, 8, to_d(p.data));
        };
        auto res = fdcheck::check({&x}, loss_ref);
        CHECK(res.finite);
        CHECK(res.max_rel_err < 1e-4);
    }

    SUBCASE("global_mean_pool") {
        Rng rng(810);
        Tensor x = randt({2, 3, 2, 2}, rng);
        x.requires_grad = true;
        Tensor p = randt({3, 1}, rng);
        Graph g;
        g.backward(project_mean(g, global_mean_pool(g.leaf(x)), p));

        auto loss_ref = [&] {
            dvec yd = refnet::ref_global_mean_pool(to_d(x.data), 2, 3, 4);
            return refnet::ref_project_mean(yd, 2, 3, to_d(p.data));
        };
        auto res = fdcheck::check({&x}, loss_ref);
        CHECK(res.finite);
        CHECK(res.max_rel_err < 1e-4);
    }
}

TEST_CASE("softmax gradients match finite differences") {
    Rng rng(909);
    Tensor z = randt({3, 4}, rng, -1.5f, 1.5f);
    z.requires_grad = true;
    Tensor p = randt({4, 1}, rng);
    Graph g;
    g.backward(project_mean(g, softmax(g.leaf(z)), p));

    auto loss_ref = [&] {
        return refnet::ref_project_mean(refnet::ref_softmax(to_d(z.data), 3, 4), 3, 4,
                                        to_d(p.data));
    };
    auto res = fdcheck::check({&z}, loss_ref);
    CHECK(res.finite);
    CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("shaping and arithmetic op gradients match finite differences") {
    SUBCASE("scale and add") {
        Rng rng(111);
        Tensor a = randt({2, 3}, rng);
        Tensor b = randt({2, 3}, rng);
        a.requires_grad = b.requires_grad = true;
        Tensor p = randt({3, 1}, rng);
        Graph g;
        g.backward(project_mean(g, add(scale(g.leaf(a), 1.7f), g.leaf(b)), p));

        auto loss_ref = [&] {
            dvec y(6);
            for (int i = 0; i < 6; ++i)
                y[std::size_t(i)] = 1.7 * double(a.data[std::size_t(i)]) +
                                    double(b.data[std::size_t(i)]);
            return refnet::ref_project_mean(y, 2, 3, to_d(p.data));
        };
        auto res = fdcheck::check({&a, &b}, loss_ref);
        CHECK(res.finite);
        CHECK(res.max_rel_err < 1e-4);
    }

    SUBCASE("reshape") {
        Rng rng(112);
        Tensor x = randt({2, 6}, rng);
        x.requires_grad = true;
        Tensor p = randt({4, 1}, rng);
        Graph g;
        g.backward(project_mean(g, reshape(g.leaf(x), {3, 4}), p));

        auto loss_ref = [&] { return refnet::ref_project_mean(to_d(x.data), 3, 4, to_d(p.data)); };
        auto res = fdcheck::check({&x}, loss_ref);
        CHECK(res.finite);
        CHECK(res.max_rel_err < 1e-4);
        CHECK_THROWS_AS(reshape(g.leaf(x), {5, 2}), ShapeError);
    }

    SUBCASE("concat and slice") {
        Rng rng(113);
        Tensor a = randt({3, 2}, rng);
        Tensor b = randt({3, 3}, rng);
        a.requires_grad = b.requires_grad = true;
        Tensor p = randt({3, 1}, rng);
        Graph g;
        Value y = slice_cols(concat_cols(g.leaf(a), g.leaf(b)), 1, 4);
        g.backward(project_mean(g, y, p));

        auto loss_ref = [&] {
            dvec y2(9);
            for (int i = 0; i < 3; ++i) {
                y2[std::size_t(i) * 3 + 0] = a.data[std::size_t(i) * 2 + 1];
                y2[std::size_t(i) * 3 + 1] = b.data[std::size_t(i) * 3 + 0];
                y2[std::size_t(i) * 3 + 2] = b.data[std::size_t(i) * 3 + 1];
            }
            return refnet::ref_project_mean(y2, 3, 3, to_d(p.data));
        };
        auto res = fdcheck::check({&a, &b}, loss_ref);
        CHECK(res.finite);
        CHECK(res.max_rel_err < 1e-4);
    }

    SUBCASE("sum, gather, log and mean") {
        Rng rng(114);
        Tensor x = randt({4, 3}, rng, 0.2f, 2.0f);
        x.requires_grad = true;
        const std::vector<int> idx = {0, 2, 1, 2};
        Graph g;
        Value picked = gather_cols(log_vec(g.leaf(x)), idx);   // [4]
        Value sums = sum_cols(g.leaf(x));                      // [4]
        g.backward(add(mean_vec(picked), mean_vec(sums)));

        auto loss_ref = [&] {
            double total = 0.0;
            for (int b = 0; b < 4; ++b) {
                total += std::log(double(x.data[std::size_t(b) * 3 + idx[std::size_t(b)]])) / 4.0;
                for (int k = 0; k < 3; ++k) total += double(x.data[std::size_t(b) * 3 + k]) / 4.0;
            }
            return total;
        };
        auto res = fdcheck::check({&x}, loss_ref);
        CHECK(res.finite);
        CHECK(res.max_rel_err < 1e-4);
        CHECK_THROWS_AS(gather_cols(g.leaf(x), {0, 1, 2, 3}), ValueError);
    }
}

TEST_CASE("backward fundamentals") {
    SUBCASE("square via a twice-used leaf") {
        Tensor w({1, 1}, {3.0f});
        w.requires_grad = true;
        Tensor b = Tensor::zeros({1});
        Graph g;
        Value wv = g.leaf(w);
        g.backward(mean_vec(linear(wv, wv, g.leaf(b))));
        CHECK(w.grad[0] == doctest::Approx(6.0f));
    }

    SUBCASE("constant loss leaves grads empty") {
        Tensor w({1, 1}, {3.0f});
        w.requires_grad = true;
        Graph g;
        g.leaf(w);
        g.backward(mean_vec(g.constant(Tensor::scalar(5.0f))));
        CHECK(w.grad.empty());
    }

    SUBCASE("non-scalar loss is rejected") {
        Tensor x = Tensor::zeros({2, 2});
        x.requires_grad = true;
        Graph g;
        Value v = g.leaf(x);
        CHECK_THROWS_AS(g.backward(v), Error);
    }

    SUBCASE("repeated backward accumulates") {
        Tensor w({1, 1}, {3.0f});
        w.requires_grad = true;
        Tensor b = Tensor::zeros({1});
        Graph g;
        Value wv = g.leaf(w);
        Value loss = mean_vec(linear(wv, wv, g.leaf(b)));
        g.backward(loss);
        g.backward(loss);
        CHECK(w.grad[0] == doctest::Approx(12.0f));
    }

    SUBCASE("backward is bit-deterministic") {
        auto run = [](std::vector<float>& out) {
            Rng rng(1212);
            Tensor x = randt({4, 5}, rng);
            Tensor w1 = randt({5, 4}, rng);
            Tensor b1 = randt({4}, rng);
            Tensor w2 = randt({4, 2}, rng);
            Tensor b2 = randt({2}, rng);
            for (Tensor* t : {&w1, &b1, &w2, &b2}) t->requires_grad = true;
            Graph g;
            Value h = relu(linear(g.leaf(x), g.leaf(w1), g.leaf(b1)));
            Value loss = softmax_cross_entropy(linear(h, g.leaf(w2), g.leaf(b2)), {0, 1, 1, 0});
            g.backward(loss);
            const std::vector<float> first = w1.grad;
            g.zero_grads();
            g.backward(loss);
            CHECK(w1.grad == first);
            out = first;
        };
        std::vector<float> a, b;
        run(a);
        run(b);
        CHECK(a == b);
    }
}

TEST_CASE("three-layer net parameter gradients match finite differences") {
    Rng rng(1313);
    Tensor x = randt({4, 5}, rng);
    Tensor w1 = randt({5, 4}, rng);
    Tensor b1 = randt({4}, rng, 0.1f, 0.5f);
    Tensor w2 = randt({4, 3}, rng);
    Tensor b2 = randt({3}, rng, 0.1f, 0.5f);
    Tensor w3 = randt({3, 2}, rng);
    Tensor b3 = randt({2}, rng);
    std::vector<Tensor*> params = {&w1, &b1, &w2, &b2, &w3, &b3};
    for (Tensor* t : params) t->requires_grad = true;
    x.requires_grad = true;
    params.push_back(&x);
    const std::vector<int> labels = {0, 1, 1, 0};

    auto forward_ref = [&] {
        dvec h1 = refnet::ref_relu(
            refnet::ref_linear(to_d(x.data), 4, 5, 4, to_d(w1.data), to_d(b1.data)));
        dvec h2 = refnet::ref_relu(refnet::ref_linear(h1, 4, 4, 3, to_d(w2.data), to_d(b2.data)));
        dvec z = refnet::ref_linear(h2, 4, 3, 2, to_d(w3.data), to_d(b3.data));
        return refnet::ref_softmax_ce(z, 4, 2, labels);
    };

    // Keep every pre-activation away from the relu kink so the probes stay
    // on one side of it.
    {
        dvec h1 = refnet::ref_linear(to_d(x.data), 4, 5, 4, to_d(w1.data), to_d(b1.data));
        dvec h2 = refnet::ref_linear(refnet::ref_relu(h1), 4, 4, 3, to_d(w2.data), to_d(b2.data));
        double min_abs = 1e9;
        for (double v : h1) min_abs = std::min(min_abs, std::abs(v));
        for (double v : h2) min_abs = std::min(min_abs, std::abs(v));
        REQUIRE(min_abs > 5e-3);
    }

    Graph g;
    Value h1 = relu(linear(g.leaf(x), g.leaf(w1), g.leaf(b1)));
    Value h2 = relu(linear(h1, g.leaf(w2), g.leaf(b2)));
    Value loss = softmax_cross_entropy(linear(h2, g.leaf(w3), g.leaf(b3)), labels);
    g.backward(loss);

    auto res = fdcheck::check(params, forward_ref);
    CHECK(res.finite);
    CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("forward outputs stay finite on finite inputs") {
    Rng rng(1414);
    Graph g;
    Tensor x = randt({2, 1, 6, 6}, rng, -3.0f, 3.0f);
    Tensor k = randt({2, 1, 3, 3}, rng, -3.0f, 3.0f);
    BNState st = BNState::init(2);
    Value y = global_mean_pool(maxpool2x2(relu(
        batchnorm(conv2d(g.leaf(x), g.leaf(k), 1, 1), st, BNMode::Train))));
    for (float v : y.tensor().data) CHECK(std::isfinite(v));
}
