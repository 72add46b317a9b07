#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <random>
#include <vector>

#include "kafforge/gradcheck.hpp"
#include "kafforge/layers.hpp"
#include "kafforge/network.hpp"

using namespace kafforge;

namespace {

Tensor randn(const std::vector<std::size_t>& shape, std::uint64_t seed, double scale = 1.0) {
    Tensor t(shape);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, scale);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
    return t;
}

// Six-loop reference convolution (cross-correlation with bias).
Tensor conv_oracle(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t pad,
                   std::size_t stride) {
    const std::size_t batch = x.dim(0), in_ch = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::size_t out_ch = w.dim(0), k = w.dim(2);
    const std::size_t ho = (h + 2 * pad - k) / stride + 1;
    const std::size_t wo = (wd + 2 * pad - k) / stride + 1;
    Tensor y({batch, out_ch, ho, wo});
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t oc = 0; oc < out_ch; ++oc)
            for (std::size_t i = 0; i < ho; ++i)
                for (std::size_t j = 0; j < wo; ++j) {
                    double acc = bias[oc];
                    for (std::size_t ic = 0; ic < in_ch; ++ic)
                        for (std::size_t u = 0; u < k; ++u)
                            for (std::size_t v = 0; v < k; ++v) {
                                const std::ptrdiff_t yy =
                                    static_cast<std::ptrdiff_t>(i * stride + u) -
                                    static_cast<std::ptrdiff_t>(pad);
                                const std::ptrdiff_t xx =
                                    static_cast<std::ptrdiff_t>(j * stride + v) -
                                    static_cast<std::ptrdiff_t>(pad);
                                if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(h) || xx < 0 ||
                                    xx >= static_cast<std::ptrdiff_t>(wd))
                                    continue;
                                acc += w(oc, ic, u, v) * x(b, ic, static_cast<std::size_t>(yy),
                                                           static_cast<std::size_t>(xx));
                            }
                    y(b, oc, i, j) = acc;
                }
    return y;
}

std::size_t count_kaf_neurons(Network& net) {
    std::size_t n = 0;
    for (Layer* layer : net.layers())
        if (auto* kaf = dynamic_cast<KafLayer*>(layer)) n += kaf->kaf_params().neurons();
    return n;
}

} // namespace

TEST_CASE("dense layer basics") {
    std::mt19937_64 rng(1);
    DenseLayer dense(3, 3, rng);

    dense.weight().fill(0.0);
    for (std::size_t i = 0; i < 3; ++i) dense.weight()(i, i) = 1.0;
    dense.bias().fill(0.0);
    Tensor x = randn({2, 3}, 2);
    Tensor y = dense.forward(x, true);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);

    dense.weight().fill(0.0);
    dense.bias().fill(0.25);
    y = dense.forward(x, true);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == 0.25);

    Tensor bad({2, 5});
    CHECK_THROWS_AS(dense.forward(bad, true), DomainError);
}

TEST_CASE("dense gradients match finite differences") {
    std::mt19937_64 rng(3);
    DenseLayer dense(7, 5, rng);
    for (const AuditEntry& e : check_layer(dense, randn({4, 7}, 4), "dense", rng)) {
        INFO(e.name);
        CHECK(e.max_err < 1e-6);
    }
}

TEST_CASE("conv layer against the naive oracle") {
    std::mt19937_64 rng(5);
    Conv2dLayer conv(2, 3, 5, -1, 1, rng); // same padding
    Tensor x = randn({2, 2, 8, 8}, 6);
    const Tensor y = conv.forward(x, true);
    const Tensor ref = conv_oracle(x, conv.weight(), conv.bias(), 2, 1);
    REQUIRE(y.shape() == ref.shape());
    for (std::size_t i = 0; i < y.size(); ++i)
        CHECK(y[i] == Catch::Approx(ref[i]).margin(1e-12));
}

TEST_CASE("conv degenerate filters") {
    std::mt19937_64 rng(7);
    Conv2dLayer conv(1, 1, 5, -1, 1, rng);
    conv.weight().fill(0.0);
    conv.bias().fill(0.0);
    Tensor x = randn({1, 1, 6, 6}, 8);
    Tensor y = conv.forward(x, true);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == 0.0);

    conv.weight()(0, 0, 2, 2) = 1.0; // centered delta = identity with same padding
    y = conv.forward(x, true);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == x[i]);

    Tensor tiny({1, 1, 2, 2});
    Conv2dLayer no_pad(1, 1, 5, 0, 1, rng);
    CHECK_THROWS_AS(no_pad.forward(tiny, true), DomainError);
}

TEST_CASE("conv gradients match finite differences") {
    std::mt19937_64 rng(9);
    Conv2dLayer conv(2, 2, 3, -1, 1, rng);
    for (const AuditEntry& e : check_layer(conv, randn({2, 2, 6, 6}, 10), "conv", rng)) {
        INFO(e.name);
        CHECK(e.max_err < 1e-5);
    }
}

TEST_CASE("max pooling") {
    MaxPool2dLayer pool(2, 2);
    Tensor x({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
    Tensor y = pool.forward(x, true);
    REQUIRE(y.size() == 1);
    CHECK(y[0] == 4.0);

    // tie-break: gradient goes to the first element in row-major order
    Tensor flat = Tensor::full({1, 1, 2, 2}, 3.0);
    y = pool.forward(flat, true);
    CHECK(y[0] == 3.0);
    Tensor up = Tensor::full({1, 1, 1, 1}, 1.0);
    const Tensor dx = pool.backward(up);
    CHECK(dx[0] == 1.0);
    CHECK(dx[1] == 0.0);
    CHECK(dx[2] == 0.0);
    CHECK(dx[3] == 0.0);

    Tensor odd({1, 1, 5, 5});
    CHECK_THROWS_AS(pool.forward(odd, true), DomainError);
}

TEST_CASE("pooling three times: 56 -> 28 -> 14 -> 7") {
    MaxPool2dLayer pool(2, 2);
    Tensor x = randn({1, 1, 56, 56}, 11);
    Tensor y = pool.forward(x, true);
    CHECK(y.dim(2) == 28);
    y = pool.forward(y, true);
    CHECK(y.dim(2) == 14);
    y = pool.forward(y, true);
    CHECK(y.dim(2) == 7);
    CHECK(y.dim(3) == 7);
}

TEST_CASE("maxpool gradient matches finite differences") {
    std::mt19937_64 rng(13);
    MaxPool2dLayer pool(2, 2);
    for (const AuditEntry& e : check_layer(pool, randn({2, 2, 6, 6}, 14), "maxpool", rng)) {
        INFO(e.name);
        CHECK(e.max_err < 1e-5);
    }
}

TEST_CASE("batchnorm normalizes the batch") {
    BatchNormLayer bn(4);
    Tensor x = randn({16, 4}, 15, 3.0);
    const Tensor y = bn.forward(x, true);
    for (std::size_t f = 0; f < 4; ++f) {
        double mean = 0.0, var = 0.0;
        for (std::size_t b = 0; b < 16; ++b) mean += y(b, f);
        mean /= 16.0;
        for (std::size_t b = 0; b < 16; ++b) var += (y(b, f) - mean) * (y(b, f) - mean);
        var /= 16.0;
        CHECK(std::abs(mean) < 1e-6);
        CHECK(std::abs(var - 1.0) < 1e-4);
    }

    bn.gamma().fill(0.0);
    bn.beta().fill(0.75);
    const Tensor z = bn.forward(x, true);
    for (std::size_t i = 0; i < z.size(); ++i) CHECK(z[i] == 0.75);

    Tensor single({1, 4});
    CHECK_THROWS_AS(bn.forward(single, true), DomainError);
    CHECK_NOTHROW(bn.forward(single, false)); // inference has no batch requirement
}

TEST_CASE("batchnorm gradients match finite differences") {
    std::mt19937_64 rng(17);
    BatchNormLayer bn(6);
    for (const AuditEntry& e : check_layer(bn, randn({8, 6}, 18), "batchnorm", rng)) {
        INFO(e.name);
        CHECK(e.max_err < 1e-5);
    }
    BatchNormLayer bn2d(3);
    for (const AuditEntry& e : check_layer(bn2d, randn({4, 3, 5, 5}, 19), "batchnorm2d", rng)) {
        INFO(e.name);
        CHECK(e.max_err < 1e-5);
    }
}

TEST_CASE("dropout") {
    Tensor x = Tensor::full({1, 1000000}, 1.0);

    DropoutLayer off(0.0, 99);
    Tensor y = off.forward(x, true);
    for (std::size_t i = 0; i < 64; ++i) CHECK(y[i] == 1.0);

    DropoutLayer half(0.5, 99);
    y = half.forward(x, false); // inference: identity
    for (std::size_t i = 0; i < 64; ++i) CHECK(y[i] == 1.0);

    y = half.forward(x, true);
    std::size_t survivors = 0;
    bool scaled_ok = true;
    for (std::size_t i = 0; i < y.size(); ++i)
        if (y[i] != 0.0) {
            ++survivors;
            scaled_ok = scaled_ok && y[i] == 2.0; // inverted scaling
        }
    CHECK(scaled_ok);
    const double fraction = static_cast<double>(survivors) / static_cast<double>(y.size());
    CHECK(std::abs(fraction - 0.5) < 0.002);

    // backward replays the recorded mask
    const Tensor up = Tensor::full(x.shape(), 1.0);
    const Tensor dx = half.backward(up);
    for (std::size_t i = 0; i < 4096; ++i) CHECK(dx[i] == y[i]);

    CHECK_THROWS_AS(DropoutLayer(1.0, 1), DomainError);
}

TEST_CASE("relu and elu") {
    ReluLayer relu;
    Tensor x({1, 3}, {-2.0, 0.0, 3.0});
    Tensor y = relu.forward(x, true);
    CHECK(y[0] == 0.0);
    CHECK(y[1] == 0.0);
    CHECK(y[2] == 3.0);
    const Tensor dx = relu.backward(Tensor::full(x.shape(), 1.0));
    CHECK(dx[0] == 0.0);
    CHECK(dx[1] == 0.0); // subgradient 0 at the kink
    CHECK(dx[2] == 1.0);

    std::mt19937_64 rng(21);
    Tensor in = randn({3, 30}, 22);
    for (std::size_t i = 0; i < in.size(); ++i)
        if (std::abs(in[i]) < 1e-3) in[i] += in[i] < 0.0 ? -2e-3 : 2e-3;
    for (const AuditEntry& e : check_layer(relu, in, "relu", rng)) {
        INFO(e.name);
        CHECK(e.max_err < 1e-6);
    }

    EluLayer elu_layer;
    for (const AuditEntry& e : check_layer(elu_layer, randn({3, 30}, 23), "elu", rng)) {
        INFO(e.name);
        CHECK(e.max_err < 1e-6);
    }
}

TEST_CASE("softmax cross entropy") {
    SECTION("uniform logits cost ln C") {
        const std::size_t classes = 23;
        Tensor logits({4, classes});
        Tensor onehot({4, classes});
        for (std::size_t b = 0; b < 4; ++b) onehot(b, b) = 1.0;
        const LossResult res = softmax_cross_entropy(logits, onehot, 0.0);
        CHECK(res.loss == Catch::Approx(std::log(23.0)).epsilon(1e-12));
        const LossResult shifted = softmax_cross_entropy(logits, onehot, 0.5);
        CHECK(shifted.loss == Catch::Approx(std::log(23.0) + 0.5).epsilon(1e-12));
    }

    SECTION("confident correct logit drives the loss to the L2 term") {
        Tensor logits({1, 5});
        logits(0, 2) = 120.0;
        Tensor onehot({1, 5});
        onehot(0, 2) = 1.0;
        const LossResult res = softmax_cross_entropy(logits, onehot, 0.125);
        CHECK(res.loss == Catch::Approx(0.125).margin(1e-12));
    }

    SECTION("softmax rows sum to one") {
        Tensor logits = randn({6, 9}, 24, 4.0);
        Tensor onehot({6, 9});
        for (std::size_t b = 0; b < 6; ++b) onehot(b, b % 9) = 1.0;
        const LossResult res = softmax_cross_entropy(logits, onehot, 0.0);
        // softmax = batch * grad + onehot
        for (std::size_t b = 0; b < 6; ++b) {
            double row = 0.0;
            for (std::size_t c = 0; c < 9; ++c) row += 6.0 * res.grad_logits(b, c) + onehot(b, c);
            CHECK(row == Catch::Approx(1.0).margin(1e-12));
        }
    }

    SECTION("gradient matches finite differences") {
        Tensor logits = randn({3, 5}, 25);
        Tensor onehot({3, 5});
        for (std::size_t b = 0; b < 3; ++b) onehot(b, b + 1) = 1.0;
        const LossResult res = softmax_cross_entropy(logits, onehot, 0.0);
        const double h = 1e-6;
        for (std::size_t i = 0; i < logits.size(); ++i) {
            const double orig = logits[i];
            logits[i] = orig + h;
            const double fp = softmax_cross_entropy(logits, onehot, 0.0).loss;
            logits[i] = orig - h;
            const double fm = softmax_cross_entropy(logits, onehot, 0.0).loss;
            logits[i] = orig;
            CHECK(res.grad_logits[i] == Catch::Approx((fp - fm) / (2.0 * h)).margin(1e-8));
        }
    }

    SECTION("shape mismatch") {
        Tensor logits({2, 3});
        Tensor onehot({2, 4});
        CHECK_THROWS_AS(softmax_cross_entropy(logits, onehot, 0.0), DomainError);
    }
}

TEST_CASE("parameter counting") {
    NetworkSpec spec;
    spec.layers = {FlattenSpec{}, DenseSpec{23}};
    Network net(spec, {1, 1, 1, 100}, 1);
    CHECK(net.param_count() == 2323);

    // KAF vs multi-KAF: the only difference is (M-1) extra mu per neuron.
    const auto count_variant = [](ActKind act) {
        NetworkSpec s = make_mlp({12, 8}, 4, act);
        Network n(s, {1, 1, 1, 6}, 7);
        return std::pair<std::size_t, std::size_t>(n.param_count(), count_kaf_neurons(n));
    };
    const auto [kaf_count, kaf_neurons] = count_variant(ActKind::Kaf);
    const auto [multi_count, multi_neurons] = count_variant(ActKind::MultiKaf);
    REQUIRE(kaf_neurons == multi_neurons);
    CHECK(multi_count - kaf_count == 2 * kaf_neurons);
}

TEST_CASE("the character CNN builder") {
    const NetworkSpec full = build_icr_cnn(NetVariant::ReLU, 1.0);
    Network relu_net(full, {1, 1, 56, 56}, 3);
    std::vector<std::size_t> conv_widths;
    std::vector<std::size_t> dense_widths;
    for (Layer* layer : relu_net.layers()) {
        if (auto* c = dynamic_cast<Conv2dLayer*>(layer)) conv_widths.push_back(c->weight().dim(0));
        if (auto* d = dynamic_cast<DenseLayer*>(layer)) dense_widths.push_back(d->out_features());
    }
    CHECK(conv_widths == std::vector<std::size_t>{42, 28, 28});
    CHECK(dense_widths == std::vector<std::size_t>{100, 23});

    const NetworkSpec scaled = build_icr_cnn(NetVariant::MultiKaf, 0.9);
    Network kaf_net(scaled, {1, 1, 56, 56}, 3);
    conv_widths.clear();
    dense_widths.clear();
    std::size_t batchnorms = 0, dropouts = 0;
    for (Layer* layer : kaf_net.layers()) {
        if (auto* c = dynamic_cast<Conv2dLayer*>(layer)) conv_widths.push_back(c->weight().dim(0));
        if (auto* d = dynamic_cast<DenseLayer*>(layer)) dense_widths.push_back(d->out_features());
        if (dynamic_cast<BatchNormLayer*>(layer)) ++batchnorms;
        if (dynamic_cast<DropoutLayer*>(layer)) ++dropouts;
    }
    CHECK(conv_widths == std::vector<std::size_t>{38, 25, 25});
    CHECK(dense_widths == std::vector<std::size_t>{90, 23});
    CHECK(batchnorms == 4); // one per activation
    CHECK(dropouts == 0);

    // input flows to a 7x7x25 map before the flatten
    Tensor cur = randn({1, 1, 56, 56}, 31, 0.5);
    for (Layer* layer : kaf_net.layers()) {
        if (dynamic_cast<FlattenLayer*>(layer)) break;
        cur = layer->forward(cur, false);
    }
    CHECK(cur.shape() == std::vector<std::size_t>{1, 25, 7, 7});

    // the ReLU variant keeps the original dropout before each linear op
    std::size_t relu_dropouts = 0;
    for (Layer* layer : relu_net.layers())
        if (dynamic_cast<DropoutLayer*>(layer)) ++relu_dropouts;
    CHECK(relu_dropouts == 5);
}

TEST_CASE("network composition failures name the layer") {
    NetworkSpec spec;
    spec.layers = {DenseSpec{4}};
    try {
        Network net(spec, {1, 2, 8, 8}, 1);
        FAIL("expected a composition error");
    } catch (const DomainError& e) {
        CHECK(std::string(e.what()).find("layer 0") != std::string::npos);
    }
}

TEST_CASE("forward passes are deterministic") {
    const NetworkSpec spec = make_cnn({4}, {8}, 3, ActKind::MultiKaf);
    Network net(spec, {2, 1, 8, 8}, 77);
    Tensor x = randn({2, 1, 8, 8}, 78);
    const Tensor a = net.forward(x, true);
    const Tensor b = net.forward(x, true);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);

    // inference output per sample is independent of batch composition
    Tensor first({1, 1, 8, 8});
    std::copy_n(x.data(), first.size(), first.data());
    const Tensor batch_out = net.forward(x, false);
    const Tensor single_out = net.forward(first, false);
    for (std::size_t c = 0; c < 3; ++c) CHECK(batch_out(0, c) == single_out(0, c));
}

TEST_CASE("gradient audit detects a corrupted backward") {
    // dense layer whose weight gradient is nudged by 1e-3
    class TamperedDense : public DenseLayer {
    public:
        using DenseLayer::DenseLayer;
        Tensor backward(const Tensor& upstream) override {
            Tensor dx = DenseLayer::backward(upstream);
            (*params()[0].grad)[0] += 1e-3;
            return dx;
        }
    };
    std::mt19937_64 rng(83);
    TamperedDense bad(5, 4, rng);
    Tensor x = randn({3, 5}, 84);
    bool detected = false;
    for (const AuditEntry& e : check_layer(bad, x, "tampered", rng))
        if (!e.passed()) detected = true;
    CHECK(detected);
}

TEST_CASE("full gradient audit passes") {
    const std::vector<AuditEntry> entries = run_gradient_audit(1);
    for (const AuditEntry& e : entries) {
        INFO(e.name << " err " << e.max_err);
        CHECK(e.passed());
    }
    CHECK(audit_passed(entries));
}

TEST_CASE("checkpoint round trip") {
    const NetworkSpec spec = make_cnn({3}, {6}, 4, ActKind::MultiKaf);
    Network net(spec, {2, 1, 8, 8}, 5);

    // push the running stats away from their init so they are exercised
    Tensor x = randn({4, 1, 8, 8}, 6);
    net.forward(x, true);

    const std::string path = "checkpoint_roundtrip.kafw";
    save_checkpoint(net, path);

    Network other(spec, {2, 1, 8, 8}, 99); // different init
    load_checkpoint(other, path);

    const Tensor probe = randn({2, 1, 8, 8}, 7);
    const Tensor a = net.forward(probe, false);
    const Tensor b = other.forward(probe, false);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);

    std::remove(path.c_str());
}
