#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "kafforge/data.hpp"
#include "kafforge/network.hpp"
#include "kafforge/train.hpp"

using namespace kafforge;

namespace {

struct ScalarParam {
    Tensor value{std::vector<std::size_t>{1}};
    Tensor grad{std::vector<std::size_t>{1}};

    std::vector<ParamRef> refs() { return {{"p", &value, &grad, true}}; }
};

Dataset blobs_dataset(std::uint64_t seed = 7) {
    return gen_blobs(500, 2, 8, 0.1, seed);
}

NetworkSpec blobs_mlp() {
    return make_mlp({16, 16}, 2, ActKind::MultiKaf);
}

} // namespace

TEST_CASE("adam step") {
    SECTION("zero gradients leave parameters untouched") {
        ScalarParam p;
        p.value[0] = 0.375;
        AdamState state = AdamState::for_params(p.refs());
        TrainConfig cfg;
        auto refs = p.refs();
        for (int i = 0; i < 10; ++i) adam_step(refs, state, cfg);
        CHECK(p.value[0] == 0.375);
    }

    SECTION("first step with unit gradient moves by about -lr") {
        ScalarParam p;
        p.grad[0] = 1.0;
        AdamState state = AdamState::for_params(p.refs());
        TrainConfig cfg;
        auto refs = p.refs();
        adam_step(refs, state, cfg);
        CHECK(p.value[0] == Catch::Approx(-cfg.lr).margin(1e-6 * cfg.lr + 1e-12));
    }

    SECTION("descends a parabola") {
        ScalarParam p;
        p.value[0] = 1.0;
        AdamState state = AdamState::for_params(p.refs());
        TrainConfig cfg;
        cfg.lr = 0.05;
        auto refs = p.refs();
        for (int i = 0; i < 100; ++i) {
            p.grad[0] = 2.0 * p.value[0]; // d/dp of p^2
            adam_step(refs, state, cfg);
        }
        CHECK(std::abs(p.value[0]) < 1.0);
    }

    SECTION("state shape mismatch") {
        ScalarParam p;
        AdamState empty;
        TrainConfig cfg;
        auto refs = p.refs();
        CHECK_THROWS_AS(adam_step(refs, empty, cfg), DomainError);
    }
}

TEST_CASE("dataset splitting") {
    Dataset ds;
    ds.class_count = 23;
    ds.images = Tensor({23000, 1, 1, 2});
    ds.labels.assign(23000, 0);
    for (std::size_t i = 0; i < 23000; ++i) ds.labels[i] = static_cast<int>(i % 23);

    const DatasetSplits splits = split_dataset(ds, 2500, 2300, 42);
    CHECK(splits.train.size() == 18200);
    CHECK(splits.val.size() == 2500);
    CHECK(splits.test.size() == 2300);

    const DatasetSplits again = split_dataset(ds, 2500, 2300, 42);
    CHECK(splits.train.labels == again.train.labels);
    CHECK(splits.val.labels == again.val.labels);
    CHECK(splits.test.labels == again.test.labels);

    // disjoint and exhaustive, checked through unique sample ids
    Dataset tagged;
    tagged.class_count = 2;
    tagged.images = Tensor({100, 1, 1, 2});
    tagged.labels.assign(100, 0);
    for (std::size_t i = 0; i < 100; ++i) tagged.images[2 * i] = static_cast<double>(i) / 255.0;
    const DatasetSplits parts = split_dataset(tagged, 20, 10, 3);
    std::vector<int> seen(100, 0);
    const auto mark = [&seen](const Dataset& d) {
        for (std::size_t i = 0; i < d.size(); ++i)
            seen[static_cast<std::size_t>(std::lround(d.images[2 * i] * 255.0))] += 1;
    };
    mark(parts.train);
    mark(parts.val);
    mark(parts.test);
    for (int count : seen) CHECK(count == 1);

    const DatasetSplits everything = split_dataset(tagged, 0, 0, 5);
    CHECK(everything.train.size() == 100);

    CHECK_THROWS_AS(split_dataset(tagged, 60, 40, 1), DomainError);
}

TEST_CASE("evaluate") {
    NetworkSpec spec;
    spec.layers = {FlattenSpec{}, DenseSpec{4}};
    Network net(spec, {1, 1, 1, 3}, 1);

    // constant network: zero weights, bias selects class 2
    auto params = net.params();
    params[0].value->fill(0.0);
    params[1].value->fill(0.0);
    (*params[1].value)[2] = 1.0;

    Tensor images({10, 1, 1, 3});
    const std::vector<int> all_twos(10, 2);
    CHECK(evaluate(net, images, all_twos) == 1.0);
    const std::vector<int> all_ones(10, 1);
    CHECK(evaluate(net, images, all_ones) == 0.0);

    // positive rescaling of the logits never changes the accuracy
    std::mt19937_64 rng(9);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = 0; i < params[0].value->size(); ++i)
        (*params[0].value)[i] = normal(rng);
    Tensor probe({50, 1, 1, 3});
    for (std::size_t i = 0; i < probe.size(); ++i) probe[i] = std::abs(normal(rng));
    std::vector<int> labels(50);
    for (int& l : labels) l = static_cast<int>(rng() % 4);
    const double base = evaluate(net, probe, labels);
    for (std::size_t i = 0; i < params[0].value->size(); ++i) (*params[0].value)[i] *= 7.5;
    for (std::size_t i = 0; i < params[1].value->size(); ++i) (*params[1].value)[i] *= 7.5;
    CHECK(evaluate(net, probe, labels) == base);

    const Tensor empty({0, 1, 1, 3});
    CHECK_THROWS_AS(evaluate(net, empty, {}), DomainError);
}

TEST_CASE("untrained constant logits hit chance accuracy on 23 classes") {
    NetworkSpec spec;
    spec.layers = {FlattenSpec{}, DenseSpec{23}};
    Network net(spec, {1, 1, 1, 4}, 2);
    for (ParamRef p : net.params()) p.value->fill(0.0);

    std::mt19937_64 rng(11);
    Tensor images({2300, 1, 1, 4});
    std::vector<int> labels(2300);
    for (int& l : labels) l = static_cast<int>(rng() % 23);
    const double acc = evaluate(net, images, labels);
    CHECK(std::abs(acc - 1.0 / 23.0) < 0.03);
}

TEST_CASE("initial loss of a 23-class network sits near ln C") {
    const NetworkSpec spec = make_mlp({16}, 23, ActKind::MultiKaf);
    Network net(spec, {32, 1, 1, 8}, 5);
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Tensor x({32, 1, 1, 8});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = unit(rng);
    std::vector<int> labels(32);
    for (int& l : labels) l = static_cast<int>(rng() % 23);

    const double lambda = 0.001;
    const double l2 = net.l2_norm_sq();
    const double loss = loss_and_grads(net, x, one_hot_batch(labels, 23), lambda, true);
    CHECK(loss >= 0.9 * std::log(23.0));
    CHECK(loss <= 1.2 * std::log(23.0) + lambda * l2);
}

TEST_CASE("patience stops a run with frozen validation accuracy") {
    const Dataset ds = blobs_dataset();
    const DatasetSplits splits = split_dataset(ds, 150, 150, 1);
    // no batchnorm: with lr = 0 the validation accuracy is frozen outright
    Network net(make_mlp({16, 16}, 2, ActKind::ReLU), {1, 1, 1, 8}, 1);
    TrainConfig cfg;
    cfg.lr = 0.0; // nothing ever improves after the first evaluation
    cfg.max_iters = 5000;
    const TrainReport report = train(net, splits, cfg);
    CHECK(report.iterations <= cfg.patience + cfg.eval_every);
    CHECK(report.best_iteration == cfg.eval_every);
}

TEST_CASE("lr = 0 leaves every parameter bit-identical") {
    const Dataset ds = blobs_dataset();
    const DatasetSplits splits = split_dataset(ds, 150, 150, 1);
    Network net(blobs_mlp(), {1, 1, 1, 8}, 3);
    const std::vector<Tensor> before = net.snapshot_state();
    TrainConfig cfg;
    cfg.lr = 0.0;
    cfg.max_iters = 120;
    cfg.patience = 5000;
    train(net, splits, cfg);
    std::size_t i = 0;
    for (ParamRef p : net.params()) {
        const Tensor& prev = before[i++];
        for (std::size_t j = 0; j < p.value->size(); ++j) CHECK((*p.value)[j] == prev[j]);
    }
}

TEST_CASE("training runs are reproducible") {
    const Dataset ds = blobs_dataset();
    const DatasetSplits splits = split_dataset(ds, 150, 150, 1);
    TrainConfig cfg;
    cfg.max_iters = 150;
    cfg.seed = 9;

    Network a(blobs_mlp(), {1, 1, 1, 8}, 4);
    Network b(blobs_mlp(), {1, 1, 1, 8}, 4);
    const TrainReport ra = train(a, splits, cfg);
    const TrainReport rb = train(b, splits, cfg);
    REQUIRE(ra.loss_curve.size() == rb.loss_curve.size());
    for (std::size_t i = 0; i < ra.loss_curve.size(); ++i) {
        CHECK(ra.loss_curve[i].first == rb.loss_curve[i].first);
        CHECK(ra.loss_curve[i].second == rb.loss_curve[i].second); // bitwise
    }
    REQUIRE(ra.val_curve.size() == rb.val_curve.size());
    for (std::size_t i = 0; i < ra.val_curve.size(); ++i)
        CHECK(ra.val_curve[i].second == rb.val_curve[i].second);
}

TEST_CASE("early stopping restores the best validation state") {
    const Dataset ds = blobs_dataset();
    const DatasetSplits splits = split_dataset(ds, 150, 150, 1);
    Network net(blobs_mlp(), {1, 1, 1, 8}, 5);
    TrainConfig cfg;
    cfg.max_iters = 400;
    const TrainReport report = train(net, splits, cfg);

    double best_seen = 0.0;
    for (const auto& [iter, acc] : report.val_curve) best_seen = std::max(best_seen, acc);
    CHECK(report.best_val_accuracy == best_seen);
    // the restored network reproduces the recorded best accuracy
    CHECK(evaluate(net, splits.val) == report.best_val_accuracy);
    // curves are monotonically increasing in iteration
    for (std::size_t i = 1; i < report.loss_curve.size(); ++i)
        CHECK(report.loss_curve[i].first > report.loss_curve[i - 1].first);
}

TEST_CASE("two-class blobs reach 95 percent validation accuracy") {
    const Dataset ds = blobs_dataset();
    const DatasetSplits splits = split_dataset(ds, 150, 150, 1);
    Network net(blobs_mlp(), {1, 1, 1, 8}, 1);
    TrainConfig cfg;
    cfg.max_iters = 2000;
    const TrainReport report = train(net, splits, cfg);
    CHECK(report.best_val_accuracy >= 0.95);
    CHECK(report.iterations <= 2000);
}

TEST_CASE("non-finite loss aborts with the iteration number") {
    const Dataset ds = blobs_dataset();
    const DatasetSplits splits = split_dataset(ds, 150, 150, 1);
    Network net(blobs_mlp(), {1, 1, 1, 8}, 6);
    (*net.params()[0].value)[0] = std::numeric_limits<double>::quiet_NaN();
    TrainConfig cfg;
    try {
        train(net, splits, cfg);
        FAIL("expected a numeric abort");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("iteration 1") != std::string::npos);
    }
}

TEST_CASE("empty splits are rejected") {
    Network net(blobs_mlp(), {1, 1, 1, 8}, 1);
    DatasetSplits splits;
    TrainConfig cfg;
    CHECK_THROWS_AS(train(net, splits, cfg), DomainError);
}

TEST_CASE("train config validation") {
    TrainConfig cfg;
    cfg.patience = 5;
    cfg.eval_every = 10;
    CHECK_THROWS_AS(cfg.validate(), DomainError);
    TrainConfig zero;
    zero.batch_size = 0;
    CHECK_THROWS_AS(zero.validate(), DomainError);
}
