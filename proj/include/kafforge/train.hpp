#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "kafforge/data.hpp"
#include "kafforge/errors.hpp"
#include "kafforge/network.hpp"
#include "kafforge/tensor.hpp"

namespace kafforge {

struct TrainConfig {
    double lambda = 0.001;
    std::size_t batch_size = 32;
    std::size_t eval_every = 10; // iterations between validation passes
    std::size_t patience = 250;  // iterations without improvement before stopping
    double lr = 0.001;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t max_iters = 10000;
    std::uint64_t seed = 1;

    void validate() const {
        if (lambda < 0.0 || lr < 0.0) throw DomainError("lambda and lr must be non-negative");
        if (batch_size == 0 || eval_every == 0 || patience == 0 || max_iters == 0)
            throw DomainError("batch size, eval interval, patience and max iters must be positive");
        if (patience < eval_every) throw DomainError("patience must be >= eval interval");
        if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0))
            throw DomainError("Adam betas must be in [0,1)");
        if (!(adam_eps > 0.0)) throw DomainError("Adam eps must be positive");
    }
};

/// Per-parameter first/second moment accumulators.
struct AdamState {
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    long t = 0;

    static AdamState for_params(const std::vector<ParamRef>& params) {
        AdamState s;
        for (const ParamRef& p : params) {
            s.m.emplace_back(p.value->shape());
            s.v.emplace_back(p.value->shape());
        }
        return s;
    }
};

/// One bias-corrected Adam update over all parameters.
inline void adam_step(const std::vector<ParamRef>& params, AdamState& state,
                      const TrainConfig& cfg) {
    if (state.m.size() != params.size() || state.v.size() != params.size())
        throw DomainError("Adam state does not match the parameter list");
    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& value = *params[i].value;
        const Tensor& grad = *params[i].grad;
        Tensor& m = state.m[i];
        Tensor& v = state.v[i];
        if (!value.same_shape(grad) || !value.same_shape(m))
            throw DomainError("Adam update shape mismatch on " + params[i].name);
        for (std::size_t j = 0; j < value.size(); ++j) {
            m[j] = cfg.adam_beta1 * m[j] + (1.0 - cfg.adam_beta1) * grad[j];
            v[j] = cfg.adam_beta2 * v[j] + (1.0 - cfg.adam_beta2) * grad[j] * grad[j];
            const double m_hat = m[j] / bc1;
            const double v_hat = v[j] / bc2;
            value[j] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
        }
    }
}

struct DatasetSplits {
    Dataset train;
    Dataset val;
    Dataset test;
};

/// Seeded shuffle, then partition into train / val / test (in that order of
/// the shuffled index). Splits are disjoint and exhaustive.
inline DatasetSplits split_dataset(const Dataset& ds, std::size_t n_val, std::size_t n_test,
                                   std::uint64_t seed) {
    const std::size_t n = ds.size();
    if (n_val + n_test >= n)
        throw DomainError("split sizes leave no training data (" + std::to_string(n) +
                          " samples, " + std::to_string(n_val) + " val, " +
                          std::to_string(n_test) + " test)");
    std::vector<std::size_t> index(n);
    std::iota(index.begin(), index.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(index.begin(), index.end(), rng);

    const std::size_t n_train = n - n_val - n_test;
    DatasetSplits splits;
    splits.train = subset(ds, {index.begin(), index.begin() + n_train});
    splits.val = subset(ds, {index.begin() + n_train, index.begin() + n_train + n_val});
    splits.test = subset(ds, {index.begin() + n_train + n_val, index.end()});
    return splits;
}

/// Fraction of samples whose argmax logit matches the label; argmax ties
/// break toward the lowest class index. Inference mode, batch-composition
/// independent.
inline double evaluate(Network& net, const Tensor& images, const std::vector<int>& labels) {
    const std::size_t n = labels.size();
    if (n == 0) throw DomainError("evaluate needs a non-empty set");
    if (images.rank() < 2 || images.dim(0) != n)
        throw DomainError("evaluate needs one image per label");

    const std::size_t stride = images.size() / n;
    const std::size_t chunk = 256;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < n; start += chunk) {
        const std::size_t count = std::min(chunk, n - start);
        std::vector<std::size_t> shape = images.shape();
        shape[0] = count;
        Tensor batch(shape);
        std::copy_n(images.data() + start * stride, count * stride, batch.data());
        const Tensor logits = net.forward(batch, false);
        const std::size_t classes = logits.dim(1);
        for (std::size_t b = 0; b < count; ++b) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < classes; ++c)
                if (logits(b, c) > logits(b, best)) best = c;
            if (static_cast<int>(best) == labels[start + b]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

inline double evaluate(Network& net, const Dataset& ds) {
    return evaluate(net, ds.images, ds.labels);
}

struct TrainReport {
    std::vector<std::pair<std::size_t, double>> loss_curve; // (iteration, minibatch loss)
    std::vector<std::pair<std::size_t, double>> val_curve;  // (iteration, accuracy)
    std::size_t best_iteration = 0;
    double best_val_accuracy = 0.0;
    double test_accuracy = 0.0;         // best checkpoint, after restore
    double test_accuracy_at_stop = 0.0; // parameters as of the final iteration
    std::size_t iterations = 0;
    double wall_time_sec = 0.0;
};

/// Minibatch training with periodic validation and patience-based early
/// stopping. Improvement means strictly greater validation accuracy. The
/// best-validation state (parameters and running statistics) is restored
/// before the final test evaluation.
inline TrainReport train(Network& net, const DatasetSplits& splits, const TrainConfig& cfg) {
    cfg.validate();
    if (splits.train.size() == 0 || splits.val.size() == 0)
        throw DomainError("training needs non-empty train and validation splits");
    if (net.output_shape().size() != 2 ||
        net.output_shape()[1] != static_cast<std::size_t>(splits.train.class_count))
        throw DomainError("network emits " + std::to_string(net.output_shape()[1]) +
                          " logits for " + std::to_string(splits.train.class_count) + " classes");

    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t n_train = splits.train.size();
    const std::size_t stride = splits.train.images.size() / n_train;
    const int classes = splits.train.class_count;

    std::vector<ParamRef> params = net.params();
    AdamState adam = AdamState::for_params(params);
    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(n_train);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t cursor = 0;

    TrainReport report;
    report.best_val_accuracy = -1.0;
    std::vector<Tensor> best_state = net.snapshot_state();
    bool any_eval = false;

    std::vector<std::size_t> batch_shape = splits.train.images.shape();
    const std::size_t batch_size = std::min(cfg.batch_size, n_train);
    batch_shape[0] = batch_size;
    Tensor batch(batch_shape);
    std::vector<int> batch_labels(batch_size);

    for (std::size_t iter = 1; iter <= cfg.max_iters; ++iter) {
        if (cursor + batch_size > n_train) { // new epoch, drop the short tail
            std::shuffle(order.begin(), order.end(), rng);
            cursor = 0;
        }
        for (std::size_t b = 0; b < batch_size; ++b) {
            const std::size_t src = order[cursor + b];
            batch_labels[b] = splits.train.labels[src];
            std::copy_n(splits.train.images.data() + src * stride, stride,
                        batch.data() + b * stride);
        }
        cursor += batch_size;

        const Tensor targets = one_hot_batch(batch_labels, classes);
        const double loss = loss_and_grads(net, batch, targets, cfg.lambda, true);
        if (!std::isfinite(loss))
            throw NumericError("non-finite training loss at iteration " + std::to_string(iter));
        report.loss_curve.emplace_back(iter, loss);
        adam_step(params, adam, cfg);
        report.iterations = iter;

        if (iter % cfg.eval_every == 0) {
            const double acc = evaluate(net, splits.val);
            report.val_curve.emplace_back(iter, acc);
            if (acc > report.best_val_accuracy) {
                report.best_val_accuracy = acc;
                report.best_iteration = iter;
                best_state = net.snapshot_state();
                any_eval = true;
            } else if (iter - report.best_iteration >= cfg.patience) {
                break;
            }
        }
    }

    if (splits.test.size() > 0) report.test_accuracy_at_stop = evaluate(net, splits.test);
    if (any_eval) net.restore_state(best_state);
    if (splits.test.size() > 0) report.test_accuracy = evaluate(net, splits.test);

    report.wall_time_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

// ---------------------------------------------------------------------------
// Curve export
// ---------------------------------------------------------------------------

/// Decimal with enough digits to round-trip a double.
inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline void write_curve_csv(const std::vector<std::pair<std::size_t, double>>& curve,
                            const std::string& value_header, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot write csv: " + path);
    os << "iteration," << value_header << "\n";
    for (const auto& [iteration, value] : curve)
        os << iteration << ',' << format_double(value) << "\n";
    if (!os) throw FormatError("write failed: " + path);
}

inline void write_loss_csv(const TrainReport& report, const std::string& path) {
    write_curve_csv(report.loss_curve, "loss", path);
}

inline void write_val_csv(const TrainReport& report, const std::string& path) {
    write_curve_csv(report.val_curve, "accuracy", path);
}

} // namespace kafforge
