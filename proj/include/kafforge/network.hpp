#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "kafforge/errors.hpp"
#include "kafforge/layers.hpp"
#include "kafforge/tensor.hpp"

namespace kafforge {

// ---------------------------------------------------------------------------
// Declarative network description
// ---------------------------------------------------------------------------

struct DenseSpec {
    std::size_t out = 0;
};
struct Conv2dSpec {
    std::size_t out_ch = 0;
    std::size_t k = 5;
    int padding = -1; // -1 = shape-preserving
    std::size_t stride = 1;
};
struct MaxPoolSpec {
    std::size_t k = 2;
    std::size_t stride = 2;
};
struct BatchNormSpec {
    double momentum = 0.9;
    double eps = 1e-5;
};
struct DropoutSpec {
    double p = 0.5;
};
struct FlattenSpec {};

enum class ActKind { ReLU, Elu, Kaf, MultiKaf };

struct ActivationSpec {
    ActKind kind = ActKind::ReLU;
};

using LayerSpec = std::variant<DenseSpec, Conv2dSpec, MaxPoolSpec, BatchNormSpec, DropoutSpec,
                               FlattenSpec, ActivationSpec>;

/// Kernel-activation settings shared by every KAF layer of a network (the
/// dictionary in particular is one network-wide object).
struct KafSettings {
    std::size_t dict_size = 15;
    double lo = -3.0;
    double hi = 3.0;
    double gamma = 0.0; // 0 = derive from the dictionary spacing
    double c = 1.0;
    RqVariant rq_variant = RqVariant::Plus;

    /// The single-kernel family uses the Gaussian; the multi-kernel family
    /// adds the rational quadratic and order-2 polynomial.
    std::vector<KernelSpec> kernel_set(ActKind kind, double dict_delta) const {
        const double g = gamma > 0.0 ? gamma : gamma_rule_of_thumb(dict_delta);
        std::vector<KernelSpec> kernels{KernelSpec::gaussian(g)};
        if (kind == ActKind::MultiKaf) {
            kernels.push_back(KernelSpec::rational_quadratic(c, rq_variant));
            kernels.push_back(KernelSpec::polynomial2());
        }
        return kernels;
    }
};

struct NetworkSpec {
    std::vector<LayerSpec> layers;
    KafSettings kaf;
};

// ---------------------------------------------------------------------------
// Instantiated network
// ---------------------------------------------------------------------------

class Network {
public:
    /// Builds and initializes every layer, threading `input_shape` (with a
    /// placeholder batch axis) through the stack. Composition failures name
    /// the offending layer index.
    Network(const NetworkSpec& spec, std::vector<std::size_t> input_shape, std::uint64_t seed)
        : input_shape_(std::move(input_shape)), seed_(seed) {
        std::mt19937_64 rng(seed);
        std::vector<std::size_t> shape = input_shape_;
        const Dictionary dict = make_dictionary(spec.kaf.dict_size, spec.kaf.lo, spec.kaf.hi);
        for (std::size_t idx = 0; idx < spec.layers.size(); ++idx) {
            std::unique_ptr<Layer> layer;
            try {
                layer = instantiate(spec, spec.layers[idx], shape, dict, rng);
                shape = layer->output_shape(shape);
            } catch (const DomainError& e) {
                throw DomainError("layer " + std::to_string(idx) + ": " + e.what());
            }
            layers_.push_back(std::move(layer));
        }
        output_shape_ = shape;
    }

    Tensor forward(const Tensor& x, bool training) {
        Tensor cur = x;
        for (auto& layer : layers_) cur = layer->forward(cur, training);
        return cur;
    }

    /// Backpropagates through all layers; param gradients accumulate.
    Tensor backward(const Tensor& upstream) {
        Tensor cur = upstream;
        for (auto it = layers_.rbegin(); it != layers_.rend(); ++it)
            cur = (*it)->backward(cur);
        return cur;
    }

    std::vector<ParamRef> params() {
        std::vector<ParamRef> out;
        for (std::size_t i = 0; i < layers_.size(); ++i)
            for (ParamRef p : layers_[i]->params()) {
                p.name = "L" + std::to_string(i) + "." + layers_[i]->name() + "." + p.name;
                out.push_back(p);
            }
        return out;
    }

    std::vector<Tensor*> state_tensors() {
        std::vector<Tensor*> out;
        for (auto& layer : layers_)
            for (Tensor* t : layer->state_tensors()) out.push_back(t);
        return out;
    }

    void zero_grads() {
        for (ParamRef p : params()) p.grad->fill(0.0);
    }

    std::size_t param_count() {
        std::size_t n = 0;
        for (ParamRef p : params()) n += p.value->size();
        return n;
    }

    /// Squared L2 norm over the decaying parameters.
    double l2_norm_sq() {
        double acc = 0.0;
        for (ParamRef p : params())
            if (p.decay)
                for (std::size_t i = 0; i < p.value->size(); ++i)
                    acc += (*p.value)[i] * (*p.value)[i];
        return acc;
    }

    /// Deep copy of all trainable values and running statistics.
    std::vector<Tensor> snapshot_state() {
        std::vector<Tensor> snap;
        for (ParamRef p : params()) snap.push_back(*p.value);
        for (Tensor* t : state_tensors()) snap.push_back(*t);
        return snap;
    }

    void restore_state(const std::vector<Tensor>& snap) {
        std::size_t i = 0;
        for (ParamRef p : params()) *p.value = snap.at(i++);
        for (Tensor* t : state_tensors()) *t = snap.at(i++);
    }

    std::vector<Layer*> layers() {
        std::vector<Layer*> out;
        for (auto& l : layers_) out.push_back(l.get());
        return out;
    }

    const std::vector<std::size_t>& input_shape() const { return input_shape_; }
    const std::vector<std::size_t>& output_shape() const { return output_shape_; }
    std::uint64_t seed() const { return seed_; }

private:
    static std::unique_ptr<Layer> instantiate(const NetworkSpec& spec, const LayerSpec& layer,
                                              const std::vector<std::size_t>& shape,
                                              const Dictionary& dict, std::mt19937_64& rng) {
        if (const auto* d = std::get_if<DenseSpec>(&layer)) {
            if (shape.size() != 2)
                throw DomainError("dense layer needs a flat (batch,features) input, got rank " +
                                  std::to_string(shape.size()));
            return std::make_unique<DenseLayer>(shape[1], d->out, rng);
        }
        if (const auto* c = std::get_if<Conv2dSpec>(&layer)) {
            if (shape.size() != 4)
                throw DomainError("conv layer needs a (batch,ch,H,W) input, got rank " +
                                  std::to_string(shape.size()));
            return std::make_unique<Conv2dLayer>(shape[1], c->out_ch, c->k, c->padding, c->stride,
                                                 rng);
        }
        if (const auto* p = std::get_if<MaxPoolSpec>(&layer))
            return std::make_unique<MaxPool2dLayer>(p->k, p->stride);
        if (const auto* b = std::get_if<BatchNormSpec>(&layer)) {
            if (shape.size() < 2)
                throw DomainError("batchnorm needs a batched input");
            return std::make_unique<BatchNormLayer>(shape[1], b->momentum, b->eps);
        }
        if (const auto* d = std::get_if<DropoutSpec>(&layer))
            return std::make_unique<DropoutLayer>(d->p, rng());
        if (std::get_if<FlattenSpec>(&layer))
            return std::make_unique<FlattenLayer>();
        const auto& act = std::get<ActivationSpec>(layer);
        switch (act.kind) {
        case ActKind::ReLU: return std::make_unique<ReluLayer>();
        case ActKind::Elu: return std::make_unique<EluLayer>();
        case ActKind::Kaf:
        case ActKind::MultiKaf: {
            if (shape.size() < 2)
                throw DomainError("kernel activation needs a batched input");
            return std::make_unique<KafLayer>(init_multikaf(
                shape[1], dict.size(), dict.lo, dict.hi,
                spec.kaf.kernel_set(act.kind, dict.delta)));
        }
        }
        throw DomainError("unknown layer spec");
    }

    std::vector<std::unique_ptr<Layer>> layers_;
    std::vector<std::size_t> input_shape_, output_shape_;
    std::uint64_t seed_;
};

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

struct LossResult {
    double loss = 0.0;
    Tensor grad_logits;
};

/// Batch-averaged softmax cross-entropy. `l2_term` is the caller-supplied
/// regularization value (lambda * ||w||^2), added once to the loss; its
/// gradient is the caller's business.
inline LossResult softmax_cross_entropy(const Tensor& logits, const Tensor& onehot,
                                        double l2_term = 0.0) {
    if (logits.rank() != 2 || !logits.same_shape(onehot))
        throw DomainError("cross entropy needs matching (batch,classes) logits and targets");
    const std::size_t batch = logits.dim(0), classes = logits.dim(1);
    if (batch == 0)
        throw DomainError("cross entropy needs a non-empty batch");

    LossResult res;
    res.grad_logits = Tensor(logits.shape());
    double total = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
        double max_logit = logits(b, 0);
        for (std::size_t c = 1; c < classes; ++c) max_logit = std::max(max_logit, logits(b, c));
        double sum_exp = 0.0;
        for (std::size_t c = 0; c < classes; ++c) sum_exp += std::exp(logits(b, c) - max_logit);
        const double log_sum = max_logit + std::log(sum_exp);
        for (std::size_t c = 0; c < classes; ++c) {
            const double log_p = logits(b, c) - log_sum;
            total -= onehot(b, c) * log_p;
            res.grad_logits(b, c) =
                (std::exp(log_p) - onehot(b, c)) / static_cast<double>(batch);
        }
    }
    res.loss = total / static_cast<double>(batch) + l2_term;
    return res;
}

/// One full training-objective evaluation: forward, cross entropy with the
/// L2 term, backward, plus the 2*lambda*w contribution on decaying
/// parameters. Gradients land in the network's param tensors.
inline double loss_and_grads(Network& net, const Tensor& x, const Tensor& onehot, double lambda,
                             bool training = true, Tensor* input_grad = nullptr) {
    const Tensor logits = net.forward(x, training);
    const LossResult ce = softmax_cross_entropy(logits, onehot, lambda * net.l2_norm_sq());
    net.zero_grads();
    Tensor gin = net.backward(ce.grad_logits);
    if (input_grad) *input_grad = std::move(gin);
    if (lambda != 0.0)
        for (ParamRef p : net.params())
            if (p.decay)
                for (std::size_t i = 0; i < p.value->size(); ++i)
                    (*p.grad)[i] += 2.0 * lambda * (*p.value)[i];
    return ce.loss;
}

// ---------------------------------------------------------------------------
// Builders
// ---------------------------------------------------------------------------

enum class NetVariant { ReLU, Kaf, MultiKaf };

inline ActKind act_kind_of(NetVariant v) {
    switch (v) {
    case NetVariant::ReLU: return ActKind::ReLU;
    case NetVariant::Kaf: return ActKind::Kaf;
    case NetVariant::MultiKaf: return ActKind::MultiKaf;
    }
    throw DomainError("unknown network variant");
}

inline bool is_kernel_act(ActKind kind) {
    return kind == ActKind::Kaf || kind == ActKind::MultiKaf;
}

/// Flatten -> [dense h, (batchnorm), act] per hidden width -> dense classes.
/// Kernel activations get a batchnorm in front; `dropout` > 0 inserts a
/// dropout before every dense layer.
inline NetworkSpec make_mlp(const std::vector<std::size_t>& hidden, std::size_t classes,
                            ActKind act, double dropout = 0.0, KafSettings kaf = {}) {
    NetworkSpec spec;
    spec.kaf = kaf;
    spec.layers.push_back(FlattenSpec{});
    for (std::size_t h : hidden) {
        if (dropout > 0.0) spec.layers.push_back(DropoutSpec{dropout});
        spec.layers.push_back(DenseSpec{h});
        if (is_kernel_act(act)) spec.layers.push_back(BatchNormSpec{});
        spec.layers.push_back(ActivationSpec{act});
    }
    if (dropout > 0.0) spec.layers.push_back(DropoutSpec{dropout});
    spec.layers.push_back(DenseSpec{classes});
    return spec;
}

/// [conv f, (batchnorm), act, pool] per filter count, then flatten and a
/// dense head. Same conventions as make_mlp.
inline NetworkSpec make_cnn(const std::vector<std::size_t>& conv_filters,
                            const std::vector<std::size_t>& dense, std::size_t classes,
                            ActKind act, double dropout = 0.0, KafSettings kaf = {}) {
    NetworkSpec spec;
    spec.kaf = kaf;
    for (std::size_t f : conv_filters) {
        if (dropout > 0.0) spec.layers.push_back(DropoutSpec{dropout});
        spec.layers.push_back(Conv2dSpec{f});
        if (is_kernel_act(act)) spec.layers.push_back(BatchNormSpec{});
        spec.layers.push_back(ActivationSpec{act});
        spec.layers.push_back(MaxPoolSpec{});
    }
    spec.layers.push_back(FlattenSpec{});
    for (std::size_t d : dense) {
        if (dropout > 0.0) spec.layers.push_back(DropoutSpec{dropout});
        spec.layers.push_back(DenseSpec{d});
        if (is_kernel_act(act)) spec.layers.push_back(BatchNormSpec{});
        spec.layers.push_back(ActivationSpec{act});
    }
    if (dropout > 0.0) spec.layers.push_back(DropoutSpec{dropout});
    spec.layers.push_back(DenseSpec{classes});
    return spec;
}

inline std::size_t scale_width(std::size_t width, double scale) {
    return static_cast<std::size_t>(std::floor(width * scale + 0.5)); // round half up
}

/// The 23-class character CNN: conv 42@5x5 -> pool -> two conv 28@5x5 with
/// pools -> dense 100 -> dense 23, widths scaled by `width_scale`. The ReLU
/// variant keeps the original 50% dropout before every linear operation;
/// the kernel variants replace dropout with batchnorm before each
/// activation.
inline NetworkSpec build_icr_cnn(NetVariant variant, double width_scale, KafSettings kaf = {}) {
    if (!(width_scale > 0.0 && width_scale <= 1.0))
        throw DomainError("width scale must be in (0,1]");
    const ActKind act = act_kind_of(variant);
    const double dropout = variant == NetVariant::ReLU ? 0.5 : 0.0;
    return make_cnn({scale_width(42, width_scale), scale_width(28, width_scale),
                     scale_width(28, width_scale)},
                    {scale_width(100, width_scale)}, 23, act, dropout, kaf);
}

// ---------------------------------------------------------------------------
// Checkpoints: magic "KAFW1", then per tensor a u32 rank, u32 dims and the
// raw little-endian doubles, in layer order (trainable parameters first,
// then running statistics, per layer).
// ---------------------------------------------------------------------------

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), 4);
}

inline std::uint32_t read_u32(std::istream& is, const std::string& what) {
    std::uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 4))
        throw FormatError("checkpoint truncated while reading " + what);
    return v;
}

inline std::vector<Tensor*> checkpoint_tensors(Network& net) {
    std::vector<Tensor*> out;
    for (Layer* layer : net.layers()) {
        for (ParamRef p : layer->params()) out.push_back(p.value);
        for (Tensor* t : layer->state_tensors()) out.push_back(t);
    }
    return out;
}

} // namespace detail

inline void save_checkpoint(Network& net, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot write checkpoint: " + path);
    os.write("KAFW1", 5);
    for (Tensor* t : detail::checkpoint_tensors(net)) {
        detail::write_u32(os, static_cast<std::uint32_t>(t->rank()));
        for (std::size_t d : t->shape()) detail::write_u32(os, static_cast<std::uint32_t>(d));
        os.write(reinterpret_cast<const char*>(t->data()),
                 static_cast<std::streamsize>(t->size() * sizeof(double)));
    }
    if (!os) throw FormatError("write failed: " + path);
}

inline void load_checkpoint(Network& net, const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot read checkpoint: " + path);
    char magic[5] = {};
    if (!is.read(magic, 5) || std::string(magic, 5) != "KAFW1")
        throw FormatError("bad checkpoint magic at offset 0: " + path);
    for (Tensor* t : detail::checkpoint_tensors(net)) {
        const std::uint32_t rank = detail::read_u32(is, "tensor rank");
        if (rank != t->rank())
            throw FormatError("checkpoint tensor rank " + std::to_string(rank) +
                              " does not match network (expected " + std::to_string(t->rank()) +
                              ")");
        for (std::size_t a = 0; a < rank; ++a) {
            const std::uint32_t dim = detail::read_u32(is, "tensor dim");
            if (dim != t->dim(a))
                throw FormatError("checkpoint tensor shape mismatch on axis " +
                                  std::to_string(a));
        }
        if (!is.read(reinterpret_cast<char*>(t->data()),
                     static_cast<std::streamsize>(t->size() * sizeof(double))))
            throw FormatError("checkpoint truncated while reading tensor data");
    }
    is.peek();
    if (!is.eof()) throw FormatError("checkpoint has trailing bytes: " + path);
}

} // namespace kafforge
