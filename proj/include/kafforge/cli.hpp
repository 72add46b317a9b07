#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "kafforge/config.hpp"
#include "kafforge/data.hpp"
#include "kafforge/errors.hpp"
#include "kafforge/gradcheck.hpp"
#include "kafforge/network.hpp"
#include "kafforge/train.hpp"

// Command implementations behind the `kafforge` binary. Each returns a
// process exit code: 0 success, 1 audit failure, 2 usage/config error,
// 3 numeric abort.

namespace kafforge {

/// KAFFORGE_THREADS caps internal parallelism. Execution is currently
/// sequential, so any cap is honored trivially; the value is still parsed
/// and surfaced for forward compatibility.
inline int thread_cap() {
    const char* raw = std::getenv("KAFFORGE_THREADS");
    if (!raw) return 1;
    const int v = std::atoi(raw);
    return v > 0 ? v : 1;
}

namespace detail {

template <class Fn>
int guarded(std::ostream& err, Fn&& fn) {
    try {
        return fn();
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return 2;
    } catch (const FormatError& e) {
        err << "format error: " << e.what() << "\n";
        return 2;
    } catch (const DomainError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return 3;
    }
}

inline Dataset dataset_from_config(const ConfigFile& cfg) {
    const bool icrd = cfg.has("data.icrd");
    const bool csv = cfg.has("data.csv");
    const bool generator = cfg.has("data.generator");
    if (static_cast<int>(icrd) + static_cast<int>(csv) + static_cast<int>(generator) != 1)
        throw ConfigError(cfg.origin() +
                          ": exactly one data source required (data.icrd, data.csv or "
                          "data.generator)");
    if (icrd) return load_icrd(cfg.get_string("data.icrd"));
    if (csv)
        return load_csv_dataset(cfg.get_string("data.csv"),
                                static_cast<int>(cfg.get_size("data.classes")),
                                cfg.get_size("data.height"), cfg.get_size("data.width"));
    const std::string name = cfg.get_string("data.generator");
    const std::uint64_t seed = cfg.get_u64("data.seed", 1);
    const std::size_t n_per_class = cfg.get_size("data.n_per_class", 100);
    if (name == "blobs")
        return gen_blobs(n_per_class, static_cast<int>(cfg.get_size("data.classes", 2)),
                         cfg.get_size("data.dim", 8), cfg.get_double("data.spread", 0.1), seed);
    if (name == "glyphs")
        return gen_glyphs(n_per_class, static_cast<int>(cfg.get_size("data.classes", 8)),
                          cfg.get_size("data.height", 16), cfg.get_size("data.width", 16),
                          cfg.get_double("data.noise", 0.02), seed,
                          static_cast<int>(cfg.get_int("data.max_shift", 2)));
    throw ConfigError("unknown data.generator '" + name + "' (blobs, glyphs)");
}

inline Network load_network_beside_checkpoint(const std::string& checkpoint_path) {
    const std::filesystem::path ckpt(checkpoint_path);
    const std::filesystem::path cfg_path = ckpt.parent_path() / "network.cfg";
    if (!std::filesystem::exists(cfg_path))
        throw ConfigError("no network.cfg next to checkpoint '" + checkpoint_path +
                          "' (expected " + cfg_path.string() + ")");
    Network net = network_from_saved_config(cfg_path.string());
    load_checkpoint(net, checkpoint_path);
    return net;
}

inline KafLayer& kaf_layer_at(Network& net, std::size_t layer_index) {
    const std::vector<Layer*> layers = net.layers();
    if (layer_index >= layers.size())
        throw DomainError("layer index " + std::to_string(layer_index) + " out of range (" +
                          std::to_string(layers.size()) + " layers)");
    auto* kaf = dynamic_cast<KafLayer*>(layers[layer_index]);
    if (!kaf)
        throw DomainError("layer " + std::to_string(layer_index) + " (" +
                          layers[layer_index]->name() + ") is not a kernel activation");
    return *kaf;
}

} // namespace detail

/// Trains per the run configuration and writes loss.csv, val.csv,
/// report.txt, checkpoint.kafw and network.cfg into output.dir.
inline int cmd_train(const std::string& config_path, std::ostream& out = std::cout,
                     std::ostream& err = std::cerr) {
    return detail::guarded(err, [&]() {
        const ConfigFile cfg = ConfigFile::parse_file(config_path);

        Dataset ds = detail::dataset_from_config(cfg);
        ds.validate();
        if (ds.size() == 0) throw ConfigError("dataset is empty");

        const TrainConfig tc = train_config_from_config(cfg);
        const std::size_t n_val = cfg.get_size("train.val_size", ds.size() / 5);
        const std::size_t n_test = cfg.get_size("train.test_size", ds.size() / 10);
        const DatasetSplits splits = split_dataset(ds, n_val, n_test, tc.seed);

        const NetworkSpec spec =
            network_spec_from_config(cfg, static_cast<std::size_t>(ds.class_count));
        const std::uint64_t net_seed = cfg.get_u64("network.seed", tc.seed);
        const std::string out_dir = cfg.get_string("output.dir");
        cfg.fail_on_unused();

        std::vector<std::size_t> input_shape{1};
        for (std::size_t axis = 1; axis < ds.images.rank(); ++axis)
            input_shape.push_back(ds.images.dim(axis));
        Network net(spec, input_shape, net_seed);

        const TrainReport report = train(net, splits, tc);

        std::filesystem::create_directories(out_dir);
        const std::filesystem::path dir(out_dir);
        write_loss_csv(report, (dir / "loss.csv").string());
        write_val_csv(report, (dir / "val.csv").string());
        save_checkpoint(net, (dir / "checkpoint.kafw").string());
        {
            std::ofstream net_cfg(dir / "network.cfg");
            write_network_config(net_cfg, spec, input_shape, net_seed);
        }
        {
            std::ofstream rep(dir / "report.txt");
            rep << "parameters: " << net.param_count() << "\n";
            rep << "iterations: " << report.iterations << "\n";
            rep << "best_iteration: " << report.best_iteration << "\n";
            rep << "best_val_accuracy: " << format_double(report.best_val_accuracy) << "\n";
            rep << "test_accuracy: " << format_double(report.test_accuracy) << "\n";
            rep << "test_accuracy_at_stop: " << format_double(report.test_accuracy_at_stop)
                << "\n";
            rep << "wall_time_sec: " << format_double(report.wall_time_sec) << "\n";
        }

        out << "trained " << net.param_count() << " parameters for " << report.iterations
            << " iterations\n";
        out << "best validation accuracy " << report.best_val_accuracy << " at iteration "
            << report.best_iteration << "\n";
        out << "test accuracy " << report.test_accuracy << " (at stop "
            << report.test_accuracy_at_stop << ")\n";
        out << "outputs in " << out_dir << "\n";
        return 0;
    });
}

/// Runs the finite-difference audit; prints one line per audited gradient.
inline int cmd_gradcheck(std::uint64_t seed, std::ostream& out = std::cout,
                         std::ostream& err = std::cerr) {
    return detail::guarded(err, [&]() {
        const std::vector<AuditEntry> entries = run_gradient_audit(seed);
        bool ok = true;
        for (const AuditEntry& e : entries) {
            out << (e.passed() ? "ok   " : "FAIL ") << e.name << "  max rel err "
                << format_double(e.max_err) << "  (tolerance " << e.tolerance << ")\n";
            ok = ok && e.passed();
        }
        if (!ok) {
            out << "gradient audit FAILED\n";
            return 1;
        }
        out << "gradient audit passed (" << entries.size() << " checks)\n";
        return 0;
    });
}

/// Samples one neuron's activation on [lo,hi] and writes CSV rows
/// s, g(s), then one column per base kernel contribution.
inline int cmd_plot_activation(const std::string& checkpoint, std::size_t layer,
                               std::size_t neuron, double lo, double hi, std::size_t steps,
                               const std::string& out_path = "", std::ostream& out = std::cout,
                               std::ostream& err = std::cerr) {
    return detail::guarded(err, [&]() {
        if (steps == 0) throw DomainError("steps must be positive");
        if (!(lo <= hi)) throw DomainError("range requires lo <= hi");
        Network net = detail::load_network_beside_checkpoint(checkpoint);
        const KafLayer& kaf = detail::kaf_layer_at(net, layer);
        const MultiKafParams& params = kaf.kaf_params();
        if (neuron >= params.neurons())
            throw DomainError("neuron " + std::to_string(neuron) + " out of range (" +
                              std::to_string(params.neurons()) + " neurons)");

        std::ofstream file;
        if (!out_path.empty()) {
            file.open(out_path);
            if (!file) throw FormatError("cannot write " + out_path);
        }
        std::ostream& os = out_path.empty() ? out : file;

        os << "s,g";
        for (std::size_t m = 0; m < params.kernel_count(); ++m)
            os << ",k" << m + 1 << "_" << kernel_name(params.kernels[m]);
        os << "\n";
        for (std::size_t i = 0; i < steps; ++i) {
            const double s =
                steps == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) /
                                           static_cast<double>(steps - 1);
            double g = 0.0;
            for (std::size_t d = 0; d < params.dict_size(); ++d) {
                double mixed = 0.0;
                for (std::size_t m = 0; m < params.kernel_count(); ++m)
                    mixed += params.mu(neuron, m) *
                             eval_kernel(params.kernels[m], s, params.dictionary.points[d]);
                g += params.alpha(neuron, d) * mixed;
            }
            os << format_double(s) << ',' << format_double(g);
            for (double part : activation_components(params, neuron, s))
                os << ',' << format_double(part);
            os << "\n";
        }
        return 0;
    });
}

/// Writes the kernel weights of sampled neurons of one activation layer as
/// CSV rows neuron, mu_1..mu_M.
inline int cmd_export_mu(const std::string& checkpoint, std::size_t layer, std::size_t n_sample,
                         std::uint64_t seed, const std::string& out_path = "",
                         std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    return detail::guarded(err, [&]() {
        if (n_sample == 0) throw DomainError("sample count must be positive");
        Network net = detail::load_network_beside_checkpoint(checkpoint);
        const KafLayer& kaf = detail::kaf_layer_at(net, layer);
        const MultiKafParams& params = kaf.kaf_params();

        std::vector<std::size_t> neurons(params.neurons());
        std::iota(neurons.begin(), neurons.end(), 0);
        std::mt19937_64 rng(seed);
        std::shuffle(neurons.begin(), neurons.end(), rng);
        neurons.resize(std::min(n_sample, neurons.size()));

        std::ofstream file;
        if (!out_path.empty()) {
            file.open(out_path);
            if (!file) throw FormatError("cannot write " + out_path);
        }
        std::ostream& os = out_path.empty() ? out : file;

        os << "neuron";
        for (std::size_t m = 0; m < params.kernel_count(); ++m) os << ",mu_" << m + 1;
        os << "\n";
        for (std::size_t n : neurons) {
            os << n;
            for (std::size_t m = 0; m < params.kernel_count(); ++m)
                os << ',' << format_double(params.mu(n, m));
            os << "\n";
        }
        return 0;
    });
}

struct GeneratorArgs {
    std::string name;
    std::size_t n_per_class = 100;
    int classes = 0; // 0 = generator default
    std::size_t dim = 8;
    double spread = 0.1;
    double noise = 0.02;
    std::size_t height = 16;
    std::size_t width = 16;
    std::uint64_t seed = 1;
    int max_shift = 2;
};

/// Generates a synthetic dataset, writes it as ICRD, and prints the size
/// and per-class histogram.
inline int cmd_gen_data(const GeneratorArgs& args, const std::string& out_path,
                        std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    return detail::guarded(err, [&]() {
        Dataset ds;
        if (args.name == "blobs")
            ds = gen_blobs(args.n_per_class, args.classes > 0 ? args.classes : 2, args.dim,
                           args.spread, args.seed);
        else if (args.name == "glyphs")
            ds = gen_glyphs(args.n_per_class, args.classes > 0 ? args.classes : 8, args.height,
                            args.width, args.noise, args.seed, args.max_shift);
        else
            throw ConfigError("unknown generator '" + args.name + "' (blobs, glyphs)");

        save_icrd(ds, out_path);
        out << out_path << ": " << ds.size() << " samples, " << ds.class_count << " classes, "
            << std::filesystem::file_size(out_path) << " bytes\n";
        std::vector<std::size_t> histogram(static_cast<std::size_t>(ds.class_count), 0);
        for (int label : ds.labels) histogram[static_cast<std::size_t>(label)] += 1;
        for (std::size_t c = 0; c < histogram.size(); ++c)
            out << "class " << c << ": " << histogram[c] << "\n";
        return 0;
    });
}

} // namespace kafforge
