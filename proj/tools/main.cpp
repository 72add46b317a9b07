// kafforge: train and inspect networks with multi-kernel trainable
// activations.

#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "kafforge/cli.hpp"

namespace {

bool parse_range(const std::string& text, double& lo, double& hi) {
    const std::size_t colon = text.find(':');
    if (colon == std::string::npos) return false;
    try {
        std::size_t used = 0;
        lo = std::stod(text.substr(0, colon), &used);
        if (used != colon) return false;
        hi = std::stod(text.substr(colon + 1), &used);
        return used == text.size() - colon - 1;
    } catch (const std::exception&) {
        return false;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-kernel activation networks: training, auditing and figure export"};
    app.require_subcommand(1);
    int rc = 0;

    if (kafforge::thread_cap() > 1)
        std::cerr << "note: KAFFORGE_THREADS=" << kafforge::thread_cap()
                  << " accepted; execution is single-threaded\n";

    // train
    std::string train_config;
    CLI::App* train = app.add_subcommand("train", "train a network from a run config");
    train->add_option("config", train_config, "run configuration file")->required();
    train->callback([&]() { rc = kafforge::cmd_train(train_config); });

    // gradcheck
    std::uint64_t gc_seed = 1;
    CLI::App* gradcheck =
        app.add_subcommand("gradcheck", "finite-difference audit of all backward passes");
    gradcheck->add_option("--seed", gc_seed, "audit seed");
    gradcheck->callback([&]() { rc = kafforge::cmd_gradcheck(gc_seed); });

    // plot-act
    std::string pa_ckpt, pa_range = "-3:3", pa_out;
    std::size_t pa_layer = 0, pa_neuron = 0, pa_steps = 201;
    CLI::App* plot = app.add_subcommand("plot-act", "sample one activation as CSV");
    plot->add_option("checkpoint", pa_ckpt, "checkpoint file (network.cfg beside it)")
        ->required();
    plot->add_option("--layer", pa_layer, "layer index")->required();
    plot->add_option("--neuron", pa_neuron, "neuron index")->required();
    plot->add_option("--range", pa_range, "sampling range lo:hi (default -3:3)");
    plot->add_option("--steps", pa_steps, "sample count (default 201)");
    plot->add_option("--out", pa_out, "output CSV (default stdout)");
    plot->callback([&]() {
        double lo = 0.0, hi = 0.0;
        if (!parse_range(pa_range, lo, hi)) {
            std::cerr << "error: --range expects lo:hi, got '" << pa_range << "'\n";
            rc = 2;
            return;
        }
        rc = kafforge::cmd_plot_activation(pa_ckpt, pa_layer, pa_neuron, lo, hi, pa_steps,
                                           pa_out);
    });

    // export-mu
    std::string em_ckpt, em_out;
    std::size_t em_layer = 0, em_sample = 25;
    std::uint64_t em_seed = 1;
    CLI::App* export_mu =
        app.add_subcommand("export-mu", "kernel weights of sampled neurons as CSV");
    export_mu->add_option("checkpoint", em_ckpt, "checkpoint file (network.cfg beside it)")
        ->required();
    export_mu->add_option("--layer", em_layer, "layer index")->required();
    export_mu->add_option("--sample", em_sample, "neurons to sample (default 25)");
    export_mu->add_option("--seed", em_seed, "sampling seed");
    export_mu->add_option("--out", em_out, "output CSV (default stdout)");
    export_mu->callback(
        [&]() { rc = kafforge::cmd_export_mu(em_ckpt, em_layer, em_sample, em_seed, em_out); });

    // gen-data
    kafforge::GeneratorArgs gen;
    std::string gen_out;
    CLI::App* gen_data = app.add_subcommand("gen-data", "write a synthetic dataset as ICRD");
    gen_data->add_option("generator", gen.name, "blobs or glyphs")->required();
    gen_data->add_option("out", gen_out, "output .icrd path")->required();
    gen_data->add_option("--n-per-class", gen.n_per_class, "samples per class (default 100)");
    gen_data->add_option("--classes", gen.classes, "class count");
    gen_data->add_option("--dim", gen.dim, "blobs: vector dimension (default 8)");
    gen_data->add_option("--spread", gen.spread, "blobs: cluster stddev (default 0.1)");
    gen_data->add_option("--noise", gen.noise, "glyphs: salt-and-pepper rate (default 0.02)");
    gen_data->add_option("--height", gen.height, "glyphs: canvas height (default 16)");
    gen_data->add_option("--width", gen.width, "glyphs: canvas width (default 16)");
    gen_data->add_option("--max-shift", gen.max_shift, "glyphs: shift range (default 2)");
    gen_data->add_option("--seed", gen.seed, "generator seed (default 1)");
    gen_data->callback([&]() { rc = kafforge::cmd_gen_data(gen, gen_out); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2; // usage problems map to exit 2
    }
    return rc;
}
