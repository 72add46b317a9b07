#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "kafforge/errors.hpp"
#include "kafforge/network.hpp"
#include "kafforge/train.hpp"

// Flat `section.key = value` configuration files: one assignment per line,
// '#' comments, no nesting. Keys must be consumed by the reader; leftovers
// are reported as unknown keys so typos never pass silently.

namespace kafforge {

class ConfigFile {
public:
    static ConfigFile parse_string(const std::string& text, std::string origin = "<config>") {
        ConfigFile cfg;
        cfg.origin_ = std::move(origin);
        std::istringstream is(text);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(is, line)) {
            ++line_no;
            const std::size_t hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const std::string trimmed = trim(line);
            if (trimmed.empty()) continue;
            const std::size_t eq = trimmed.find('=');
            if (eq == std::string::npos)
                throw ConfigError(cfg.where(line_no) + "expected 'key = value', got '" +
                                  trimmed + "'");
            const std::string key = trim(trimmed.substr(0, eq));
            const std::string value = trim(trimmed.substr(eq + 1));
            if (key.empty())
                throw ConfigError(cfg.where(line_no) + "empty key");
            const auto [it, inserted] = cfg.entries_.emplace(key, Entry{value, line_no, false});
            if (!inserted)
                throw ConfigError(cfg.where(line_no) + "duplicate key '" + key +
                                  "' (first set on line " + std::to_string(it->second.line) +
                                  ")");
        }
        return cfg;
    }

    static ConfigFile parse_file(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw ConfigError("cannot read config file: " + path);
        std::ostringstream text;
        text << is.rdbuf();
        return parse_string(text.str(), path);
    }

    bool has(const std::string& key) const { return entries_.count(key) != 0; }

    std::string get_string(const std::string& key) const {
        const auto it = entries_.find(key);
        if (it == entries_.end())
            throw ConfigError(origin_ + ": missing required key '" + key + "'");
        it->second.used = true;
        return it->second.value;
    }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        return has(key) ? get_string(key) : fallback;
    }

    double get_double(const std::string& key) const {
        return parse_double(key, get_string(key));
    }
    double get_double(const std::string& key, double fallback) const {
        return has(key) ? get_double(key) : fallback;
    }

    std::int64_t get_int(const std::string& key) const {
        const std::string raw = get_string(key);
        const double v = parse_double(key, raw);
        const auto n = static_cast<std::int64_t>(v);
        if (static_cast<double>(n) != v)
            throw ConfigError(where_key(key) + "'" + raw + "' is not an integer");
        return n;
    }
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
        return has(key) ? get_int(key) : fallback;
    }

    std::size_t get_size(const std::string& key) const {
        const std::int64_t v = get_int(key);
        if (v < 0) throw ConfigError(where_key(key) + "must be non-negative");
        return static_cast<std::size_t>(v);
    }
    std::size_t get_size(const std::string& key, std::size_t fallback) const {
        return has(key) ? get_size(key) : fallback;
    }

    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
        if (!has(key)) return fallback;
        const std::int64_t v = get_int(key);
        if (v < 0) throw ConfigError(where_key(key) + "must be non-negative");
        return static_cast<std::uint64_t>(v);
    }

    std::vector<std::size_t> get_size_list(const std::string& key) const {
        const std::string raw = get_string(key);
        std::vector<std::size_t> out;
        std::istringstream is(raw);
        std::string part;
        while (std::getline(is, part, ',')) {
            const std::string token = trim(part);
            if (token.empty())
                throw ConfigError(where_key(key) + "empty list element in '" + raw + "'");
            const double v = parse_double(key, token);
            const auto n = static_cast<std::int64_t>(v);
            if (static_cast<double>(n) != v || n <= 0)
                throw ConfigError(where_key(key) + "'" + token +
                                  "' is not a positive integer");
            out.push_back(static_cast<std::size_t>(n));
        }
        if (out.empty()) throw ConfigError(where_key(key) + "list is empty");
        return out;
    }

    /// Keys `prefix0, prefix1, ...` in numeric order; gaps are an error.
    std::vector<std::string> indexed_values(const std::string& prefix) const {
        std::vector<std::string> out;
        for (std::size_t i = 0;; ++i) {
            const std::string key = prefix + std::to_string(i);
            if (!has(key)) break;
            out.push_back(get_string(key));
        }
        for (const auto& [key, entry] : entries_)
            if (key.rfind(prefix, 0) == 0 && !entry.used)
                throw ConfigError(where(entry.line) + "'" + key +
                                  "' does not continue the 0-based sequence '" + prefix + "N'");
        return out;
    }

    /// Rejects keys nothing ever read (typo protection).
    void fail_on_unused() const {
        for (const auto& [key, entry] : entries_)
            if (!entry.used)
                throw ConfigError(where(entry.line) + "unknown key '" + key + "'");
    }

    const std::string& origin() const { return origin_; }

private:
    struct Entry {
        std::string value;
        std::size_t line = 0;
        mutable bool used = false;
    };

    static std::string trim(const std::string& s) {
        const auto begin = s.find_first_not_of(" \t\r");
        if (begin == std::string::npos) return "";
        const auto end = s.find_last_not_of(" \t\r");
        return s.substr(begin, end - begin + 1);
    }

    std::string where(std::size_t line) const {
        return origin_ + " line " + std::to_string(line) + ": ";
    }

    std::string where_key(const std::string& key) const {
        const auto it = entries_.find(key);
        return it == entries_.end() ? origin_ + ": key '" + key + "': "
                                    : where(it->second.line) + "key '" + key + "': ";
    }

    double parse_double(const std::string& key, const std::string& raw) const {
        try {
            std::size_t used = 0;
            const double v = std::stod(raw, &used);
            if (used != raw.size()) throw std::invalid_argument(raw);
            return v;
        } catch (const std::exception&) {
            throw ConfigError(where_key(key) + "'" + raw + "' is not a number");
        }
    }

    std::map<std::string, Entry> entries_;
    std::string origin_;
};

// ---------------------------------------------------------------------------
// Layer lines: a NetworkSpec serializes as `layer.N = <type> [args...]`.
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_tokens(const std::string& text) {
    std::istringstream is(text);
    std::vector<std::string> tokens;
    std::string tok;
    while (is >> tok) tokens.push_back(tok);
    return tokens;
}

// Optional key=value arguments after the positional ones.
inline double keyed_value(const std::vector<std::string>& tokens, std::size_t from,
                          const std::string& name, double fallback) {
    for (std::size_t i = from; i < tokens.size(); ++i)
        if (tokens[i].rfind(name + "=", 0) == 0) {
            const std::string raw = tokens[i].substr(name.size() + 1);
            try {
                std::size_t used = 0;
                const double v = std::stod(raw, &used);
                if (used != raw.size()) throw std::invalid_argument(raw);
                return v;
            } catch (const std::exception&) {
                throw ConfigError("layer argument '" + tokens[i] + "' is not numeric");
            }
        }
    return fallback;
}

} // namespace detail

inline LayerSpec parse_layer_line(const std::string& text) {
    const std::vector<std::string> tokens = detail::split_tokens(text);
    if (tokens.empty()) throw ConfigError("empty layer line");
    const std::string& kind = tokens[0];
    const auto positive = [&](std::size_t index, const std::string& what) {
        if (tokens.size() <= index)
            throw ConfigError("layer '" + kind + "' needs a " + what);
        try {
            const long v = std::stol(tokens[index]);
            if (v <= 0) throw std::invalid_argument(tokens[index]);
            return static_cast<std::size_t>(v);
        } catch (const std::exception&) {
            throw ConfigError("layer '" + kind + "': '" + tokens[index] + "' is not a positive " +
                              what);
        }
    };

    if (kind == "dense") return DenseSpec{positive(1, "output width")};
    if (kind == "conv") {
        Conv2dSpec spec;
        spec.out_ch = positive(1, "filter count");
        spec.k = static_cast<std::size_t>(detail::keyed_value(tokens, 2, "k", 5));
        spec.stride = static_cast<std::size_t>(detail::keyed_value(tokens, 2, "stride", 1));
        bool same = true;
        for (std::size_t i = 2; i < tokens.size(); ++i)
            if (tokens[i].rfind("pad=", 0) == 0) same = tokens[i] == "pad=same";
        spec.padding = same ? -1 : static_cast<int>(detail::keyed_value(tokens, 2, "pad", 0));
        return spec;
    }
    if (kind == "maxpool") {
        MaxPoolSpec spec;
        spec.k = static_cast<std::size_t>(detail::keyed_value(tokens, 1, "k", 2));
        spec.stride = static_cast<std::size_t>(detail::keyed_value(tokens, 1, "stride", 2));
        return spec;
    }
    if (kind == "batchnorm") {
        BatchNormSpec spec;
        spec.momentum = detail::keyed_value(tokens, 1, "momentum", spec.momentum);
        spec.eps = detail::keyed_value(tokens, 1, "eps", spec.eps);
        return spec;
    }
    if (kind == "dropout") {
        if (tokens.size() < 2) throw ConfigError("layer 'dropout' needs a probability");
        try {
            return DropoutSpec{std::stod(tokens[1])};
        } catch (const std::exception&) {
            throw ConfigError("layer 'dropout': '" + tokens[1] + "' is not a probability");
        }
    }
    if (kind == "flatten") return FlattenSpec{};
    if (kind == "relu") return ActivationSpec{ActKind::ReLU};
    if (kind == "elu") return ActivationSpec{ActKind::Elu};
    if (kind == "kaf") return ActivationSpec{ActKind::Kaf};
    if (kind == "multikaf") return ActivationSpec{ActKind::MultiKaf};
    throw ConfigError("unknown layer type '" + kind + "'");
}

inline std::string layer_line(const LayerSpec& spec) {
    std::ostringstream os;
    if (const auto* d = std::get_if<DenseSpec>(&spec)) {
        os << "dense " << d->out;
    } else if (const auto* c = std::get_if<Conv2dSpec>(&spec)) {
        os << "conv " << c->out_ch << " k=" << c->k << " pad=";
        if (c->padding < 0)
            os << "same";
        else
            os << c->padding;
        os << " stride=" << c->stride;
    } else if (const auto* p = std::get_if<MaxPoolSpec>(&spec)) {
        os << "maxpool k=" << p->k << " stride=" << p->stride;
    } else if (const auto* b = std::get_if<BatchNormSpec>(&spec)) {
        os << "batchnorm momentum=" << b->momentum << " eps=" << b->eps;
    } else if (const auto* d = std::get_if<DropoutSpec>(&spec)) {
        os << "dropout " << d->p;
    } else if (std::get_if<FlattenSpec>(&spec)) {
        os << "flatten";
    } else {
        switch (std::get<ActivationSpec>(spec).kind) {
        case ActKind::ReLU: os << "relu"; break;
        case ActKind::Elu: os << "elu"; break;
        case ActKind::Kaf: os << "kaf"; break;
        case ActKind::MultiKaf: os << "multikaf"; break;
        }
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Network section
// ---------------------------------------------------------------------------

inline ActKind parse_act_kind(const std::string& name) {
    if (name == "relu") return ActKind::ReLU;
    if (name == "elu") return ActKind::Elu;
    if (name == "kaf") return ActKind::Kaf;
    if (name == "multikaf") return ActKind::MultiKaf;
    throw ConfigError("unknown activation '" + name + "' (relu, elu, kaf, multikaf)");
}

inline KafSettings kaf_settings_from_config(const ConfigFile& cfg) {
    KafSettings kaf;
    kaf.dict_size = cfg.get_size("kaf.dict_size", kaf.dict_size);
    kaf.lo = cfg.get_double("kaf.lo", kaf.lo);
    kaf.hi = cfg.get_double("kaf.hi", kaf.hi);
    const std::string gamma = cfg.get_string("kaf.gamma", "auto");
    if (gamma != "auto") kaf.gamma = cfg.get_double("kaf.gamma");
    kaf.c = cfg.get_double("kaf.c", kaf.c);
    const std::string rq = cfg.get_string("kaf.rq_variant", "plus");
    if (rq == "plus")
        kaf.rq_variant = RqVariant::Plus;
    else if (rq == "minus")
        kaf.rq_variant = RqVariant::Minus;
    else
        throw ConfigError("kaf.rq_variant must be 'plus' or 'minus', got '" + rq + "'");
    return kaf;
}

/// Builds the layer list from either an explicit `layer.N` sequence or the
/// `network.kind` builder shorthand (exactly one of the two).
inline NetworkSpec network_spec_from_config(const ConfigFile& cfg, std::size_t classes) {
    const bool explicit_layers = cfg.has("layer.0");
    const bool shorthand = cfg.has("network.kind");
    if (explicit_layers && shorthand)
        throw ConfigError(cfg.origin() +
                          ": give either layer.N lines or network.kind, not both");
    if (!explicit_layers && !shorthand)
        throw ConfigError(cfg.origin() + ": network description missing (layer.0 or network.kind)");

    const KafSettings kaf = kaf_settings_from_config(cfg);
    if (explicit_layers) {
        NetworkSpec spec;
        spec.kaf = kaf;
        for (const std::string& line : cfg.indexed_values("layer."))
            spec.layers.push_back(parse_layer_line(line));
        return spec;
    }

    const std::string kind = cfg.get_string("network.kind");
    const ActKind act = parse_act_kind(cfg.get_string("network.activation", "multikaf"));
    const double dropout = cfg.get_double("network.dropout", 0.0);
    if (kind == "mlp")
        return make_mlp(cfg.get_size_list("network.hidden"), classes, act, dropout, kaf);
    if (kind == "cnn")
        return make_cnn(cfg.get_size_list("network.conv_filters"),
                        cfg.has("network.dense") ? cfg.get_size_list("network.dense")
                                                 : std::vector<std::size_t>{},
                        classes, act, dropout, kaf);
    if (kind == "icr") {
        if (classes != 23)
            throw ConfigError("the icr architecture emits 23 classes, dataset has " +
                              std::to_string(classes));
        NetVariant variant = NetVariant::MultiKaf;
        if (act == ActKind::ReLU) variant = NetVariant::ReLU;
        if (act == ActKind::Kaf) variant = NetVariant::Kaf;
        const double scale =
            cfg.get_double("network.width_scale", variant == NetVariant::ReLU ? 1.0 : 0.9);
        return build_icr_cnn(variant, scale, kaf);
    }
    throw ConfigError("unknown network.kind '" + kind + "' (mlp, cnn, icr)");
}

/// The expanded, rebuildable description written next to checkpoints.
inline void write_network_config(std::ostream& os, const NetworkSpec& spec,
                                 const std::vector<std::size_t>& input_shape,
                                 std::uint64_t seed) {
    os << "# network description (rebuild + checkpoint load)\n";
    os << "network.input =";
    for (std::size_t i = 1; i < input_shape.size(); ++i)
        os << (i == 1 ? " " : ",") << input_shape[i];
    os << "\n";
    os << "network.seed = " << seed << "\n";
    for (std::size_t i = 0; i < spec.layers.size(); ++i)
        os << "layer." << i << " = " << layer_line(spec.layers[i]) << "\n";
    os << "kaf.dict_size = " << spec.kaf.dict_size << "\n";
    os << "kaf.lo = " << format_double(spec.kaf.lo) << "\n";
    os << "kaf.hi = " << format_double(spec.kaf.hi) << "\n";
    if (spec.kaf.gamma > 0.0)
        os << "kaf.gamma = " << format_double(spec.kaf.gamma) << "\n";
    else
        os << "kaf.gamma = auto\n";
    os << "kaf.c = " << format_double(spec.kaf.c) << "\n";
    os << "kaf.rq_variant = " << (spec.kaf.rq_variant == RqVariant::Plus ? "plus" : "minus")
       << "\n";
}

/// Rebuilds a network from a description written by write_network_config.
inline Network network_from_saved_config(const std::string& path) {
    const ConfigFile cfg = ConfigFile::parse_file(path);
    std::vector<std::size_t> input_shape{1};
    for (std::size_t d : cfg.get_size_list("network.input")) input_shape.push_back(d);
    NetworkSpec spec;
    spec.kaf = kaf_settings_from_config(cfg);
    for (const std::string& line : cfg.indexed_values("layer."))
        spec.layers.push_back(parse_layer_line(line));
    const std::uint64_t seed = cfg.get_u64("network.seed", 0);
    cfg.fail_on_unused();
    return Network(spec, input_shape, seed);
}

// ---------------------------------------------------------------------------
// Train section
// ---------------------------------------------------------------------------

inline TrainConfig train_config_from_config(const ConfigFile& cfg) {
    TrainConfig tc;
    tc.lambda = cfg.get_double("train.lambda", tc.lambda);
    tc.batch_size = cfg.get_size("train.batch_size", tc.batch_size);
    tc.eval_every = cfg.get_size("train.eval_every", tc.eval_every);
    tc.patience = cfg.get_size("train.patience", tc.patience);
    tc.lr = cfg.get_double("train.lr", tc.lr);
    tc.adam_beta1 = cfg.get_double("train.adam_beta1", tc.adam_beta1);
    tc.adam_beta2 = cfg.get_double("train.adam_beta2", tc.adam_beta2);
    tc.adam_eps = cfg.get_double("train.adam_eps", tc.adam_eps);
    tc.max_iters = cfg.get_size("train.max_iters", tc.max_iters);
    tc.seed = cfg.get_u64("train.seed", tc.seed);
    tc.validate();
    return tc;
}

} // namespace kafforge
