#pragma once

// Run configuration: one flat set of `key = value` settings covering the
// model, training, synthetic data and ablation switches. Precedence is
// defaults < config file < command-line overrides.

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

#include "tfsgc/model_config.hpp"
#include "tfsgc/synth.hpp"
#include "tfsgc/training.hpp"

namespace tfsgc {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct RunConfig {
    std::uint64_t seed = 1;

    std::size_t d = 64;
    std::size_t heads = 8;
    std::size_t enc_layers = 2;
    std::size_t dec_layers = 2;
    std::size_t max_len = 20;
    std::size_t beam = 5;

    bool no_mask = false;
    bool no_type_embeddings = false;
    bool no_moe = false;
    bool share_expert_ffn = false;
    bool literal_mask = false;

    TrainConfig train;
    SynthSpec synth;

    ModelConfig model_config(std::size_t node_vocab, std::size_t word_vocab) const {
        ModelConfig m;
        m.encoder = {d, heads, enc_layers};
        m.decoder = {d, heads, dec_layers, max_len, word_vocab};
        m.node_vocab_size = node_vocab;
        m.graph_mask = !no_mask;
        m.type_embeddings = !no_type_embeddings;
        m.moe = !no_moe;
        m.share_expert_ffn = share_expert_ffn;
        m.mask_mode = literal_mask ? MaskMode::literal : MaskMode::additive;
        return m;
    }

    TrainConfig train_config() const {
        TrainConfig t = train;
        t.seed = seed;
        return t;
    }

    SynthSpec synth_spec() const {
        SynthSpec s = synth;
        s.seed = seed;
        return s;
    }

    void validate() const {
        if (d < 2) throw ConfigError("d must be at least 2");
        if (heads == 0 || d % heads != 0) throw ConfigError("heads must divide d");
        if (dec_layers == 0) throw ConfigError("dec_layers must be at least 1");
        if (max_len == 0) throw ConfigError("max_len must be at least 1");
        if (beam == 0) throw ConfigError("beam must be at least 1");
        if (no_moe && train.router_pos_weight > 0.0)
            throw ConfigError("router_pos_weight > 0 needs the mixture-of-experts decoder (no_moe is set)");
        if (no_moe && share_expert_ffn) throw ConfigError("share_expert_ffn has no effect with no_moe");
        try {
            train.validate();
            synth.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
    }
};

namespace config_detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

template <typename T>
void parse_number(const std::string& key, const std::string& v, T& out) {
    T tmp{};
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), tmp);
    if (ec != std::errc() || p != v.data() + v.size())
        throw ConfigError("config key '" + key + "': '" + v + "' is not a valid number");
    out = tmp;
}

inline void parse_bool(const std::string& key, const std::string& v, bool& out) {
    if (v == "yes" || v == "true" || v == "1" || v == "on") {
        out = true;
    } else if (v == "no" || v == "false" || v == "0" || v == "off") {
        out = false;
    } else {
        throw ConfigError("config key '" + key + "': '" + v + "' is not a boolean");
    }
}

template <typename T>
std::string show(const T& v) {
    std::ostringstream os;
    if constexpr (std::is_same_v<T, bool>) {
        os << (v ? "yes" : "no");
    } else if constexpr (std::is_floating_point_v<T>) {
        os.precision(17);
        os << v;
    } else {
        os << v;
    }
    return os.str();
}

struct Field {
    std::string key;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Field field(std::string key, T RunConfig::*member) {
    return {key,
            [key, member](RunConfig& c, const std::string& v) {
                if constexpr (std::is_same_v<T, bool>) {
                    parse_bool(key, v, c.*member);
                } else {
                    parse_number(key, v, c.*member);
                }
            },
            [member](const RunConfig& c) { return show(c.*member); }};
}

template <typename S, typename T>
Field nested(std::string key, S RunConfig::*outer, T S::*member) {
    return {key,
            [key, outer, member](RunConfig& c, const std::string& v) { parse_number(key, v, (c.*outer).*member); },
            [outer, member](const RunConfig& c) { return show((c.*outer).*member); }};
}

inline const std::vector<Field>& fields() {
    static const std::vector<Field> all = {
        field("seed", &RunConfig::seed),
        field("d", &RunConfig::d),
        field("heads", &RunConfig::heads),
        field("enc_layers", &RunConfig::enc_layers),
        field("dec_layers", &RunConfig::dec_layers),
        field("max_len", &RunConfig::max_len),
        field("beam", &RunConfig::beam),
        field("no_mask", &RunConfig::no_mask),
        field("no_type_embeddings", &RunConfig::no_type_embeddings),
        field("no_moe", &RunConfig::no_moe),
        field("share_expert_ffn", &RunConfig::share_expert_ffn),
        field("literal_mask", &RunConfig::literal_mask),
        nested("batch_size", &RunConfig::train, &TrainConfig::batch_size),
        nested("epochs_xe", &RunConfig::train, &TrainConfig::epochs_xe),
        nested("epochs_rl", &RunConfig::train, &TrainConfig::epochs_rl),
        nested("lr_xe", &RunConfig::train, &TrainConfig::lr_xe),
        nested("lr_rl", &RunConfig::train, &TrainConfig::lr_rl),
        nested("lr_decay", &RunConfig::train, &TrainConfig::lr_decay),
        nested("decay_every", &RunConfig::train, &TrainConfig::decay_every),
        nested("clip_norm", &RunConfig::train, &TrainConfig::clip_norm),
        nested("router_pos_weight", &RunConfig::train, &TrainConfig::router_pos_weight),
        nested("n_object_labels", &RunConfig::synth, &SynthSpec::n_object_labels),
        nested("n_attribute_labels", &RunConfig::synth, &SynthSpec::n_attribute_labels),
        nested("n_relation_labels", &RunConfig::synth, &SynthSpec::n_relation_labels),
        nested("min_objects", &RunConfig::synth, &SynthSpec::min_objects),
        nested("max_objects", &RunConfig::synth, &SynthSpec::max_objects),
        nested("attribute_prob", &RunConfig::synth, &SynthSpec::attribute_prob),
        nested("relation_prob", &RunConfig::synth, &SynthSpec::relation_prob),
        nested("n_train", &RunConfig::synth, &SynthSpec::n_train),
        nested("n_val", &RunConfig::synth, &SynthSpec::n_val),
        nested("n_test", &RunConfig::synth, &SynthSpec::n_test),
    };
    return all;
}

}  // namespace config_detail

inline std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& f : config_detail::fields()) keys.push_back(f.key);
    return keys;
}

/// Sets one key; throws ConfigError on an unknown key or malformed value.
inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
    for (const auto& f : config_detail::fields())
        if (f.key == key) {
            f.set(cfg, value);
            return;
        }
    throw ConfigError("unknown config key '" + key + "'");
}

inline std::string get_config_value(const RunConfig& cfg, const std::string& key) {
    for (const auto& f : config_detail::fields())
        if (f.key == key) return f.get(cfg);
    throw ConfigError("unknown config key '" + key + "'");
}

/// "key = value" lines; '#' starts a comment line.
inline std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text) {
    std::vector<std::pair<std::string, std::string>> out;
    std::istringstream is{std::string(text)};
    std::size_t line_no = 0;
    for (std::string line; std::getline(is, line);) {
        ++line_no;
        const std::string t = config_detail::trim(line);
        if (t.empty() || t.front() == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
        const std::string key = config_detail::trim(std::string_view(t).substr(0, eq));
        const std::string value = config_detail::trim(std::string_view(t).substr(eq + 1));
        if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": missing key");
        out.emplace_back(key, value);
    }
    return out;
}

/// Parses "key=value" as given on the command line.
inline std::pair<std::string, std::string> parse_override(std::string_view kv) {
    const auto eq = kv.find('=');
    if (eq == std::string_view::npos) throw ConfigError("override '" + std::string(kv) + "' is not key=value");
    return {config_detail::trim(kv.substr(0, eq)), config_detail::trim(kv.substr(eq + 1))};
}

/// defaults < file text < overrides, then validation.
inline RunConfig parse_config_text(std::string_view file_text,
                                   const std::vector<std::pair<std::string, std::string>>& overrides = {}) {
    RunConfig cfg;
    for (const auto& [k, v] : parse_key_values(file_text)) set_config_value(cfg, k, v);
    for (const auto& [k, v] : overrides) set_config_value(cfg, k, v);
    cfg.validate();
    return cfg;
}

inline RunConfig parse_config(const std::filesystem::path& file,
                              const std::vector<std::pair<std::string, std::string>>& overrides = {}) {
    std::string text;
    if (!file.empty()) {
        std::ifstream in(file, std::ios::binary);
        if (!in) throw ConfigError("cannot open config file " + file.string());
        std::ostringstream os;
        os << in.rdbuf();
        text = os.str();
    }
    return parse_config_text(text, overrides);
}

/// Every key with its current value, one "key = value" line each.
inline std::string format_config(const RunConfig& cfg) {
    std::ostringstream os;
    for (const auto& f : config_detail::fields()) os << f.key << " = " << f.get(cfg) << '\n';
    return os.str();
}

}  // namespace tfsgc
