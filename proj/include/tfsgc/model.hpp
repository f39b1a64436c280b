#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>

#include "tfsgc/decoder.hpp"
#include "tfsgc/encoder.hpp"
#include "tfsgc/model_config.hpp"
#include "tfsgc/param_store.hpp"

namespace tfsgc {

namespace detail {

template <typename T>
class ParamInit {
public:
    ParamInit(BasicParamStore<T>& store, std::uint64_t seed) : store_(store), rng_(seed) {}

    // uniform(-1/√fan_in, 1/√fan_in)
    void weight(const std::string& name, std::size_t fan_in, std::size_t fan_out) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        BasicArray<T> w(fan_in, fan_out);
        for (auto& v : w.values()) v = static_cast<T>(dist(rng_));
        store_.add(name, std::move(w));
    }
    // normal(0, 0.02)
    void embedding(const std::string& name, std::size_t rows, std::size_t d) {
        std::normal_distribution<double> dist(0.0, 0.02);
        BasicArray<T> w(rows, d);
        for (auto& v : w.values()) v = static_cast<T>(dist(rng_));
        store_.add(name, std::move(w));
    }
    void constant(const std::string& name, std::size_t cols, T value) { store_.add(name, BasicArray<T>(1, cols, value)); }

    void attention(const std::string& prefix, std::size_t d) {
        for (const char* w : {".wq", ".wk", ".wv", ".wo"}) weight(prefix + w, d, d);
        constant(prefix + ".ln_gain", d, T(1));
        constant(prefix + ".ln_bias", d, T(0));
    }
    void ffn(const std::string& prefix, std::size_t d) {
        const std::size_t inner = 4 * d;
        weight(prefix + ".w1", d, inner);
        constant(prefix + ".b1", inner, T(0));
        weight(prefix + ".w2", inner, d);
        constant(prefix + ".b2", d, T(0));
        constant(prefix + ".ln_gain", d, T(1));
        constant(prefix + ".ln_bias", d, T(0));
    }

private:
    BasicParamStore<T>& store_;
    std::mt19937_64 rng_;
};

}  // namespace detail

template <typename T>
BasicParamStore<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    BasicParamStore<T> store;
    detail::ParamInit<T> init(store, seed);
    const std::size_t d = cfg.d();
    init.embedding("node_embed", cfg.node_vocab_size, d);
    if (cfg.type_embeddings) init.embedding("type_embed", kExperts, d);
    for (std::size_t l = 0; l < cfg.encoder.layers; ++l) {
        const std::string prefix = "enc." + std::to_string(l);
        init.attention(prefix + ".attn", d);
        init.ffn(prefix + ".ffn", d);
    }
    init.embedding("word_embed", cfg.decoder.vocab_size, d);
    for (std::size_t l = 0; l < cfg.decoder.layers; ++l) {
        const std::string prefix = "dec." + std::to_string(l);
        init.attention(prefix + ".self", d);
        if (!cfg.moe) {
            init.attention(prefix + ".cross.attn", d);
            init.ffn(prefix + ".cross.ffn", d);
            continue;
        }
        for (std::size_t k = 0; k < kExperts; ++k) {
            const std::string ep = prefix + ".expert." + expert_name(static_cast<Expert>(k));
            init.attention(ep + ".attn", d);
            if (!cfg.share_expert_ffn) init.ffn(ep + ".ffn", d);
        }
        if (cfg.share_expert_ffn) init.ffn(prefix + ".ffn", d);
    }
    init.weight("out.w", d, cfg.decoder.vocab_size);
    init.constant("out.b", cfg.decoder.vocab_size, T(0));
    return store;
}

/// Graph encoder + MOE decoder with their parameters.
template <typename T>
class BasicModel {
public:
    BasicModel() = default;
    BasicModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), params_(init_params<T>(cfg_, seed)) {}
    BasicModel(ModelConfig cfg, BasicParamStore<T> params) : cfg_(std::move(cfg)), params_(std::move(params)) {
        cfg_.validate();
    }

    const ModelConfig& config() const { return cfg_; }
    /// Only flags that do not change the parameter layout (mask mode, pinned
    /// route, graph_mask) may be altered after construction.
    ModelConfig& config() { return cfg_; }
    BasicParamStore<T>& params() { return params_; }
    const BasicParamStore<T>& params() const { return params_; }

    GraphEncoding<T> encode(BasicTape<T>& tape, const LinearizedGraph& lg, EncoderTrace<T>* trace = nullptr) const {
        return tfsgc::encode(tape, lg, params_, cfg_, trace);
    }

    DecoderOutput<T> decode(BasicTape<T>& tape, const GraphEncoding<T>& enc, std::span<const int> inputs) const {
        return decode_forward(tape, params_, cfg_, enc, inputs);
    }

    template <typename U>
    BasicModel<U> cast() const {
        return BasicModel<U>(cfg_, params_.template cast<U>());
    }

private:
    ModelConfig cfg_;
    BasicParamStore<T> params_;
};

using Model = BasicModel<float>;

}  // namespace tfsgc
