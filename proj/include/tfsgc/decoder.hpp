#pragma once

// Mixture-of-experts caption decoder. Each layer runs causal self-attention,
// then one encoder-decoder attention + FFN per node type (object, attribute,
// relation), and blends the three streams per time step with a soft router.

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tfsgc/encoder.hpp"
#include "tfsgc/model_config.hpp"
#include "tfsgc/ops.hpp"

namespace tfsgc {

inline const char* expert_name(Expert e) {
    switch (e) {
        case Expert::object: return "object";
        case Expert::attribute: return "attribute";
        case Expert::relation: return "relation";
    }
    return "?";
}

template <typename T>
struct RouteOutput {
    BasicVar<T> alpha;  // t×3, columns (object, attribute, relation)
    BasicVar<T> z;      // t×d
};

/// α = softmax over {xᵀz_o, xᵀz_a, xᵀz_r} restricted to the experts that are
/// present; z = Σ α_k z_k. Absent experts get α_k = 0 exactly.
template <typename T>
RouteOutput<T> soft_route(BasicVar<T> x, const std::array<std::optional<BasicVar<T>>, kExperts>& experts,
                          std::optional<Expert> pinned = std::nullopt) {
    auto& tape = x.tape();
    const std::size_t t = x.rows();
    BasicArray<T> available(t, kExperts);
    bool any = false;
    for (std::size_t k = 0; k < kExperts; ++k) {
        if (!experts[k]) continue;
        any = true;
        for (std::size_t r = 0; r < t; ++r) available(r, k) = T(1);
    }
    if (!any) throw std::invalid_argument("soft_route: no expert available");

    BasicVar<T> alpha;
    if (pinned) {
        const auto pk = static_cast<std::size_t>(*pinned);
        if (!experts[pk]) throw std::invalid_argument("soft_route: pinned expert is not available");
        BasicArray<T> onehot(t, kExperts);
        for (std::size_t r = 0; r < t; ++r) onehot(r, pk) = T(1);
        alpha = tape.constant(std::move(onehot));
    } else {
        std::vector<BasicVar<T>> logits;
        for (std::size_t k = 0; k < kExperts; ++k)
            logits.push_back(experts[k] ? row_dot(x, *experts[k]) : tape.constant(BasicArray<T>(t, 1)));
        alpha = masked_softmax(concat_cols(logits), &available);
    }

    std::optional<BasicVar<T>> z;
    for (std::size_t k = 0; k < kExperts; ++k) {
        if (!experts[k]) continue;
        auto term = mul_col(*experts[k], slice_cols(alpha, k, 1));
        z = z ? add(*z, term) : term;
    }
    return {alpha, *z};
}

/// PE(pos, 2i) = sin(pos / 10000^(2i/d)), PE(pos, 2i+1) = cos(...).
template <typename T>
BasicArray<T> sinusoidal_positions(std::size_t n, std::size_t d) {
    BasicArray<T> pe(n, d);
    for (std::size_t pos = 0; pos < n; ++pos)
        for (std::size_t i = 0; i < d; i += 2) {
            const double angle = static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
            pe(pos, i) = static_cast<T>(std::sin(angle));
            if (i + 1 < d) pe(pos, i + 1) = static_cast<T>(std::cos(angle));
        }
    return pe;
}

template <typename T>
BasicArray<T> causal_mask(std::size_t n) {
    BasicArray<T> m(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j <= i; ++j) m(i, j) = T(1);
    return m;
}

template <typename T>
struct DecoderOutput {
    BasicVar<T> logits;               // t×vocab, row i predicts token i+1
    std::vector<BasicVar<T>> alphas;  // per layer, t×3
};

/// One MOE decoder layer over the current input sequence `xd` (t×d).
template <typename T>
RouteOutput<T> moe_decoder_block(BasicTape<T>& tape, const BasicParamStore<T>& p, const ModelConfig& cfg,
                                 std::size_t layer, BasicVar<T> xd, const GraphEncoding<T>& enc) {
    const std::string prefix = "dec." + std::to_string(layer);
    const auto causal = causal_mask<T>(xd.rows());
    auto x = mha(xd, xd, xd, bind_attention(tape, p, prefix + ".self"), cfg.decoder.heads, &causal);

    if (!cfg.moe) {
        auto y = mha(x, enc.all, enc.all, bind_attention(tape, p, prefix + ".cross.attn"), cfg.decoder.heads, nullptr);
        auto z = ffn(y, bind_ffn(tape, p, prefix + ".cross.ffn"));
        BasicArray<T> route(xd.rows(), kExperts);
        for (std::size_t r = 0; r < xd.rows(); ++r) route(r, 0) = T(1);
        return RouteOutput<T>{tape.constant(std::move(route)), z};
    }

    std::array<std::optional<BasicVar<T>>, kExperts> streams;
    for (std::size_t k = 0; k < kExperts; ++k) {
        const auto e = static_cast<Expert>(k);
        if (!enc.has(e)) continue;
        const std::string ep = prefix + ".expert." + expert_name(e);
        auto g = enc.segment(e);
        auto y = mha(x, g, g, bind_attention(tape, p, ep + ".attn"), cfg.decoder.heads, nullptr);
        streams[k] = ffn(y, bind_ffn(tape, p, cfg.share_expert_ffn ? prefix + ".ffn" : ep + ".ffn"));
    }
    return soft_route(x, streams, cfg.pinned_route);
}

/// Teacher-forced pass over `inputs` (BOS followed by a caption prefix).
template <typename T>
DecoderOutput<T> decode_forward(BasicTape<T>& tape, const BasicParamStore<T>& p, const ModelConfig& cfg,
                                const GraphEncoding<T>& enc, std::span<const int> inputs) {
    if (inputs.empty()) throw std::invalid_argument("decode_forward: empty input sequence");
    const std::size_t d = cfg.d();
    auto xd = add(scale(embedding(tape.param(p, "word_embed"), inputs), std::sqrt(static_cast<T>(d))),
                  tape.constant(sinusoidal_positions<T>(inputs.size(), d)));
    DecoderOutput<T> out;
    for (std::size_t l = 0; l < cfg.decoder.layers; ++l) {
        auto r = moe_decoder_block(tape, p, cfg, l, xd, enc);
        out.alphas.push_back(r.alpha);
        xd = r.z;
    }
    out.logits = add_row(matmul(xd, tape.param(p, "out.w")), tape.param(p, "out.b"));
    return out;
}

/// softmax(z W + b) for a single decoder output row.
template <typename T>
BasicArray<T> next_word_distribution(std::span<const T> z, const BasicArray<T>& w, const BasicArray<T>& b) {
    if (z.size() != w.rows() || b.cols() != w.cols()) throw std::invalid_argument("next_word_distribution: shape mismatch");
    BasicArray<T> logits = b;
    for (std::size_t i = 0; i < z.size(); ++i)
        for (std::size_t j = 0; j < w.cols(); ++j) logits[j] += z[i] * w(i, j);
    return softmax(logits);
}

}  // namespace tfsgc
