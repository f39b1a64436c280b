#pragma once

// Multi-head attention, the position-wise feed-forward block, and the graph
// encoder: type-embedded node tokens passed through stacked masked
// self-attention blocks.

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "tfsgc/linearizer.hpp"
#include "tfsgc/model_config.hpp"
#include "tfsgc/ops.hpp"
#include "tfsgc/param_store.hpp"
#include "tfsgc/tape.hpp"

namespace tfsgc {

template <typename T>
struct AttentionWeights {
    BasicVar<T> wq, wk, wv, wo, ln_gain, ln_bias;
};

template <typename T>
struct FfnWeights {
    BasicVar<T> w1, b1, w2, b2, ln_gain, ln_bias;
};

template <typename T>
AttentionWeights<T> bind_attention(BasicTape<T>& tape, const BasicParamStore<T>& p, const std::string& prefix) {
    return {tape.param(p, prefix + ".wq"),      tape.param(p, prefix + ".wk"),
            tape.param(p, prefix + ".wv"),      tape.param(p, prefix + ".wo"),
            tape.param(p, prefix + ".ln_gain"), tape.param(p, prefix + ".ln_bias")};
}

template <typename T>
FfnWeights<T> bind_ffn(BasicTape<T>& tape, const BasicParamStore<T>& p, const std::string& prefix) {
    return {tape.param(p, prefix + ".w1"),      tape.param(p, prefix + ".b1"),
            tape.param(p, prefix + ".w2"),      tape.param(p, prefix + ".b2"),
            tape.param(p, prefix + ".ln_gain"), tape.param(p, prefix + ".ln_bias")};
}

/// Per-head attention matrices captured during a forward pass.
template <typename T>
using AttentionProbe = std::vector<BasicArray<T>>;

/// LN(concat_i(A_i · V W_i^V) · W^H + Q) with
/// A_i = masked_softmax(Q W_i^Q (K W_i^K)ᵀ / √d, mask).
/// The scores are scaled by the full model width d, not the head width.
template <typename T>
BasicVar<T> mha(BasicVar<T> q, BasicVar<T> k, BasicVar<T> v, const AttentionWeights<T>& w, std::size_t heads,
                std::type_identity_t<const BasicArray<T>*> mask, MaskMode mode = MaskMode::additive,
                AttentionProbe<T>* probe = nullptr) {
    const std::size_t d = q.cols();
    if (heads == 0 || d % heads != 0) throw std::invalid_argument("mha: heads must divide the width");
    if (k.rows() != v.rows()) throw std::invalid_argument("mha: key/value row mismatch");
    if (mask && (mask->rows() != q.rows() || mask->cols() != k.rows()))
        throw std::invalid_argument("mha: mask shape " + shape_string(*mask) + " does not match scores");
    const std::size_t dh = d / heads;
    const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(d));

    auto qp = matmul(q, w.wq);
    auto kp = matmul(k, w.wk);
    auto vp = matmul(v, w.wv);
    std::vector<BasicVar<T>> head_out;
    head_out.reserve(heads);
    for (std::size_t i = 0; i < heads; ++i) {
        auto qi = heads == 1 ? qp : slice_cols(qp, i * dh, dh);
        auto ki = heads == 1 ? kp : slice_cols(kp, i * dh, dh);
        auto vi = heads == 1 ? vp : slice_cols(vp, i * dh, dh);
        auto a = masked_softmax(scale(matmul_nt(qi, ki), inv_sqrt_d), mask, mode);
        if (probe) probe->push_back(a.value());
        head_out.push_back(matmul(a, vi));
    }
    auto h = heads == 1 ? head_out.front() : concat_cols(head_out);
    return layer_norm(add(matmul(h, w.wo), q), w.ln_gain, w.ln_bias);
}

/// LN(FC(ReLU(FC(y))) + y).
template <typename T>
BasicVar<T> ffn(BasicVar<T> y, const FfnWeights<T>& w) {
    auto hidden = relu(add_row(matmul(y, w.w1), w.b1));
    auto out = add_row(matmul(hidden, w.w2), w.b2);
    return layer_norm(add(out, y), w.ln_gain, w.ln_bias);
}

/// Encoder output G split by node type. A segment Var is invalid when the
/// graph has no nodes of that type.
template <typename T>
struct GraphEncoding {
    BasicVar<T> all;
    std::array<BasicVar<T>, kExperts> segments;
    std::array<std::size_t, kExperts> sizes{};

    bool has(Expert e) const { return sizes[static_cast<std::size_t>(e)] > 0; }
    BasicVar<T> segment(Expert e) const { return segments[static_cast<std::size_t>(e)]; }
};

/// Attention matrices of every encoder block, [layer][head].
template <typename T>
struct EncoderTrace {
    std::vector<AttentionProbe<T>> layers;
};

/// Row i = label_embedding(token_i) + e_type(i). No positional signal.
template <typename T>
BasicVar<T> embed_nodes(BasicTape<T>& tape, const LinearizedGraph& lg, const BasicParamStore<T>& p,
                        const ModelConfig& cfg) {
    if (lg.size() == 0) throw std::invalid_argument("embed_nodes: empty graph");
    auto u = embedding(tape.param(p, "node_embed"), std::span<const int>(lg.token_ids));
    if (!cfg.type_embeddings) return u;
    std::vector<int> types(lg.type_ids.size());
    for (std::size_t i = 0; i < types.size(); ++i) types[i] = static_cast<int>(lg.type_ids[i]);
    return add(u, embedding(tape.param(p, "type_embed"), std::span<const int>(types)));
}

template <typename T>
BasicArray<T> graph_attention_mask(const LinearizedGraph& lg, bool use_graph_mask) {
    if (!use_graph_mask) return BasicArray<T>(lg.size(), lg.size(), T(1));
    if constexpr (std::is_same_v<T, float>) {
        return lg.mask;
    } else {
        return lg.mask.template cast<T>();
    }
}

template <typename T>
GraphEncoding<T> encode(BasicTape<T>& tape, const LinearizedGraph& lg, const BasicParamStore<T>& p,
                        const ModelConfig& cfg, EncoderTrace<T>* trace = nullptr) {
    if (lg.n_obj == 0) throw std::invalid_argument("encode: graph has no object nodes");
    const auto mask = graph_attention_mask<T>(lg, cfg.graph_mask);
    auto x = embed_nodes(tape, lg, p, cfg);
    for (std::size_t l = 0; l < cfg.encoder.layers; ++l) {
        const std::string prefix = "enc." + std::to_string(l);
        AttentionProbe<T>* probe = nullptr;
        if (trace) probe = &trace->layers.emplace_back();
        auto y = mha(x, x, x, bind_attention(tape, p, prefix + ".attn"), cfg.encoder.heads, &mask, cfg.mask_mode, probe);
        x = ffn(y, bind_ffn(tape, p, prefix + ".ffn"));
    }
    GraphEncoding<T> enc;
    enc.all = x;
    enc.sizes = {lg.n_obj, lg.n_attr, lg.n_rel};
    std::size_t offset = 0;
    for (std::size_t k = 0; k < kExperts; ++k) {
        if (enc.sizes[k] > 0) enc.segments[k] = slice_rows(x, offset, enc.sizes[k]);
        offset += enc.sizes[k];
    }
    return enc;
}

}  // namespace tfsgc
