#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

#include "tfsgc/ops.hpp"

namespace tfsgc {

struct EncoderConfig {
    std::size_t d = 64;
    std::size_t heads = 8;
    std::size_t layers = 2;  // 0 feeds raw node embeddings to the decoder
};

struct DecoderConfig {
    std::size_t d = 64;
    std::size_t heads = 8;
    std::size_t layers = 2;
    std::size_t max_len = 20;
    std::size_t vocab_size = 0;
};

enum class Expert : std::size_t { object = 0, attribute = 1, relation = 2 };
inline constexpr std::size_t kExperts = 3;

struct ModelConfig {
    EncoderConfig encoder;
    DecoderConfig decoder;
    std::size_t node_vocab_size = 0;
    bool graph_mask = true;        // false: all-ones mask (GNN-FC)
    bool type_embeddings = true;   // false: e_o = e_a = e_r = 0
    bool moe = true;               // false: one encoder-decoder attention over all of G
    bool share_expert_ffn = false;
    MaskMode mask_mode = MaskMode::additive;
    std::optional<Expert> pinned_route;  // fixes α to a one-hot vector

    std::size_t d() const { return encoder.d; }

    void validate() const {
        if (encoder.d != decoder.d) throw std::invalid_argument("encoder and decoder widths differ");
        if (encoder.d < 2) throw std::invalid_argument("model width must be at least 2");
        if (encoder.heads == 0 || encoder.d % encoder.heads != 0)
            throw std::invalid_argument("heads must divide the model width");
        if (decoder.heads == 0 || decoder.d % decoder.heads != 0)
            throw std::invalid_argument("heads must divide the model width");
        if (decoder.layers == 0) throw std::invalid_argument("decoder needs at least one layer");
        if (decoder.max_len == 0) throw std::invalid_argument("max_len must be at least 1");
        if (decoder.vocab_size < 4) throw std::invalid_argument("caption vocabulary is missing its special tokens");
        if (node_vocab_size < 1) throw std::invalid_argument("node vocabulary is empty");
    }
};

}  // namespace tfsgc
