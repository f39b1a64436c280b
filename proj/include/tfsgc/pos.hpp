#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "tfsgc/model_config.hpp"

namespace tfsgc {

/// Part-of-speech classes carried by the synthetic captions.
enum class PosTag : std::uint8_t { noun, adj, verb, prep, other };

inline const char* to_string(PosTag t) {
    switch (t) {
        case PosTag::noun: return "NOUN";
        case PosTag::adj: return "ADJ";
        case PosTag::verb: return "VERB";
        case PosTag::prep: return "PREP";
        case PosTag::other: return "OTHER";
    }
    return "?";
}

inline PosTag parse_pos_tag(std::string_view s) {
    if (s == "NOUN") return PosTag::noun;
    if (s == "ADJ") return PosTag::adj;
    if (s == "VERB") return PosTag::verb;
    if (s == "PREP") return PosTag::prep;
    if (s == "OTHER") return PosTag::other;
    throw std::invalid_argument("unknown POS tag '" + std::string(s) + "'");
}

/// Expert that should carry a word of this class, if any.
inline std::optional<Expert> expert_for(PosTag t) {
    switch (t) {
        case PosTag::noun: return Expert::object;
        case PosTag::adj: return Expert::attribute;
        case PosTag::verb:
        case PosTag::prep: return Expert::relation;
        case PosTag::other: return std::nullopt;
    }
    return std::nullopt;
}

}  // namespace tfsgc
