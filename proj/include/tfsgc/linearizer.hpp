#pragma once

// Flattens a scene graph into one token sequence (objects, then attributes,
// then relations) and builds the binary connectivity mask that restores the
// graph topology for attention.

#include <cstddef>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tfsgc/array.hpp"
#include "tfsgc/scene_graph.hpp"
#include "tfsgc/vocabulary.hpp"

namespace tfsgc {

enum class NodeType : std::uint8_t { object = 0, attribute = 1, relation = 2 };

inline const char* to_string(NodeType t) {
    switch (t) {
        case NodeType::object: return "object";
        case NodeType::attribute: return "attribute";
        case NodeType::relation: return "relation";
    }
    return "?";
}

struct LinearizedGraph {
    std::vector<int> token_ids;
    std::vector<NodeType> type_ids;
    std::size_t n_obj = 0;
    std::size_t n_attr = 0;
    std::size_t n_rel = 0;
    Array mask;               // N×N, entries 0 or 1
    std::size_t unk_count = 0;

    std::size_t size() const { return token_ids.size(); }
    std::size_t attr_offset() const { return n_obj; }
    std::size_t rel_offset() const { return n_obj + n_attr; }
};

/// Connectivity mask over the linearized nodes:
///  - object i with attribute j: M[i, N_o + j] = 1
///  - relation k between objects i and j: M[i, N_o + N_a + k] = M[j, N_o + N_a + k] = 1
///  - all object pairs are connected
///  - symmetric, with ones on the diagonal; everything else 0
inline Array build_mask(const SceneGraph& g) {
    const std::size_t no = g.objects.size(), na = g.attributes.size(), nr = g.relations.size();
    const std::size_t n = no + na + nr;
    Array m(n, n);
    auto link = [&m](std::size_t i, std::size_t j) {
        m(i, j) = 1.0f;
        m(j, i) = 1.0f;
    };
    for (std::size_t i = 0; i < no; ++i)
        for (std::size_t j = 0; j < no; ++j) m(i, j) = 1.0f;
    for (std::size_t k = 0; k < na; ++k) {
        if (g.attributes[k].object >= no) throw std::invalid_argument("build_mask: dangling attribute");
        link(g.attributes[k].object, no + k);
    }
    for (std::size_t k = 0; k < nr; ++k) {
        const auto& r = g.relations[k];
        if (r.subject >= no || r.object >= no) throw std::invalid_argument("build_mask: dangling relation");
        link(r.subject, no + na + k);
        link(r.object, no + na + k);
    }
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0f;
    return m;
}

inline Array all_ones_mask(std::size_t n) { return Array(n, n, 1.0f); }

inline LinearizedGraph linearize(const SceneGraph& g, const Vocabulary& node_vocab) {
    LinearizedGraph lg;
    lg.n_obj = g.objects.size();
    lg.n_attr = g.attributes.size();
    lg.n_rel = g.relations.size();
    auto push = [&](const std::string& label, NodeType t) {
        const int id = node_vocab.id(label);
        if (id == node_vocab.unk()) ++lg.unk_count;
        lg.token_ids.push_back(id);
        lg.type_ids.push_back(t);
    };
    for (const auto& o : g.objects) push(o, NodeType::object);
    for (const auto& a : g.attributes) push(a.label, NodeType::attribute);
    for (const auto& r : g.relations) push(r.label, NodeType::relation);
    lg.mask = build_mask(g);
    return lg;
}

/// Rows of space-separated 0/1 values.
inline std::string format_mask(const Array& mask) {
    std::ostringstream os;
    for (std::size_t r = 0; r < mask.rows(); ++r) {
        for (std::size_t c = 0; c < mask.cols(); ++c) os << (c ? " " : "") << (mask(r, c) != 0.0f ? 1 : 0);
        os << '\n';
    }
    return os.str();
}

}  // namespace tfsgc
