#pragma once

// Scene graphs: objects, per-object attributes, and directed relations
// between object pairs, plus the line-based text format
//
//     obj <id> <label>
//     attr <obj-id> <label>
//     rel <subj-id> <obj-id> <label>
//
// Object ids in a document are arbitrary positive integers; in memory,
// objects are addressed by 0-based position in order of appearance.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstddef>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tfsgc {

struct Attribute {
    std::size_t object = 0;
    std::string label;
    friend bool operator==(const Attribute&, const Attribute&) = default;
};

struct Relation {
    std::size_t subject = 0;
    std::size_t object = 0;
    std::string label;
    friend bool operator==(const Relation&, const Relation&) = default;
};

struct SceneGraph {
    std::vector<std::string> objects;
    std::vector<Attribute> attributes;
    std::vector<Relation> relations;
    friend bool operator==(const SceneGraph&, const SceneGraph&) = default;
};

class ParseError : public std::runtime_error {
public:
    ParseError(std::size_t line, const std::string& what)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
        std::size_t j = i;
        while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
        if (j > i) out.push_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

inline bool is_blank(std::string_view s) {
    return std::all_of(s.begin(), s.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); });
}

inline bool is_comment(std::string_view s) {
    auto pos = s.find_first_not_of(" \t\r");
    return pos != std::string_view::npos && s[pos] == '#';
}

inline long parse_id(std::string_view tok, std::size_t line) {
    long v = 0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size() || v <= 0)
        throw ParseError(line, "expected a positive integer id, got '" + std::string(tok) + "'");
    return v;
}

inline bool valid_label(std::string_view label) {
    return !label.empty() && std::none_of(label.begin(), label.end(),
                                          [](char c) { return std::isspace(static_cast<unsigned char>(c)); });
}

}  // namespace detail

/// Returns one message per violated invariant; empty iff the graph is valid.
inline std::vector<std::string> validate(const SceneGraph& g) {
    std::vector<std::string> out;
    if (g.objects.empty()) out.emplace_back("no objects");
    for (std::size_t i = 0; i < g.objects.size(); ++i)
        if (!detail::valid_label(g.objects[i])) out.push_back("invalid label at object " + std::to_string(i + 1));
    for (std::size_t i = 0; i < g.attributes.size(); ++i) {
        const auto& a = g.attributes[i];
        if (a.object >= g.objects.size()) out.push_back("dangling attribute target at attribute " + std::to_string(i + 1));
        if (!detail::valid_label(a.label)) out.push_back("invalid label at attribute " + std::to_string(i + 1));
    }
    for (std::size_t i = 0; i < g.relations.size(); ++i) {
        const auto& r = g.relations[i];
        if (r.subject >= g.objects.size() || r.object >= g.objects.size())
            out.push_back("dangling relation endpoint at relation " + std::to_string(i + 1));
        if (r.subject == r.object) out.push_back("self-relation at relation " + std::to_string(i + 1));
        if (!detail::valid_label(r.label)) out.push_back("invalid label at relation " + std::to_string(i + 1));
    }
    return out;
}

inline SceneGraph parse_scene_graph(std::string_view text) {
    struct PendingAttr {
        long obj;
        std::string label;
        std::size_t line;
    };
    struct PendingRel {
        long subj, obj;
        std::string label;
        std::size_t line;
    };
    SceneGraph g;
    std::map<long, std::size_t> ids;
    std::vector<PendingAttr> attrs;
    std::vector<PendingRel> rels;

    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t nl = text.find('\n', pos);
        const std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++line_no;
        if (detail::is_blank(line) || detail::is_comment(line)) continue;
        const auto tok = detail::split_ws(line);
        if (tok[0] == "obj") {
            if (tok.size() != 3) throw ParseError(line_no, "expected 'obj <id> <label>'");
            const long id = detail::parse_id(tok[1], line_no);
            if (!ids.emplace(id, g.objects.size()).second)
                throw ParseError(line_no, "duplicate object id " + std::to_string(id));
            g.objects.emplace_back(tok[2]);
        } else if (tok[0] == "attr") {
            if (tok.size() != 3) throw ParseError(line_no, "expected 'attr <obj-id> <label>'");
            attrs.push_back({detail::parse_id(tok[1], line_no), std::string(tok[2]), line_no});
        } else if (tok[0] == "rel") {
            if (tok.size() != 4) throw ParseError(line_no, "expected 'rel <subj-id> <obj-id> <label>'");
            const long s = detail::parse_id(tok[1], line_no);
            const long o = detail::parse_id(tok[2], line_no);
            if (s == o) throw ParseError(line_no, "self-relation on object " + std::to_string(s));
            rels.push_back({s, o, std::string(tok[3]), line_no});
        } else {
            throw ParseError(line_no, "unknown record '" + std::string(tok[0]) + "'");
        }
    }

    auto resolve = [&](long id, std::size_t line) {
        auto it = ids.find(id);
        if (it == ids.end()) throw ParseError(line, "dangling object reference " + std::to_string(id));
        return it->second;
    };
    for (auto& a : attrs) g.attributes.push_back({resolve(a.obj, a.line), std::move(a.label)});
    for (auto& r : rels) g.relations.push_back({resolve(r.subj, r.line), resolve(r.obj, r.line), std::move(r.label)});
    if (g.objects.empty()) throw ParseError(line_no, "scene graph has no objects");
    return g;
}

/// Writes the graph with object ids 1..N in storage order.
inline std::string serialize(const SceneGraph& g) {
    std::ostringstream os;
    for (std::size_t i = 0; i < g.objects.size(); ++i) os << "obj " << i + 1 << ' ' << g.objects[i] << '\n';
    for (const auto& a : g.attributes) os << "attr " << a.object + 1 << ' ' << a.label << '\n';
    for (const auto& r : g.relations) os << "rel " << r.subject + 1 << ' ' << r.object + 1 << ' ' << r.label << '\n';
    return os.str();
}

/// A file holding several graphs: blocks separated by blank lines, each
/// optionally preceded by a "# sample <id>" comment.
struct SceneGraphRecord {
    std::string id;
    SceneGraph graph;
};

inline std::string serialize_collection(const std::vector<SceneGraphRecord>& records) {
    std::string out;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (i) out += '\n';
        out += "# sample " + records[i].id + '\n';
        out += serialize(records[i].graph);
    }
    return out;
}

inline std::vector<SceneGraphRecord> parse_scene_graph_collection(std::string_view text) {
    std::vector<SceneGraphRecord> out;
    std::string block;
    std::string id;
    std::size_t block_start = 1;
    std::size_t line_no = 0;
    bool has_records = false;
    auto flush = [&]() {
        if (!has_records) {
            block.clear();
            return;
        }
        has_records = false;
        try {
            out.push_back({id.empty() ? std::to_string(out.size()) : id, parse_scene_graph(block)});
        } catch (const ParseError& e) {
            throw ParseError(block_start + e.line() - 1, e.what());
        }
        block.clear();
        id.clear();
    };
    std::size_t pos = 0;
    while (pos < text.size()) {
        const std::size_t nl = text.find('\n', pos);
        const std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() : nl + 1;
        ++line_no;
        if (detail::is_blank(line)) {
            flush();
            continue;
        }
        if (block.empty()) block_start = line_no;
        if (detail::is_comment(line)) {
            const auto tok = detail::split_ws(line);
            if (tok.size() == 3 && tok[0] == "#" && tok[1] == "sample") id = std::string(tok[2]);
        } else {
            has_records = true;
        }
        block.append(line);
        block.push_back('\n');
    }
    flush();
    return out;
}

}  // namespace tfsgc
