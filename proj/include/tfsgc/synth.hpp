#pragma once

// Synthetic scene-graph captioning data. Every caption is a fixed function of
// its graph:
//
//   objects sorted by label index, each rendered "a [adjective] noun",
//   consecutive objects joined by their relation word, or by "and".
//
// Relations only link objects that are adjacent in that order, subject first.
// A set of (object, attribute) pairs is held out of train and val; every test
// graph contains at least one of them.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tfsgc/pos.hpp"
#include "tfsgc/scene_graph.hpp"
#include "tfsgc/vocabulary.hpp"

namespace tfsgc {

struct SynthSpec {
    std::uint64_t seed = 1;
    std::size_t n_object_labels = 20;
    std::size_t n_attribute_labels = 8;
    std::size_t n_relation_labels = 8;
    std::size_t min_objects = 1;
    std::size_t max_objects = 4;
    double attribute_prob = 0.5;
    double relation_prob = 0.5;
    std::size_t n_train = 2000;
    std::size_t n_val = 200;
    std::size_t n_test = 200;

    std::size_t total() const { return n_train + n_val + n_test; }

    void validate() const {
        if (n_object_labels < 1 || n_attribute_labels < 1 || n_relation_labels < 1)
            throw std::invalid_argument("synth: label vocabularies must be non-empty");
        if (min_objects < 1 || max_objects < min_objects)
            throw std::invalid_argument("synth: need 1 <= min_objects <= max_objects");
        if (max_objects > n_object_labels)
            throw std::invalid_argument("synth: max_objects exceeds the number of object labels");
        if (!(attribute_prob >= 0.0 && attribute_prob <= 1.0) || !(relation_prob >= 0.0 && relation_prob <= 1.0))
            throw std::invalid_argument("synth: probabilities must lie in [0, 1]");
        if (n_train < 1 || n_val < 1 || n_test < 1) throw std::invalid_argument("synth: split sizes must be at least 1");
    }
};

enum class Split { train, val, test };

inline const char* to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

struct SynthSample {
    std::string id;
    SceneGraph graph;
    std::vector<std::string> captions;
    std::vector<PosTag> pos_tags;  // aligned with the words of captions[0]
};

namespace synth_detail {

inline const std::vector<std::string> kObjects = {"dog",  "cat",  "fish", "man",  "woman", "horse", "car",
                                                  "tree", "table", "bird", "boat", "chair", "cup",   "ball",
                                                  "bike", "hat",  "kite", "train", "bench", "sign"};
inline const std::vector<std::string> kAttributes = {"black", "white", "red", "green", "small", "large", "wooden", "old"};
inline const std::vector<std::string> kVerbs = {"bite", "ride", "hold", "watch"};
inline const std::vector<std::string> kPreps = {"on", "near", "under", "behind"};

inline std::vector<std::string> labels(const std::vector<std::string>& base, std::size_t n, const std::string& stem) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(i < base.size() ? base[i] : stem + std::to_string(i));
    return out;
}

inline std::mt19937_64 sample_rng(const SynthSpec& spec, std::size_t index, std::size_t attempt) {
    std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(attempt)};
    return std::mt19937_64(seq);
}

inline constexpr std::size_t kMaxAttempts = 10000;

}  // namespace synth_detail

inline std::vector<std::string> object_labels(const SynthSpec& s) {
    return synth_detail::labels(synth_detail::kObjects, s.n_object_labels, "object");
}
inline std::vector<std::string> attribute_labels(const SynthSpec& s) {
    return synth_detail::labels(synth_detail::kAttributes, s.n_attribute_labels, "attribute");
}
inline std::vector<std::string> relation_labels(const SynthSpec& s) {
    std::vector<std::string> base = synth_detail::kVerbs;
    base.insert(base.end(), synth_detail::kPreps.begin(), synth_detail::kPreps.end());
    return synth_detail::labels(base, s.n_relation_labels, "relation");
}

/// The first four relation labels are verbs, the next four prepositions;
/// generated extras count as verbs.
inline PosTag relation_tag(std::size_t label) {
    return label >= synth_detail::kVerbs.size() && label < synth_detail::kVerbs.size() + synth_detail::kPreps.size()
               ? PosTag::prep
               : PosTag::verb;
}

inline const std::vector<std::string>& function_words() {
    static const std::vector<std::string> words = {"a", "the", "and"};
    return words;
}

/// Each object label has exactly one held-out attribute.
inline bool is_heldout(const SynthSpec& s, std::size_t object_label, std::size_t attribute_label) {
    return attribute_label == (object_label + s.seed) % s.n_attribute_labels;
}

inline bool is_heldout(const SynthSpec& s, const std::string& object, const std::string& attribute) {
    const auto objs = object_labels(s);
    const auto attrs = attribute_labels(s);
    const auto o = std::find(objs.begin(), objs.end(), object);
    const auto a = std::find(attrs.begin(), attrs.end(), attribute);
    if (o == objs.end() || a == attrs.end()) return false;
    return is_heldout(s, static_cast<std::size_t>(o - objs.begin()), static_cast<std::size_t>(a - attrs.begin()));
}

/// True if some attribute of `g` forms a held-out pair with its object.
inline bool has_heldout_pair(const SynthSpec& s, const SceneGraph& g) {
    for (const auto& a : g.attributes)
        if (is_heldout(s, g.objects.at(a.object), a.label)) return true;
    return false;
}

inline Split split_of(const SynthSpec& s, std::size_t index) {
    if (index < s.n_train) return Split::train;
    if (index < s.n_train + s.n_val) return Split::val;
    if (index < s.total()) return Split::test;
    throw std::out_of_range("synth: sample index " + std::to_string(index) + " beyond dataset size");
}

namespace synth_detail {

struct Draw {
    SceneGraph graph;
    std::string caption;
    std::vector<PosTag> tags;
    bool heldout = false;
};

inline Draw draw(const SynthSpec& s, std::mt19937_64& rng) {
    const auto objs = object_labels(s);
    const auto attrs = attribute_labels(s);
    const auto rels = relation_labels(s);
    std::uniform_int_distribution<std::size_t> count(s.min_objects, s.max_objects);
    std::bernoulli_distribution has_attr(s.attribute_prob), has_rel(s.relation_prob);
    std::uniform_int_distribution<std::size_t> pick_attr(0, s.n_attribute_labels - 1);
    std::uniform_int_distribution<std::size_t> pick_rel(0, s.n_relation_labels - 1);

    std::vector<std::size_t> pool(s.n_object_labels);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    std::shuffle(pool.begin(), pool.end(), rng);
    std::vector<std::size_t> sorted(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(count(rng)));
    std::sort(sorted.begin(), sorted.end());

    const std::size_t n = sorted.size();
    std::vector<long> attr_of(n, -1);
    for (std::size_t i = 0; i < n; ++i)
        if (has_attr(rng)) attr_of[i] = static_cast<long>(pick_attr(rng));
    std::vector<long> rel_after(n, -1);
    for (std::size_t i = 0; i + 1 < n; ++i)
        if (has_rel(rng)) rel_after[i] = static_cast<long>(pick_rel(rng));

    Draw d;
    for (std::size_t i = 0; i < n; ++i) {
        if (i) {
            const bool linked = rel_after[i - 1] >= 0;
            d.caption += linked ? " " + rels[static_cast<std::size_t>(rel_after[i - 1])] : " and";
            d.tags.push_back(linked ? relation_tag(static_cast<std::size_t>(rel_after[i - 1])) : PosTag::other);
        }
        d.caption += i ? " a" : "a";
        d.tags.push_back(PosTag::other);
        if (attr_of[i] >= 0) {
            d.caption += " " + attrs[static_cast<std::size_t>(attr_of[i])];
            d.tags.push_back(PosTag::adj);
            d.heldout = d.heldout || is_heldout(s, sorted[i], static_cast<std::size_t>(attr_of[i]));
        }
        d.caption += " " + objs[sorted[i]];
        d.tags.push_back(PosTag::noun);
    }

    // Graph storage order is a random permutation of the caption order.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::size_t> slot(n);
    for (std::size_t k = 0; k < n; ++k) slot[order[k]] = k;
    for (std::size_t k = 0; k < n; ++k) d.graph.objects.push_back(objs[sorted[order[k]]]);
    for (std::size_t k = 0; k < n; ++k)
        if (attr_of[order[k]] >= 0) d.graph.attributes.push_back({k, attrs[static_cast<std::size_t>(attr_of[order[k]])]});
    std::vector<Relation> relations;
    for (std::size_t i = 0; i + 1 < n; ++i)
        if (rel_after[i] >= 0) relations.push_back({slot[i], slot[i + 1], rels[static_cast<std::size_t>(rel_after[i])]});
    std::shuffle(relations.begin(), relations.end(), rng);
    d.graph.relations = std::move(relations);
    return d;
}

}  // namespace synth_detail

/// Deterministic in (spec.seed, index). Train and val samples are redrawn
/// until they contain no held-out pair; test samples until they contain one.
inline SynthSample generate_sample(const SynthSpec& spec, std::size_t index) {
    spec.validate();
    const bool want_heldout = split_of(spec, index) == Split::test;
    if (want_heldout && spec.attribute_prob == 0.0)
        throw std::invalid_argument("synth: test split needs attributes but attribute_prob is 0");
    for (std::size_t attempt = 0; attempt < synth_detail::kMaxAttempts; ++attempt) {
        auto rng = synth_detail::sample_rng(spec, index, attempt);
        auto d = synth_detail::draw(spec, rng);
        if (d.heldout != want_heldout) continue;
        return {std::to_string(index), std::move(d.graph), {std::move(d.caption)}, std::move(d.tags)};
    }
    throw std::invalid_argument("synth: spec too small to satisfy the unseen-combination guarantee");
}

struct SynthDataset {
    std::vector<SynthSample> train, val, test;
};

inline SynthDataset generate_dataset(const SynthSpec& spec) {
    spec.validate();
    SynthDataset ds;
    for (std::size_t i = 0; i < spec.total(); ++i) {
        auto s = generate_sample(spec, i);
        switch (split_of(spec, i)) {
            case Split::train: ds.train.push_back(std::move(s)); break;
            case Split::val: ds.val.push_back(std::move(s)); break;
            case Split::test: ds.test.push_back(std::move(s)); break;
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Files: <split>.sg holds the graphs; <split>.cap holds one line per caption,
// "id<TAB>caption<TAB>space-separated POS tags".

inline std::string format_captions(const std::vector<SynthSample>& samples) {
    std::ostringstream os;
    for (const auto& s : samples)
        for (std::size_t c = 0; c < s.captions.size(); ++c) {
            os << s.id << '\t' << s.captions[c] << '\t';
            if (c == 0)
                for (std::size_t t = 0; t < s.pos_tags.size(); ++t) os << (t ? " " : "") << to_string(s.pos_tags[t]);
            os << '\n';
        }
    return os.str();
}

inline void write_split(const std::filesystem::path& dir, const std::string& name, const std::vector<SynthSample>& samples) {
    std::filesystem::create_directories(dir);
    std::vector<SceneGraphRecord> records;
    for (const auto& s : samples) records.push_back({s.id, s.graph});
    std::ofstream sg(dir / (name + ".sg"), std::ios::binary);
    std::ofstream cap(dir / (name + ".cap"), std::ios::binary);
    if (!sg || !cap) throw std::runtime_error("cannot write split '" + name + "' under " + dir.string());
    sg << serialize_collection(records);
    cap << format_captions(samples);
    if (!sg || !cap) throw std::runtime_error("write failed for split '" + name + "'");
}

inline void write_dataset(const std::filesystem::path& dir, const SynthDataset& ds) {
    write_split(dir, "train", ds.train);
    write_split(dir, "val", ds.val);
    write_split(dir, "test", ds.test);
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

inline std::vector<SynthSample> read_split(const std::filesystem::path& dir, const std::string& name) {
    auto records = parse_scene_graph_collection(read_text_file(dir / (name + ".sg")));
    std::vector<SynthSample> out;
    std::map<std::string, std::size_t> by_id;
    for (auto& r : records) {
        if (!by_id.emplace(r.id, out.size()).second) throw std::runtime_error(name + ".sg: duplicate sample id " + r.id);
        out.push_back({r.id, std::move(r.graph), {}, {}});
    }
    std::istringstream cap(read_text_file(dir / (name + ".cap")));
    std::size_t line_no = 0;
    for (std::string line; std::getline(cap, line);) {
        ++line_no;
        if (line.empty()) continue;
        const auto t1 = line.find('\t');
        const auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
        if (t2 == std::string::npos)
            throw std::runtime_error(name + ".cap line " + std::to_string(line_no) + ": expected id<TAB>caption<TAB>tags");
        const std::string id = line.substr(0, t1);
        auto it = by_id.find(id);
        if (it == by_id.end())
            throw std::runtime_error(name + ".cap line " + std::to_string(line_no) + ": unknown sample id " + id);
        auto& s = out[it->second];
        s.captions.push_back(line.substr(t1 + 1, t2 - t1 - 1));
        if (s.captions.size() == 1) {
            std::istringstream tags(line.substr(t2 + 1));
            for (std::string t; tags >> t;) s.pos_tags.push_back(parse_pos_tag(t));
        }
    }
    for (const auto& s : out)
        if (s.captions.empty()) throw std::runtime_error(name + ".cap: sample " + s.id + " has no caption");
    return out;
}

inline SynthDataset read_dataset(const std::filesystem::path& dir) {
    return {read_split(dir, "train"), read_split(dir, "val"), read_split(dir, "test")};
}

// ---------------------------------------------------------------------------

struct Vocabularies {
    Vocabulary words = make_word_vocabulary();
    Vocabulary nodes = make_node_vocabulary();
};

/// Caption words and node labels seen in `samples`, in first-seen order.
inline Vocabularies build_vocabularies(const std::vector<SynthSample>& samples) {
    Vocabularies v;
    for (const auto& s : samples) {
        for (const auto& o : s.graph.objects) v.nodes.add(o);
        for (const auto& a : s.graph.attributes) v.nodes.add(a.label);
        for (const auto& r : s.graph.relations) v.nodes.add(r.label);
        for (const auto& c : s.captions) {
            std::istringstream is(c);
            for (std::string w; is >> w;) v.words.add(w);
        }
    }
    return v;
}

}  // namespace tfsgc
