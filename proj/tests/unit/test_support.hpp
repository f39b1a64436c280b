#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <set>
#include <random>
#include <string>
#include <vector>

#include "tfsgc/linearizer.hpp"
#include "tfsgc/model.hpp"
#include "tfsgc/scene_graph.hpp"
#include "tfsgc/vocabulary.hpp"

namespace tfsgc::test {

/// Random valid graph: 1..max_objects objects, up to max_attributes
/// attributes and max_relations relations between distinct objects.
inline SceneGraph random_graph(std::mt19937_64& rng, std::size_t max_objects = 5, std::size_t max_attributes = 5,
                               std::size_t max_relations = 5) {
    std::uniform_int_distribution<std::size_t> n_obj(1, max_objects), n_attr(0, max_attributes), n_rel(0, max_relations);
    std::uniform_int_distribution<int> label(0, 9);
    SceneGraph g;
    const std::size_t no = n_obj(rng);
    for (std::size_t i = 0; i < no; ++i) g.objects.push_back("o" + std::to_string(label(rng)));
    std::uniform_int_distribution<std::size_t> obj(0, no - 1);
    const std::size_t na = n_attr(rng);
    for (std::size_t i = 0; i < na; ++i) g.attributes.push_back({obj(rng), "a" + std::to_string(label(rng))});
    if (no >= 2) {
        const std::size_t nr = n_rel(rng);
        for (std::size_t i = 0; i < nr; ++i) {
            const std::size_t s = obj(rng);
            std::size_t o = obj(rng);
            while (o == s) o = obj(rng);
            g.relations.push_back({s, o, "r" + std::to_string(label(rng))});
        }
    }
    return g;
}

/// Node vocabulary holding every label random_graph can emit.
inline Vocabulary random_graph_vocabulary() {
    Vocabulary v = make_node_vocabulary();
    for (const char* p : {"o", "a", "r"})
        for (int i = 0; i < 10; ++i) v.add(std::string(p) + std::to_string(i));
    return v;
}

/// Small model over the random-graph vocabulary.
inline ModelConfig small_config(std::size_t d = 16, std::size_t heads = 2, std::size_t word_vocab = 12) {
    ModelConfig cfg;
    cfg.encoder = {d, heads, 1};
    cfg.decoder = {d, heads, 1, 8, word_vocab};
    cfg.node_vocab_size = random_graph_vocabulary().size();
    return cfg;
}

/// Fixed enumeration of small graphs: every segment-size combination with
/// N <= max_nodes, each under several attachment patterns.
inline std::vector<SceneGraph> enumerate_graphs(std::size_t max_nodes = 6, std::size_t variants = 6) {
    std::vector<SceneGraph> out;
    for (std::size_t no = 1; no <= max_nodes; ++no)
        for (std::size_t na = 0; no + na <= max_nodes; ++na)
            for (std::size_t nr = 0; no + na + nr <= max_nodes; ++nr) {
                if (nr > 0 && no < 2) continue;
                std::vector<std::pair<std::size_t, std::size_t>> pairs;
                for (std::size_t s = 0; s < no; ++s)
                    for (std::size_t o = 0; o < no; ++o)
                        if (s != o) pairs.emplace_back(s, o);
                for (std::size_t v = 0; v < variants; ++v) {
                    SceneGraph g;
                    for (std::size_t i = 0; i < no; ++i) g.objects.push_back("o" + std::to_string((i + v) % 10));
                    for (std::size_t k = 0; k < na; ++k)
                        g.attributes.push_back({(k * (v + 1) + v) % no, "a" + std::to_string((k + 2 * v) % 10)});
                    for (std::size_t k = 0; k < nr; ++k) {
                        const auto& pr = pairs[(k * (v + 2) + v) % pairs.size()];
                        g.relations.push_back({pr.first, pr.second, "r" + std::to_string((k + 3 * v) % 10)});
                    }
                    out.push_back(std::move(g));
                }
            }
    return out;
}

/// Nodes that node i may attend to, read directly off the graph.
inline std::vector<std::set<std::size_t>> graph_neighbourhoods(const SceneGraph& g) {
    const std::size_t no = g.objects.size(), na = g.attributes.size();
    const std::size_t n = no + na + g.relations.size();
    std::vector<std::set<std::size_t>> nb(n);
    for (std::size_t i = 0; i < n; ++i) nb[i].insert(i);
    for (std::size_t i = 0; i < no; ++i)
        for (std::size_t j = 0; j < no; ++j) nb[i].insert(j);
    for (std::size_t k = 0; k < na; ++k) {
        nb[g.attributes[k].object].insert(no + k);
        nb[no + k].insert(g.attributes[k].object);
    }
    for (std::size_t k = 0; k < g.relations.size(); ++k) {
        const std::size_t u = no + na + k;
        for (std::size_t e : {g.relations[k].subject, g.relations[k].object}) {
            nb[e].insert(u);
            nb[u].insert(e);
        }
    }
    return nb;
}

/// First-block attention of one head computed with plain loops: node inputs
/// are label plus type embeddings, scores are (x_i Wq)(x_j Wk) / sqrt(d) over
/// the neighbourhood of i, normalised by an explicit exponential sum.
inline std::vector<std::vector<double>> first_block_attention_oracle(const SceneGraph& g, const Vocabulary& nodes,
                                                                     const ParamStore& p, std::size_t heads,
                                                                     std::size_t head, bool type_embeddings = true) {
    const Array& emb = p.value("node_embed");
    const std::size_t d = emb.cols(), dh = d / heads;
    std::vector<std::string> labels = g.objects;
    std::vector<std::size_t> types(g.objects.size(), 0);
    for (const auto& a : g.attributes) {
        labels.push_back(a.label);
        types.push_back(1);
    }
    for (const auto& r : g.relations) {
        labels.push_back(r.label);
        types.push_back(2);
    }
    const std::size_t n = labels.size();
    std::vector<std::vector<double>> x(n, std::vector<double>(d));
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = static_cast<std::size_t>(nodes.id(labels[i]));
        for (std::size_t c = 0; c < d; ++c) {
            x[i][c] = emb(row, c);
            if (type_embeddings) x[i][c] += p.value("type_embed")(types[i], c);
        }
    }
    const Array& wq = p.value("enc.0.attn.wq");
    const Array& wk = p.value("enc.0.attn.wk");
    auto project = [&](const Array& w, std::size_t i, std::size_t c) {
        double s = 0.0;
        for (std::size_t a = 0; a < d; ++a) s += x[i][a] * w(a, head * dh + c);
        return s;
    };
    const auto nb = graph_neighbourhoods(g);
    std::vector<std::vector<double>> att(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> score(n, 0.0);
        double mx = -1e300;
        for (std::size_t j : nb[i]) {
            double s = 0.0;
            for (std::size_t c = 0; c < dh; ++c) s += project(wq, i, c) * project(wk, j, c);
            score[j] = s / std::sqrt(static_cast<double>(d));
            mx = std::max(mx, score[j]);
        }
        double total = 0.0;
        for (std::size_t j : nb[i]) total += std::exp(score[j] - mx);
        for (std::size_t j : nb[i]) att[i][j] = std::exp(score[j] - mx) / total;
    }
    return att;
}

}  // namespace tfsgc::test
