#pragma once

// Inference over a trained model: greedy, beam and ancestral sampling. The
// decoder prefix is recomputed at every step.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "tfsgc/model.hpp"
#include "tfsgc/vocabulary.hpp"

namespace tfsgc {

struct RouteWeights {
    float object = 0.0f;
    float attribute = 0.0f;
    float relation = 0.0f;

    float operator[](std::size_t k) const { return k == 0 ? object : k == 1 ? attribute : relation; }
    float sum() const { return object + attribute + relation; }
    /// Largest weight; ties go to the earlier expert.
    Expert argmax() const {
        std::size_t best = 0;
        for (std::size_t k = 1; k < kExperts; ++k)
            if ((*this)[k] > (*this)[best]) best = k;
        return static_cast<Expert>(best);
    }
};

struct DecodeResult {
    std::vector<int> tokens;                         // generated ids, EOS included when emitted
    std::vector<float> logprobs;                     // log P of each generated token
    std::vector<std::vector<RouteWeights>> routes;   // [step][decoder layer]

    double total_logprob() const { return std::accumulate(logprobs.begin(), logprobs.end(), 0.0); }
    /// Tokens before EOS.
    std::vector<int> words() const {
        std::vector<int> out;
        for (int t : tokens) {
            if (t == kEos) break;
            out.push_back(t);
        }
        return out;
    }
};

/// Next-token log-distribution and the routing of the last position.
struct DecoderStep {
    std::vector<float> logprobs;
    std::vector<RouteWeights> routes;  // per decoder layer
};

/// Holds the encoded graph and runs one decoder pass per call.
class StepDecoder {
public:
    StepDecoder(const Model& model, const LinearizedGraph& lg) : model_(model), enc_(model.encode(tape_, lg)) {}

    /// `prefix` starts with BOS.
    DecoderStep operator()(std::span<const int> prefix) {
        const std::size_t mark = tape_.size();
        auto out = model_.decode(tape_, enc_, prefix);
        const auto& logits = out.logits.value();
        const std::size_t last = logits.rows() - 1;
        DecoderStep step;
        auto row = logits.row(last);
        const float mx = *std::max_element(row.begin(), row.end());
        double sum = 0.0;
        for (float v : row) sum += std::exp(static_cast<double>(v - mx));
        const float lse = mx + static_cast<float>(std::log(sum));
        step.logprobs.reserve(row.size());
        for (float v : row) step.logprobs.push_back(v - lse);
        for (const auto& a : out.alphas) {
            const auto& av = a.value();
            step.routes.push_back({av(last, 0), av(last, 1), av(last, 2)});
        }
        tape_.truncate(mark);
        return step;
    }

private:
    const Model& model_;
    Tape tape_;
    GraphEncoding<float> enc_;
};

namespace detail {

inline int argmax_lowest(std::span<const float> v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return static_cast<int>(best);
}

}  // namespace detail

/// Argmax search from BOS; ties go to the lowest word id. `step` maps a
/// prefix (BOS first) to a DecoderStep.
template <typename StepFn>
DecodeResult greedy_search(StepFn&& step, std::size_t max_len) {
    DecodeResult res;
    std::vector<int> prefix{kBos};
    for (std::size_t t = 0; t < max_len; ++t) {
        auto s = step(std::span<const int>(prefix));
        const int w = detail::argmax_lowest(s.logprobs);
        res.tokens.push_back(w);
        res.logprobs.push_back(s.logprobs[static_cast<std::size_t>(w)]);
        res.routes.push_back(std::move(s.routes));
        if (w == kEos) break;
        prefix.push_back(w);
    }
    return res;
}

/// Draws each token from the step distribution (temperature 1).
template <typename StepFn, typename Rng>
DecodeResult sample_search(StepFn&& step, std::size_t max_len, Rng& rng) {
    DecodeResult res;
    std::vector<int> prefix{kBos};
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (std::size_t t = 0; t < max_len; ++t) {
        auto s = step(std::span<const int>(prefix));
        const double u = unif(rng);
        double acc = 0.0;
        int w = static_cast<int>(s.logprobs.size()) - 1;
        for (std::size_t i = 0; i < s.logprobs.size(); ++i) {
            acc += std::exp(static_cast<double>(s.logprobs[i]));
            if (u < acc) {
                w = static_cast<int>(i);
                break;
            }
        }
        res.tokens.push_back(w);
        res.logprobs.push_back(s.logprobs[static_cast<std::size_t>(w)]);
        res.routes.push_back(std::move(s.routes));
        if (w == kEos) break;
        prefix.push_back(w);
    }
    return res;
}

/// Beam search on summed log-probability, no length normalization. At each
/// step every live hypothesis proposes its `beam` best continuations; the best
/// `beam` candidates survive, and those ending in EOS (or reaching max_len)
/// are finished. Stops once no live hypothesis can beat the best finished one.
template <typename StepFn>
DecodeResult beam_search(StepFn&& step, std::size_t beam, std::size_t max_len) {
    if (beam == 0) throw std::invalid_argument("beam search: beam must be at least 1");
    struct Hyp {
        DecodeResult result;
        double score = 0.0;
    };
    struct Candidate {
        std::size_t parent;
        int word;
        double score;
    };

    std::vector<Hyp> live(1);
    std::vector<Hyp> finished;

    for (std::size_t t = 0; t < max_len && !live.empty(); ++t) {
        std::vector<DecoderStep> steps;
        std::vector<Candidate> cands;
        for (std::size_t h = 0; h < live.size(); ++h) {
            std::vector<int> prefix{kBos};
            prefix.insert(prefix.end(), live[h].result.tokens.begin(), live[h].result.tokens.end());
            steps.push_back(step(std::span<const int>(prefix)));
            const auto& lp = steps.back().logprobs;
            std::vector<int> order(lp.size());
            std::iota(order.begin(), order.end(), 0);
            const std::size_t k = std::min(beam, order.size());
            std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), [&](int a, int b) {
                return lp[static_cast<std::size_t>(a)] > lp[static_cast<std::size_t>(b)] ||
                       (lp[static_cast<std::size_t>(a)] == lp[static_cast<std::size_t>(b)] && a < b);
            });
            for (std::size_t i = 0; i < k; ++i)
                cands.push_back({h, order[i], live[h].score + static_cast<double>(lp[static_cast<std::size_t>(order[i])])});
        }
        std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) { return a.score > b.score; });
        if (cands.size() > beam) cands.resize(beam);

        std::vector<Hyp> next;
        for (const auto& c : cands) {
            Hyp h = live[c.parent];
            h.score = c.score;
            h.result.tokens.push_back(c.word);
            h.result.logprobs.push_back(steps[c.parent].logprobs[static_cast<std::size_t>(c.word)]);
            h.result.routes.push_back(steps[c.parent].routes);
            if (c.word == kEos || h.result.tokens.size() >= max_len)
                finished.push_back(std::move(h));
            else
                next.push_back(std::move(h));
        }
        live = std::move(next);

        if (!finished.empty() && !live.empty()) {
            double best_finished = -std::numeric_limits<double>::infinity();
            for (const auto& f : finished) best_finished = std::max(best_finished, f.score);
            double best_live = -std::numeric_limits<double>::infinity();
            for (const auto& l : live) best_live = std::max(best_live, l.score);
            if (best_finished >= best_live) break;
        }
    }
    for (auto& l : live) finished.push_back(std::move(l));
    std::size_t best = 0;
    for (std::size_t i = 1; i < finished.size(); ++i)
        if (finished[i].score > finished[best].score) best = i;
    return std::move(finished[best].result);
}

inline DecodeResult decode_greedy(const Model& model, const LinearizedGraph& lg) {
    return greedy_search(StepDecoder(model, lg), model.config().decoder.max_len);
}

template <typename Rng>
DecodeResult decode_sample(const Model& model, const LinearizedGraph& lg, Rng& rng) {
    return sample_search(StepDecoder(model, lg), model.config().decoder.max_len, rng);
}

inline DecodeResult decode_beam(const Model& model, const LinearizedGraph& lg, std::size_t beam = 5) {
    return beam_search(StepDecoder(model, lg), beam, model.config().decoder.max_len);
}

}  // namespace tfsgc
