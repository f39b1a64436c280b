#pragma once

// Caption metrics: CIDEr-D (consensus TF-IDF n-gram similarity), corpus
// BLEU-n, and per part-of-speech word recall.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "tfsgc/pos.hpp"

namespace tfsgc {

using Tokens = std::vector<std::string>;

/// Lowercase, split on whitespace, strip trailing punctuation from each token.
/// Tokens that are pure punctuation disappear.
inline Tokens tokenize(std::string_view text) {
    Tokens out;
    std::string cur;
    auto flush = [&]() {
        while (!cur.empty() && std::ispunct(static_cast<unsigned char>(cur.back()))) cur.pop_back();
        if (!cur.empty()) out.push_back(cur);
        cur.clear();
    };
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            flush();
        } else {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        }
    }
    flush();
    return out;
}

struct CorpusItem {
    std::string candidate;
    std::vector<std::string> references;
};

namespace detail {

inline constexpr std::size_t kMaxNgram = 4;

using NgramCounts = std::unordered_map<std::string, double>;

/// counts[n-1] holds the n-grams of `words`, keyed by their space-joined text.
inline std::array<NgramCounts, kMaxNgram> count_ngrams(const Tokens& words) {
    std::array<NgramCounts, kMaxNgram> counts;
    for (std::size_t i = 0; i < words.size(); ++i) {
        std::string key;
        for (std::size_t n = 0; n < kMaxNgram && i + n < words.size(); ++n) {
            if (n) key.push_back(' ');
            key += words[i + n];
            counts[n][key] += 1.0;
        }
    }
    return counts;
}

inline void check_corpus(const std::vector<CorpusItem>& items) {
    for (std::size_t i = 0; i < items.size(); ++i)
        if (items[i].references.empty())
            throw std::invalid_argument("corpus item " + std::to_string(i) + " has no reference");
}

}  // namespace detail

/// CIDEr-D scorer with document frequencies taken from a fixed reference
/// corpus (one entry per image).
///
/// Per n = 1..4: tf-idf vectors g_n(s) = tf(s) · log(N / max(1, df)), the
/// candidate values clipped to the reference values, cosine similarity times
/// the length penalty exp(-(l_c - l_r)² / 2σ²) with σ = 6; averaged over n and
/// over references, times 10.
class CiderD {
public:
    static constexpr double kSigma = 6.0;

    CiderD() = default;

    explicit CiderD(const std::vector<std::vector<Tokens>>& reference_sets) {
        if (reference_sets.empty()) throw std::invalid_argument("CiderD: empty reference corpus");
        for (const auto& refs : reference_sets) {
            std::unordered_set<std::string> seen;
            for (const auto& r : refs) {
                auto counts = detail::count_ngrams(r);
                for (const auto& level : counts)
                    for (const auto& [gram, c] : level) seen.insert(gram);
            }
            for (const auto& g : seen) df_[g] += 1.0;
        }
        log_n_ = std::log(static_cast<double>(reference_sets.size()));
        size_ = reference_sets.size();
    }

    bool initialized() const { return size_ > 0; }
    std::size_t corpus_size() const { return size_; }

    double document_frequency(const std::string& ngram) const {
        auto it = df_.find(ngram);
        return it == df_.end() ? 0.0 : it->second;
    }

    /// Score of one candidate against its references; 0 for an empty candidate.
    double score(const Tokens& candidate, const std::vector<Tokens>& references) const {
        if (!initialized()) throw std::logic_error("CiderD: scorer has no document frequencies");
        if (references.empty()) throw std::invalid_argument("CiderD: no references");
        if (candidate.empty()) return 0.0;
        const Vec hyp = vectorize(candidate);
        double total = 0.0;
        for (const auto& r : references) {
            const Vec ref = vectorize(r);
            const double delta = static_cast<double>(candidate.size()) - static_cast<double>(r.size());
            const double penalty = std::exp(-(delta * delta) / (2.0 * kSigma * kSigma));
            double sum_n = 0.0;
            for (std::size_t n = 0; n < detail::kMaxNgram; ++n) {
                double dotp = 0.0;
                for (const auto& [gram, vh] : hyp.weights[n]) {
                    auto it = ref.weights[n].find(gram);
                    if (it == ref.weights[n].end()) continue;
                    dotp += std::min(vh, it->second) * it->second;
                }
                if (hyp.norms[n] != 0.0 && ref.norms[n] != 0.0) dotp /= hyp.norms[n] * ref.norms[n];
                sum_n += dotp * penalty;
            }
            total += sum_n / static_cast<double>(detail::kMaxNgram);
        }
        return 10.0 * total / static_cast<double>(references.size());
    }

private:
    struct Vec {
        std::array<detail::NgramCounts, detail::kMaxNgram> weights;
        std::array<double, detail::kMaxNgram> norms{};
    };

    Vec vectorize(const Tokens& words) const {
        Vec v;
        v.weights = detail::count_ngrams(words);
        for (std::size_t n = 0; n < detail::kMaxNgram; ++n) {
            double sq = 0.0;
            for (auto& [gram, tf] : v.weights[n]) {
                tf *= log_n_ - std::log(std::max(1.0, document_frequency(gram)));
                sq += tf * tf;
            }
            v.norms[n] = std::sqrt(sq);
        }
        return v;
    }

    std::unordered_map<std::string, double> df_;
    double log_n_ = 0.0;
    std::size_t size_ = 0;
};

struct CiderScores {
    std::vector<double> per_item;
    double mean = 0.0;
};

/// Corpus CIDEr-D with document frequencies from the corpus' own references.
inline CiderScores cider_d(const std::vector<CorpusItem>& items) {
    if (items.size() < 2) throw std::invalid_argument("cider_d: corpus needs at least two items");
    detail::check_corpus(items);
    std::vector<std::vector<Tokens>> refs;
    refs.reserve(items.size());
    for (const auto& it : items) {
        auto& r = refs.emplace_back();
        for (const auto& s : it.references) r.push_back(tokenize(s));
    }
    const CiderD scorer(refs);
    CiderScores out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        const Tokens cand = tokenize(items[i].candidate);
        if (cand.empty()) throw std::invalid_argument("cider_d: empty candidate at item " + std::to_string(i));
        out.per_item.push_back(scorer.score(cand, refs[i]));
        out.mean += out.per_item.back();
    }
    out.mean /= static_cast<double>(items.size());
    return out;
}

/// Corpus BLEU-n: clipped n-gram precisions summed over the corpus, geometric
/// mean over orders 1..n, brevity penalty against the closest reference
/// length (shorter reference on ties). No smoothing.
inline double bleu(const std::vector<CorpusItem>& items, int n) {
    if (n < 1 || n > static_cast<int>(detail::kMaxNgram)) throw std::invalid_argument("bleu: n must be in 1..4");
    detail::check_corpus(items);
    std::array<double, detail::kMaxNgram> matched{}, total{};
    double cand_len = 0.0, ref_len = 0.0;
    for (const auto& item : items) {
        const Tokens cand = tokenize(item.candidate);
        const auto cc = detail::count_ngrams(cand);
        std::array<detail::NgramCounts, detail::kMaxNgram> max_ref;
        std::size_t best_len = 0;
        long best_diff = std::numeric_limits<long>::max();
        for (const auto& rs : item.references) {
            const Tokens ref = tokenize(rs);
            const long diff = std::abs(static_cast<long>(ref.size()) - static_cast<long>(cand.size()));
            if (diff < best_diff || (diff == best_diff && ref.size() < best_len)) {
                best_diff = diff;
                best_len = ref.size();
            }
            const auto rc = detail::count_ngrams(ref);
            for (std::size_t k = 0; k < detail::kMaxNgram; ++k)
                for (const auto& [g, c] : rc[k]) max_ref[k][g] = std::max(max_ref[k][g], c);
        }
        cand_len += static_cast<double>(cand.size());
        ref_len += static_cast<double>(best_len);
        for (std::size_t k = 0; k < detail::kMaxNgram; ++k)
            for (const auto& [g, c] : cc[k]) {
                total[k] += c;
                auto it = max_ref[k].find(g);
                if (it != max_ref[k].end()) matched[k] += std::min(c, it->second);
            }
    }
    if (cand_len == 0.0) return 0.0;
    double log_sum = 0.0;
    for (int k = 0; k < n; ++k) {
        if (matched[static_cast<std::size_t>(k)] == 0.0) return 0.0;
        log_sum += std::log(matched[static_cast<std::size_t>(k)] / total[static_cast<std::size_t>(k)]);
    }
    const double bp = cand_len > ref_len ? 1.0 : std::exp(1.0 - ref_len / cand_len);
    return bp * std::exp(log_sum / n);
}

struct TaggedCaption {
    Tokens words;
    std::vector<PosTag> tags;
};

/// Micro-averaged recall of tagged reference words that appear anywhere in
/// the generated caption, per class.
struct PosRecall {
    std::array<std::size_t, 4> hits{};
    std::array<std::size_t, 4> totals{};

    double recall(PosTag t) const {
        const auto k = static_cast<std::size_t>(t);
        if (k >= 4) throw std::invalid_argument("PosRecall: OTHER has no recall");
        return totals[k] ? static_cast<double>(hits[k]) / static_cast<double>(totals[k]) : 0.0;
    }
};

inline PosRecall pos_recall(const std::vector<Tokens>& generated, const std::vector<TaggedCaption>& references) {
    if (generated.size() != references.size())
        throw std::invalid_argument("pos_recall: generated and reference counts differ");
    PosRecall out;
    for (std::size_t i = 0; i < generated.size(); ++i) {
        const auto& ref = references[i];
        if (ref.words.size() != ref.tags.size())
            throw std::invalid_argument("pos_recall: reference " + std::to_string(i) + " has misaligned tags");
        const std::unordered_set<std::string> present(generated[i].begin(), generated[i].end());
        for (std::size_t w = 0; w < ref.words.size(); ++w) {
            const auto k = static_cast<std::size_t>(ref.tags[w]);
            if (k >= 4) continue;
            ++out.totals[k];
            if (present.contains(ref.words[w])) ++out.hits[k];
        }
    }
    return out;
}

}  // namespace tfsgc
