#pragma once

#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace tfsgc {

/// Token ↔ id table. The first entries are reserved special tokens.
class Vocabulary {
public:
    Vocabulary() = default;
    Vocabulary(std::vector<std::string> specials, std::string unk_token) {
        for (auto& s : specials) add(s);
        unk_ = id_or(unk_token, -1);
        if (unk_ < 0) throw std::invalid_argument("Vocabulary: unknown-token must be one of the specials");
    }

    int add(std::string_view token) {
        auto it = ids_.find(std::string(token));
        if (it != ids_.end()) return it->second;
        const int id = static_cast<int>(tokens_.size());
        tokens_.emplace_back(token);
        ids_.emplace(tokens_.back(), id);
        return id;
    }

    bool contains(std::string_view token) const { return ids_.contains(std::string(token)); }
    int id_or(std::string_view token, int fallback) const {
        auto it = ids_.find(std::string(token));
        return it == ids_.end() ? fallback : it->second;
    }
    /// Id of `token`, or the unknown-token id.
    int id(std::string_view token) const { return id_or(token, unk_); }
    const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
    std::size_t size() const { return tokens_.size(); }
    int unk() const { return unk_; }
    const std::vector<std::string>& tokens() const { return tokens_; }

    /// Space-separated token list (tokens never contain whitespace).
    std::string join() const {
        std::ostringstream os;
        for (std::size_t i = 0; i < tokens_.size(); ++i) os << (i ? " " : "") << tokens_[i];
        return os.str();
    }

    friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_ && a.unk_ == b.unk_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> ids_;
    int unk_ = -1;
};

// Caption vocabulary layout.
inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kWordUnk = 3;

inline Vocabulary make_word_vocabulary() { return Vocabulary({"<pad>", "<bos>", "<eos>", "<unk>"}, "<unk>"); }
inline Vocabulary make_node_vocabulary() { return Vocabulary({"<unk>"}, "<unk>"); }

/// Rebuilds a vocabulary from Vocabulary::join() output.
inline Vocabulary parse_vocabulary(std::string_view joined, std::size_t n_specials, std::string_view unk_token) {
    std::istringstream is{std::string(joined)};
    std::vector<std::string> toks;
    for (std::string t; is >> t;) toks.push_back(t);
    if (toks.size() < n_specials) throw std::invalid_argument("vocabulary record shorter than its special tokens");
    Vocabulary v({toks.begin(), toks.begin() + static_cast<std::ptrdiff_t>(n_specials)}, std::string(unk_token));
    for (std::size_t i = n_specials; i < toks.size(); ++i) v.add(toks[i]);
    return v;
}

}  // namespace tfsgc
