#pragma once

// Binary checkpoints, little-endian:
//
//   "TFSG" | u32 version | u32 blob length | blob (UTF-8 "key = value" lines)
//   then records until end of file:
//   u32 name length | name | u32 rank | rank × u32 dims | raw f32 data
//
// The blob carries the run configuration, both vocabularies and the training
// state (epoch, RNG, optimizer step). Records hold the parameters, followed by
// the optimizer moments named "adam.m/<param>" and "adam.v/<param>".

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "tfsgc/config.hpp"
#include "tfsgc/model.hpp"
#include "tfsgc/synth.hpp"
#include "tfsgc/training.hpp"

namespace tfsgc {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Checkpoint {
    RunConfig config;
    Vocabularies vocab;
    ParamStore params;
    std::size_t epoch = 0;
    std::string rng_state;  // textual std::mt19937_64 state, empty if none
    std::uint64_t adam_steps = 0;
    std::vector<Array> adam_m, adam_v;
};

namespace ckpt_detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class Reader {
public:
    explicit Reader(std::string_view data) : data_(data) {}
    bool done() const { return pos_ == data_.size(); }

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s(data_.substr(pos_, n));
        pos_ += n;
        return s;
    }

private:
    void need(std::size_t n) const {
        if (data_.size() - pos_ < n) throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos_));
    }
    std::string_view data_;
    std::size_t pos_ = 0;
};

inline void put_record(std::string& out, const std::string& name, const Array& a) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, 2);
    put_u32(out, static_cast<std::uint32_t>(a.rows()));
    put_u32(out, static_cast<std::uint32_t>(a.cols()));
    for (float v : a.values()) put_f32(out, v);
}

}  // namespace ckpt_detail

inline std::string encode_checkpoint(const Checkpoint& c) {
    std::ostringstream blob;
    blob << format_config(c.config);
    blob << "vocab.words = " << c.vocab.words.join() << '\n';
    blob << "vocab.nodes = " << c.vocab.nodes.join() << '\n';
    blob << "state.epoch = " << c.epoch << '\n';
    blob << "state.rng = " << c.rng_state << '\n';
    blob << "state.adam_steps = " << c.adam_steps << '\n';
    const std::string b = blob.str();

    std::string out = "TFSG";
    ckpt_detail::put_u32(out, kCheckpointVersion);
    ckpt_detail::put_u32(out, static_cast<std::uint32_t>(b.size()));
    out += b;
    for (std::size_t i = 0; i < c.params.size(); ++i) ckpt_detail::put_record(out, c.params.name(i), c.params.value(i));
    if (!c.adam_m.empty()) {
        if (c.adam_m.size() != c.params.size() || c.adam_v.size() != c.params.size())
            throw CheckpointError("optimizer moments do not match the parameter list");
        for (std::size_t i = 0; i < c.params.size(); ++i) ckpt_detail::put_record(out, "adam.m/" + c.params.name(i), c.adam_m[i]);
        for (std::size_t i = 0; i < c.params.size(); ++i) ckpt_detail::put_record(out, "adam.v/" + c.params.name(i), c.adam_v[i]);
    }
    return out;
}

inline Checkpoint decode_checkpoint(std::string_view data) {
    ckpt_detail::Reader rd(data);
    if (rd.bytes(4) != "TFSG") throw CheckpointError("not a checkpoint (bad magic)");
    const std::uint32_t version = rd.u32();
    if (version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    const std::string blob = rd.bytes(rd.u32());

    Checkpoint c;
    std::vector<std::pair<std::string, std::string>> config_kv;
    for (auto& [k, v] : parse_key_values(blob)) {
        if (k == "vocab.words") {
            c.vocab.words = parse_vocabulary(v, 4, "<unk>");
        } else if (k == "vocab.nodes") {
            c.vocab.nodes = parse_vocabulary(v, 1, "<unk>");
        } else if (k == "state.epoch") {
            c.epoch = std::stoull(v);
        } else if (k == "state.rng") {
            c.rng_state = v;
        } else if (k == "state.adam_steps") {
            c.adam_steps = std::stoull(v);
        } else {
            config_kv.emplace_back(std::move(k), std::move(v));
        }
    }
    c.config = parse_config_text("", config_kv);

    std::map<std::string, Array> moments;
    while (!rd.done()) {
        const std::string name = rd.bytes(rd.u32());
        const std::uint32_t rank = rd.u32();
        if (rank != 2) throw CheckpointError("record '" + name + "' has unsupported rank " + std::to_string(rank));
        const std::uint32_t rows = rd.u32(), cols = rd.u32();
        Array a(rows, cols);
        for (auto& v : a.values()) v = rd.f32();
        if (name.starts_with("adam."))
            moments.emplace(name, std::move(a));
        else
            c.params.add(name, std::move(a));
    }
    if (!moments.empty()) {
        for (std::size_t i = 0; i < c.params.size(); ++i) {
            auto m = moments.find("adam.m/" + c.params.name(i));
            auto v = moments.find("adam.v/" + c.params.name(i));
            if (m == moments.end() || v == moments.end())
                throw CheckpointError("missing optimizer moments for " + c.params.name(i));
            c.adam_m.push_back(std::move(m->second));
            c.adam_v.push_back(std::move(v->second));
        }
    }
    return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
    const std::string bytes = encode_checkpoint(c);
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw CheckpointError("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw CheckpointError("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return decode_checkpoint(os.str());
}

/// Snapshot of a model, with the trainer's state when given.
inline Checkpoint make_checkpoint(const RunConfig& cfg, const Vocabularies& vocab, const Model& model,
                                  Trainer* trainer = nullptr) {
    Checkpoint c;
    c.config = cfg;
    c.vocab = vocab;
    for (std::size_t i = 0; i < model.params().size(); ++i) c.params.add(model.params().name(i), model.params().value(i));
    if (trainer) {
        c.epoch = trainer->epoch();
        std::ostringstream rng;
        rng << trainer->rng();
        c.rng_state = rng.str();
        c.adam_steps = trainer->optimizer().steps();
        c.adam_m = trainer->optimizer().first_moments();
        c.adam_v = trainer->optimizer().second_moments();
    }
    return c;
}

inline Model model_from_checkpoint(const Checkpoint& c) {
    const auto mc = c.config.model_config(c.vocab.nodes.size(), c.vocab.words.size());
    Model fresh(mc, 0);
    const auto& expected = fresh.params();
    if (expected.size() != c.params.size()) throw CheckpointError("checkpoint parameters do not match its configuration");
    for (std::size_t i = 0; i < expected.size(); ++i)
        if (expected.name(i) != c.params.name(i) || !expected.value(i).same_shape(c.params.value(i)))
            throw CheckpointError("checkpoint parameter '" + c.params.name(i) + "' does not match its configuration");
    ParamStore copy;
    for (std::size_t i = 0; i < c.params.size(); ++i) copy.add(c.params.name(i), c.params.value(i));
    return Model(mc, std::move(copy));
}

/// Restores optimizer, RNG and epoch counter into a trainer.
inline void restore_trainer(const Checkpoint& c, Trainer& trainer) {
    trainer.set_epoch(c.epoch);
    if (!c.rng_state.empty()) {
        std::istringstream is(c.rng_state);
        is >> trainer.rng();
        if (!is) throw CheckpointError("corrupt RNG state in checkpoint");
    }
    trainer.optimizer().restore(c.adam_steps, c.adam_m, c.adam_v);
}

}  // namespace tfsgc
