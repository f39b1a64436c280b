#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tfsgc/array.hpp"

namespace tfsgc {

/// Named learnable arrays, each paired with a gradient accumulator of the
/// same shape. Insertion order is stable and is the serialization order.
template <typename T>
class BasicParamStore {
public:
    std::size_t add(std::string name, BasicArray<T> value) {
        if (index_.contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
        const std::size_t idx = entries_.size();
        index_.emplace(name, idx);
        BasicArray<T> grad(value.rows(), value.cols());
        entries_.push_back({std::move(name), std::move(value), std::move(grad)});
        return idx;
    }

    bool contains(std::string_view name) const { return index_.contains(std::string(name)); }

    std::size_t index(std::string_view name) const {
        auto it = index_.find(std::string(name));
        if (it == index_.end()) throw std::out_of_range("unknown parameter: " + std::string(name));
        return it->second;
    }

    std::size_t size() const { return entries_.size(); }
    const std::string& name(std::size_t i) const { return entries_.at(i).name; }

    BasicArray<T>& value(std::size_t i) { return entries_.at(i).value; }
    const BasicArray<T>& value(std::size_t i) const { return entries_.at(i).value; }
    BasicArray<T>& value(std::string_view n) { return value(index(n)); }
    const BasicArray<T>& value(std::string_view n) const { return value(index(n)); }

    BasicArray<T>& grad(std::size_t i) { return entries_.at(i).grad; }
    const BasicArray<T>& grad(std::size_t i) const { return entries_.at(i).grad; }
    const BasicArray<T>& grad(std::string_view n) const { return grad(index(n)); }

    void zero_grad() {
        for (auto& e : entries_) e.grad.fill(T(0));
    }

    /// Adds another store's gradients into this one (per-worker merge).
    void accumulate_grads_from(const BasicParamStore& other) {
        if (other.size() != size()) throw std::invalid_argument("accumulate_grads_from: layout mismatch");
        for (std::size_t i = 0; i < size(); ++i) {
            auto& g = entries_[i].grad;
            const auto& o = other.entries_[i].grad;
            for (std::size_t k = 0; k < g.size(); ++k) g[k] += o[k];
        }
    }

    std::size_t total_size() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e.value.size();
        return n;
    }

    template <typename U>
    BasicParamStore<U> cast() const {
        BasicParamStore<U> out;
        for (const auto& e : entries_) out.add(e.name, e.value.template cast<U>());
        return out;
    }

private:
    struct Entry {
        std::string name;
        BasicArray<T> value;
        BasicArray<T> grad;
    };
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

using ParamStore = BasicParamStore<float>;

}  // namespace tfsgc
