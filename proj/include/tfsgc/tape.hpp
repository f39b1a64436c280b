#pragma once

// Reverse-mode differentiation over a linear tape of matrix-valued nodes.
// Nodes are appended in evaluation order, so a reverse sweep over the tape
// visits every node after all of its consumers.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "tfsgc/array.hpp"
#include "tfsgc/param_store.hpp"

namespace tfsgc {

template <typename T>
class BasicTape;

template <typename T>
class BasicVar {
public:
    BasicVar() = default;
    BasicVar(BasicTape<T>* tape, int id) : tape_(tape), id_(id) {}

    bool valid() const { return tape_ != nullptr && id_ >= 0; }
    BasicTape<T>& tape() const { return *tape_; }
    int id() const { return id_; }
    const BasicArray<T>& value() const { return tape_->value(*this); }
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }

private:
    BasicTape<T>* tape_ = nullptr;
    int id_ = -1;
};

template <typename T>
class BasicTape {
public:
    using Var = BasicVar<T>;
    using Backward = std::function<void(BasicTape&, int)>;

    /// Inference tape: nothing is recorded for the backward pass.
    BasicTape() = default;
    /// Recording tape: gradients of parameters bound from `grads` accumulate there.
    explicit BasicTape(BasicParamStore<T>& grads) : recording_(true), grads_(&grads) {}

    BasicTape(const BasicTape&) = delete;
    BasicTape& operator=(const BasicTape&) = delete;

    bool recording() const { return recording_; }
    std::size_t size() const { return nodes_.size(); }

    Var constant(BasicArray<T> value) {
        Node n;
        n.value = std::move(value);
        nodes_.push_back(std::move(n));
        return Var(this, static_cast<int>(nodes_.size() - 1));
    }

    /// Binds a parameter as a leaf without copying it. Bound once per tape.
    Var param(const BasicParamStore<T>& store, std::size_t idx) {
        if (&store != bound_store_) {
            bound_store_ = &store;
            param_nodes_.assign(store.size(), -1);
        }
        if (param_nodes_.size() < store.size()) param_nodes_.resize(store.size(), -1);
        if (param_nodes_[idx] >= 0) return Var(this, param_nodes_[idx]);
        Node n;
        n.ref = &store.value(idx);
        if (recording_ && grads_ == &store) {
            n.ref_grad = &grads_->grad(idx);
            n.needs_grad = true;
        }
        nodes_.push_back(std::move(n));
        param_nodes_[idx] = static_cast<int>(nodes_.size() - 1);
        return Var(this, param_nodes_[idx]);
    }

    Var param(const BasicParamStore<T>& store, std::string_view name) { return param(store, store.index(name)); }

    const BasicArray<T>& value(Var v) const {
        const Node& n = nodes_.at(static_cast<std::size_t>(v.id()));
        return n.ref ? *n.ref : n.value;
    }

    /// Gradient of the most recent backward() with respect to `v`; empty if
    /// the node was not on the gradient path.
    const BasicArray<T>& grad(Var v) const {
        const Node& n = nodes_.at(static_cast<std::size_t>(v.id()));
        return n.ref_grad ? *n.ref_grad : n.grad;
    }

    bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

    /// Gradient buffer of node `id`, allocated as zeros on first touch.
    BasicArray<T>& grad_buffer(int id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.ref_grad) return *n.ref_grad;
        if (n.grad.empty()) {
            const auto& v = n.ref ? *n.ref : n.value;
            n.grad = BasicArray<T>(v.rows(), v.cols());
        }
        return n.grad;
    }
    const BasicArray<T>& node_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }

    /// Appends an op result. `parents` decide whether the node needs a gradient.
    Var push(BasicArray<T> value, std::initializer_list<Var> parents, Backward backward,
             bool differentiable = true) {
        Node n;
        n.value = std::move(value);
        if (recording_) {
            for (const Var& p : parents) n.needs_grad = n.needs_grad || needs_grad(p.id());
            if (n.needs_grad) {
                n.backward = std::move(backward);
                n.differentiable = differentiable;
            }
        }
        nodes_.push_back(std::move(n));
        return Var(this, static_cast<int>(nodes_.size() - 1));
    }

    Var push(BasicArray<T> value, const std::vector<Var>& parents, Backward backward) {
        Node n;
        n.value = std::move(value);
        if (recording_) {
            for (const Var& p : parents) n.needs_grad = n.needs_grad || needs_grad(p.id());
            if (n.needs_grad) n.backward = std::move(backward);
        }
        nodes_.push_back(std::move(n));
        return Var(this, static_cast<int>(nodes_.size() - 1));
    }

    /// Folds the sign pattern of a piecewise-linear op's input into a running
    /// hash. Two forward passes with equal signatures took the same branches.
    void note_branches(const BasicArray<T>& x) {
        for (T v : x.values()) {
            branch_hash_ ^= v > T(0) ? 0x9dU : 0x3bU;
            branch_hash_ *= 1099511628211ULL;
        }
    }
    std::uint64_t branch_signature() const { return branch_hash_; }

    /// Drops every node created after `mark` (used between decoding steps).
    void truncate(std::size_t mark) {
        while (nodes_.size() > mark) nodes_.pop_back();
        for (int& p : param_nodes_)
            if (p >= static_cast<int>(mark)) p = -1;
    }

    /// Accumulates d(loss)/d(param) into the bound parameter store.
    void backward(Var loss) {
        if (!recording_) throw std::logic_error("backward() on a non-recording tape");
        if (loss.id() < 0 || &loss.tape() != this) throw std::invalid_argument("backward(): loss is not on this tape");
        const auto& lv = value(loss);
        if (lv.rows() != 1 || lv.cols() != 1)
            throw std::invalid_argument("backward(): loss must be a scalar, got " + shape_string(lv));
        for (auto& n : nodes_)
            if (!n.ref_grad) n.grad = BasicArray<T>();
        if (!needs_grad(loss.id())) return;
        grad_buffer(loss.id())(0, 0) = T(1);
        for (int id = loss.id(); id >= 0; --id) {
            Node& n = nodes_[static_cast<std::size_t>(id)];
            if (n.ref_grad || n.grad.empty() || !n.needs_grad) continue;
            if (!n.differentiable) throw std::logic_error("backward(): non-differentiable op on the gradient path");
            if (n.backward) n.backward(*this, id);
        }
    }

private:
    struct Node {
        BasicArray<T> value;
        BasicArray<T> grad;
        const BasicArray<T>* ref = nullptr;
        BasicArray<T>* ref_grad = nullptr;
        Backward backward;
        bool needs_grad = false;
        bool differentiable = true;
    };

    bool recording_ = false;
    BasicParamStore<T>* grads_ = nullptr;
    const BasicParamStore<T>* bound_store_ = nullptr;
    std::vector<int> param_nodes_;
    std::deque<Node> nodes_;
    std::uint64_t branch_hash_ = 14695981039346656037ULL;
};

using Tape = BasicTape<float>;
using Var = BasicVar<float>;

}  // namespace tfsgc
