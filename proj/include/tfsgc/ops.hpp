#pragma once

// Differentiable matrix ops recorded on a BasicTape. Each op computes its
// value eagerly and, on a recording tape, registers a closure that pushes the
// output gradient into its parents.

#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "tfsgc/array.hpp"
#include "tfsgc/tape.hpp"

namespace tfsgc {

/// How a binary mask enters the softmax. `additive` pushes disallowed logits to
/// -1e9 so they receive zero probability; `literal` multiplies the logits by
/// the mask before the softmax (a zeroed logit still gets weight e^0).
enum class MaskMode { additive, literal };

inline constexpr double kMaskedLogit = -1e9;
inline constexpr double kLayerNormEps = 1e-5;

namespace detail {

template <typename T>
void require_same_shape(const BasicArray<T>& a, const BasicArray<T>& b, const char* op) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
}

template <typename T>
void add_into(BasicArray<T>& dst, const BasicArray<T>& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename T>
void check_mask_rows(const BasicArray<T>& mask) {
    for (std::size_t r = 0; r < mask.rows(); ++r) {
        bool any = false;
        for (std::size_t c = 0; c < mask.cols(); ++c) any = any || mask(r, c) != T(0);
        if (!any) throw std::invalid_argument("masked_softmax: mask row " + std::to_string(r) + " has no allowed entry");
    }
}

}  // namespace detail

/// Row-wise softmax with an optional binary mask, on plain arrays.
template <typename T>
BasicArray<T> masked_softmax(const BasicArray<T>& logits, const BasicArray<T>* mask,
                             MaskMode mode = MaskMode::additive) {
    if (mask) {
        detail::require_same_shape(logits, *mask, "masked_softmax");
        detail::check_mask_rows(*mask);
    }
    BasicArray<T> out(logits.rows(), logits.cols());
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        auto in = logits.row(r);
        auto o = out.row(r);
        for (std::size_t c = 0; c < in.size(); ++c) {
            T z = in[c];
            if (mask) {
                const bool allowed = (*mask)(r, c) != T(0);
                if (mode == MaskMode::additive) {
                    if (!allowed) z = T(kMaskedLogit);
                } else {
                    z = (*mask)(r, c) * z;
                }
            }
            o[c] = z;
        }
        T mx = -std::numeric_limits<T>::infinity();
        for (T v : o) mx = std::max(mx, v);
        T sum = T(0);
        for (T& v : o) {
            v = std::exp(v - mx);
            sum += v;
        }
        for (T& v : o) v /= sum;
    }
    return out;
}

template <typename T>
BasicArray<T> softmax(const BasicArray<T>& logits) {
    return masked_softmax<T>(logits, nullptr);
}

template <typename T>
BasicArray<T> layer_norm(const BasicArray<T>& x, const BasicArray<T>& gain, const BasicArray<T>& bias) {
    if (gain.size() != x.cols() || bias.size() != x.cols())
        throw std::invalid_argument("layer_norm: gain/bias width mismatch");
    BasicArray<T> out(x.rows(), x.cols());
    const auto d = static_cast<T>(x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto in = x.row(r);
        T mean = T(0);
        for (T v : in) mean += v;
        mean /= d;
        T var = T(0);
        for (T v : in) var += (v - mean) * (v - mean);
        var /= d;
        const T inv = T(1) / std::sqrt(var + T(kLayerNormEps));
        for (std::size_t c = 0; c < in.size(); ++c) out(r, c) = gain[c] * (in[c] - mean) * inv + bias[c];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Tape ops

template <typename T>
BasicVar<T> matmul(BasicVar<T> a, BasicVar<T> b) {
    auto& t = a.tape();
    const auto& av = a.value();
    const auto& bv = b.value();
    if (av.cols() != bv.rows())
        throw std::invalid_argument("matmul: shape mismatch " + shape_string(av) + " · " + shape_string(bv));
    BasicArray<T> out(av.rows(), bv.cols());
    kernel::gemm_nn(av, bv, out);
    const int ia = a.id(), ib = b.id();
    return t.push(std::move(out), {a, b}, [ia, ib](BasicTape<T>& tp, int self) {
        const auto& g = tp.node_grad(self);
        if (tp.needs_grad(ia)) kernel::gemm_nt(g, tp.value(BasicVar<T>(&tp, ib)), tp.grad_buffer(ia));
        if (tp.needs_grad(ib)) kernel::gemm_tn(tp.value(BasicVar<T>(&tp, ia)), g, tp.grad_buffer(ib));
    });
}

/// a · bᵀ
template <typename T>
BasicVar<T> matmul_nt(BasicVar<T> a, BasicVar<T> b) {
    auto& t = a.tape();
    const auto& av = a.value();
    const auto& bv = b.value();
    if (av.cols() != bv.cols())
        throw std::invalid_argument("matmul_nt: shape mismatch " + shape_string(av) + " · " + shape_string(bv) + "ᵀ");
    BasicArray<T> out(av.rows(), bv.rows());
    kernel::gemm_nt(av, bv, out);
    const int ia = a.id(), ib = b.id();
    return t.push(std::move(out), {a, b}, [ia, ib](BasicTape<T>& tp, int self) {
        const auto& g = tp.node_grad(self);
        if (tp.needs_grad(ia)) kernel::gemm_nn(g, tp.value(BasicVar<T>(&tp, ib)), tp.grad_buffer(ia));
        if (tp.needs_grad(ib)) kernel::gemm_tn(g, tp.value(BasicVar<T>(&tp, ia)), tp.grad_buffer(ib));
    });
}

template <typename T>
BasicVar<T> add(BasicVar<T> a, BasicVar<T> b) {
    const auto& av = a.value();
    const auto& bv = b.value();
    detail::require_same_shape(av, bv, "add");
    BasicArray<T> out = av;
    detail::add_into(out, bv);
    const int ia = a.id(), ib = b.id();
    return a.tape().push(std::move(out), {a, b}, [ia, ib](BasicTape<T>& tp, int self) {
        const auto& g = tp.node_grad(self);
        if (tp.needs_grad(ia)) detail::add_into(tp.grad_buffer(ia), g);
        if (tp.needs_grad(ib)) detail::add_into(tp.grad_buffer(ib), g);
    });
}

/// a + broadcast(bias) with bias of shape 1×cols.
template <typename T>
BasicVar<T> add_row(BasicVar<T> a, BasicVar<T> bias) {
    const auto& av = a.value();
    const auto& bv = bias.value();
    if (bv.rows() != 1 || bv.cols() != av.cols()) throw std::invalid_argument("add_row: bias must be 1×cols");
    BasicArray<T> out = av;
    for (std::size_t r = 0; r < out.rows(); ++r)
        for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += bv[c];
    const int ia = a.id(), ib = bias.id();
    return a.tape().push(std::move(out), {a, bias}, [ia, ib](BasicTape<T>& tp, int self) {
        const auto& g = tp.node_grad(self);
        if (tp.needs_grad(ia)) detail::add_into(tp.grad_buffer(ia), g);
        if (tp.needs_grad(ib)) {
            auto& gb = tp.grad_buffer(ib);
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t c = 0; c < g.cols(); ++c) gb[c] += g(r, c);
        }
    });
}

template <typename T>
BasicVar<T> scale(BasicVar<T> a, std::type_identity_t<T> s) {
    BasicArray<T> out = a.value();
    for (auto& v : out.values()) v *= s;
    const int ia = a.id();
    return a.tape().push(std::move(out), {a}, [ia, s](BasicTape<T>& tp, int self) {
        const auto& g = tp.node_grad(self);
        auto& ga = tp.grad_buffer(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
    });
}

template <typename T>
BasicVar<T> relu(BasicVar<T> a) {
    a.tape().note_branches(a.value());
    BasicArray<T> out = a.value();
    for (auto& v : out.values()) v = v > T(0) ? v : T(0);
    const int ia = a.id();
    return a.tape().push(std::move(out), {a}, [ia](BasicTape<T>& tp, int self) {
        const auto& g = tp.node_grad(self);
        const auto& x = tp.value(BasicVar<T>(&tp, ia));
        auto& ga = tp.grad_buffer(ia);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (x[i] > T(0)) ga[i] += g[i];
    });
}

/// Elementwise product.
template <typename T>
BasicVar<T> mul(BasicVar<T> a, BasicVar<T> b) {
    const auto& av = a.value();
    const auto& bv = b.value();
    detail::require_same_shape(av, bv, "mul");
    BasicArray<T> out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    const int ia = a.id(), ib = b.id();
    return a.tape().push(std::move(out), {a, b}, [ia, ib](BasicTape<T>& tp, int self) {
        const auto& g = tp.node_grad(self);
        const auto& x = tp.value(BasicVar<T>(&tp, ia));
        const auto& y = tp.value(BasicVar<T>(&tp, ib));
        if (tp.needs_grad(ia)) {
            auto& ga = tp.grad_buffer(ia);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
        }
        if (tp.needs_grad(ib)) {
            auto& gb = tp.grad_buffer(ib);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
        }
    });
}

/// Scales row r of `a` (n×d) by s(r, 0) where `s` is n×1.
template <typename T>
BasicVar<T> mul_col(BasicVar<T> a, BasicVar<T> s) {
    const auto& av = a.value();
    const auto& sv = s.value();
    if (sv.rows() != av.rows() || sv.cols() != 1) throw std::invalid_argument("mul_col: scale must be rows×1");
    BasicArray<T> out = av;
    for (std::size_t r = 0; r < out.rows(); ++r)
        for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) *= sv[r];
    const int ia = a.id(), is = s.id();
    return a.tape().push(std::move(out), {a, s}, [ia, is](BasicTape<T>& tp, int self) {
        const auto& g = tp.node_grad(self);
        const auto& x = tp.value(BasicVar<T>(&tp, ia));
        const auto& w = tp.value(BasicVar<T>(&tp, is));
        if (tp.needs_grad(ia)) {
            auto& ga = tp.grad_buffer(ia);
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t c = 0; c < g.cols(); ++c) ga(r, c) += g(r, c) * w[r];
        }
        if (tp.needs_grad(is)) {
            auto& gs = tp.grad_buffer(is);
            for (std::size_t r = 0; r < g.rows(); ++r) gs[r] += dot<T>(g.row(r), x.row(r));
        }
    });
}

/// Per-row inner products of two n×d arrays, as n×1.
template <typename T>
BasicVar<T> row_dot(BasicVar<T> a, BasicVar<T> b) {
    const auto& av = a.value();
    const auto& bv = b.value();
    detail::require_same_shape(av, bv, "row_dot");
    BasicArray<T> out(av.rows(), 1);
    for (std::size_t r = 0; r < av.rows(); ++r) out[r] = dot<T>(av.row(r), bv.row(r));
    const int ia = a.id(), ib = b.id();
    return a.tape().push(std::move(out), {a, b}, [ia, ib](BasicTape<T>& tp, int self) {
        const auto& g = tp.node_grad(self);
        const auto& x = tp.value(BasicVar<T>(&tp, ia));
        const auto& y = tp.value(BasicVar<T>(&tp, ib));
        if (tp.needs_grad(ia)) {
            auto& ga = tp.grad_buffer(ia);
            for (std::size_t r = 0; r < x.rows(); ++r)
                for (std::size_t c = 0; c < x.cols(); ++c) ga(r, c) += g[r] * y(r, c);
        }
        if (tp.needs_grad(ib)) {
            auto& gb = tp.grad_buffer(ib);
            for (std::size_t r = 0; r < x.rows(); ++r)
                for (std::size_t c = 0; c < x.cols(); ++c) gb(r, c) += g[r] * x(r, c);
        }
    });
}

/// Row-wise softmax; `mask` (same shape, 0/1) selects the allowed entries.
template <typename T>
BasicVar<T> masked_softmax(BasicVar<T> logits, std::type_identity_t<const BasicArray<T>*> mask,
                           MaskMode mode = MaskMode::additive) {
    BasicArray<T> out = masked_softmax<T>(logits.value(), mask, mode);
    std::shared_ptr<const BasicArray<T>> literal_mask;
    if (mask && mode == MaskMode::literal) literal_mask = std::make_shared<const BasicArray<T>>(*mask);
    const int ia = logits.id();
    auto& t = logits.tape();
    const int self_id = static_cast<int>(t.size());
    return t.push(std::move(out), {logits}, [ia, self_id, literal_mask](BasicTape<T>& tp, int self) {
        const auto& g = tp.node_grad(self);
        const auto& p = tp.value(BasicVar<T>(&tp, self_id));
        auto& ga = tp.grad_buffer(ia);
        for (std::size_t r = 0; r < p.rows(); ++r) {
            const T s = dot<T>(g.row(r), p.row(r));
            for (std::size_t c = 0; c < p.cols(); ++c) {
                T d = p(r, c) * (g(r, c) - s);
                if (literal_mask) d *= (*literal_mask)(r, c);
                ga(r, c) += d;
            }
        }
    });
}

template <typename T>
BasicVar<T> softmax(BasicVar<T> logits) {
    return masked_softmax<T>(logits, nullptr);
}

/// Row-wise log-softmax.
template <typename T>
BasicVar<T> log_softmax(BasicVar<T> logits) {
    const auto& x = logits.value();
    BasicArray<T> out(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        T mx = -std::numeric_limits<T>::infinity();
        for (T v : x.row(r)) mx = std::max(mx, v);
        T sum = T(0);
        for (T v : x.row(r)) sum += std::exp(v - mx);
        const T lse = mx + std::log(sum);
        for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = x(r, c) - lse;
    }
    const int ia = logits.id();
    auto& t = logits.tape();
    const int self_id = static_cast<int>(t.size());
    return t.push(std::move(out), {logits}, [ia, self_id](BasicTape<T>& tp, int self) {
        const auto& g = tp.node_grad(self);
        const auto& y = tp.value(BasicVar<T>(&tp, self_id));
        auto& ga = tp.grad_buffer(ia);
        for (std::size_t r = 0; r < y.rows(); ++r) {
            T s = T(0);
            for (T v : g.row(r)) s += v;
            for (std::size_t c = 0; c < y.cols(); ++c) ga(r, c) += g(r, c) - std::exp(y(r, c)) * s;
        }
    });
}

template <typename T>
BasicVar<T> layer_norm(BasicVar<T> x, BasicVar<T> gain, BasicVar<T> bias) {
    const auto& xv = x.value();
    const auto& gv = gain.value();
    const auto& bv = bias.value();
    if (gv.size() != xv.cols() || bv.size() != xv.cols())
        throw std::invalid_argument("layer_norm: gain/bias width mismatch");
    const std::size_t n = xv.rows(), d = xv.cols();
    auto xhat = std::make_shared<BasicArray<T>>(n, d);
    auto inv = std::make_shared<std::vector<T>>(n);
    BasicArray<T> out(n, d);
    for (std::size_t r = 0; r < n; ++r) {
        auto in = xv.row(r);
        T mean = T(0);
        for (T v : in) mean += v;
        mean /= static_cast<T>(d);
        T var = T(0);
        for (T v : in) var += (v - mean) * (v - mean);
        var /= static_cast<T>(d);
        (*inv)[r] = T(1) / std::sqrt(var + T(kLayerNormEps));
        for (std::size_t c = 0; c < d; ++c) {
            (*xhat)(r, c) = (in[c] - mean) * (*inv)[r];
            out(r, c) = gv[c] * (*xhat)(r, c) + bv[c];
        }
    }
    const int ix = x.id(), ig = gain.id(), ib = bias.id();
    return x.tape().push(std::move(out), {x, gain, bias}, [ix, ig, ib, xhat, inv](BasicTape<T>& tp, int self) {
        const auto& g = tp.node_grad(self);
        const auto& gv = tp.value(BasicVar<T>(&tp, ig));
        const std::size_t n = g.rows(), d = g.cols();
        if (tp.needs_grad(ig)) {
            auto& gg = tp.grad_buffer(ig);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < d; ++c) gg[c] += g(r, c) * (*xhat)(r, c);
        }
        if (tp.needs_grad(ib)) {
            auto& gb = tp.grad_buffer(ib);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < d; ++c) gb[c] += g(r, c);
        }
        if (tp.needs_grad(ix)) {
            auto& gx = tp.grad_buffer(ix);
            std::vector<T> dxhat(d);
            for (std::size_t r = 0; r < n; ++r) {
                T m1 = T(0), m2 = T(0);
                for (std::size_t c = 0; c < d; ++c) {
                    dxhat[c] = g(r, c) * gv[c];
                    m1 += dxhat[c];
                    m2 += dxhat[c] * (*xhat)(r, c);
                }
                m1 /= static_cast<T>(d);
                m2 /= static_cast<T>(d);
                for (std::size_t c = 0; c < d; ++c) gx(r, c) += (*inv)[r] * (dxhat[c] - m1 - (*xhat)(r, c) * m2);
            }
        }
    });
}

/// Gathers rows of `table` (vocab×d) for each id.
template <typename T>
BasicVar<T> embedding(BasicVar<T> table, std::span<const int> ids) {
    const auto& tv = table.value();
    BasicArray<T> out(ids.size(), tv.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= tv.rows())
            throw std::out_of_range("embedding: id " + std::to_string(ids[i]) + " outside table of " +
                                    std::to_string(tv.rows()));
        auto src = tv.row(static_cast<std::size_t>(ids[i]));
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    auto idv = std::make_shared<std::vector<int>>(ids.begin(), ids.end());
    const int it = table.id();
    return table.tape().push(std::move(out), {table}, [it, idv](BasicTape<T>& tp, int self) {
        const auto& g = tp.node_grad(self);
        auto& gt = tp.grad_buffer(it);
        for (std::size_t i = 0; i < idv->size(); ++i) {
            auto dst = gt.row(static_cast<std::size_t>((*idv)[i]));
            auto src = g.row(i);
            for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
        }
    });
}

template <typename T>
BasicVar<T> slice_cols(BasicVar<T> a, std::size_t begin, std::size_t count) {
    const auto& av = a.value();
    if (begin + count > av.cols()) throw std::out_of_range("slice_cols: out of range");
    BasicArray<T> out(av.rows(), count);
    for (std::size_t r = 0; r < av.rows(); ++r)
        for (std::size_t c = 0; c < count; ++c) out(r, c) = av(r, begin + c);
    const int ia = a.id();
    return a.tape().push(std::move(out), {a}, [ia, begin](BasicTape<T>& tp, int self) {
        const auto& g = tp.node_grad(self);
        auto& ga = tp.grad_buffer(ia);
        for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t c = 0; c < g.cols(); ++c) ga(r, begin + c) += g(r, c);
    });
}

template <typename T>
BasicVar<T> slice_rows(BasicVar<T> a, std::size_t begin, std::size_t count) {
    const auto& av = a.value();
    if (begin + count > av.rows()) throw std::out_of_range("slice_rows: out of range");
    BasicArray<T> out(count, av.cols());
    std::copy(av.data() + begin * av.cols(), av.data() + (begin + count) * av.cols(), out.data());
    const int ia = a.id();
    return a.tape().push(std::move(out), {a}, [ia, begin](BasicTape<T>& tp, int self) {
        const auto& g = tp.node_grad(self);
        auto& ga = tp.grad_buffer(ia);
        const std::size_t off = begin * g.cols();
        for (std::size_t i = 0; i < g.size(); ++i) ga[off + i] += g[i];
    });
}

template <typename T>
BasicVar<T> concat_cols(const std::vector<BasicVar<T>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    const std::size_t rows = parts.front().value().rows();
    std::size_t cols = 0;
    for (const auto& p : parts) {
        if (p.value().rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
        cols += p.value().cols();
    }
    BasicArray<T> out(rows, cols);
    auto ids = std::make_shared<std::vector<int>>();
    std::size_t off = 0;
    for (const auto& p : parts) {
        const auto& pv = p.value();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < pv.cols(); ++c) out(r, off + c) = pv(r, c);
        off += pv.cols();
        ids->push_back(p.id());
    }
    return parts.front().tape().push(std::move(out), parts, [ids](BasicTape<T>& tp, int self) {
        const auto& g = tp.node_grad(self);
        std::size_t off = 0;
        for (int id : *ids) {
            const std::size_t w = tp.value(BasicVar<T>(&tp, id)).cols();
            if (tp.needs_grad(id)) {
                auto& gp = tp.grad_buffer(id);
                for (std::size_t r = 0; r < g.rows(); ++r)
                    for (std::size_t c = 0; c < w; ++c) gp(r, c) += g(r, off + c);
            }
            off += w;
        }
    });
}

template <typename T>
BasicVar<T> concat_rows(const std::vector<BasicVar<T>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
    const std::size_t cols = parts.front().value().cols();
    std::size_t rows = 0;
    for (const auto& p : parts) {
        if (p.value().cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
        rows += p.value().rows();
    }
    BasicArray<T> out(rows, cols);
    auto ids = std::make_shared<std::vector<int>>();
    std::size_t off = 0;
    for (const auto& p : parts) {
        const auto& pv = p.value();
        std::copy(pv.data(), pv.data() + pv.size(), out.data() + off);
        off += pv.size();
        ids->push_back(p.id());
    }
    return parts.front().tape().push(std::move(out), parts, [ids](BasicTape<T>& tp, int self) {
        const auto& g = tp.node_grad(self);
        std::size_t off = 0;
        for (int id : *ids) {
            const std::size_t n = tp.value(BasicVar<T>(&tp, id)).size();
            if (tp.needs_grad(id)) {
                auto& gp = tp.grad_buffer(id);
                for (std::size_t i = 0; i < n; ++i) gp[i] += g[off + i];
            }
            off += n;
        }
    });
}

/// out(r, 0) = a(r, cols[r]); negative column indices yield 0 and no gradient.
template <typename T>
BasicVar<T> pick(BasicVar<T> a, std::span<const int> cols) {
    const auto& av = a.value();
    if (cols.size() != av.rows()) throw std::invalid_argument("pick: one index per row required");
    BasicArray<T> out(av.rows(), 1);
    for (std::size_t r = 0; r < av.rows(); ++r) {
        if (cols[r] >= static_cast<int>(av.cols())) throw std::out_of_range("pick: column out of range");
        out[r] = cols[r] < 0 ? T(0) : av(r, static_cast<std::size_t>(cols[r]));
    }
    auto idx = std::make_shared<std::vector<int>>(cols.begin(), cols.end());
    const int ia = a.id();
    return a.tape().push(std::move(out), {a}, [ia, idx](BasicTape<T>& tp, int self) {
        const auto& g = tp.node_grad(self);
        auto& ga = tp.grad_buffer(ia);
        for (std::size_t r = 0; r < idx->size(); ++r)
            if ((*idx)[r] >= 0) ga(r, static_cast<std::size_t>((*idx)[r])) += g[r];
    });
}

template <typename T>
BasicVar<T> sum(BasicVar<T> a) {
    T s = T(0);
    for (T v : a.value().values()) s += v;
    const int ia = a.id();
    return a.tape().push(BasicArray<T>(1, 1, s), {a}, [ia](BasicTape<T>& tp, int self) {
        const T g = tp.node_grad(self)[0];
        auto& ga = tp.grad_buffer(ia);
        for (auto& v : ga.values()) v += g;
    });
}

/// Elementwise log; inputs must be positive.
template <typename T>
BasicVar<T> log(BasicVar<T> a) {
    BasicArray<T> out = a.value();
    for (auto& v : out.values()) v = std::log(v);
    const int ia = a.id();
    return a.tape().push(std::move(out), {a}, [ia](BasicTape<T>& tp, int self) {
        const auto& g = tp.node_grad(self);
        const auto& x = tp.value(BasicVar<T>(&tp, ia));
        auto& ga = tp.grad_buffer(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / x[i];
    });
}

/// 1 where a > threshold else 0. Has no derivative; reaching it during
/// backward() is an error.
template <typename T>
BasicVar<T> step(BasicVar<T> a, std::type_identity_t<T> threshold = T(0)) {
    BasicArray<T> out = a.value();
    for (auto& v : out.values()) v = v > threshold ? T(1) : T(0);
    return a.tape().push(std::move(out), {a}, nullptr, /*differentiable=*/false);
}

}  // namespace tfsgc
