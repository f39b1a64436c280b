#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "tfsgc/param_store.hpp"
#include "tfsgc/tape.hpp"

namespace tfsgc {

struct GradCheckReport {
    double max_relative_error = 0.0;  // over compared coordinates
    std::size_t coordinates = 0;      // compared coordinates
    std::size_t kinks_skipped = 0;    // ±ε straddled a ReLU kink
    double max_relative_error_at_kinks = 0.0;
};

/// Builds the scalar loss on the given tape, reading parameters through
/// tape.param(store, ...).
template <typename T>
using LossBuilder = std::function<BasicVar<T>(BasicTape<T>&, const BasicParamStore<T>&)>;

/// Compares reverse-mode gradients with central differences on `sample`
/// randomly chosen coordinates (all coordinates if `sample` covers them).
/// Relative error per coordinate: |a - n| / max(1e-8, |a| + |n|).
///
/// A coordinate whose θ+ε and θ−ε passes take different ReLU branches has no
/// meaningful central difference; it is counted in kinks_skipped and another
/// coordinate is drawn in its place.
template <typename T>
GradCheckReport finite_difference_check(const LossBuilder<T>& forward, BasicParamStore<T>& params, double epsilon,
                                        std::size_t sample, std::uint64_t seed = 0) {
    params.zero_grad();
    {
        BasicTape<T> tape(params);
        tape.backward(forward(tape, params));
    }

    struct Coord {
        std::size_t param;
        std::size_t index;
    };
    std::vector<Coord> coords;
    for (std::size_t p = 0; p < params.size(); ++p)
        for (std::size_t i = 0; i < params.value(p).size(); ++i) coords.push_back({p, i});
    std::mt19937_64 rng(seed);
    std::shuffle(coords.begin(), coords.end(), rng);

    auto eval = [&](std::uint64_t& branches) {
        BasicTape<T> tape;
        const double v = static_cast<double>(forward(tape, params).value()[0]);
        branches = tape.branch_signature();
        return v;
    };

    GradCheckReport report;
    for (const Coord& c : coords) {
        if (report.coordinates >= sample) break;
        T& theta = params.value(c.param)[c.index];
        const T saved = theta;
        std::uint64_t bp = 0, bm = 0;
        theta = static_cast<T>(saved + epsilon);
        const double plus = eval(bp);
        theta = static_cast<T>(saved - epsilon);
        const double minus = eval(bm);
        theta = saved;
        const double numeric = (plus - minus) / (2.0 * epsilon);
        const double analytic = static_cast<double>(params.grad(c.param)[c.index]);
        const double rel = std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
        if (bp != bm) {
            ++report.kinks_skipped;
            report.max_relative_error_at_kinks = std::max(report.max_relative_error_at_kinks, rel);
            continue;
        }
        report.max_relative_error = std::max(report.max_relative_error, rel);
        ++report.coordinates;
    }
    return report;
}

}  // namespace tfsgc
