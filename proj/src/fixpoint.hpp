#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>

#include "serd/softq.hpp"
#include "serd/types.hpp"

namespace serd {
namespace detail {

inline double sup_diff(const numvec& a, const numvec& b) {
    double d = 0.0;
    for (size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
    return d;
}

inline double l1_diff(const numvec& a, const numvec& b) {
    double d = 0.0;
    for (size_t i = 0; i < a.size(); ++i) d += std::abs(a[i] - b[i]);
    return d;
}

/**
 * Synchronous fixed-point sweeps with guarded geometric extrapolation.
 *
 * `norm` must be a norm in which the operator actually contracts (sup-norm
 * for the Bellman-style operators, 1-norm for the transposed propagation);
 * per-sweep changes measured in it decay geometrically, so once the ratio is
 * stable over several consecutive sweeps the outstanding error sits
 * delta * rho / (1 - rho) ahead and we extrapolate there. Every jump is
 * verified with one plain sweep and rejected unless it beats plain iteration
 * in the contracting norm; rejected jumps back off exponentially. The
 * returned residual is a measured ||T(x) - x|| of the returned table, never
 * an extrapolated estimate.
 *
 * Returns (residual, sweeps); residual > tol means max_iter ran out.
 */
template <typename Apply, typename Norm = decltype(&sup_diff)>
std::pair<double, long> iterate_to_fixpoint(Apply&& apply, numvec& x, const SolveOptions& opts,
                                            Norm norm = &sup_diff) {
    if (!(opts.tol > 0.0)) throw std::invalid_argument("solver tolerance must be positive");

    numvec next(x.size());
    double prev_delta = std::numeric_limits<double>::infinity();
    double prev_ratio = -1.0;
    int stable = 0;
    int cooldown = 0;
    int failures = 0;
    long iter = 0;

    while (iter < opts.max_iter) {
        apply(x, next);
        ++iter;
        const double delta = norm(next, x);
        if (delta <= opts.tol) {
            x.swap(next);
            return {delta, iter};
        }

        bool try_jump = false;
        double ratio = -1.0;
        if (opts.accelerate && std::isfinite(prev_delta) && prev_delta > 0.0) {
            ratio = delta / prev_delta;
            const bool plausible = ratio > 0.05 && ratio < 0.99995;
            if (plausible && prev_ratio > 0.0 &&
                std::abs(ratio - prev_ratio) <= 0.005 * prev_ratio) {
                ++stable;
            } else {
                stable = 0;
            }
            prev_ratio = plausible ? ratio : -1.0;
            if (cooldown > 0) --cooldown;
            try_jump = stable >= 4 && cooldown == 0 && iter + 1 < opts.max_iter;
        }

        if (try_jump) {
            const double gain = ratio / (1.0 - ratio);
            numvec y(x.size()), y_next(x.size());
            for (size_t i = 0; i < x.size(); ++i) y[i] = next[i] + (next[i] - x[i]) * gain;
            apply(y, y_next);
            ++iter;
            const double y_delta = norm(y_next, y);
            if (y_delta <= delta * ratio) {  // at least as good as one more plain sweep
                x.swap(y_next);
                if (y_delta <= opts.tol) return {y_delta, iter};
                prev_delta = y_delta;
                prev_ratio = -1.0;
                stable = 0;
                continue;
            }
            // jump rejected: keep the plain iterate and back off
            failures = std::min(failures + 1, 6);
            cooldown = 16 << failures;
            stable = 0;
            prev_ratio = -1.0;
        }

        prev_delta = delta;
        x.swap(next);
    }
    return {prev_delta, iter};
}

} // namespace detail
} // namespace serd
