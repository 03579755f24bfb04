#pragma once

#include <span>

#include "serd/mdp.hpp"
#include "serd/types.hpp"

namespace serd {

/**
 * Transition probabilities aligned with the MDP's CSR successor layout:
 * probs[i] is the probability of succ_states[i]. Rows must be normalized.
 */
struct TransitionTable {
    numvec probs;

    std::span<const double> row(const TabularMdp& mdp, int sa) const {
        return {probs.data() + mdp.succ_offsets[sa],
                static_cast<size_t>(mdp.succ_offsets[sa + 1] - mdp.succ_offsets[sa])};
    }
};

struct SolveOptions {
    double tol = 1e-9;
    long max_iter = 50000;
    // Geometric extrapolation between synchronous sweeps. The final residual
    // is always measured against the plain operator, so results are
    // indistinguishable from unaccelerated iteration at the same tolerance.
    bool accelerate = true;
};

/**
 * Converged soft fixed point: Q-table, values V(s) = logsumexp_a Q(s,a), and
 * the Boltzmann policy pi(s,a) = exp(Q(s,a) - V(s)).
 */
struct SoftSolution {
    numvec q;       // |S|*|A|
    numvec v;       // |S|
    numvec policy;  // |S|*|A|
    double residual = 0.0;
    long iterations = 0;
};

/// Numerically stable log( sum_i exp(x_i) ).
double log_sum_exp(std::span<const double> x);

/// One synchronous application of the soft Bellman operator
/// T(Q)(s,a) = r(s,a) + gamma * sum_{s'} P(s'|s,a) logsumexp_{a'} Q(s',a').
/// Exposed because the contraction and monotonicity properties are stated for
/// exactly this operator.
void soft_bellman_apply(const TabularMdp& mdp, const numvec& reward,
                        const TransitionTable& p_agent, const numvec& q_in, numvec& q_out);

/**
 * Iterates the soft Bellman operator to its fixed point.
 *
 * Returns only when the sup-norm residual is <= opts.tol; throws
 * ConvergenceError (carrying the last residual) when max_iter is exhausted
 * first. The iteration starts from warm_start if given, else from zeros.
 */
SoftSolution soft_q_iteration(const TabularMdp& mdp, const numvec& theta_r,
                              const TransitionTable& p_agent, const SolveOptions& opts = {},
                              const numvec* warm_start = nullptr);

/// Boltzmann policy rows exp(q - logsumexp q) for a |S|*|A| table.
/// Throws std::invalid_argument on non-finite entries.
numvec derive_policy(const numvec& q, int n_states, int n_actions);

} // namespace serd
