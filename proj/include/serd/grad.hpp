#pragma once

#include <span>

#include "serd/dynamics.hpp"
#include "serd/mdp.hpp"
#include "serd/softq.hpp"
#include "serd/types.hpp"

namespace serd {

struct DemoSet; // traj.hpp

/**
 * Gradient of the converged soft Q-table with respect to every parameter:
 * phi[(s*A+a)*n + i] = dQ(s,a)/dtheta_i. The true-dynamics block is
 * identically zero in untied mode (the Q-function never sees those
 * parameters); in tied mode the shared block carries the agent-role partials.
 */
struct GradTensor {
    int n_params = 0;
    numvec phi;  // |S|*|A| * n_params
    double residual = 0.0;
    long iterations = 0;

    std::span<const double> at(int sa) const {
        return {phi.data() + static_cast<size_t>(sa) * n_params, static_cast<size_t>(n_params)};
    }
    std::span<double> at(int sa) {
        return {phi.data() + static_cast<size_t>(sa) * n_params, static_cast<size_t>(n_params)};
    }
};

/// Per-parameter constant terms of the gradient fixed point: the feature entry
/// for reward weights and gamma * sum_s' dP(s'|s,a) V(s') for agent-dynamics
/// energies. Shared by the iterative, direct, and adjoint routes.
numvec gradient_constant_terms(const TabularMdp& mdp, const SoftSolution& sol,
                               const BoltzmannDynamics& dyn_agent, const ParamLayout& layout);

/// One synchronous application of the gradient propagation operator
/// U(Phi)(s,a,i) = b(s,a,i) + gamma * sum_{s'} P(s'|s,a) E_{pi(s',.)}[Phi(s',.,i)].
/// Exposed for the contraction/monotonicity property tests.
void soft_q_gradient_apply(const TabularMdp& mdp, const SoftSolution& sol,
                           const TransitionTable& p_agent, const numvec& constant_terms,
                           int n_params, const numvec& phi_in, numvec& phi_out);

/**
 * Fixed point of the gradient propagation operator, iterated from warm_start
 * (or zeros) until the sup-norm residual is <= opts.tol.
 * Requires a converged SoftSolution produced with dyn_agent's probabilities.
 * Throws ConvergenceError when max_iter is exhausted.
 */
GradTensor soft_q_gradient(const TabularMdp& mdp, const SoftSolution& sol,
                           const BoltzmannDynamics& dyn_agent, const ParamLayout& layout,
                           const SolveOptions& opts = {}, const GradTensor* warm_start = nullptr);

/// Same fixed point via one LU factorization of (I - gamma*M) with
/// M[(s,a),(s',a')] = P(s'|s,a) pi(s',a'), reused for every parameter's
/// right-hand side. Exact up to linear-solver roundoff.
GradTensor soft_q_gradient_direct(const TabularMdp& mdp, const SoftSolution& sol,
                                  const BoltzmannDynamics& dyn_agent, const ParamLayout& layout);

/// Picks direct for cold small instances (<= 2000 state-action pairs) and the
/// warm-started iteration otherwise.
GradTensor soft_q_gradient_auto(const TabularMdp& mdp, const SoftSolution& sol,
                                const BoltzmannDynamics& dyn_agent, const ParamLayout& layout,
                                const SolveOptions& opts = {},
                                const GradTensor* warm_start = nullptr);

/// d log pi(s,a) / dtheta = Phi(s,a,.) - E_{pi(s,.)}[Phi(s,.,.)]
numvec policy_log_gradient(const GradTensor& phi, const SoftSolution& sol, int n_actions, int s,
                           int a);

struct LikelihoodOptions {
    // The trajectory definition records one final state-action pair with no
    // successor; whether its policy factor belongs in the likelihood is a
    // modeling choice. Included by default.
    bool include_final_policy_term = true;
};

struct LikelihoodReport {
    double log_likelihood = 0.0;
    numvec gradient;        // empty for value-only evaluations
    numvec per_trajectory;  // policy + transition terms; start terms excluded
};

/**
 * Demonstration log-likelihood: per trajectory log P(s0) plus log pi for every
 * recorded pair (the final pair contributes policy only) plus log P_true for
 * every recorded transition. Throws DataError, naming trajectory and step, if
 * a transition leaves the successor set.
 */
LikelihoodReport log_likelihood(const DemoSet& demos, const TabularMdp& mdp,
                                const SoftSolution& sol, const BoltzmannDynamics& dyn_true,
                                const numvec& start_dist, const LikelihoodOptions& opts = {});

/**
 * Full likelihood gradient: accumulated policy log-gradients plus accumulated
 * d log P_true terms. The transition term lands in the true-dynamics block
 * (untied) or the shared block (tied). Throws DataError on a zero-probability
 * observed transition.
 */
LikelihoodReport likelihood_gradient(const DemoSet& demos, const TabularMdp& mdp,
                                     const GradTensor& phi, const SoftSolution& sol,
                                     const BoltzmannDynamics& dyn_true, const ParamLayout& layout,
                                     const LikelihoodOptions& opts = {});

/**
 * Demonstrations aggregated to sufficient statistics: visit counts per (s,a)
 * and transition counts aligned with the successor layout. The likelihood and
 * its gradient depend on the demos only through these.
 */
struct DemoCounts {
    numvec pair_count;        // |S|*|A|, includes final pairs
    numvec policy_count;      // |S|*|A|, pairs whose policy factor is counted
    numvec transition_count;  // aligned with mdp.succ_states
    numvec start_count;       // |S|
    double total_pairs = 0.0;
};

DemoCounts count_demos(const DemoSet& demos, const TabularMdp& mdp,
                       const LikelihoodOptions& opts = {});

/**
 * Likelihood gradient via the adjoint of the propagation operator: solves one
 * linear fixed point w = c + gamma * M^T w (instead of one per parameter) and
 * contracts w with the per-parameter constant terms. Numerically identical to
 * the tensor route; preferred inside optimizer loops where N_theta is large.
 */
LikelihoodReport likelihood_gradient_adjoint(const DemoCounts& counts, const TabularMdp& mdp,
                                             const SoftSolution& sol,
                                             const BoltzmannDynamics& dyn_agent,
                                             const BoltzmannDynamics& dyn_true,
                                             const ParamLayout& layout,
                                             const SolveOptions& opts = {},
                                             numvec* warm_adjoint = nullptr);

} // namespace serd
