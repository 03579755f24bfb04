#include "serd/softq.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "fixpoint.hpp"

namespace serd {

double log_sum_exp(std::span<const double> x) {
    double m = -std::numeric_limits<double>::infinity();
    for (double v : x) m = std::max(m, v);
    if (!std::isfinite(m)) return m;  // all -inf, or a nan already present
    double sum = 0.0;
    for (double v : x) sum += std::exp(v - m);
    return m + std::log(sum);
}

void soft_bellman_apply(const TabularMdp& mdp, const numvec& reward,
                        const TransitionTable& p_agent, const numvec& q_in, numvec& q_out) {
    const int A = mdp.n_actions;
    q_out.resize(q_in.size());

    // value of every state under the previous table, then one backup per (s,a)
    thread_local numvec v;
    v.resize(mdp.n_states);
    for (int s = 0; s < mdp.n_states; ++s)
        v[s] = log_sum_exp({q_in.data() + static_cast<size_t>(s) * A, static_cast<size_t>(A)});

    for (int sa = 0; sa < mdp.sa_count(); ++sa) {
        const int begin = mdp.succ_offsets[sa];
        const int end = mdp.succ_offsets[sa + 1];
        double ev = 0.0;
        for (int i = begin; i < end; ++i) ev += p_agent.probs[i] * v[mdp.succ_states[i]];
        q_out[sa] = reward[sa] + mdp.discount * ev;
    }
}

SoftSolution soft_q_iteration(const TabularMdp& mdp, const numvec& theta_r,
                              const TransitionTable& p_agent, const SolveOptions& opts,
                              const numvec* warm_start) {
    const numvec r = reward_table(mdp, theta_r);
    numvec q = warm_start ? *warm_start : numvec(mdp.sa_count(), 0.0);
    if (static_cast<int>(q.size()) != mdp.sa_count())
        throw std::invalid_argument("soft_q_iteration: warm start has wrong shape");

    auto [residual, iters] = detail::iterate_to_fixpoint(
        [&](const numvec& in, numvec& out) { soft_bellman_apply(mdp, r, p_agent, in, out); }, q,
        opts);
    if (residual > opts.tol)
        throw ConvergenceError("soft_q_iteration: no fixed point within " +
                                   std::to_string(opts.max_iter) + " sweeps (residual " +
                                   std::to_string(residual) + ")",
                               residual, iters);

    SoftSolution sol;
    sol.q = std::move(q);
    sol.residual = residual;
    sol.iterations = iters;
    sol.v.resize(mdp.n_states);
    for (int s = 0; s < mdp.n_states; ++s)
        sol.v[s] = log_sum_exp({sol.q.data() + static_cast<size_t>(s) * mdp.n_actions,
                                static_cast<size_t>(mdp.n_actions)});
    sol.policy = derive_policy(sol.q, mdp.n_states, mdp.n_actions);
    return sol;
}

numvec derive_policy(const numvec& q, int n_states, int n_actions) {
    if (q.size() != static_cast<size_t>(n_states) * n_actions)
        throw std::invalid_argument("derive_policy: table shape mismatch");
    for (double v : q)
        if (!std::isfinite(v)) throw std::invalid_argument("derive_policy: non-finite Q value");

    numvec policy(q.size());
    for (int s = 0; s < n_states; ++s) {
        const double* row = q.data() + static_cast<size_t>(s) * n_actions;
        double* out = policy.data() + static_cast<size_t>(s) * n_actions;
        const double lse = log_sum_exp({row, static_cast<size_t>(n_actions)});
        double sum = 0.0;
        for (int a = 0; a < n_actions; ++a) sum += out[a] = std::exp(row[a] - lse);
        for (int a = 0; a < n_actions; ++a) out[a] /= sum;
    }
    return policy;
}

} // namespace serd
