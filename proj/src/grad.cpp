#include "serd/grad.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

#include "fixpoint.hpp"
#include "serd/traj.hpp"

namespace serd {

namespace {

// log pi straight from the solution tables; exact and never log(0)
inline double log_policy(const SoftSolution& sol, int n_actions, int s, int a) {
    return sol.q[static_cast<size_t>(s) * n_actions + a] - sol.v[s];
}

// Expected gradient under the policy, per state: out[s*n + i] = E_pi[Phi(s,.,i)]
void policy_expectation(const TabularMdp& mdp, const SoftSolution& sol, const numvec& phi,
                        int n_params, numvec& out) {
    const int A = mdp.n_actions;
    out.assign(static_cast<size_t>(mdp.n_states) * n_params, 0.0);
    for (int s = 0; s < mdp.n_states; ++s) {
        double* dst = out.data() + static_cast<size_t>(s) * n_params;
        for (int a = 0; a < A; ++a) {
            const double w = sol.policy[static_cast<size_t>(s) * A + a];
            const double* src = phi.data() + (static_cast<size_t>(s) * A + a) * n_params;
            for (int i = 0; i < n_params; ++i) dst[i] += w * src[i];
        }
    }
}

} // namespace

numvec gradient_constant_terms(const TabularMdp& mdp, const SoftSolution& sol,
                               const BoltzmannDynamics& dyn_agent, const ParamLayout& layout) {
    const int n = layout.total();
    const int n_out = dyn_agent.assignment->n_outcomes;
    numvec b(static_cast<size_t>(mdp.sa_count()) * n, 0.0);

    std::vector<numvec> per_model(dyn_agent.assignment->n_models);
    for (int m = 0; m < dyn_agent.assignment->n_models; ++m)
        per_model[m] = model_probs(dyn_agent, m);

    for (int sa = 0; sa < mdp.sa_count(); ++sa) {
        double* row = b.data() + static_cast<size_t>(sa) * n;

        // reward block: dR/dtheta_k = f_k(s,a)
        const double* f = mdp.features.data() + static_cast<size_t>(sa) * mdp.n_features;
        for (int k = 0; k < layout.d; ++k) row[layout.reward_index(k)] = f[k];

        // agent-dynamics block: gamma * sum_s' (dP/de_mk) V(s')
        // = gamma * p_k (V(succ_k) - E_p[V]) for the owning model's energies
        const int m = dyn_agent.assignment->model_of[sa];
        const numvec& p = per_model[m];
        const auto slots = dyn_agent.assignment->slots(sa);
        const auto succ = mdp.successor_set(sa);
        double ev = 0.0;
        for (int k = 0; k < n_out; ++k) ev += p[k] * sol.v[succ[slots[k]]];
        for (int k = 0; k < n_out; ++k) {
            const double g = mdp.discount * p[k] * (sol.v[succ[slots[k]]] - ev);
            row[layout.agent_index(m * n_out + k)] = g;
        }
        // true-dynamics block: the Q-function does not depend on those
        // parameters, so untied rows stay exactly zero; in tied mode
        // agent_index aliases the shared block already.
    }
    return b;
}

void soft_q_gradient_apply(const TabularMdp& mdp, const SoftSolution& sol,
                           const TransitionTable& p_agent, const numvec& constant_terms,
                           int n_params, const numvec& phi_in, numvec& phi_out) {
    thread_local numvec expect;
    policy_expectation(mdp, sol, phi_in, n_params, expect);

    phi_out.resize(phi_in.size());
    for (int sa = 0; sa < mdp.sa_count(); ++sa) {
        double* out = phi_out.data() + static_cast<size_t>(sa) * n_params;
        const double* b = constant_terms.data() + static_cast<size_t>(sa) * n_params;
        for (int i = 0; i < n_params; ++i) out[i] = b[i];
        const int begin = mdp.succ_offsets[sa];
        const int end = mdp.succ_offsets[sa + 1];
        for (int j = begin; j < end; ++j) {
            const double w = mdp.discount * p_agent.probs[j];
            const double* e = expect.data() + static_cast<size_t>(mdp.succ_states[j]) * n_params;
            for (int i = 0; i < n_params; ++i) out[i] += w * e[i];
        }
    }
}

GradTensor soft_q_gradient(const TabularMdp& mdp, const SoftSolution& sol,
                           const BoltzmannDynamics& dyn_agent, const ParamLayout& layout,
                           const SolveOptions& opts, const GradTensor* warm_start) {
    const int n = layout.total();
    const numvec b = gradient_constant_terms(mdp, sol, dyn_agent, layout);
    const TransitionTable p_agent = materialize(dyn_agent, mdp);

    numvec phi = warm_start ? warm_start->phi
                            : numvec(static_cast<size_t>(mdp.sa_count()) * n, 0.0);
    if (phi.size() != static_cast<size_t>(mdp.sa_count()) * n)
        throw std::invalid_argument("soft_q_gradient: warm start has wrong shape");

    auto [residual, iters] = detail::iterate_to_fixpoint(
        [&](const numvec& in, numvec& out) {
            soft_q_gradient_apply(mdp, sol, p_agent, b, n, in, out);
        },
        phi, opts);
    if (residual > opts.tol)
        throw ConvergenceError("soft_q_gradient: no fixed point within " +
                                   std::to_string(opts.max_iter) + " sweeps (residual " +
                                   std::to_string(residual) + ")",
                               residual, iters);

    GradTensor out;
    out.n_params = n;
    out.phi = std::move(phi);
    out.residual = residual;
    out.iterations = iters;
    return out;
}

GradTensor soft_q_gradient_direct(const TabularMdp& mdp, const SoftSolution& sol,
                                  const BoltzmannDynamics& dyn_agent, const ParamLayout& layout) {
    const int n_sa = mdp.sa_count();
    const int n = layout.total();
    const int A = mdp.n_actions;
    const numvec b = gradient_constant_terms(mdp, sol, dyn_agent, layout);
    const TransitionTable p_agent = materialize(dyn_agent, mdp);

    // (I - gamma*M) with M[(s,a),(s',a')] = P(s'|s,a) pi(s',a'); gamma < 1
    // keeps the system nonsingular (Neumann series).
    Eigen::MatrixXd lhs = Eigen::MatrixXd::Identity(n_sa, n_sa);
    for (int sa = 0; sa < n_sa; ++sa) {
        const int begin = mdp.succ_offsets[sa];
        const int end = mdp.succ_offsets[sa + 1];
        for (int j = begin; j < end; ++j) {
            const int s2 = mdp.succ_states[j];
            const double w = mdp.discount * p_agent.probs[j];
            for (int a2 = 0; a2 < A; ++a2)
                lhs(sa, s2 * A + a2) -= w * sol.policy[static_cast<size_t>(s2) * A + a2];
        }
    }

    Eigen::MatrixXd rhs(n_sa, n);
    for (int sa = 0; sa < n_sa; ++sa)
        for (int i = 0; i < n; ++i) rhs(sa, i) = b[static_cast<size_t>(sa) * n + i];

    const Eigen::MatrixXd x = Eigen::PartialPivLU<Eigen::MatrixXd>(lhs).solve(rhs);

    GradTensor out;
    out.n_params = n;
    out.phi.resize(static_cast<size_t>(n_sa) * n);
    for (int sa = 0; sa < n_sa; ++sa)
        for (int i = 0; i < n; ++i) out.phi[static_cast<size_t>(sa) * n + i] = x(sa, i);

    // report the honest fixed-point residual of the solved tensor
    numvec check(out.phi.size());
    soft_q_gradient_apply(mdp, sol, p_agent, b, n, out.phi, check);
    out.residual = detail::sup_diff(check, out.phi);
    out.iterations = 1;
    return out;
}

GradTensor soft_q_gradient_auto(const TabularMdp& mdp, const SoftSolution& sol,
                                const BoltzmannDynamics& dyn_agent, const ParamLayout& layout,
                                const SolveOptions& opts, const GradTensor* warm_start) {
    if (!warm_start && mdp.sa_count() <= 2000)
        return soft_q_gradient_direct(mdp, sol, dyn_agent, layout);
    return soft_q_gradient(mdp, sol, dyn_agent, layout, opts, warm_start);
}

numvec policy_log_gradient(const GradTensor& phi, const SoftSolution& sol, int n_actions, int s,
                           int a) {
    numvec g(phi.at(s * n_actions + a).begin(), phi.at(s * n_actions + a).end());
    for (int a2 = 0; a2 < n_actions; ++a2) {
        const double w = sol.policy[static_cast<size_t>(s) * n_actions + a2];
        const auto row = phi.at(s * n_actions + a2);
        for (int i = 0; i < phi.n_params; ++i) g[i] -= w * row[i];
    }
    return g;
}

namespace {

struct TrueLogProbs {
    TransitionTable table;  // merged probabilities over the successor layout

    static TrueLogProbs make(const BoltzmannDynamics& dyn_true, const TabularMdp& mdp) {
        return {materialize(dyn_true, mdp)};
    }
};

// successor index of s_next within successor_set(sa), or throws naming the spot
int find_successor(const TabularMdp& mdp, int sa, int s_next, size_t traj, size_t step) {
    const auto succ = mdp.successor_set(sa);
    for (size_t j = 0; j < succ.size(); ++j)
        if (succ[j] == s_next) return static_cast<int>(j);
    throw DataError("trajectory " + std::to_string(traj) + ", step " + std::to_string(step) +
                    ": transition to state " + std::to_string(s_next) +
                    " is outside the successor set");
}

} // namespace

LikelihoodReport log_likelihood(const DemoSet& demos, const TabularMdp& mdp,
                                const SoftSolution& sol, const BoltzmannDynamics& dyn_true,
                                const numvec& start_dist, const LikelihoodOptions& opts) {
    const TrueLogProbs tp = TrueLogProbs::make(dyn_true, mdp);
    const int A = mdp.n_actions;

    LikelihoodReport rep;
    rep.per_trajectory.reserve(demos.trajectories.size());
    double total = 0.0;
    for (size_t ti = 0; ti < demos.trajectories.size(); ++ti) {
        const auto& steps = demos.trajectories[ti].steps;
        double ll = 0.0;
        for (size_t t = 0; t < steps.size(); ++t) {
            const auto [s, a] = steps[t];
            const bool is_final = (t + 1 == steps.size());
            if (!is_final || opts.include_final_policy_term) ll += log_policy(sol, A, s, a);
            if (!is_final) {
                const int sa = mdp.sa_index(s, a);
                const int j = find_successor(mdp, sa, steps[t + 1].first, ti, t);
                const double p = tp.table.probs[mdp.succ_offsets[sa] + j];
                if (p <= 0.0)
                    throw DataError("trajectory " + std::to_string(ti) + ", step " +
                                    std::to_string(t) + ": observed transition has probability 0");
                ll += std::log(p);
            }
        }
        rep.per_trajectory.push_back(ll);
        total += ll + std::log(start_dist[steps.front().first]);
    }
    rep.log_likelihood = total;
    return rep;
}

LikelihoodReport likelihood_gradient(const DemoSet& demos, const TabularMdp& mdp,
                                     const GradTensor& phi, const SoftSolution& sol,
                                     const BoltzmannDynamics& dyn_true, const ParamLayout& layout,
                                     const LikelihoodOptions& opts) {
    LikelihoodReport rep = log_likelihood(demos, mdp, sol, dyn_true, mdp.start_dist, opts);
    const int n = layout.total();
    const int n_out = dyn_true.assignment->n_outcomes;

    numvec expect;
    policy_expectation(mdp, sol, phi.phi, n, expect);

    std::vector<numvec> per_model(dyn_true.assignment->n_models);
    for (int m = 0; m < dyn_true.assignment->n_models; ++m)
        per_model[m] = model_probs(dyn_true, m);
    const TransitionTable p_true = materialize(dyn_true, mdp);

    rep.gradient.assign(n, 0.0);
    for (size_t ti = 0; ti < demos.trajectories.size(); ++ti) {
        const auto& steps = demos.trajectories[ti].steps;
        for (size_t t = 0; t < steps.size(); ++t) {
            const auto [s, a] = steps[t];
            const int sa = mdp.sa_index(s, a);
            const bool is_final = (t + 1 == steps.size());

            if (!is_final || opts.include_final_policy_term) {
                const auto row = phi.at(sa);
                const double* e = expect.data() + static_cast<size_t>(s) * n;
                for (int i = 0; i < n; ++i) rep.gradient[i] += row[i] - e[i];
            }

            if (!is_final) {
                const int j = find_successor(mdp, sa, steps[t + 1].first, ti, t);
                const double p_obs = p_true.probs[mdp.succ_offsets[sa] + j];
                if (p_obs <= 0.0)
                    throw DataError("trajectory " + std::to_string(ti) + ", step " +
                                    std::to_string(t) + ": observed transition has probability 0");
                // d log P(succ_j) / d e_mk = 1[slot k -> j] p_k / P_j - p_k
                const int m = dyn_true.assignment->model_of[sa];
                const numvec& p = per_model[m];
                const auto slots = dyn_true.assignment->slots(sa);
                for (int k = 0; k < n_out; ++k) {
                    double g = -p[k];
                    if (slots[k] == j) g += p[k] / p_obs;
                    rep.gradient[layout.true_index(m * n_out + k)] += g;
                }
            }
        }
    }
    return rep;
}

DemoCounts count_demos(const DemoSet& demos, const TabularMdp& mdp,
                       const LikelihoodOptions& opts) {
    DemoCounts c;
    c.pair_count.assign(mdp.sa_count(), 0.0);
    c.policy_count.assign(mdp.sa_count(), 0.0);
    c.transition_count.assign(mdp.succ_states.size(), 0.0);
    c.start_count.assign(mdp.n_states, 0.0);

    for (size_t ti = 0; ti < demos.trajectories.size(); ++ti) {
        const auto& steps = demos.trajectories[ti].steps;
        if (steps.empty()) throw DataError("trajectory " + std::to_string(ti) + " is empty");
        c.start_count[steps.front().first] += 1.0;
        for (size_t t = 0; t < steps.size(); ++t) {
            const auto [s, a] = steps[t];
            const int sa = mdp.sa_index(s, a);
            const bool is_final = (t + 1 == steps.size());
            c.pair_count[sa] += 1.0;
            c.total_pairs += 1.0;
            if (!is_final || opts.include_final_policy_term) c.policy_count[sa] += 1.0;
            if (!is_final) {
                const int j = find_successor(mdp, sa, steps[t + 1].first, ti, t);
                c.transition_count[mdp.succ_offsets[sa] + j] += 1.0;
            }
        }
    }
    return c;
}

LikelihoodReport likelihood_gradient_adjoint(const DemoCounts& counts, const TabularMdp& mdp,
                                             const SoftSolution& sol,
                                             const BoltzmannDynamics& dyn_agent,
                                             const BoltzmannDynamics& dyn_true,
                                             const ParamLayout& layout, const SolveOptions& opts,
                                             numvec* warm_adjoint) {
    const int A = mdp.n_actions;
    const int n = layout.total();
    const int n_out = dyn_true.assignment->n_outcomes;
    const double scale = counts.total_pairs > 0.0 ? counts.total_pairs : 1.0;

    // c[sa] = (count(s,a) - pi(s,a) count(s)) / total: the policy-term weights
    // collapsed onto the Q-gradient; solving the transposed propagation once
    // replaces one tensor solve per parameter.
    numvec c(mdp.sa_count(), 0.0);
    for (int s = 0; s < mdp.n_states; ++s) {
        double state_count = 0.0;
        for (int a = 0; a < A; ++a) state_count += counts.policy_count[s * A + a];
        for (int a = 0; a < A; ++a) {
            const int sa = s * A + a;
            c[sa] = (counts.policy_count[sa] - sol.policy[sa] * state_count) / scale;
        }
    }

    const TransitionTable p_agent = materialize(dyn_agent, mdp);
    numvec w = warm_adjoint && !warm_adjoint->empty() ? *warm_adjoint
                                                      : numvec(mdp.sa_count(), 0.0);
    if (w.size() != static_cast<size_t>(mdp.sa_count()))
        throw std::invalid_argument("likelihood_gradient_adjoint: warm start has wrong shape");

    numvec z(mdp.n_states);
    auto apply = [&](const numvec& in, numvec& out) {
        // w <- c + gamma * M^T w, with M[(s,a),(s',a')] = P(s'|s,a) pi(s',a')
        std::fill(z.begin(), z.end(), 0.0);
        for (int sa = 0; sa < mdp.sa_count(); ++sa) {
            const int begin = mdp.succ_offsets[sa];
            const int end = mdp.succ_offsets[sa + 1];
            const double wsa = in[sa];
            if (wsa == 0.0) continue;
            for (int j = begin; j < end; ++j) z[mdp.succ_states[j]] += p_agent.probs[j] * wsa;
        }
        out.resize(in.size());
        for (int sa = 0; sa < mdp.sa_count(); ++sa)
            out[sa] = c[sa] + mdp.discount * sol.policy[sa] * z[sa / A];
    };

    // the transposed propagation contracts in the 1-norm (column sums of the
    // primal operator), so convergence is measured there
    auto [residual, iters] = detail::iterate_to_fixpoint(apply, w, opts, &detail::l1_diff);
    if (residual > opts.tol)
        throw ConvergenceError("likelihood_gradient_adjoint: no fixed point within " +
                                   std::to_string(opts.max_iter) + " sweeps (residual " +
                                   std::to_string(residual) + ")",
                               residual, iters);
    if (warm_adjoint) *warm_adjoint = w;

    const numvec b = gradient_constant_terms(mdp, sol, dyn_agent, layout);

    LikelihoodReport rep;
    rep.gradient.assign(n, 0.0);
    for (int sa = 0; sa < mdp.sa_count(); ++sa) {
        const double wsa = w[sa];
        if (wsa == 0.0) continue;
        const double* row = b.data() + static_cast<size_t>(sa) * n;
        for (int i = 0; i < n; ++i) rep.gradient[i] += wsa * row[i];
    }

    // transition term and the likelihood value, straight from the counts
    std::vector<numvec> per_model(dyn_true.assignment->n_models);
    for (int m = 0; m < dyn_true.assignment->n_models; ++m)
        per_model[m] = model_probs(dyn_true, m);
    const TransitionTable p_true = materialize(dyn_true, mdp);

    double value = 0.0;
    for (int s = 0; s < mdp.n_states; ++s)
        if (counts.start_count[s] > 0.0)
            value += counts.start_count[s] * std::log(mdp.start_dist[s]);

    for (int sa = 0; sa < mdp.sa_count(); ++sa) {
        if (counts.policy_count[sa] > 0.0)
            value += counts.policy_count[sa] * log_policy(sol, A, sa / A, sa % A);

        const int begin = mdp.succ_offsets[sa];
        const int end = mdp.succ_offsets[sa + 1];
        bool any = false;
        for (int j = begin; j < end && !any; ++j) any = counts.transition_count[j] > 0.0;
        if (!any) continue;

        const int m = dyn_true.assignment->model_of[sa];
        const numvec& p = per_model[m];
        const auto slots = dyn_true.assignment->slots(sa);
        for (int j = begin; j < end; ++j) {
            const double cnt = counts.transition_count[j];
            if (cnt == 0.0) continue;
            const double p_obs = p_true.probs[j];
            if (p_obs <= 0.0)
                throw DataError("likelihood_gradient_adjoint: observed transition at sa=" +
                                std::to_string(sa) + " has probability 0");
            value += cnt * std::log(p_obs);
            const int succ_idx = j - begin;
            for (int k = 0; k < n_out; ++k) {
                double g = -p[k];
                if (slots[k] == succ_idx) g += p[k] / p_obs;
                rep.gradient[layout.true_index(m * n_out + k)] += (cnt / scale) * g;
            }
        }
    }

    // internals run per demonstrated step; the report keeps the total-scale
    // contract of likelihood_gradient
    for (double& g : rep.gradient) g *= scale;
    rep.log_likelihood = value;
    return rep;
}

} // namespace serd
