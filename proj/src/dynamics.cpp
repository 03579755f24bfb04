#include "serd/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "serd/softq.hpp"
#include "serd/traj.hpp"

namespace serd {

std::vector<std::string> validate(const DynamicsAssignment& assign, const TabularMdp& mdp) {
    std::vector<std::string> out;
    if (static_cast<int>(assign.model_of.size()) != mdp.sa_count()) {
        out.push_back("assignment: model_of has wrong size");
        return out;
    }
    if (assign.slot_to_succ.size() !=
        static_cast<size_t>(mdp.sa_count()) * assign.n_outcomes) {
        out.push_back("assignment: slot map has wrong size");
        return out;
    }
    std::vector<char> covered;
    for (int sa = 0; sa < mdp.sa_count(); ++sa) {
        const int m = assign.model_of[sa];
        if (m < 0 || m >= assign.n_models)
            out.push_back("assignment: model index out of range at sa=" + std::to_string(sa));
        const int n_succ = mdp.successor_count(sa);
        covered.assign(n_succ, 0);
        for (int k = 0; k < assign.n_outcomes; ++k) {
            const int j = assign.slots(sa)[k];
            if (j < 0 || j >= n_succ) {
                out.push_back("assignment: slot " + std::to_string(k) + " at sa=" +
                              std::to_string(sa) + " points outside the successor set");
                continue;
            }
            covered[j] = 1;
        }
        // every successor must be reachable through some slot, otherwise the
        // merged row cannot be a distribution over successor_set(s,a)
        for (int j = 0; j < n_succ; ++j)
            if (!covered[j])
                out.push_back("assignment: successor " + std::to_string(j) + " of sa=" +
                              std::to_string(sa) + " unreachable from any outcome slot");
    }
    return out;
}

numvec model_probs(const BoltzmannDynamics& dyn, int m) {
    const auto e = dyn.model_energies(m);
    numvec p(e.size());
    const double lse = log_sum_exp(e);
    double sum = 0.0;
    for (size_t k = 0; k < e.size(); ++k) sum += p[k] = std::exp(e[k] - lse);
    for (double& v : p) v /= sum;
    return p;
}

namespace {

void check_sa(const BoltzmannDynamics& dyn, const TabularMdp& mdp, int s, int a) {
    if (s < 0 || s >= mdp.n_states || a < 0 || a >= mdp.n_actions)
        throw std::invalid_argument("dynamics: (s,a)=(" + std::to_string(s) + "," +
                                    std::to_string(a) + ") out of range");
    if (static_cast<int>(dyn.assignment->model_of.size()) != mdp.sa_count())
        throw std::invalid_argument("dynamics: assignment does not match the MDP");
}

} // namespace

numvec transition_probs(const BoltzmannDynamics& dyn, const TabularMdp& mdp, int s, int a) {
    check_sa(dyn, mdp, s, a);
    const int sa = mdp.sa_index(s, a);
    const numvec p = model_probs(dyn, dyn.assignment->model_of[sa]);
    numvec row(mdp.successor_count(sa), 0.0);
    const auto slots = dyn.assignment->slots(sa);
    for (int k = 0; k < dyn.assignment->n_outcomes; ++k) row[slots[k]] += p[k];
    return row;
}

TransitionJacobian transition_grad(const BoltzmannDynamics& dyn, const TabularMdp& mdp, int s,
                                   int a) {
    check_sa(dyn, mdp, s, a);
    const int sa = mdp.sa_index(s, a);
    const int n_out = dyn.assignment->n_outcomes;
    const auto slots = dyn.assignment->slots(sa);

    TransitionJacobian jac;
    jac.model = dyn.assignment->model_of[sa];
    const numvec p = model_probs(dyn, jac.model);

    // softmax Jacobian dp_i/de_k = p_i (delta_ik - p_k), accumulated over the
    // slots merged onto each successor
    jac.rows.assign(mdp.successor_count(sa), numvec(n_out, 0.0));
    for (int i = 0; i < n_out; ++i) {
        numvec& row = jac.rows[slots[i]];
        for (int k = 0; k < n_out; ++k) row[k] += p[i] * ((i == k ? 1.0 : 0.0) - p[k]);
    }
    return jac;
}

TransitionTable materialize(const BoltzmannDynamics& dyn, const TabularMdp& mdp) {
    if (static_cast<int>(dyn.assignment->model_of.size()) != mdp.sa_count())
        throw std::invalid_argument("materialize: assignment does not match the MDP");

    std::vector<numvec> per_model(dyn.assignment->n_models);
    for (int m = 0; m < dyn.assignment->n_models; ++m) per_model[m] = model_probs(dyn, m);

    TransitionTable table;
    table.probs.assign(mdp.succ_states.size(), 0.0);
    for (int sa = 0; sa < mdp.sa_count(); ++sa) {
        const numvec& p = per_model[dyn.assignment->model_of[sa]];
        const auto slots = dyn.assignment->slots(sa);
        double* row = table.probs.data() + mdp.succ_offsets[sa];
        for (int k = 0; k < dyn.assignment->n_outcomes; ++k) row[slots[k]] += p[k];
    }
    return table;
}

numvec CountModel::probs(int m) const {
    const numvec& c = counts[m];
    const int n = static_cast<int>(c.size());
    double total = 0.0;
    for (double v : c) total += v;
    numvec p(n);
    const double u = 1.0 / n;
    for (int k = 0; k < n; ++k) p[k] = (c[k] + prior_count * u) / (total + prior_count);
    return p;
}

CountModel count_transitions(const DemoSet& demos, const DynamicsAssignment& assign,
                             const TabularMdp& mdp, double prior_count) {
    if (!(prior_count > 0.0)) throw std::invalid_argument("count_transitions: prior_count <= 0");

    CountModel cm;
    cm.prior_count = prior_count;
    cm.counts.assign(assign.n_models, numvec(assign.n_outcomes, 0.0));

    indvec matching;
    for (size_t ti = 0; ti < demos.trajectories.size(); ++ti) {
        const auto& steps = demos.trajectories[ti].steps;
        for (size_t t = 0; t + 1 < steps.size(); ++t) {
            const auto [s, a] = steps[t];
            const int s_next = steps[t + 1].first;
            const int sa = mdp.sa_index(s, a);
            const auto succ = mdp.successor_set(sa);
            int succ_idx = -1;
            for (size_t j = 0; j < succ.size(); ++j)
                if (succ[j] == s_next) succ_idx = static_cast<int>(j);
            if (succ_idx < 0)
                throw DataError("count_transitions: trajectory " + std::to_string(ti) + " step " +
                                std::to_string(t) + " leaves the successor set");

            matching.clear();
            const auto slots = assign.slots(sa);
            for (int k = 0; k < assign.n_outcomes; ++k)
                if (slots[k] == succ_idx) matching.push_back(k);
            // merged successors: the observation is consistent with every slot
            // mapped onto it, so the unit count splits equally
            const double w = 1.0 / static_cast<double>(matching.size());
            for (int k : matching) cm.counts[assign.model_of[sa]][k] += w;
        }
    }
    return cm;
}

BoltzmannDynamics m_estimate(const DemoSet& demos, AssignmentPtr assign, const TabularMdp& mdp,
                             double prior_count, const numvec* fallback_energies) {
    if (fallback_energies &&
        fallback_energies->size() != static_cast<size_t>(assign->n_models) * assign->n_outcomes)
        throw std::invalid_argument("m_estimate: fallback energies have the wrong shape");
    const CountModel cm = count_transitions(demos, *assign, mdp, prior_count);

    BoltzmannDynamics dyn;
    dyn.assignment = std::move(assign);
    dyn.energies.assign(static_cast<size_t>(dyn.assignment->n_models) *
                            dyn.assignment->n_outcomes,
                        0.0);
    for (int m = 0; m < dyn.assignment->n_models; ++m) {
        double total = 0.0;
        for (double v : cm.counts[m]) total += v;
        double* e = dyn.energies.data() + static_cast<size_t>(m) * dyn.assignment->n_outcomes;
        if (total == 0.0 && fallback_energies) {
            const double* src =
                fallback_energies->data() + static_cast<size_t>(m) * dyn.assignment->n_outcomes;
            std::copy(src, src + dyn.assignment->n_outcomes, e);
            continue;
        }
        const numvec p = cm.probs(m);
        for (int k = 0; k < dyn.assignment->n_outcomes; ++k) e[k] = std::log(p[k]);
    }
    return dyn;
}

} // namespace serd
