#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "serd/mdp.hpp"
#include "serd/softq.hpp"
#include "serd/types.hpp"

namespace serd {

struct DemoSet; // traj.hpp

/**
 * Maps every (s,a) to one of a small set of shared outcome models. Each model
 * has n_outcomes slots; slot_for(sa)[k] is an index into the (s,a) successor
 * set. Several slots may point at the same successor (boundary clamping),
 * in which case their probability mass merges; the map must still cover the
 * whole successor set.
 */
struct DynamicsAssignment {
    int n_models = 0;
    int n_outcomes = 0;
    indvec model_of;      // |S|*|A|
    indvec slot_to_succ;  // |S|*|A| * n_outcomes, values index into successor_set(sa)
    std::vector<std::string> model_names;    // size n_models (used by parameter files)
    std::vector<std::string> outcome_names;  // size n_outcomes

    std::span<const int> slots(int sa) const {
        return {slot_to_succ.data() + static_cast<size_t>(sa) * n_outcomes,
                static_cast<size_t>(n_outcomes)};
    }
};

using AssignmentPtr = std::shared_ptr<const DynamicsAssignment>;

/// Diagnostics for assignment/MDP consistency (surjectivity, ranges); empty iff valid.
std::vector<std::string> validate(const DynamicsAssignment& assign, const TabularMdp& mdp);

/**
 * Parametric transition model: per shared model a Boltzmann distribution over
 * outcome slots, P(outcome k | m) = exp(e_mk) / sum_j exp(e_mj).
 * Immutable during a solve/gradient pass; the learner replaces the energy
 * vector wholesale between gradient steps.
 */
struct BoltzmannDynamics {
    AssignmentPtr assignment;
    numvec energies;  // n_models * n_outcomes, row-major by model

    std::span<const double> model_energies(int m) const {
        return {energies.data() + static_cast<size_t>(m) * assignment->n_outcomes,
                static_cast<size_t>(assignment->n_outcomes)};
    }
};

/// Softmax over one model's energies (per outcome slot).
numvec model_probs(const BoltzmannDynamics& dyn, int m);

/// Successor distribution for (s,a), merged onto successor_set(s,a).
/// Throws std::invalid_argument if (s,a) is out of range for the assignment.
numvec transition_probs(const BoltzmannDynamics& dyn, const TabularMdp& mdp, int s, int a);

/**
 * Jacobian of the merged successor distribution with respect to the owning
 * model's energies: rows[j][k] = dP(succ_j | s,a) / d e_{m,k}. Derivatives
 * with respect to every other model's parameters are exactly zero and are not
 * materialized.
 */
struct TransitionJacobian {
    int model = 0;
    std::vector<numvec> rows;  // |successor_set| x n_outcomes
};

TransitionJacobian transition_grad(const BoltzmannDynamics& dyn, const TabularMdp& mdp, int s,
                                   int a);

/// Dense probability table over the CSR successor layout, for the solvers.
TransitionTable materialize(const BoltzmannDynamics& dyn, const TabularMdp& mdp);

/**
 * Count-based estimator state: observed (possibly fractional) outcome counts
 * per model plus m pseudo-counts of a uniform prior.
 */
struct CountModel {
    std::vector<numvec> counts;  // n_models x n_outcomes
    double prior_count = 5.0;

    /// (count + m/n) / (total + m)
    numvec probs(int m) const;
};

/// Tallies demo transitions into per-(model, outcome) counts. Observations
/// consistent with several merged slots split their unit count equally.
CountModel count_transitions(const DemoSet& demos, const DynamicsAssignment& assign,
                             const TabularMdp& mdp, double prior_count);

/**
 * m-estimator with a uniform prior. Returns energies e_mk = log p_hat_mk so the
 * result plugs into the same Boltzmann representation the learner optimizes.
 * Models with zero observed mass use fallback_energies when provided, else the
 * prior-only (uniform) row.
 */
BoltzmannDynamics m_estimate(const DemoSet& demos, AssignmentPtr assign, const TabularMdp& mdp,
                             double prior_count,
                             const numvec* fallback_energies = nullptr);

} // namespace serd
