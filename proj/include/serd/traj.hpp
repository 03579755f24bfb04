#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "serd/dynamics.hpp"
#include "serd/grad.hpp"
#include "serd/mdp.hpp"
#include "serd/softq.hpp"
#include "serd/types.hpp"

namespace serd {

struct Trajectory {
    std::vector<std::pair<int, int>> steps;  // (state, action)

    int length() const { return static_cast<int>(steps.size()); }
};

struct DemoSet {
    std::vector<Trajectory> trajectories;
    std::uint64_t seed = 0;
    int horizon = 0;

    int size() const { return static_cast<int>(trajectories.size()); }
    long total_pairs() const;

    /// First n trajectories (prefix view used by nested sweep sizes).
    DemoSet prefix(int n) const;
};

/**
 * Samples n trajectories: start from start_dist, act by policy, move by
 * p_true. A trajectory ends at the horizon, or one pair after reaching
 * stop_state (the arrival pair is recorded with one final action and no
 * successor). Per-trajectory PRNG streams are split deterministically from
 * seed, so the result is independent of evaluation order.
 */
DemoSet sample(const TabularMdp& mdp, const numvec& policy, const TransitionTable& p_true, int n,
               int horizon, std::optional<int> stop_state, std::uint64_t seed);

/// Diagnostics for DemoSet structural invariants (connectivity, non-emptiness).
std::vector<std::string> validate(const DemoSet& demos, const TabularMdp& mdp);

struct LearnedModel {
    const numvec& policy;             // |S|*|A|
    const BoltzmannDynamics& dyn;     // transition model used for likelihood terms
};

/// Held-out average log-likelihood per trajectory under a learned model.
/// Throws std::invalid_argument on an empty demo set.
double avg_loglik(const DemoSet& demos_heldout, const TabularMdp& mdp, const LearnedModel& learned,
                  const LikelihoodOptions& opts = {});

enum class KlWeighting {
    UniformStateAction,  // mean over all (s,a) of the merged successor rows
    UniformModels,       // mean over shared models of the outcome-slot rows
};

/// KL(p || q) in nats; zero-probability p entries contribute nothing,
/// q == 0 where p > 0 yields +inf.
double kl_divergence(std::span<const double> p, std::span<const double> q);

double avg_kl_dynamics(const TabularMdp& mdp, const BoltzmannDynamics& dyn_true,
                       const BoltzmannDynamics& dyn_est,
                       KlWeighting weighting = KlWeighting::UniformStateAction);

/// Mean over states of KL between action distributions.
double avg_kl_policy(const numvec& policy_true, const numvec& policy_est, int n_states,
                     int n_actions);

} // namespace serd
