#pragma once

#include <span>
#include <string>
#include <vector>

#include "serd/types.hpp"

namespace serd {

/**
 * Tabular MDP skeleton: everything except rewards and dynamics.
 *
 * Successor sets are explicit sparse lists; every sum over next states in the
 * library runs over these lists, never over the full state space. Features are
 * state-action indexed with a fixed dimension; state-only features are stored
 * broadcast over actions.
 *
 * Immutable after construction; safe to read from concurrent workers.
 */
struct TabularMdp {
    int n_states = 0;
    int n_actions = 0;
    int n_features = 0;
    double discount = 0.0;
    numvec start_dist;  // |S|

    // features[(s*A + a)*d + k]
    numvec features;

    // CSR layout of successor sets: states for (s,a) live in
    // succ_states[succ_offsets[sa] .. succ_offsets[sa+1])
    std::vector<int> succ_offsets;
    indvec succ_states;

    int sa_count() const { return n_states * n_actions; }
    int sa_index(int s, int a) const { return s * n_actions + a; }

    std::span<const double> feature(int s, int a) const {
        return {features.data() + static_cast<size_t>(sa_index(s, a)) * n_features,
                static_cast<size_t>(n_features)};
    }

    std::span<const int> successor_set(int s, int a) const { return successor_set(sa_index(s, a)); }

    std::span<const int> successor_set(int sa) const {
        return {succ_states.data() + succ_offsets[sa],
                static_cast<size_t>(succ_offsets[sa + 1] - succ_offsets[sa])};
    }

    int successor_count(int sa) const { return succ_offsets[sa + 1] - succ_offsets[sa]; }
};

/// Builds the CSR successor layout from per-(s,a) lists (row-major in (s,a)).
TabularMdp make_mdp(int n_states, int n_actions, int n_features, double discount,
                    numvec start_dist, numvec features,
                    const std::vector<indvec>& successor_sets);

/// Returns diagnostics for every violated TabularMdp invariant; empty iff well formed.
/// Never throws: each entry names the offending field and index.
std::vector<std::string> validate(const TabularMdp& mdp);

/// r(s,a) = theta_r . f(s,a)
double reward(const TabularMdp& mdp, const numvec& theta_r, int s, int a);

/// Full |S|*|A| reward table for fixed weights.
numvec reward_table(const TabularMdp& mdp, const numvec& theta_r);

enum class ParamBlock { Reward, AgentDynamics, TrueDynamics };

/**
 * Concatenated parameter vector (reward weights, agent dynamics energies, true
 * dynamics energies). In tied mode the agent and true energies are the same
 * storage and gradient contributions for both roles accumulate into it.
 */
struct ParamVector {
    numvec theta_r;
    numvec agent_energies;
    numvec true_energies;  // empty in tied mode
    bool tied = true;

    int size() const {
        return static_cast<int>(theta_r.size() + agent_energies.size() +
                                (tied ? 0 : true_energies.size()));
    }

    /// View of the energies acting as the true transition model.
    const numvec& true_view() const { return tied ? agent_energies : true_energies; }

    numvec flatten() const;
    static ParamVector unflatten(const numvec& flat, int d, int agent_n, bool tied);
};

/**
 * Index arithmetic for the flattened parameter vector. true_index aliases the
 * shared block in tied mode, which is exactly how the two roles' gradient
 * contributions get summed.
 */
struct ParamLayout {
    int d = 0;        // reward weights
    int agent_n = 0;  // agent dynamics energies
    int true_n = 0;   // true dynamics energies (== agent_n when tied)
    bool tied = true;

    static ParamLayout of(const ParamVector& p) {
        return {static_cast<int>(p.theta_r.size()), static_cast<int>(p.agent_energies.size()),
                static_cast<int>(p.tied ? p.agent_energies.size() : p.true_energies.size()),
                p.tied};
    }

    int total() const { return d + agent_n + (tied ? 0 : true_n); }
    int reward_index(int k) const { return k; }
    int agent_index(int j) const { return d + j; }
    int true_index(int j) const { return tied ? d + j : d + agent_n + j; }

    ParamBlock block_of(int i) const {
        if (i < d) return ParamBlock::Reward;
        if (tied || i < d + agent_n) return ParamBlock::AgentDynamics;
        return ParamBlock::TrueDynamics;
    }
};

} // namespace serd
