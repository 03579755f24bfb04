#include "serd/mdp.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace serd {

TabularMdp make_mdp(int n_states, int n_actions, int n_features, double discount,
                    numvec start_dist, numvec features,
                    const std::vector<indvec>& successor_sets) {
    if (n_states <= 0 || n_actions <= 0 || n_features <= 0)
        throw std::invalid_argument("make_mdp: dimensions must be positive");
    if (static_cast<int>(successor_sets.size()) != n_states * n_actions)
        throw std::invalid_argument("make_mdp: need one successor set per (s,a)");

    TabularMdp mdp;
    mdp.n_states = n_states;
    mdp.n_actions = n_actions;
    mdp.n_features = n_features;
    mdp.discount = discount;
    mdp.start_dist = std::move(start_dist);
    mdp.features = std::move(features);

    mdp.succ_offsets.resize(successor_sets.size() + 1, 0);
    for (size_t i = 0; i < successor_sets.size(); ++i)
        mdp.succ_offsets[i + 1] = mdp.succ_offsets[i] + static_cast<int>(successor_sets[i].size());
    mdp.succ_states.reserve(mdp.succ_offsets.back());
    for (const auto& set : successor_sets)
        mdp.succ_states.insert(mdp.succ_states.end(), set.begin(), set.end());
    return mdp;
}

std::vector<std::string> validate(const TabularMdp& mdp) {
    std::vector<std::string> out;
    auto bad = [&out](const std::string& msg) { out.push_back(msg); };

    if (mdp.n_states <= 0) bad("n_states: must be positive");
    if (mdp.n_actions <= 0) bad("n_actions: must be positive");
    if (mdp.discount < 0.0 || mdp.discount >= 1.0)
        bad("discount: must lie in [0,1), got " + std::to_string(mdp.discount));

    if (static_cast<int>(mdp.start_dist.size()) != mdp.n_states) {
        bad("start_dist: length " + std::to_string(mdp.start_dist.size()) + " != n_states");
    } else {
        double sum = 0.0;
        for (int s = 0; s < mdp.n_states; ++s) {
            if (mdp.start_dist[s] < 0.0) bad("start_dist[" + std::to_string(s) + "]: negative");
            sum += mdp.start_dist[s];
        }
        if (std::abs(sum - 1.0) > 1e-12)
            bad("start_dist: sums to " + std::to_string(sum) + ", expected 1");
    }

    const size_t want_features =
        static_cast<size_t>(mdp.n_states) * mdp.n_actions * mdp.n_features;
    if (mdp.features.size() != want_features)
        bad("features: size " + std::to_string(mdp.features.size()) + ", expected " +
            std::to_string(want_features) + " (every vector must have length d)");

    if (static_cast<int>(mdp.succ_offsets.size()) != mdp.sa_count() + 1) {
        bad("successor_sets: offset table malformed");
    } else {
        for (int sa = 0; sa < mdp.sa_count(); ++sa) {
            if (mdp.successor_count(sa) <= 0) {
                bad("successor_sets[" + std::to_string(sa / mdp.n_actions) + "," +
                    std::to_string(sa % mdp.n_actions) + "]: empty");
                continue;
            }
            for (int s2 : mdp.successor_set(sa))
                if (s2 < 0 || s2 >= mdp.n_states)
                    bad("successor_sets[" + std::to_string(sa / mdp.n_actions) + "," +
                        std::to_string(sa % mdp.n_actions) + "]: state " + std::to_string(s2) +
                        " out of range");
        }
    }
    return out;
}

double reward(const TabularMdp& mdp, const numvec& theta_r, int s, int a) {
    if (static_cast<int>(theta_r.size()) != mdp.n_features)
        throw std::invalid_argument("reward: theta_r has length " +
                                    std::to_string(theta_r.size()) + ", features have dimension " +
                                    std::to_string(mdp.n_features));
    const auto f = mdp.feature(s, a);
    double r = 0.0;
    for (int k = 0; k < mdp.n_features; ++k) r += theta_r[k] * f[k];
    return r;
}

numvec reward_table(const TabularMdp& mdp, const numvec& theta_r) {
    if (static_cast<int>(theta_r.size()) != mdp.n_features)
        throw std::invalid_argument("reward_table: theta_r dimension mismatch");
    numvec table(mdp.sa_count(), 0.0);
    const double* f = mdp.features.data();
    for (int sa = 0; sa < mdp.sa_count(); ++sa) {
        double r = 0.0;
        for (int k = 0; k < mdp.n_features; ++k) r += theta_r[k] * f[k];
        table[sa] = r;
        f += mdp.n_features;
    }
    return table;
}

numvec ParamVector::flatten() const {
    numvec flat;
    flat.reserve(size());
    flat.insert(flat.end(), theta_r.begin(), theta_r.end());
    flat.insert(flat.end(), agent_energies.begin(), agent_energies.end());
    if (!tied) flat.insert(flat.end(), true_energies.begin(), true_energies.end());
    return flat;
}

ParamVector ParamVector::unflatten(const numvec& flat, int d, int agent_n, bool tied) {
    const int expect = d + agent_n + (tied ? 0 : agent_n);
    if (static_cast<int>(flat.size()) != expect)
        throw std::invalid_argument("ParamVector::unflatten: flat vector has length " +
                                    std::to_string(flat.size()) + ", layout expects " +
                                    std::to_string(expect));
    ParamVector p;
    p.tied = tied;
    p.theta_r.assign(flat.begin(), flat.begin() + d);
    p.agent_energies.assign(flat.begin() + d, flat.begin() + d + agent_n);
    if (!tied) p.true_energies.assign(flat.begin() + d + agent_n, flat.end());
    return p;
}

} // namespace serd
