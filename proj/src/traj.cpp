#include "serd/traj.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include "serd/grad.hpp"

namespace serd {

long DemoSet::total_pairs() const {
    long n = 0;
    for (const auto& t : trajectories) n += t.length();
    return n;
}

DemoSet DemoSet::prefix(int n) const {
    if (n < 0 || n > size()) throw std::invalid_argument("DemoSet::prefix: bad count");
    DemoSet out;
    out.seed = seed;
    out.horizon = horizon;
    out.trajectories.assign(trajectories.begin(), trajectories.begin() + n);
    return out;
}

namespace {

struct Stream {
    std::mt19937_64 engine;

    explicit Stream(std::uint64_t seed) : engine(seed) {}

    double uniform() {
        // 53-bit mantissa draw; stable across standard libraries
        return static_cast<double>(engine() >> 11) * 0x1.0p-53;
    }

    int categorical(std::span<const double> probs) {
        const double u = uniform();
        double acc = 0.0;
        for (size_t i = 0; i < probs.size(); ++i) {
            acc += probs[i];
            if (u < acc) return static_cast<int>(i);
        }
        return static_cast<int>(probs.size()) - 1;  // guard against roundoff
    }
};

} // namespace

DemoSet sample(const TabularMdp& mdp, const numvec& policy, const TransitionTable& p_true, int n,
               int horizon, std::optional<int> stop_state, std::uint64_t seed) {
    if (n < 1 || horizon < 1) throw std::invalid_argument("sample: need n >= 1 and horizon >= 1");
    const int A = mdp.n_actions;

    DemoSet demos;
    demos.seed = seed;
    demos.horizon = horizon;
    demos.trajectories.resize(n);

    for (int i = 0; i < n; ++i) {
        Stream rng(split_seed(seed, static_cast<std::uint64_t>(i)));
        auto& steps = demos.trajectories[i].steps;
        int s = rng.categorical(mdp.start_dist);
        for (int t = 0; t < horizon; ++t) {
            const int a =
                rng.categorical({policy.data() + static_cast<size_t>(s) * A, static_cast<size_t>(A)});
            steps.emplace_back(s, a);
            if (stop_state && s == *stop_state) break;  // arrival pair recorded, then stop
            if (t + 1 == horizon) break;
            const int sa = mdp.sa_index(s, a);
            const int j = rng.categorical(p_true.row(mdp, sa));
            s = mdp.successor_set(sa)[j];
        }
    }
    return demos;
}

std::vector<std::string> validate(const DemoSet& demos, const TabularMdp& mdp) {
    std::vector<std::string> out;
    for (size_t ti = 0; ti < demos.trajectories.size(); ++ti) {
        const auto& steps = demos.trajectories[ti].steps;
        if (steps.empty()) {
            out.push_back("trajectory " + std::to_string(ti) + ": empty");
            continue;
        }
        for (size_t t = 0; t < steps.size(); ++t) {
            const auto [s, a] = steps[t];
            if (s < 0 || s >= mdp.n_states || a < 0 || a >= mdp.n_actions) {
                out.push_back("trajectory " + std::to_string(ti) + ", step " + std::to_string(t) +
                              ": state or action out of range");
                continue;
            }
            if (t + 1 < steps.size()) {
                bool connected = false;
                for (int s2 : mdp.successor_set(s, a)) connected |= (s2 == steps[t + 1].first);
                if (!connected)
                    out.push_back("trajectory " + std::to_string(ti) + ", step " +
                                  std::to_string(t) + ": successor not in successor set");
            }
        }
    }
    return out;
}

double avg_loglik(const DemoSet& demos_heldout, const TabularMdp& mdp, const LearnedModel& learned,
                  const LikelihoodOptions& opts) {
    if (demos_heldout.trajectories.empty())
        throw std::invalid_argument("avg_loglik: empty demonstration set");

    // log pi needed per pair; build a solution-view with q = log pi, v = 0 so
    // log_policy(q,v) returns exactly log pi
    SoftSolution view;
    view.policy = learned.policy;
    view.q.resize(learned.policy.size());
    for (size_t i = 0; i < learned.policy.size(); ++i)
        view.q[i] = std::log(learned.policy[i]);
    view.v.assign(mdp.n_states, 0.0);

    const LikelihoodReport rep =
        log_likelihood(demos_heldout, mdp, view, learned.dyn, mdp.start_dist, opts);
    return rep.log_likelihood / static_cast<double>(demos_heldout.size());
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
    double kl = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        if (p[i] <= 0.0) continue;  // 0 log 0 = 0
        if (q[i] <= 0.0) return std::numeric_limits<double>::infinity();
        kl += p[i] * std::log(p[i] / q[i]);
    }
    return kl;
}

double avg_kl_dynamics(const TabularMdp& mdp, const BoltzmannDynamics& dyn_true,
                       const BoltzmannDynamics& dyn_est, KlWeighting weighting) {
    const auto& at = *dyn_true.assignment;
    const auto& ae = *dyn_est.assignment;
    if (at.n_models != ae.n_models || at.n_outcomes != ae.n_outcomes ||
        at.model_of != ae.model_of || at.slot_to_succ != ae.slot_to_succ)
        throw std::invalid_argument("avg_kl_dynamics: dynamics do not share successor structure");

    if (weighting == KlWeighting::UniformModels) {
        double sum = 0.0;
        for (int m = 0; m < at.n_models; ++m) {
            const numvec p = model_probs(dyn_true, m);
            const numvec q = model_probs(dyn_est, m);
            sum += kl_divergence(p, q);
        }
        return sum / at.n_models;
    }

    const TransitionTable pt = materialize(dyn_true, mdp);
    const TransitionTable pe = materialize(dyn_est, mdp);
    double sum = 0.0;
    for (int sa = 0; sa < mdp.sa_count(); ++sa)
        sum += kl_divergence(pt.row(mdp, sa), pe.row(mdp, sa));
    return sum / mdp.sa_count();
}

double avg_kl_policy(const numvec& policy_true, const numvec& policy_est, int n_states,
                     int n_actions) {
    if (policy_true.size() != policy_est.size() ||
        policy_true.size() != static_cast<size_t>(n_states) * n_actions)
        throw std::invalid_argument("avg_kl_policy: shape mismatch");
    double sum = 0.0;
    for (int s = 0; s < n_states; ++s) {
        const size_t off = static_cast<size_t>(s) * n_actions;
        sum += kl_divergence({policy_true.data() + off, static_cast<size_t>(n_actions)},
                             {policy_est.data() + off, static_cast<size_t>(n_actions)});
    }
    return sum / n_states;
}

} // namespace serd
