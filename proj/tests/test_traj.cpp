#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "serd/traj.hpp"
#include "test_support.hpp"

using namespace serd;

namespace {

// three-state deterministic chain 0 -> 1 -> 2 -> 2
struct Chain {
    TabularMdp mdp = make_mdp(3, 1, 1, 0.5, {1.0, 0.0, 0.0}, {1.0, 1.0, 1.0},
                              {{1}, {2}, {2}});
    TransitionTable table;
    numvec policy{1.0, 1.0, 1.0};

    Chain() { table.probs.assign(3, 1.0); }
};

} // namespace

TEST_CASE("a deterministic chain yields the unique trajectory") {
    Chain chain;
    const DemoSet demos = sample(chain.mdp, chain.policy, chain.table, 1, 3, std::nullopt, 42);
    REQUIRE(demos.size() == 1);
    const auto& steps = demos.trajectories[0].steps;
    REQUIRE(steps.size() == 3);
    CHECK(steps[0] == std::pair<int, int>{0, 0});
    CHECK(steps[1] == std::pair<int, int>{1, 0});
    CHECK(steps[2] == std::pair<int, int>{2, 0});
}

TEST_CASE("stop state absorbs with one final pair recorded") {
    Chain chain;
    const DemoSet demos = sample(chain.mdp, chain.policy, chain.table, 1, 100, 1, 42);
    const auto& steps = demos.trajectories[0].steps;
    REQUIRE(steps.size() == 2);  // (0,a) then the arrival pair (1,a), nothing after
    CHECK(steps[1].first == 1);

    // starting on the stop state yields a single pair
    TabularMdp from_stop = chain.mdp;
    from_stop.start_dist = {0.0, 1.0, 0.0};
    const DemoSet one = sample(from_stop, chain.policy, chain.table, 1, 100, 1, 7);
    CHECK(one.trajectories[0].steps.size() == 1);
}

TEST_CASE("same seed reproduces the demo set exactly") {
    test::Rng rng(61);
    const auto inst = test::random_instance(rng, 6, 3, 0.9);
    const SoftSolution sol = test::solve_at(inst.mdp, inst.assignment, inst.params, 1e-10);
    BoltzmannDynamics truth{inst.assignment, inst.params.true_view()};
    const TransitionTable table = materialize(truth, inst.mdp);

    const DemoSet a = sample(inst.mdp, sol.policy, table, 20, 30, std::nullopt, 123);
    const DemoSet b = sample(inst.mdp, sol.policy, table, 20, 30, std::nullopt, 123);
    REQUIRE(a.size() == b.size());
    for (int i = 0; i < a.size(); ++i) CHECK(a.trajectories[i].steps == b.trajectories[i].steps);

    const DemoSet c = sample(inst.mdp, sol.policy, table, 20, 30, std::nullopt, 124);
    bool any_diff = false;
    for (int i = 0; i < a.size(); ++i)
        any_diff |= a.trajectories[i].steps != c.trajectories[i].steps;
    CHECK(any_diff);
}

TEST_CASE("sampled trajectories satisfy the connectivity invariant") {
    test::Rng rng(62);
    for (int trial = 0; trial < 10; ++trial) {
        const auto inst = test::random_instance(rng, 6, 3, 0.9);
        const DemoSet demos =
            test::sample_demos(inst.mdp, inst.assignment, inst.params, 15, 25, 500 + trial);
        CHECK(validate(demos, inst.mdp).empty());
        for (const auto& traj : demos.trajectories) CHECK(!traj.steps.empty());
    }
}

TEST_CASE("empirical state-action frequencies match the finite-horizon occupancy") {
    test::Rng rng(63);
    const auto inst = test::random_instance(rng, 5, 2, 0.9);
    const SoftSolution sol = test::solve_at(inst.mdp, inst.assignment, inst.params, 1e-10);
    BoltzmannDynamics truth{inst.assignment, inst.params.true_view()};
    const TransitionTable table = materialize(truth, inst.mdp);

    const int horizon = 100;
    const int n = 2000;
    const DemoSet demos = sample(inst.mdp, sol.policy, table, n, horizon, std::nullopt, 2024);

    numvec emp(inst.mdp.sa_count(), 0.0);
    long total = 0;
    for (const auto& traj : demos.trajectories)
        for (const auto& [s, a] : traj.steps) {
            emp[inst.mdp.sa_index(s, a)] += 1.0;
            ++total;
        }
    for (double& v : emp) v /= static_cast<double>(total);

    // oracle: average the start distribution pushed through t policy/dynamics
    // steps for t = 0..horizon-1
    numvec mu = inst.mdp.start_dist;
    numvec occupancy(inst.mdp.sa_count(), 0.0);
    const int A = inst.mdp.n_actions;
    for (int t = 0; t < horizon; ++t) {
        for (int s = 0; s < inst.mdp.n_states; ++s)
            for (int a = 0; a < A; ++a)
                occupancy[s * A + a] += mu[s] * sol.policy[s * A + a] / horizon;
        numvec next(mu.size(), 0.0);
        for (int s = 0; s < inst.mdp.n_states; ++s)
            for (int a = 0; a < A; ++a) {
                const int sa = s * A + a;
                const double w = mu[s] * sol.policy[sa];
                for (int i = inst.mdp.succ_offsets[sa]; i < inst.mdp.succ_offsets[sa + 1]; ++i)
                    next[inst.mdp.succ_states[i]] += w * table.probs[i];
            }
        mu.swap(next);
    }

    double tv = 0.0;
    for (int sa = 0; sa < inst.mdp.sa_count(); ++sa) tv += std::abs(emp[sa] - occupancy[sa]);
    CHECK(tv / 2.0 <= 0.01);
}

TEST_CASE("the generating model maximizes held-out average log-likelihood") {
    test::Rng rng(64);
    const auto inst = test::random_instance(rng, 5, 2, 0.9);
    const SoftSolution sol = test::solve_at(inst.mdp, inst.assignment, inst.params, 1e-10);
    BoltzmannDynamics truth{inst.assignment, inst.params.true_view()};
    const TransitionTable table = materialize(truth, inst.mdp);
    const DemoSet heldout = sample(inst.mdp, sol.policy, table, 1000, 30, std::nullopt, 31);

    const double true_score = avg_loglik(heldout, inst.mdp, {sol.policy, truth});
    const ParamLayout layout = ParamLayout::of(inst.params);
    for (int p = 0; p < 20; ++p) {
        numvec flat = inst.params.flatten();
        for (double& v : flat) v += rng.uniform(-0.5, 0.5);
        const ParamVector perturbed =
            ParamVector::unflatten(flat, layout.d, layout.agent_n, layout.tied);
        const SoftSolution psol = test::solve_at(inst.mdp, inst.assignment, perturbed, 1e-10);
        BoltzmannDynamics ptruth{inst.assignment, perturbed.true_view()};
        CHECK(avg_loglik(heldout, inst.mdp, {psol.policy, ptruth}) < true_score);
    }
}

TEST_CASE("avg_loglik rejects an empty demo set") {
    Chain chain;
    BoltzmannDynamics dummy;
    CHECK_THROWS_AS(avg_loglik(DemoSet{}, chain.mdp, {chain.policy, dummy}),
                    std::invalid_argument);
}

TEST_CASE("single one-step trajectory evaluates to the analytic value") {
    // uniform start over 4 states and pi(s,a) = 1/2 everywhere
    std::vector<indvec> succ(8, indvec{0});
    for (int s = 0; s < 4; ++s) succ[s * 2] = succ[s * 2 + 1] = {s};
    const TabularMdp mdp = make_mdp(4, 2, 1, 0.5, {0.25, 0.25, 0.25, 0.25}, numvec(8, 0.0), succ);
    auto assign = std::make_shared<DynamicsAssignment>();
    assign->n_models = 1;
    assign->n_outcomes = 1;
    assign->model_of.assign(8, 0);
    assign->slot_to_succ.assign(8, 0);
    BoltzmannDynamics truth{assign, {0.0}};
    const numvec policy(8, 0.5);

    DemoSet demos;
    demos.trajectories.push_back({{{1, 0}}});
    CHECK(avg_loglik(demos, mdp, {policy, truth}) ==
          doctest::Approx(std::log(0.25) + std::log(0.5)).epsilon(1e-12));
}

TEST_CASE("KL hand values") {
    const numvec p1 = {0.8, 0.1, 0.1, 0.0, 0.0};
    const numvec q1 = {0.2, 0.2, 0.2, 0.2, 0.2};
    const double expected1 = 0.8 * std::log(4.0) + 0.2 * std::log(0.5);
    CHECK(kl_divergence(p1, q1) == doctest::Approx(expected1).epsilon(1e-12));
    CHECK(expected1 == doctest::Approx(0.9704).epsilon(1e-4));

    const numvec p2 = {0.75, 0.25};
    const numvec q2 = {0.5, 0.5};
    const double expected2 = 0.75 * std::log(1.5) + 0.25 * std::log(0.5);
    CHECK(kl_divergence(p2, q2) == doctest::Approx(expected2).epsilon(1e-12));
    CHECK(expected2 == doctest::Approx(0.1308).epsilon(1e-3));

    CHECK(kl_divergence(p2, q2) != kl_divergence(q2, p2));
    CHECK(kl_divergence(p1, p1) == 0.0);
    const numvec half = {0.5, 0.5};
    const numvec point = {1.0, 0.0};
    CHECK(std::isinf(kl_divergence(half, point)));
}

TEST_CASE("KL is nonnegative on random distribution pairs") {
    test::Rng rng(65);
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = rng.uniform_int(2, 6);
        numvec p(n), q(n);
        double sp = 0.0, sq = 0.0;
        for (int i = 0; i < n; ++i) {
            sp += p[i] = rng.uniform(0.01, 1.0);
            sq += q[i] = rng.uniform(0.01, 1.0);
        }
        for (int i = 0; i < n; ++i) {
            p[i] /= sp;
            q[i] /= sq;
        }
        CHECK(kl_divergence(p, q) >= -1e-15);
    }
}

TEST_CASE("dynamics KL: self-divergence is zero, weightings differ, structure is checked") {
    test::Rng rng(66);
    const auto inst = test::random_instance(rng, 5, 2, 0.9);
    BoltzmannDynamics truth{inst.assignment, inst.params.agent_energies};
    CHECK(avg_kl_dynamics(inst.mdp, truth, truth) == 0.0);
    CHECK(avg_kl_dynamics(inst.mdp, truth, truth, KlWeighting::UniformModels) == 0.0);

    BoltzmannDynamics other = truth;
    for (double& e : other.energies) e += rng.uniform(-1.0, 1.0);
    CHECK(avg_kl_dynamics(inst.mdp, truth, other) > 0.0);

    const auto inst2 = test::random_instance(rng, 5, 2, 0.9);
    BoltzmannDynamics foreign{inst2.assignment, inst2.params.agent_energies};
    CHECK_THROWS_AS(avg_kl_dynamics(inst.mdp, truth, foreign), std::invalid_argument);
}

TEST_CASE("policy KL: identical policies score zero, perturbed ones positive") {
    test::Rng rng(67);
    const auto inst = test::random_instance(rng, 5, 3, 0.9);
    const SoftSolution sol = test::solve_at(inst.mdp, inst.assignment, inst.params, 1e-10);
    CHECK(avg_kl_policy(sol.policy, sol.policy, inst.mdp.n_states, inst.mdp.n_actions) == 0.0);

    numvec q = sol.q;
    for (double& v : q) v += rng.uniform(-0.3, 0.3);
    const numvec other = derive_policy(q, inst.mdp.n_states, inst.mdp.n_actions);
    CHECK(avg_kl_policy(sol.policy, other, inst.mdp.n_states, inst.mdp.n_actions) > 0.0);
}

TEST_CASE("demo set prefix keeps metadata and order") {
    Chain chain;
    const DemoSet demos = sample(chain.mdp, chain.policy, chain.table, 5, 3, std::nullopt, 9);
    const DemoSet two = demos.prefix(2);
    CHECK(two.size() == 2);
    CHECK(two.seed == demos.seed);
    CHECK(two.horizon == demos.horizon);
    CHECK(two.trajectories[0].steps == demos.trajectories[0].steps);
    CHECK_THROWS_AS(demos.prefix(6), std::invalid_argument);
}
