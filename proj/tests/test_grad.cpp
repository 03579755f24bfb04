#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "serd/grad.hpp"
#include "serd/traj.hpp"
#include "test_support.hpp"

using namespace serd;

namespace {

struct LoopWorld {
    TabularMdp mdp;
    AssignmentPtr assignment;
    ParamVector params;

    explicit LoopWorld(double gamma, double theta = 1.0) {
        mdp = make_mdp(1, 1, 1, gamma, {1.0}, {1.0}, {{0}});
        auto a = std::make_shared<DynamicsAssignment>();
        a->n_models = 1;
        a->n_outcomes = 1;
        a->model_of = {0};
        a->slot_to_succ = {0};
        a->model_names = {"self"};
        a->outcome_names = {"stay"};
        assignment = a;
        params.tied = true;
        params.theta_r = {theta};
        params.agent_energies = {0.0};
    }
};

// finite differences of the converged Q-table itself, one re-solve per side
numvec fd_q_gradient(const TabularMdp& mdp, const AssignmentPtr& assign,
                     const ParamVector& params, double eps = 1e-5) {
    const ParamLayout layout = ParamLayout::of(params);
    const numvec flat = params.flatten();
    numvec grad(static_cast<size_t>(mdp.sa_count()) * layout.total());
    for (int i = 0; i < layout.total(); ++i) {
        numvec hi = flat, lo = flat;
        hi[i] += eps;
        lo[i] -= eps;
        const numvec qh =
            test::solve_at(mdp, assign,
                           ParamVector::unflatten(hi, layout.d, layout.agent_n, layout.tied))
                .q;
        const numvec ql =
            test::solve_at(mdp, assign,
                           ParamVector::unflatten(lo, layout.d, layout.agent_n, layout.tied))
                .q;
        for (int sa = 0; sa < mdp.sa_count(); ++sa)
            grad[static_cast<size_t>(sa) * layout.total() + i] = (qh[sa] - ql[sa]) / (2 * eps);
    }
    return grad;
}

} // namespace

TEST_CASE("self-loop reward gradient is the geometric series 1/(1-gamma)") {
    const LoopWorld world(0.5);
    const ParamLayout layout = ParamLayout::of(world.params);
    const SoftSolution sol = test::solve_at(world.mdp, world.assignment, world.params);
    BoltzmannDynamics agent{world.assignment, world.params.agent_energies};

    const GradTensor iter = soft_q_gradient(world.mdp, sol, agent, layout, {1e-12});
    CHECK(iter.phi[0] == doctest::Approx(2.0).epsilon(1e-9));

    const GradTensor direct = soft_q_gradient_direct(world.mdp, sol, agent, layout);
    CHECK(direct.phi[0] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("true-dynamics slice of the gradient tensor is exactly zero when untied") {
    test::Rng rng(41);
    for (int trial = 0; trial < 20; ++trial) {
        const auto inst = test::random_instance(rng, 6, 3, 0.9, /*tied=*/false);
        const ParamLayout layout = ParamLayout::of(inst.params);
        const SoftSolution sol = test::solve_at(inst.mdp, inst.assignment, inst.params);
        BoltzmannDynamics agent{inst.assignment, inst.params.agent_energies};
        const GradTensor phi = soft_q_gradient(inst.mdp, sol, agent, layout, {1e-12});
        for (int sa = 0; sa < inst.mdp.sa_count(); ++sa)
            for (int j = 0; j < layout.true_n; ++j)
                CHECK(phi.at(sa)[layout.true_index(j)] == 0.0);
    }
}

TEST_CASE("gradient tensor matches finite differences of the converged Q") {
    test::Rng rng(42);
    for (int trial = 0; trial < 8; ++trial) {
        const auto inst = test::random_instance(rng, 5, 3, 0.9, trial % 2 == 0);
        const ParamLayout layout = ParamLayout::of(inst.params);
        const SoftSolution sol = test::solve_at(inst.mdp, inst.assignment, inst.params);
        BoltzmannDynamics agent{inst.assignment, inst.params.agent_energies};
        const GradTensor phi = soft_q_gradient(inst.mdp, sol, agent, layout, {1e-12, 2000000});
        const numvec fd = fd_q_gradient(inst.mdp, inst.assignment, inst.params);
        CHECK(test::max_rel_err(phi.phi, fd) <= 1e-4);
    }
}

TEST_CASE("iterative and direct routes agree to 1e-8") {
    test::Rng rng(43);
    for (int trial = 0; trial < 25; ++trial) {
        const auto inst =
            test::random_instance(rng, 6, 3, trial % 3 == 0 ? 0.99 : 0.9, trial % 2 == 0);
        const ParamLayout layout = ParamLayout::of(inst.params);
        const SoftSolution sol = test::solve_at(inst.mdp, inst.assignment, inst.params);
        BoltzmannDynamics agent{inst.assignment, inst.params.agent_energies};
        const GradTensor iter = soft_q_gradient(inst.mdp, sol, agent, layout, {1e-12, 2000000});
        const GradTensor direct = soft_q_gradient_direct(inst.mdp, sol, agent, layout);
        CHECK(test::sup_norm_diff(iter.phi, direct.phi) <= 1e-8);
        CHECK(direct.residual <= 1e-9);
    }
}

TEST_CASE("gradient propagation operator contracts by at most gamma") {
    test::Rng rng(44);
    for (int trial = 0; trial < 100; ++trial) {
        const double gamma = trial % 2 == 0 ? 0.9 : 0.99;
        const auto inst = test::random_instance(rng, 5, 3, gamma);
        const ParamLayout layout = ParamLayout::of(inst.params);
        const SoftSolution sol = test::solve_at(inst.mdp, inst.assignment, inst.params, 1e-10);
        BoltzmannDynamics agent{inst.assignment, inst.params.agent_energies};
        const numvec b = gradient_constant_terms(inst.mdp, sol, agent, layout);
        const TransitionTable table = materialize(agent, inst.mdp);

        const size_t len = static_cast<size_t>(inst.mdp.sa_count()) * layout.total();
        numvec pm(len), pn(len);
        for (double& v : pm) v = rng.uniform(-5.0, 5.0);
        for (double& v : pn) v = rng.uniform(-5.0, 5.0);
        numvec um, un;
        soft_q_gradient_apply(inst.mdp, sol, table, b, layout.total(), pm, um);
        soft_q_gradient_apply(inst.mdp, sol, table, b, layout.total(), pn, un);
        CHECK(test::sup_norm_diff(um, un) <= gamma * test::sup_norm_diff(pm, pn) + 1e-12);
    }
}

TEST_CASE("gradient propagation operator is monotone") {
    test::Rng rng(45);
    for (int trial = 0; trial < 100; ++trial) {
        const auto inst = test::random_instance(rng, 5, 3, 0.9);
        const ParamLayout layout = ParamLayout::of(inst.params);
        const SoftSolution sol = test::solve_at(inst.mdp, inst.assignment, inst.params, 1e-10);
        BoltzmannDynamics agent{inst.assignment, inst.params.agent_energies};
        const numvec b = gradient_constant_terms(inst.mdp, sol, agent, layout);
        const TransitionTable table = materialize(agent, inst.mdp);

        const size_t len = static_cast<size_t>(inst.mdp.sa_count()) * layout.total();
        numvec pm(len);
        for (double& v : pm) v = rng.uniform(-5.0, 5.0);
        numvec pn = pm;
        for (double& v : pn) v += rng.uniform(0.0, 3.0);
        numvec um, un;
        soft_q_gradient_apply(inst.mdp, sol, table, b, layout.total(), pm, um);
        soft_q_gradient_apply(inst.mdp, sol, table, b, layout.total(), pn, un);
        for (size_t i = 0; i < um.size(); ++i) CHECK(um[i] <= un[i] + 1e-12);
    }
}

TEST_CASE("zero rewards keep the dynamics block of the tensor at zero") {
    // with R === 0 the unique fixed point has a constant value function
    // (V = log|A| / (1 - gamma)), so the dP V(s') term telescopes to zero and
    // nothing ever feeds the dynamics slice
    test::Rng rng(46);
    auto inst = test::random_instance(rng, 5, 2, 0.9);
    for (double& f : inst.mdp.features) f = 0.0;
    for (double& w : inst.params.theta_r) w = 0.0;

    const ParamLayout layout = ParamLayout::of(inst.params);
    const SoftSolution sol = test::solve_at(inst.mdp, inst.assignment, inst.params);
    BoltzmannDynamics agent{inst.assignment, inst.params.agent_energies};
    const GradTensor phi = soft_q_gradient(inst.mdp, sol, agent, layout, {1e-12});
    for (int sa = 0; sa < inst.mdp.sa_count(); ++sa)
        for (int j = 0; j < layout.agent_n; ++j)
            CHECK(std::abs(phi.at(sa)[layout.agent_index(j)]) <= 1e-9);
}

TEST_CASE("policy log-gradient degenerate cases") {
    // single action: expectation equals the term itself
    const LoopWorld world(0.5);
    const ParamLayout layout = ParamLayout::of(world.params);
    const SoftSolution sol = test::solve_at(world.mdp, world.assignment, world.params);
    BoltzmannDynamics agent{world.assignment, world.params.agent_energies};
    const GradTensor phi = soft_q_gradient(world.mdp, sol, agent, layout, {1e-12});
    const numvec g = policy_log_gradient(phi, sol, 1, 0, 0);
    for (double v : g) CHECK(v == 0.0);

    // identical tensor rows cancel against the expectation
    GradTensor flat;
    flat.n_params = 3;
    flat.phi = {1.0, 2.0, 3.0, 1.0, 2.0, 3.0};
    SoftSolution two;
    two.policy = {0.3, 0.7};
    two.q = {0.0, 0.0};
    two.v = {0.0};
    const numvec g2 = policy_log_gradient(flat, two, 2, 0, 0);
    for (double v : g2) CHECK(std::abs(v) <= 1e-15);
}

TEST_CASE("policy log-gradient matches finite differences of log pi") {
    test::Rng rng(47);
    for (int trial = 0; trial < 5; ++trial) {
        const auto inst = test::random_instance(rng, 5, 3, 0.9);
        const ParamLayout layout = ParamLayout::of(inst.params);
        const SoftSolution sol = test::solve_at(inst.mdp, inst.assignment, inst.params);
        BoltzmannDynamics agent{inst.assignment, inst.params.agent_energies};
        const GradTensor phi = soft_q_gradient(inst.mdp, sol, agent, layout, {1e-12, 2000000});

        const int s = rng.uniform_int(0, inst.mdp.n_states - 1);
        const int a = rng.uniform_int(0, inst.mdp.n_actions - 1);
        const numvec analytic = policy_log_gradient(phi, sol, inst.mdp.n_actions, s, a);

        const numvec flat = inst.params.flatten();
        numvec fd(flat.size());
        const double eps = 1e-5;
        for (size_t i = 0; i < flat.size(); ++i) {
            numvec hi = flat, lo = flat;
            hi[i] += eps;
            lo[i] -= eps;
            auto logpi = [&](const numvec& v) {
                const ParamVector p =
                    ParamVector::unflatten(v, layout.d, layout.agent_n, layout.tied);
                const SoftSolution q = test::solve_at(inst.mdp, inst.assignment, p);
                return q.q[static_cast<size_t>(s) * inst.mdp.n_actions + a] - q.v[s];
            };
            fd[i] = (logpi(hi) - logpi(lo)) / (2 * eps);
        }
        CHECK(test::max_rel_err(analytic, fd) <= 1e-4);
    }
}

TEST_CASE("log-likelihood: empty demo set scores zero") {
    const LoopWorld world(0.5);
    const SoftSolution sol = test::solve_at(world.mdp, world.assignment, world.params);
    BoltzmannDynamics truth{world.assignment, world.params.agent_energies};
    const auto rep = log_likelihood(DemoSet{}, world.mdp, sol, truth, world.mdp.start_dist);
    CHECK(rep.log_likelihood == 0.0);
    CHECK(rep.per_trajectory.empty());
}

TEST_CASE("log-likelihood: one pair, uniform start over four states, pi = 1/2") {
    // four states, two identical actions, self-loops
    std::vector<indvec> succ(8, indvec{0});
    for (int s = 0; s < 4; ++s) succ[s * 2] = succ[s * 2 + 1] = {s};
    const TabularMdp mdp =
        make_mdp(4, 2, 1, 0.5, {0.25, 0.25, 0.25, 0.25}, numvec(8, 0.0), succ);
    auto assign = std::make_shared<DynamicsAssignment>();
    assign->n_models = 1;
    assign->n_outcomes = 1;
    assign->model_of.assign(8, 0);
    assign->slot_to_succ.assign(8, 0);
    assign->model_names = {"self"};
    assign->outcome_names = {"stay"};
    BoltzmannDynamics truth{assign, {0.0}};
    const SoftSolution sol =
        soft_q_iteration(mdp, {0.0}, materialize(truth, mdp), {1e-12});

    DemoSet demos;
    demos.trajectories.push_back({{{2, 1}}});
    const auto rep = log_likelihood(demos, mdp, sol, truth, mdp.start_dist);
    CHECK(rep.log_likelihood ==
          doctest::Approx(std::log(0.25) + std::log(0.5)).epsilon(1e-12));
    REQUIRE(rep.per_trajectory.size() == 1);
    CHECK(rep.per_trajectory[0] == doctest::Approx(std::log(0.5)).epsilon(1e-12));
}

TEST_CASE("per-step log-likelihood of the generating model matches the entropy rates") {
    test::Rng rng(48);
    const auto inst = test::random_instance(rng, 4, 2, 0.8);
    const SoftSolution sol = test::solve_at(inst.mdp, inst.assignment, inst.params);
    BoltzmannDynamics truth{inst.assignment, inst.params.true_view()};
    const TransitionTable table = materialize(truth, inst.mdp);

    // stationary state distribution of the induced chain by power iteration
    numvec mu = inst.mdp.start_dist;
    const int A = inst.mdp.n_actions;
    for (int it = 0; it < 2000; ++it) {
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

    double expected = 0.0;  // policy entropy rate + transition entropy rate
    for (int s = 0; s < inst.mdp.n_states; ++s)
        for (int a = 0; a < A; ++a) {
            const int sa = s * A + a;
            const double pi = sol.policy[sa];
            if (pi > 0.0) expected -= mu[s] * pi * std::log(pi);
            for (int i = inst.mdp.succ_offsets[sa]; i < inst.mdp.succ_offsets[sa + 1]; ++i)
                if (table.probs[i] > 0.0)
                    expected -= mu[s] * pi * table.probs[i] * std::log(table.probs[i]);
        }

    const DemoSet demos =
        sample(inst.mdp, sol.policy, table, 10, 1001, std::nullopt, 77);
    double mc = 0.0;
    long steps = 0;
    for (const auto& traj : demos.trajectories) {
        for (size_t t = 0; t + 1 < traj.steps.size(); ++t) {
            const auto [s, a] = traj.steps[t];
            const int sa = s * A + a;
            mc -= std::log(sol.policy[sa]);
            int j = -1;
            const auto set = inst.mdp.successor_set(sa);
            for (size_t i = 0; i < set.size(); ++i)
                if (set[i] == traj.steps[t + 1].first) j = static_cast<int>(i);
            mc -= std::log(table.probs[inst.mdp.succ_offsets[sa] + j]);
            ++steps;
        }
    }
    mc /= static_cast<double>(steps);
    CHECK(steps >= 10000);
    CHECK(std::abs(mc - expected) <= 0.02 * std::abs(expected));
}

TEST_CASE("full likelihood gradient matches finite differences") {
    test::Rng rng(49);
    for (int trial = 0; trial < 6; ++trial) {
        const bool tied = trial % 2 == 0;
        const auto inst = test::random_instance(rng, 5, 3, 0.9, tied, trial % 3 == 0 ? 1 : 0);
        const DemoSet demos = test::sample_demos(inst.mdp, inst.assignment, inst.params, 3, 10,
                                                 1000 + trial);
        const numvec analytic =
            test::analytic_loglik_gradient(inst.mdp, inst.assignment, inst.params, demos);
        const numvec fd = test::fd_loglik_gradient(inst.mdp, inst.assignment, inst.params, demos);
        CHECK(test::max_rel_err(analytic, fd) <= 1e-4);
    }
}

TEST_CASE("adjoint gradient equals the tensor route") {
    test::Rng rng(50);
    for (int trial = 0; trial < 10; ++trial) {
        const bool tied = trial % 2 == 0;
        const auto inst = test::random_instance(rng, 6, 3, 0.9, tied, trial % 4 == 0 ? 1 : 0);
        const DemoSet demos =
            test::sample_demos(inst.mdp, inst.assignment, inst.params, 4, 12, 2000 + trial);
        const ParamLayout layout = ParamLayout::of(inst.params);
        const SoftSolution sol = test::solve_at(inst.mdp, inst.assignment, inst.params);
        BoltzmannDynamics agent{inst.assignment, inst.params.agent_energies};
        BoltzmannDynamics truth{inst.assignment, inst.params.true_view()};

        const numvec tensor_grad =
            test::analytic_loglik_gradient(inst.mdp, inst.assignment, inst.params, demos);
        const DemoCounts counts = count_demos(demos, inst.mdp);
        const auto rep = likelihood_gradient_adjoint(counts, inst.mdp, sol, agent, truth, layout,
                                                     {1e-13, 2000000});
        CHECK(test::sup_norm_diff(rep.gradient, tensor_grad) <= 1e-8);

        const double value = test::loglik_at(inst.mdp, inst.assignment, inst.params, demos);
        CHECK(rep.log_likelihood == doctest::Approx(value).epsilon(1e-10));
    }
}

TEST_CASE("stochastic-gradient consistency at the true parameters") {
    test::Rng rng(51);
    const auto inst = test::random_instance(rng, 5, 2, 0.9);
    const SoftSolution sol = test::solve_at(inst.mdp, inst.assignment, inst.params);
    BoltzmannDynamics truth{inst.assignment, inst.params.true_view()};
    const DemoSet demos = sample(inst.mdp, sol.policy, materialize(truth, inst.mdp), 10, 1001,
                                 std::nullopt, 99);
    REQUIRE(demos.total_pairs() >= 10000);

    const ParamLayout layout = ParamLayout::of(inst.params);
    BoltzmannDynamics agent{inst.assignment, inst.params.agent_energies};
    const GradTensor phi = soft_q_gradient(inst.mdp, sol, agent, layout, {1e-11, 2000000});
    const auto rep = likelihood_gradient(demos, inst.mdp, phi, sol, truth, layout);

    double norm = 0.0;
    for (double g : rep.gradient) norm = std::max(norm, std::abs(g));
    CHECK(norm / static_cast<double>(demos.total_pairs()) <= 0.05);
}

TEST_CASE("single pair with a single available action has an all-zero gradient") {
    LoopWorld world(0.5);
    world.params.tied = false;
    world.params.true_energies = {0.0};
    const ParamLayout layout = ParamLayout::of(world.params);
    const SoftSolution sol = test::solve_at(world.mdp, world.assignment, world.params);
    BoltzmannDynamics agent{world.assignment, world.params.agent_energies};
    BoltzmannDynamics truth{world.assignment, world.params.true_energies};
    const GradTensor phi = soft_q_gradient(world.mdp, sol, agent, layout, {1e-12});

    DemoSet demos;
    demos.trajectories.push_back({{{0, 0}}});
    const auto rep = likelihood_gradient(demos, world.mdp, phi, sol, truth, layout);
    for (double g : rep.gradient) CHECK(g == 0.0);
}

TEST_CASE("start distribution perturbations change the value but never the gradient") {
    test::Rng rng(52);
    const auto inst = test::random_instance(rng, 5, 2, 0.9);
    const DemoSet demos = test::sample_demos(inst.mdp, inst.assignment, inst.params, 4, 8, 3000);

    TabularMdp shifted = inst.mdp;
    shifted.start_dist.assign(inst.mdp.n_states, 1.0 / inst.mdp.n_states);

    const ParamLayout layout = ParamLayout::of(inst.params);
    const SoftSolution sol = test::solve_at(inst.mdp, inst.assignment, inst.params);
    BoltzmannDynamics agent{inst.assignment, inst.params.agent_energies};
    BoltzmannDynamics truth{inst.assignment, inst.params.true_view()};
    const GradTensor phi = soft_q_gradient(inst.mdp, sol, agent, layout, {1e-12, 2000000});

    const auto a = likelihood_gradient(demos, inst.mdp, phi, sol, truth, layout);
    const auto b = likelihood_gradient(demos, shifted, phi, sol, truth, layout);
    CHECK(a.gradient == b.gradient);
    CHECK(a.log_likelihood != b.log_likelihood);
}

TEST_CASE("transitions outside the successor set are reported with their location") {
    const LoopWorld world(0.5);
    const SoftSolution sol = test::solve_at(world.mdp, world.assignment, world.params);
    BoltzmannDynamics truth{world.assignment, world.params.agent_energies};

    DemoSet demos;
    demos.trajectories.push_back({{{0, 0}, {0, 0}}});
    CHECK_NOTHROW(log_likelihood(demos, world.mdp, sol, truth, world.mdp.start_dist));

    // two-state world where state 1 is not reachable from (0,0)
    TabularMdp mdp2 = make_mdp(2, 1, 1, 0.5, {1.0, 0.0}, {1.0, 1.0}, {{0}, {1}});
    auto assign2 = std::make_shared<DynamicsAssignment>();
    assign2->n_models = 1;
    assign2->n_outcomes = 1;
    assign2->model_of = {0, 0};
    assign2->slot_to_succ = {0, 0};
    BoltzmannDynamics truth2{assign2, {0.0}};
    const SoftSolution sol2 = soft_q_iteration(mdp2, {1.0}, materialize(truth2, mdp2), {1e-12});
    DemoSet bad;
    bad.trajectories.push_back({{{0, 0}, {1, 0}}});
    try {
        log_likelihood(bad, mdp2, sol2, truth2, mdp2.start_dist);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("trajectory 0") != std::string::npos);
        CHECK(std::string(e.what()).find("step 0") != std::string::npos);
    }
}

TEST_CASE("final policy factor can be excluded") {
    test::Rng rng(53);
    const auto inst = test::random_instance(rng, 4, 2, 0.9);
    const DemoSet demos = test::sample_demos(inst.mdp, inst.assignment, inst.params, 2, 5, 4000);
    const SoftSolution sol = test::solve_at(inst.mdp, inst.assignment, inst.params);
    BoltzmannDynamics truth{inst.assignment, inst.params.true_view()};

    const auto with = log_likelihood(demos, inst.mdp, sol, truth, inst.mdp.start_dist, {true});
    const auto without = log_likelihood(demos, inst.mdp, sol, truth, inst.mdp.start_dist, {false});
    double final_terms = 0.0;
    for (const auto& traj : demos.trajectories) {
        const auto [s, a] = traj.steps.back();
        final_terms += sol.q[static_cast<size_t>(s) * inst.mdp.n_actions + a] - sol.v[s];
    }
    CHECK(with.log_likelihood ==
          doctest::Approx(without.log_likelihood + final_terms).epsilon(1e-10));
}
