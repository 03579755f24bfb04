#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "serd/learner.hpp"
#include "test_support.hpp"

using namespace serd;

namespace {

TrainConfig quick_config() {
    TrainConfig config;
    config.max_steps = 120;
    config.seed = 17;
    return config;
}

} // namespace

TEST_CASE("step size rules") {
    TrainConfig config;
    config.step_rule = StepRule::Constant;
    config.step_scale = 0.01;
    for (int t : {0, 1, 7, 500}) CHECK(step_size(config, t) == 0.01);

    config.step_rule = StepRule::Decaying;
    config.step_scale = 1.0;
    CHECK(step_size(config, 3) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(step_size(config, 0) == doctest::Approx(1.0).epsilon(1e-15));

    config.step_rule = StepRule::Adaptive;
    config.step_scale = 0.05;
    CHECK(step_size(config, 0) == 0.05);

    CHECK_THROWS_AS(step_size(config, -1), std::invalid_argument);
}

TEST_CASE("a stationary initialization stops immediately") {
    // one state, one action, one outcome: pi === 1 and P === 1, so the
    // likelihood is flat in every parameter
    const TabularMdp mdp = make_mdp(1, 1, 1, 0.5, {1.0}, {1.0}, {{0}});
    auto assign = std::make_shared<DynamicsAssignment>();
    assign->n_models = 1;
    assign->n_outcomes = 1;
    assign->model_of = {0};
    assign->slot_to_succ = {0};
    assign->model_names = {"self"};
    assign->outcome_names = {"stay"};

    DemoSet demos;
    demos.trajectories.push_back({{{0, 0}, {0, 0}, {0, 0}}});

    auto [params, trace] = train(mdp, assign, demos, quick_config());
    CHECK(trace.records.size() == 1);
    CHECK(trace.records[0].step == 0);
    CHECK(trace.records[0].grad_norm == 0.0);
    (void)params;
}

TEST_CASE("ascent with a small constant step does not decrease the likelihood") {
    test::Rng rng(71);
    const auto inst = test::random_instance(rng, 4, 2, 0.9);
    const DemoSet demos = test::sample_demos(inst.mdp, inst.assignment, inst.params, 50, 12, 81);

    TrainConfig config;
    config.step_rule = StepRule::Constant;
    config.step_scale = 1e-3;
    config.max_steps = 201;
    config.grad_norm_tol = 0.0;
    config.seed = 4;
    auto [params, trace] = train(inst.mdp, inst.assignment, demos, config);
    REQUIRE(trace.records.size() == 201);
    CHECK(trace.records[200].log_likelihood >= trace.records[0].log_likelihood);
    (void)params;
}

TEST_CASE("reward-only mode never touches the dynamics energies") {
    test::Rng rng(72);
    const auto inst = test::random_instance(rng, 5, 2, 0.9);
    const DemoSet demos = test::sample_demos(inst.mdp, inst.assignment, inst.params, 10, 15, 82);

    TrainConfig config = quick_config();
    config.mode = TrainMode::MdceIrl;
    auto [params, trace] = train(inst.mdp, inst.assignment, demos, config);

    const BoltzmannDynamics estimate =
        m_estimate(demos, inst.assignment, inst.mdp, config.prior_count);
    CHECK(params.tied);
    CHECK(params.agent_energies == estimate.energies);  // bit-for-bit
    (void)trace;
}

TEST_CASE("mode controls the parameter layout") {
    test::Rng rng(73);
    const auto inst = test::random_instance(rng, 4, 2, 0.9);
    const DemoSet demos = test::sample_demos(inst.mdp, inst.assignment, inst.params, 6, 10, 83);

    TrainConfig config = quick_config();
    config.max_steps = 3;
    config.grad_norm_tol = 0.0;

    config.mode = TrainMode::SerdTied;
    CHECK(train(inst.mdp, inst.assignment, demos, config).first.tied);

    config.mode = TrainMode::SerdUntied;
    const ParamVector untied = train(inst.mdp, inst.assignment, demos, config).first;
    CHECK(!untied.tied);
    CHECK(untied.true_energies.size() == untied.agent_energies.size());
}

TEST_CASE("training is deterministic given the seed") {
    test::Rng rng(74);
    const auto inst = test::random_instance(rng, 4, 2, 0.9);
    const DemoSet demos = test::sample_demos(inst.mdp, inst.assignment, inst.params, 8, 12, 84);

    TrainConfig config = quick_config();
    config.max_steps = 40;
    auto [pa, ta] = train(inst.mdp, inst.assignment, demos, config);
    auto [pb, tb] = train(inst.mdp, inst.assignment, demos, config);

    CHECK(pa.theta_r == pb.theta_r);
    CHECK(pa.agent_energies == pb.agent_energies);
    REQUIRE(ta.records.size() == tb.records.size());
    for (size_t i = 0; i < ta.records.size(); ++i) {
        CHECK(ta.records[i].log_likelihood == tb.records[i].log_likelihood);
        CHECK(ta.records[i].grad_norm == tb.records[i].grad_norm);
        CHECK(ta.records[i].step_size == tb.records[i].step_size);
    }

    config.seed = 18;
    auto [pc, tc] = train(inst.mdp, inst.assignment, demos, config);
    CHECK(pa.theta_r != pc.theta_r);
    (void)tc;
}

TEST_CASE("returned iterate is at least as likely as the initialization") {
    test::Rng rng(75);
    for (int trial = 0; trial < 3; ++trial) {
        const auto inst = test::random_instance(rng, 5, 2, 0.9);
        const DemoSet demos =
            test::sample_demos(inst.mdp, inst.assignment, inst.params, 10, 12, 90 + trial);
        TrainConfig config = quick_config();
        config.max_steps = 60;
        config.seed = trial;
        auto [params, trace] = train(inst.mdp, inst.assignment, demos, config);

        CHECK(trace.best_log_likelihood >= trace.records.front().log_likelihood);
        const double replay =
            test::loglik_at(inst.mdp, inst.assignment, params, demos, 1e-12);
        CHECK(replay == doctest::Approx(trace.best_log_likelihood).epsilon(1e-6));
    }
}

TEST_CASE("restarts keep the best run") {
    test::Rng rng(76);
    const auto inst = test::random_instance(rng, 4, 2, 0.9);
    const DemoSet demos = test::sample_demos(inst.mdp, inst.assignment, inst.params, 8, 10, 85);

    TrainConfig config = quick_config();
    config.max_steps = 30;
    auto single = train(inst.mdp, inst.assignment, demos, config);
    config.restarts = 3;
    auto multi = train(inst.mdp, inst.assignment, demos, config);
    CHECK(multi.second.best_log_likelihood >= single.second.best_log_likelihood);
}

TEST_CASE("tensor and adjoint gradient paths land on the same trace") {
    test::Rng rng(77);
    const auto inst = test::random_instance(rng, 5, 2, 0.9);
    const DemoSet demos = test::sample_demos(inst.mdp, inst.assignment, inst.params, 6, 10, 86);

    TrainConfig config = quick_config();
    config.max_steps = 25;
    config.grad_norm_tol = 0.0;
    config.solver_tol = 1e-12;

    config.gradient_path = GradientPath::Tensor;
    auto [pt, tt] = train(inst.mdp, inst.assignment, demos, config);
    config.gradient_path = GradientPath::Adjoint;
    auto [pa, ta] = train(inst.mdp, inst.assignment, demos, config);

    REQUIRE(tt.records.size() == ta.records.size());
    for (size_t i = 0; i < tt.records.size(); ++i) {
        CHECK(tt.records[i].log_likelihood ==
              doctest::Approx(ta.records[i].log_likelihood).epsilon(1e-9));
        CHECK(tt.records[i].grad_norm == doctest::Approx(ta.records[i].grad_norm).epsilon(1e-6));
    }
    CHECK(test::sup_norm_diff(pt.theta_r, pa.theta_r) <= 1e-7);
}

TEST_CASE("adaptive rule: a unit gradient at t = 0 moves by the base step") {
    TrainConfig config;
    config.step_rule = StepRule::Adaptive;
    config.step_scale = 0.05;

    AscentState state;
    state.reset(2);
    numvec theta = {0.0, 0.0};
    ascent_update(config, 0, {1.0, -1.0}, state, theta);
    CHECK(theta[0] == doctest::Approx(0.05).epsilon(1e-7));
    CHECK(theta[1] == doctest::Approx(-0.05).epsilon(1e-7));

    // constant and decaying rules move by alpha(t) * gradient exactly
    config.step_rule = StepRule::Decaying;
    config.step_scale = 1.0;
    theta = {0.0};
    state.reset(1);
    ascent_update(config, 3, {2.0}, state, theta);
    CHECK(theta[0] == doctest::Approx(1.0).epsilon(1e-15));  // (1/sqrt(4)) * 2
}

TEST_CASE("the trace records the base step size of the rule") {
    test::Rng rng(78);
    const auto inst = test::random_instance(rng, 4, 2, 0.9);
    const DemoSet demos = test::sample_demos(inst.mdp, inst.assignment, inst.params, 20, 12, 87);

    TrainConfig config = quick_config();
    config.max_steps = 2;
    config.grad_norm_tol = 0.0;
    config.step_scale = 0.05;

    auto [params, trace] = train(inst.mdp, inst.assignment, demos, config);
    REQUIRE(trace.records.size() == 2);
    CHECK(trace.records[0].step_size == 0.05);
    CHECK(trace.records[1].step_size == 0.05);
    (void)params;
}

TEST_CASE("solver failure inside training reports the optimizer step") {
    test::Rng rng(79);
    const auto inst = test::random_instance(rng, 5, 2, 0.99);
    const DemoSet demos = test::sample_demos(inst.mdp, inst.assignment, inst.params, 4, 8, 88);

    TrainConfig config = quick_config();
    config.solver_max_iter = 5;  // cannot converge at gamma = 0.99
    try {
        train(inst.mdp, inst.assignment, demos, config);
        FAIL("expected ConvergenceError");
    } catch (const ConvergenceError& e) {
        CHECK(std::string(e.what()).find("optimizer step 0") != std::string::npos);
        CHECK(e.residual() > 0.0);
    }
}

TEST_CASE("invalid inputs are rejected up front") {
    test::Rng rng(80);
    const auto inst = test::random_instance(rng, 4, 2, 0.9);
    const DemoSet demos = test::sample_demos(inst.mdp, inst.assignment, inst.params, 4, 8, 89);

    CHECK_THROWS_AS(train(inst.mdp, inst.assignment, DemoSet{}, quick_config()),
                    std::invalid_argument);

    TrainConfig bad = quick_config();
    bad.restarts = 0;
    CHECK_THROWS_AS(train(inst.mdp, inst.assignment, demos, bad), std::invalid_argument);

    TabularMdp broken = inst.mdp;
    broken.discount = 1.5;
    CHECK_THROWS_AS(train(broken, inst.assignment, demos, quick_config()),
                    std::invalid_argument);
}
