#include "serd/learner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace serd {

double step_size(const TrainConfig& config, int t) {
    if (t < 0) throw std::invalid_argument("step_size: t must be >= 0");
    switch (config.step_rule) {
    case StepRule::Constant: return config.step_scale;
    case StepRule::Decaying: return config.step_scale / std::sqrt(1.0 + t);
    case StepRule::Adaptive: return config.step_scale;  // per-coordinate scaling applied in train
    }
    throw std::logic_error("step_size: unknown rule");
}

void ascent_update(const TrainConfig& config, int t, const numvec& grad, AscentState& state,
                   numvec& theta) {
    const double alpha = step_size(config, t);
    if (config.step_rule != StepRule::Adaptive) {
        for (size_t i = 0; i < theta.size(); ++i) theta[i] += alpha * grad[i];
        return;
    }
    const double bc1 = 1.0 - std::pow(config.beta1, t + 1);
    const double bc2 = 1.0 - std::pow(config.beta2, t + 1);
    for (size_t i = 0; i < theta.size(); ++i) {
        state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * grad[i];
        state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * grad[i] * grad[i];
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        theta[i] += alpha * mhat / (std::sqrt(vhat) + config.adaptive_eps);
    }
}

namespace {

struct RunOutcome {
    TrainTrace trace;
    numvec best_flat;
    double best_ll = -std::numeric_limits<double>::infinity();
};

RunOutcome run_ascent(const TabularMdp& mdp, const AssignmentPtr& assignment,
                      const DemoCounts& counts, const DemoSet& demos, const TrainConfig& config,
                      ParamVector params) {
    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();

    const ParamLayout layout = ParamLayout::of(params);
    const double per_step = counts.total_pairs > 0.0 ? counts.total_pairs : 1.0;
    const bool freeze_dynamics = config.mode == TrainMode::MdceIrl;

    const bool use_tensor =
        config.gradient_path == GradientPath::Tensor ||
        (config.gradient_path == GradientPath::Auto &&
         static_cast<long>(mdp.sa_count()) * layout.total() <= 20000);

    SolveOptions solver{config.solver_tol, config.solver_max_iter, config.accelerate_solvers};

    RunOutcome out;
    AscentState ascent;
    numvec flat = params.flatten();
    ascent.reset(flat.size());

    numvec warm_q;
    numvec warm_adjoint;
    GradTensor warm_phi;
    bool have_warm_phi = false;

    for (int t = 0; t < config.max_steps; ++t) {
        ParamVector cur = ParamVector::unflatten(flat, layout.d, layout.agent_n, layout.tied);
        BoltzmannDynamics dyn_agent{assignment, cur.agent_energies};
        BoltzmannDynamics dyn_true{assignment, cur.true_view()};

        SoftSolution sol;
        LikelihoodReport rep;
        try {
            sol = soft_q_iteration(mdp, cur.theta_r, materialize(dyn_agent, mdp), solver,
                                   warm_q.empty() ? nullptr : &warm_q);
            if (use_tensor) {
                GradTensor phi =
                    soft_q_gradient_auto(mdp, sol, dyn_agent, layout, solver,
                                         have_warm_phi ? &warm_phi : nullptr);
                rep = likelihood_gradient(demos, mdp, phi, sol, dyn_true, layout,
                                          config.likelihood);
                warm_phi = std::move(phi);
                have_warm_phi = true;
            } else {
                rep = likelihood_gradient_adjoint(counts, mdp, sol, dyn_agent, dyn_true, layout,
                                                  solver, &warm_adjoint);
            }
        } catch (const ConvergenceError& e) {
            throw ConvergenceError("train: solver failed at optimizer step " + std::to_string(t) +
                                       ": " + e.what(),
                                   e.residual(), e.iterations());
        }
        warm_q = sol.q;

        numvec grad(rep.gradient.size());
        for (size_t i = 0; i < grad.size(); ++i) grad[i] = rep.gradient[i] / per_step;
        if (freeze_dynamics)
            for (int i = layout.d; i < layout.total(); ++i) grad[i] = 0.0;

        double grad_norm = 0.0;
        for (double g : grad) grad_norm = std::max(grad_norm, std::abs(g));

        const double wall = std::chrono::duration<double>(clock::now() - t0).count();
        out.trace.records.push_back({t, rep.log_likelihood, grad_norm, step_size(config, t), wall});

        if (rep.log_likelihood > out.best_ll) {
            out.best_ll = rep.log_likelihood;
            out.best_flat = flat;
            out.trace.best_step = t;
        }
        if (grad_norm <= config.grad_norm_tol) break;
        ascent_update(config, t, grad, ascent, flat);
    }

    out.trace.best_log_likelihood = out.best_ll;
    out.trace.final_params =
        ParamVector::unflatten(out.best_flat, layout.d, layout.agent_n, layout.tied);
    return out;
}

} // namespace

std::pair<ParamVector, TrainTrace> train(const TabularMdp& mdp, AssignmentPtr assignment,
                                         const DemoSet& demos, const TrainConfig& config) {
    if (demos.trajectories.empty()) throw std::invalid_argument("train: no demonstrations");
    if (auto violations = validate(mdp); !violations.empty())
        throw std::invalid_argument("train: invalid MDP: " + violations.front());
    if (config.restarts < 1) throw std::invalid_argument("train: restarts must be >= 1");
    if (config.max_steps < 1) throw std::invalid_argument("train: max_steps must be >= 1");
    if (!(config.step_scale > 0.0)) throw std::invalid_argument("train: step scale must be > 0");

    const BoltzmannDynamics estimated =
        m_estimate(demos, assignment, mdp, config.prior_count,
                   config.initial_energies ? &*config.initial_energies : nullptr);
    const DemoCounts counts = count_demos(demos, mdp, config.likelihood);

    const bool tied = config.mode != TrainMode::SerdUntied;

    RunOutcome best;
    bool have_best = false;
    for (int r = 0; r < config.restarts; ++r) {
        std::mt19937_64 engine(split_seed(config.seed, static_cast<std::uint64_t>(r)));
        auto uniform = [&engine](double lo, double hi) {
            const double u = static_cast<double>(engine() >> 11) * 0x1.0p-53;
            return lo + u * (hi - lo);
        };

        ParamVector init;
        init.tied = tied;
        init.theta_r.resize(mdp.n_features);
        for (double& w : init.theta_r) w = uniform(config.init_low, config.init_high);
        init.agent_energies = estimated.energies;
        if (!tied) init.true_energies = estimated.energies;

        RunOutcome outcome = run_ascent(mdp, assignment, counts, demos, config, std::move(init));
        if (!have_best || outcome.best_ll > best.best_ll) {
            best = std::move(outcome);
            have_best = true;
        }
    }
    return {best.trace.final_params, std::move(best.trace)};
}

} // namespace serd
