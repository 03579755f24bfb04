#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "serd/dynamics.hpp"
#include "serd/grad.hpp"
#include "serd/mdp.hpp"
#include "serd/traj.hpp"
#include "serd/types.hpp"

namespace serd {

enum class TrainMode {
    SerdTied,    // one shared dynamics block, both likelihood terms update it
    SerdUntied,  // separate agent / true blocks
    MdceIrl,     // dynamics frozen at the m-estimate, reward weights only
};

enum class StepRule {
    Constant,  // alpha(t) = c
    Decaying,  // alpha(t) = c / sqrt(1 + t)
    Adaptive,  // per-coordinate moment-based scaling with base rate c
};

enum class GradientPath {
    Auto,     // tensor route on small instances, adjoint on large ones
    Tensor,   // full Phi tensor + likelihood_gradient
    Adjoint,  // single adjoint solve
};

struct TrainConfig {
    TrainMode mode = TrainMode::SerdTied;

    StepRule step_rule = StepRule::Adaptive;
    double step_scale = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adaptive_eps = 1e-8;

    double init_low = -10.0;   // theta_R draw range
    double init_high = 10.0;
    int max_steps = 2000;
    double grad_norm_tol = 1e-4;  // sup-norm of the per-demonstrated-step gradient
    std::uint64_t seed = 0;
    int restarts = 1;  // independent theta_R draws, best likelihood kept

    double prior_count = 5.0;  // m-estimator pseudo-counts
    std::optional<numvec> initial_energies;  // fallback for unobserved models

    double solver_tol = 1e-9;
    long solver_max_iter = 50000;
    bool accelerate_solvers = true;
    GradientPath gradient_path = GradientPath::Auto;
    LikelihoodOptions likelihood;
};

struct TraceRecord {
    int step = 0;
    double log_likelihood = 0.0;
    double grad_norm = 0.0;   // sup-norm per demonstrated step
    double step_size = 0.0;
    double wall_time_s = 0.0;
};

struct TrainTrace {
    std::vector<TraceRecord> records;
    ParamVector final_params;  // best-likelihood iterate
    int best_step = 0;
    double best_log_likelihood = 0.0;
};

/// Base step size alpha(t) for the configured rule; the adaptive rule's
/// per-coordinate scaling is applied on top of this inside train().
double step_size(const TrainConfig& config, int t);

/// Per-coordinate moment estimates for the adaptive rule.
struct AscentState {
    numvec m;
    numvec v;

    void reset(size_t n) {
        m.assign(n, 0.0);
        v.assign(n, 0.0);
    }
};

/// One ascent step theta += alpha(t) * scaled gradient. The adaptive rule
/// uses bias-corrected moments, so at t = 0 a unit gradient moves a
/// coordinate by (almost exactly) the base step scale.
void ascent_update(const TrainConfig& config, int t, const numvec& grad, AscentState& state,
                   numvec& theta);

/**
 * Gradient-ascent driver: m-estimate the dynamics from the demos, then loop
 * { solve soft fixed point -> derive policy -> gradient fixed point ->
 *   likelihood gradient -> ascent step } until the per-step gradient sup-norm
 * drops below grad_norm_tol or max_steps is reached. Returns the
 * best-likelihood iterate, not the last one.
 *
 * Deterministic: identical (mdp, demos, config) give bit-identical traces.
 * Throws on empty demos; inner solver failures surface as ConvergenceError
 * tagged with the optimizer step.
 */
std::pair<ParamVector, TrainTrace> train(const TabularMdp& mdp, AssignmentPtr assignment,
                                         const DemoSet& demos, const TrainConfig& config);

} // namespace serd
