// Command-line harness for the tabular IRL library: build grid worlds, sample
// demonstrations, estimate dynamics, train estimators, evaluate metrics, and
// run the full experiment/transfer sweeps that produce the plot CSVs.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "serd/experiment.hpp"
#include "serd/gridworld.hpp"
#include "serd/io.hpp"
#include "serd/learner.hpp"
#include "serd/traj.hpp"

namespace {

using namespace serd;

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitInput = 2;

struct Env {
    TabularMdp mdp;
    AssignmentPtr assignment;
    std::optional<gridworld::GridWorld> world;  // present for --map environments
};

struct EnvArgs {
    std::string map;
    std::string mdp_file;
    double gamma = gridworld::kReferenceDiscount;
    bool forest_includes_stay = true;

    void attach(CLI::App* cmd, bool need_env = true) {
        auto* m = cmd->add_option("--map", map, "grid map file or builtin:train16/builtin:transfer24");
        auto* f = cmd->add_option("--mdp", mdp_file, "generic MDP JSON file");
        cmd->add_option("--gamma", gamma, "discount for --map environments");
        cmd->add_flag("--forest-includes-stay,!--no-forest-includes-stay", forest_includes_stay,
                      "forest failure mass includes the stay outcome");
        if (need_env) {
            m->excludes(f);
            f->excludes(m);
        }
    }

    Env build(const std::optional<io::ParamsFile>& params) const {
        Env env;
        if (!map.empty()) {
            auto world = gridworld::build(gridworld::resolve_map(map), gamma,
                                          {forest_includes_stay});
            env.mdp = world.mdp;
            env.assignment = world.assignment;
            env.world = std::move(world);
            return env;
        }
        if (mdp_file.empty()) throw DataError("need either --map or --mdp");
        env.mdp = io::read_mdp(mdp_file);
        if (auto violations = validate(env.mdp); !violations.empty())
            throw DataError("mdp file: " + violations.front());
        if (!params || !params->explicit_assignment)
            throw DataError("--mdp environments need a params file with an explicit assignment");
        auto assign = std::make_shared<DynamicsAssignment>(*params->explicit_assignment);
        if (auto violations = validate(*assign, env.mdp); !violations.empty())
            throw DataError("params file: " + violations.front());
        env.assignment = std::move(assign);
        return env;
    }
};

io::ParamsFile grid_params_file(const ParamVector& params, const AssignmentPtr& assign) {
    io::ParamsFile f;
    f.params = params;
    f.n_models = assign->n_models;
    f.n_outcomes = assign->n_outcomes;
    f.model_names = assign->model_names;
    f.outcome_names = assign->outcome_names;
    f.assignment_kind = "gridworld";
    return f;
}

ParamVector params_or_reference(const std::optional<io::ParamsFile>& loaded, const Env& env) {
    if (loaded) return loaded->params;
    if (!env.world) throw DataError("no params file and no reference model available");
    return gridworld::reference_params(env.world->options);
}

void write_solution_csv(const SoftSolution& sol, const TabularMdp& mdp,
                        const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    {
        io::CsvWriter q(dir / "q.csv", {"state", "action", "q"});
        for (int s = 0; s < mdp.n_states; ++s)
            for (int a = 0; a < mdp.n_actions; ++a)
                q.row({std::to_string(s), std::to_string(a),
                       io::CsvWriter::num(sol.q[static_cast<size_t>(s) * mdp.n_actions + a])});
    }
    {
        io::CsvWriter v(dir / "v.csv", {"state", "v"});
        for (int s = 0; s < mdp.n_states; ++s)
            v.row({std::to_string(s), io::CsvWriter::num(sol.v[s])});
    }
    {
        io::CsvWriter pi(dir / "policy.csv", {"state", "action", "prob"});
        for (int s = 0; s < mdp.n_states; ++s)
            for (int a = 0; a < mdp.n_actions; ++a)
                pi.row({std::to_string(s), std::to_string(a),
                        io::CsvWriter::num(
                            sol.policy[static_cast<size_t>(s) * mdp.n_actions + a])});
    }
}

std::optional<io::ParamsFile> maybe_read_params(const std::string& path) {
    if (path.empty()) return std::nullopt;
    return io::read_params(path);
}

TrainMode mode_from_string(const std::string& mode) {
    if (mode == "serd-tied") return TrainMode::SerdTied;
    if (mode == "serd-untied") return TrainMode::SerdUntied;
    if (mode == "mdce-irl") return TrainMode::MdceIrl;
    throw DataError("unknown mode '" + mode + "' (serd-tied | serd-untied | mdce-irl)");
}

int run(int argc, char** argv) {
    CLI::App app{"Tabular inverse reinforcement learning with joint reward/dynamics estimation"};
    app.require_subcommand(1);

    // ---- solve ----------------------------------------------------------
    auto* solve_cmd = app.add_subcommand("solve", "solve the soft fixed point, dump Q/V/policy");
    EnvArgs solve_env;
    solve_env.attach(solve_cmd);
    std::string solve_params, solve_out = "solution";
    double solve_tol = 1e-9;
    solve_cmd->add_option("--params", solve_params, "parameter file (default: reference model)");
    solve_cmd->add_option("--out", solve_out, "output directory for q.csv/v.csv/policy.csv");
    solve_cmd->add_option("--tol", solve_tol, "solver tolerance");

    // ---- sample ---------------------------------------------------------
    auto* sample_cmd = app.add_subcommand("sample", "sample demonstrations from a solved model");
    EnvArgs sample_env;
    sample_env.attach(sample_cmd);
    std::string sample_params, sample_out = "demos.txt";
    int sample_n = 16, sample_horizon = 200;
    std::uint64_t sample_seed = 0;
    bool sample_stop_at_goal = true;
    int sample_stop_state = -1;
    sample_cmd->add_option("--params", sample_params, "parameter file (default: reference model)");
    sample_cmd->add_option("--out", sample_out, "trajectory file to write");
    sample_cmd->add_option("--n", sample_n, "number of trajectories");
    sample_cmd->add_option("--horizon", sample_horizon, "maximum trajectory length");
    sample_cmd->add_option("--seed", sample_seed, "master seed");
    sample_cmd->add_flag("--stop-at-goal,!--no-stop-at-goal", sample_stop_at_goal,
                         "absorb one pair after reaching the map goal");
    sample_cmd->add_option("--stop-state", sample_stop_state, "explicit stop state (generic MDPs)");

    // ---- estimate-dynamics ------------------------------------------------
    auto* est_cmd = app.add_subcommand("estimate-dynamics",
                                       "count-based m-estimate of the transition models");
    EnvArgs est_env;
    est_env.attach(est_cmd);
    std::string est_demos, est_out = "dynamics.json", est_params;
    double est_prior = 5.0;
    est_cmd->add_option("--demos", est_demos, "trajectory file")->required();
    est_cmd->add_option("--out", est_out, "params file to write");
    est_cmd->add_option("--prior-count", est_prior, "m pseudo-counts of the uniform prior");
    est_cmd->add_option("--params", est_params, "params file providing the assignment (--mdp)");

    // ---- train ------------------------------------------------------------
    auto* train_cmd = app.add_subcommand("train", "gradient-ascent estimation from demos");
    EnvArgs train_env;
    train_env.attach(train_cmd);
    std::string train_demos, train_out = "learned.json", train_trace, train_mode = "serd-tied";
    std::string train_params;
    TrainConfig tc;
    bool tie_flag = false, untie_flag = false;
    train_cmd->add_option("--demos", train_demos, "trajectory file")->required();
    train_cmd->add_option("--out", train_out, "params file for the learned model");
    train_cmd->add_option("--trace", train_trace, "per-step CSV trace");
    train_cmd->add_option("--mode", train_mode, "serd-tied | serd-untied | mdce-irl");
    train_cmd->add_flag("--tie", tie_flag, "shorthand for --mode serd-tied");
    train_cmd->add_flag("--untie", untie_flag, "shorthand for --mode serd-untied");
    train_cmd->add_option("--params", train_params, "params file providing the assignment (--mdp)");
    train_cmd->add_option("--seed", tc.seed, "initialization seed");
    train_cmd->add_option("--max-steps", tc.max_steps, "optimizer step budget");
    train_cmd->add_option("--tol", tc.solver_tol, "inner solver tolerance");
    train_cmd->add_option("--grad-tol", tc.grad_norm_tol, "per-step gradient sup-norm stop");
    train_cmd->add_option("--step-scale", tc.step_scale, "base step size");
    train_cmd->add_option("--restarts", tc.restarts, "random restarts, best likelihood kept");
    train_cmd->add_option("--prior-count", tc.prior_count, "m-estimator pseudo-counts");
    train_cmd->add_flag("--drop-final-policy-term",
                        [&tc](std::int64_t) { tc.likelihood.include_final_policy_term = false; },
                        "exclude the terminal pair's policy factor");

    // ---- eval ---------------------------------------------------------------
    auto* eval_cmd = app.add_subcommand("eval", "score a learned model against held-out demos");
    EnvArgs eval_env;
    eval_env.attach(eval_cmd);
    std::string eval_params, eval_demos, eval_out = "metrics.csv";
    eval_cmd->add_option("--params", eval_params, "learned params file")->required();
    eval_cmd->add_option("--demos", eval_demos, "held-out trajectory file")->required();
    eval_cmd->add_option("--out", eval_out, "metrics CSV");

    // ---- experiment ---------------------------------------------------------
    auto* exp_cmd = app.add_subcommand("experiment", "run the (size x seed x estimator) sweep");
    std::string exp_plan, exp_out = "results.csv";
    std::vector<int> exp_sizes;
    std::vector<std::uint64_t> exp_seeds;
    int exp_threads = 0;
    exp_cmd->add_option("--plan", exp_plan, "experiment plan JSON (defaults used when absent)");
    exp_cmd->add_option("--out", exp_out, "metrics CSV");
    exp_cmd->add_option("--sizes", exp_sizes, "override demo-set sizes")->delimiter(',');
    exp_cmd->add_option("--seeds", exp_seeds, "override seeds")->delimiter(',');
    exp_cmd->add_option("--threads", exp_threads, "worker threads (0 = hardware)");

    // ---- transfer -------------------------------------------------------------
    auto* tr_cmd = app.add_subcommand("transfer", "re-solve learned params on a transfer map");
    std::string tr_map = "builtin:transfer24", tr_params, tr_out = "transfer.csv";
    int tr_heldout = 256, tr_horizon = 200;
    std::uint64_t tr_seed = 0;
    double tr_gamma = gridworld::kReferenceDiscount;
    bool tr_forest_stay = true;
    tr_cmd->add_option("--map", tr_map, "transfer map");
    tr_cmd->add_option("--params", tr_params, "trained params file")->required();
    tr_cmd->add_option("--out", tr_out, "metrics CSV");
    tr_cmd->add_option("--heldout", tr_heldout, "true-model demos to score against");
    tr_cmd->add_option("--seed", tr_seed, "sampling seed");
    tr_cmd->add_option("--horizon", tr_horizon, "held-out trajectory horizon");
    tr_cmd->add_option("--gamma", tr_gamma, "discount");
    tr_cmd->add_flag("--forest-includes-stay,!--no-forest-includes-stay", tr_forest_stay, "");

    CLI11_PARSE(app, argc, argv);

    if (solve_cmd->parsed()) {
        const auto loaded = maybe_read_params(solve_params);
        const Env env = solve_env.build(loaded);
        const ParamVector params = params_or_reference(loaded, env);
        BoltzmannDynamics agent{env.assignment, params.agent_energies};
        const SoftSolution sol = soft_q_iteration(env.mdp, params.theta_r,
                                                  materialize(agent, env.mdp), {solve_tol});
        write_solution_csv(sol, env.mdp, solve_out);
        std::cout << "solved in " << sol.iterations << " sweeps, residual " << sol.residual
                  << "; tables in " << solve_out << "\n";
        return kExitOk;
    }

    if (sample_cmd->parsed()) {
        const auto loaded = maybe_read_params(sample_params);
        const Env env = sample_env.build(loaded);
        const ParamVector params = params_or_reference(loaded, env);
        BoltzmannDynamics agent{env.assignment, params.agent_energies};
        BoltzmannDynamics truth{env.assignment, params.true_view()};
        const SoftSolution sol =
            soft_q_iteration(env.mdp, params.theta_r, materialize(agent, env.mdp));
        std::optional<int> stop;
        if (sample_stop_state >= 0) stop = sample_stop_state;
        else if (env.world && sample_stop_at_goal) stop = env.world->map.goal_state();
        const DemoSet demos = sample(env.mdp, sol.policy, materialize(truth, env.mdp), sample_n,
                                     sample_horizon, stop, sample_seed);
        io::write_trajectories(demos, io::mdp_hash(env.mdp), sample_out);
        std::cout << "wrote " << demos.size() << " trajectories (" << demos.total_pairs()
                  << " pairs) to " << sample_out << "\n";
        return kExitOk;
    }

    if (est_cmd->parsed()) {
        const auto loaded = maybe_read_params(est_params);
        const Env env = est_env.build(loaded);
        const DemoSet demos = io::read_trajectories(est_demos).demos;
        const BoltzmannDynamics est = m_estimate(demos, env.assignment, env.mdp, est_prior);
        ParamVector out;
        out.tied = true;
        out.theta_r.assign(env.mdp.n_features, 0.0);
        out.agent_energies = est.energies;
        io::ParamsFile file = grid_params_file(out, env.assignment);
        if (!env.world) {
            file.assignment_kind = "explicit";
            file.explicit_assignment = *env.assignment;
        }
        io::write_params(file, est_out);
        std::cout << "m-estimated dynamics (" << est_prior << " pseudo-counts) written to "
                  << est_out << "\n";
        return kExitOk;
    }

    if (train_cmd->parsed()) {
        if (tie_flag && untie_flag) throw DataError("--tie and --untie are mutually exclusive");
        if (tie_flag) train_mode = "serd-tied";
        if (untie_flag) train_mode = "serd-untied";
        tc.mode = mode_from_string(train_mode);
        const auto loaded = maybe_read_params(train_params);
        const Env env = train_env.build(loaded);
        const DemoSet demos = io::read_trajectories(train_demos).demos;
        if (auto violations = validate(demos, env.mdp); !violations.empty())
            throw DataError("demos: " + violations.front());

        auto [params, trace] = train(env.mdp, env.assignment, demos, tc);
        io::ParamsFile file = grid_params_file(params, env.assignment);
        if (!env.world) {
            file.assignment_kind = "explicit";
            file.explicit_assignment = *env.assignment;
        }
        io::write_params(file, train_out);
        if (!train_trace.empty()) {
            io::CsvWriter csv(train_trace,
                              {"step", "log_likelihood", "grad_norm", "step_size", "wall_time_s"});
            for (const auto& rec : trace.records)
                csv.row({std::to_string(rec.step), io::CsvWriter::num(rec.log_likelihood),
                         io::CsvWriter::num(rec.grad_norm), io::CsvWriter::num(rec.step_size),
                         io::CsvWriter::num(rec.wall_time_s)});
        }
        std::cout << "trained " << train_mode << " for " << trace.records.size()
                  << " steps; best log-likelihood " << trace.best_log_likelihood << " at step "
                  << trace.best_step << "; params in " << train_out << "\n";
        return kExitOk;
    }

    if (eval_cmd->parsed()) {
        const auto loaded = maybe_read_params(eval_params);
        const Env env = eval_env.build(loaded);
        const ParamVector params = params_or_reference(loaded, env);
        const DemoSet demos = io::read_trajectories(eval_demos).demos;
        BoltzmannDynamics agent{env.assignment, params.agent_energies};
        BoltzmannDynamics truth{env.assignment, params.true_view()};
        const SoftSolution sol =
            soft_q_iteration(env.mdp, params.theta_r, materialize(agent, env.mdp));

        io::CsvWriter csv(eval_out, {"metric", "demo_count", "seed", "value"});
        const double ll = avg_loglik(demos, env.mdp, {sol.policy, truth});
        csv.row({"avg_loglik", std::to_string(demos.size()), std::to_string(demos.seed),
                 io::CsvWriter::num(ll)});
        if (env.world) {
            const ParamVector ref = gridworld::reference_params(env.world->options);
            const SoftSolution true_sol = soft_q_iteration(
                env.mdp, ref.theta_r, materialize(env.world->true_dynamics, env.mdp));
            csv.row({"kl_dynamics", std::to_string(demos.size()), std::to_string(demos.seed),
                     io::CsvWriter::num(
                         avg_kl_dynamics(env.mdp, env.world->true_dynamics, truth))});
            csv.row({"kl_policy", std::to_string(demos.size()), std::to_string(demos.seed),
                     io::CsvWriter::num(avg_kl_policy(true_sol.policy, sol.policy,
                                                      env.mdp.n_states, env.mdp.n_actions))});
        }
        std::cout << "metrics written to " << eval_out << "\n";
        return kExitOk;
    }

    if (exp_cmd->parsed()) {
        ExperimentPlan plan = exp_plan.empty() ? ExperimentPlan{} : read_plan(exp_plan);
        if (!exp_sizes.empty()) plan.sizes = exp_sizes;
        if (!exp_seeds.empty()) plan.seeds = exp_seeds;
        if (exp_threads > 0) plan.threads = exp_threads;
        const auto rows = run_experiment(plan);
        write_metric_csv(rows, exp_out);
        std::cout << "experiment finished: " << rows.size() << " metric rows in " << exp_out
                  << "\n";
        return kExitOk;
    }

    if (tr_cmd->parsed()) {
        const io::ParamsFile loaded = io::read_params(tr_params);
        auto world = gridworld::build(gridworld::resolve_map(tr_map), tr_gamma, {tr_forest_stay});
        const ParamVector reference = gridworld::reference_params(world.options);

        const SoftSolution true_sol = soft_q_iteration(world.mdp, reference.theta_r,
                                                       materialize(world.true_dynamics, world.mdp));
        const DemoSet heldout =
            sample(world.mdp, true_sol.policy, materialize(world.true_dynamics, world.mdp),
                   tr_heldout, tr_horizon, world.map.goal_state(), tr_seed);

        BoltzmannDynamics agent{world.assignment, loaded.params.agent_energies};
        BoltzmannDynamics truth{world.assignment, loaded.params.true_view()};
        const SoftSolution sol = soft_q_iteration(world.mdp, loaded.params.theta_r,
                                                  materialize(agent, world.mdp));

        io::CsvWriter csv(tr_out, {"metric", "demo_count", "seed", "value"});
        csv.row({"avg_loglik", std::to_string(heldout.size()), std::to_string(tr_seed),
                 io::CsvWriter::num(avg_loglik(heldout, world.mdp, {sol.policy, truth}))});
        csv.row({"kl_policy", std::to_string(heldout.size()), std::to_string(tr_seed),
                 io::CsvWriter::num(avg_kl_policy(true_sol.policy, sol.policy, world.mdp.n_states,
                                                  world.mdp.n_actions))});
        std::cout << "transfer metrics written to " << tr_out << "\n";
        return kExitOk;
    }

    return kExitInput;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const serd::DataError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kExitInput;
    } catch (const std::invalid_argument& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kExitInput;
    } catch (const serd::ConvergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}
