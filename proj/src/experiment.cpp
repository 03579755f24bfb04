#include "serd/experiment.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>
#include <tuple>

#include "serd/io.hpp"

namespace serd {

using nlohmann::json;

std::string to_string(Estimator e) {
    switch (e) {
    case Estimator::SerdTied: return "serd-tied";
    case Estimator::SerdUntied: return "serd-untied";
    case Estimator::MdceIrl: return "mdce-irl";
    case Estimator::MEstimateOnly: return "m-estimate-only";
    }
    throw std::logic_error("unknown estimator");
}

Estimator estimator_from_string(const std::string& name) {
    if (name == "serd-tied") return Estimator::SerdTied;
    if (name == "serd-untied") return Estimator::SerdUntied;
    if (name == "mdce-irl") return Estimator::MdceIrl;
    if (name == "m-estimate-only") return Estimator::MEstimateOnly;
    throw DataError("unknown estimator '" + name + "'");
}

std::vector<std::string> validate(const ExperimentPlan& plan) {
    std::vector<std::string> out;
    if (plan.sizes.empty()) out.push_back("plan: no demo-set sizes");
    for (size_t i = 0; i + 1 < plan.sizes.size(); ++i)
        if (plan.sizes[i] >= plan.sizes[i + 1])
            out.push_back("plan: sizes must be strictly increasing");
    if (!plan.sizes.empty() && plan.sizes.front() < 0) out.push_back("plan: negative size");
    if (plan.seeds.empty()) out.push_back("plan: need at least one seed");
    if (plan.estimators.empty()) out.push_back("plan: no estimators");
    if (plan.heldout_count < 1) out.push_back("plan: heldout_count must be >= 1");
    if (plan.gamma < 0.0 || plan.gamma >= 1.0) out.push_back("plan: gamma outside [0,1)");
    if (plan.demo_horizon < 1) out.push_back("plan: demo_horizon must be >= 1");
    return out;
}

ExperimentPlan read_plan(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw DataError("plan file: malformed JSON");

    ExperimentPlan plan;
    if (j.contains("train_map")) plan.train_map = j.at("train_map").get<std::string>();
    if (j.contains("transfer_map")) plan.transfer_map = j.at("transfer_map").get<std::string>();
    if (j.contains("sizes")) plan.sizes = j.at("sizes").get<std::vector<int>>();
    if (j.contains("seeds")) plan.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("estimators")) {
        plan.estimators.clear();
        for (const auto& name : j.at("estimators"))
            plan.estimators.push_back(estimator_from_string(name.get<std::string>()));
    }
    if (j.contains("heldout_count")) plan.heldout_count = j.at("heldout_count").get<int>();
    if (j.contains("gamma")) plan.gamma = j.at("gamma").get<double>();
    if (j.contains("demo_horizon")) plan.demo_horizon = j.at("demo_horizon").get<int>();
    if (j.contains("restarts")) plan.restarts = j.at("restarts").get<int>();
    if (j.contains("max_steps")) plan.max_steps = j.at("max_steps").get<int>();
    if (j.contains("step_scale")) plan.step_scale = j.at("step_scale").get<double>();
    if (j.contains("step_rule")) {
        const std::string rule = j.at("step_rule").get<std::string>();
        if (rule == "constant") plan.step_rule = StepRule::Constant;
        else if (rule == "decaying") plan.step_rule = StepRule::Decaying;
        else if (rule == "adaptive") plan.step_rule = StepRule::Adaptive;
        else throw DataError("plan file: unknown step_rule '" + rule + "'");
    }
    if (j.contains("prior_count")) plan.prior_count = j.at("prior_count").get<double>();
    if (j.contains("forest_includes_stay"))
        plan.forest_includes_stay = j.at("forest_includes_stay").get<bool>();
    if (j.contains("run_transfer")) plan.run_transfer = j.at("run_transfer").get<bool>();
    if (j.contains("threads")) plan.threads = j.at("threads").get<int>();
    return plan;
}

void write_plan(const ExperimentPlan& plan, const std::filesystem::path& path) {
    json j;
    j["train_map"] = plan.train_map;
    j["transfer_map"] = plan.transfer_map;
    j["sizes"] = plan.sizes;
    j["seeds"] = plan.seeds;
    std::vector<std::string> est;
    for (Estimator e : plan.estimators) est.push_back(to_string(e));
    j["estimators"] = est;
    j["heldout_count"] = plan.heldout_count;
    j["gamma"] = plan.gamma;
    j["demo_horizon"] = plan.demo_horizon;
    j["restarts"] = plan.restarts;
    j["max_steps"] = plan.max_steps;
    j["step_scale"] = plan.step_scale;
    j["step_rule"] = plan.step_rule == StepRule::Constant   ? "constant"
                     : plan.step_rule == StepRule::Decaying ? "decaying"
                                                            : "adaptive";
    j["prior_count"] = plan.prior_count;
    j["forest_includes_stay"] = plan.forest_includes_stay;
    j["run_transfer"] = plan.run_transfer;
    j["threads"] = plan.threads;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

namespace {

constexpr std::uint64_t kHeldoutStream = 0x48454C44ULL;    // train-map held-out demos
constexpr std::uint64_t kTransferStream = 0x5452414EULL;   // transfer-map held-out demos
constexpr std::uint64_t kTrainInitStream = 0x494E4954ULL;  // optimizer init draws

struct WorldBundle {
    gridworld::GridWorld world;
    SoftSolution true_solution;
    TransitionTable true_table;
};

WorldBundle prepare(const gridworld::MapSpec& map, const ExperimentPlan& plan) {
    WorldBundle b{gridworld::build(map, plan.gamma, {plan.forest_includes_stay}), {}, {}};
    const ParamVector ref = gridworld::reference_params({plan.forest_includes_stay});
    b.true_table = materialize(b.world.true_dynamics, b.world.mdp);
    b.true_solution = soft_q_iteration(b.world.mdp, ref.theta_r, b.true_table);
    return b;
}

struct CellResult {
    std::vector<MetricRow> rows;
};

// Estimate parameters for one cell; returns a tied-or-untied ParamVector.
ParamVector fit(Estimator estimator, const WorldBundle& bundle, const DemoSet& demos,
                const ExperimentPlan& plan, std::uint64_t cell_seed) {
    if (estimator == Estimator::MEstimateOnly) {
        ParamVector p;
        p.tied = true;
        p.theta_r.assign(bundle.world.mdp.n_features, 0.0);
        p.agent_energies =
            m_estimate(demos, bundle.world.assignment, bundle.world.mdp, plan.prior_count)
                .energies;
        return p;
    }
    TrainConfig config;
    config.mode = estimator == Estimator::SerdTied     ? TrainMode::SerdTied
                  : estimator == Estimator::SerdUntied ? TrainMode::SerdUntied
                                                       : TrainMode::MdceIrl;
    config.seed = cell_seed;
    config.restarts = plan.restarts;
    config.max_steps = plan.max_steps;
    config.step_rule = plan.step_rule;
    config.step_scale = plan.step_scale;
    config.prior_count = plan.prior_count;
    return train(bundle.world.mdp, bundle.world.assignment, demos, config).first;
}

} // namespace

std::vector<MetricRow> run_experiment(const ExperimentPlan& plan) {
    if (auto violations = validate(plan); !violations.empty())
        throw std::invalid_argument("run_experiment: " + violations.front());

    const WorldBundle train_world = prepare(gridworld::resolve_map(plan.train_map), plan);
    std::optional<WorldBundle> transfer_world;
    if (plan.run_transfer)
        transfer_world = prepare(gridworld::resolve_map(plan.transfer_map), plan);

    const int max_size = *std::max_element(plan.sizes.begin(), plan.sizes.end());
    const int train_goal = train_world.world.map.goal_state();

    struct SeedData {
        DemoSet demos;
        DemoSet heldout;
        DemoSet heldout_transfer;
    };
    std::vector<SeedData> per_seed(plan.seeds.size());
    for (size_t i = 0; i < plan.seeds.size(); ++i) {
        const std::uint64_t seed = plan.seeds[i];
        per_seed[i].demos =
            sample(train_world.world.mdp, train_world.true_solution.policy, train_world.true_table,
                   std::max(max_size, 1), plan.demo_horizon, train_goal, seed);
        per_seed[i].heldout =
            sample(train_world.world.mdp, train_world.true_solution.policy, train_world.true_table,
                   plan.heldout_count, plan.demo_horizon, train_goal,
                   split_seed(seed, kHeldoutStream));
        if (transfer_world) {
            per_seed[i].heldout_transfer = sample(
                transfer_world->world.mdp, transfer_world->true_solution.policy,
                transfer_world->true_table, plan.heldout_count, plan.demo_horizon,
                transfer_world->world.map.goal_state(), split_seed(seed, kTransferStream));
        }
    }

    struct Cell {
        size_t seed_idx;
        int size;
        Estimator estimator;
    };
    std::vector<Cell> cells;
    for (size_t si = 0; si < plan.seeds.size(); ++si)
        for (int size : plan.sizes)
            for (Estimator est : plan.estimators) cells.push_back({si, size, est});

    std::vector<CellResult> results(cells.size());
    std::atomic<size_t> next{0};

    auto worker = [&]() {
        for (;;) {
            const size_t idx = next.fetch_add(1);
            if (idx >= cells.size()) return;
            const Cell& cell = cells[idx];
            const std::uint64_t seed = plan.seeds[cell.seed_idx];
            const std::string est_name = to_string(cell.estimator);
            auto& rows = results[idx].rows;

            auto emit = [&](const std::string& task, const std::string& metric, double value) {
                rows.push_back({task, metric, est_name, cell.size, seed, value});
            };

            try {
                const DemoSet demos = per_seed[cell.seed_idx].demos.prefix(
                    std::min(cell.size, per_seed[cell.seed_idx].demos.size()));
                const std::uint64_t cell_seed =
                    split_seed(seed, kTrainInitStream + static_cast<std::uint64_t>(cell.size));
                const ParamVector fitted =
                    fit(cell.estimator, train_world, demos, plan, cell_seed);

                BoltzmannDynamics est_agent{train_world.world.assignment, fitted.agent_energies};
                BoltzmannDynamics est_true{train_world.world.assignment, fitted.true_view()};
                const SoftSolution est_sol = soft_q_iteration(
                    train_world.world.mdp, fitted.theta_r, materialize(est_agent, train_world.world.mdp));

                emit("train", "avg_loglik",
                     avg_loglik(per_seed[cell.seed_idx].heldout, train_world.world.mdp,
                                {est_sol.policy, est_true}));
                emit("train", "kl_dynamics",
                     avg_kl_dynamics(train_world.world.mdp, train_world.world.true_dynamics,
                                     est_true));
                emit("train", "kl_policy",
                     avg_kl_policy(train_world.true_solution.policy, est_sol.policy,
                                   train_world.world.mdp.n_states,
                                   train_world.world.mdp.n_actions));

                if (transfer_world) {
                    // model-level transfer: the learned terrain/action energies
                    // reattach to the transfer grid's assignment
                    const TabularMdp& tmdp = transfer_world->world.mdp;
                    BoltzmannDynamics tr_agent{transfer_world->world.assignment,
                                               fitted.agent_energies};
                    BoltzmannDynamics tr_true{transfer_world->world.assignment,
                                              fitted.true_view()};
                    const SoftSolution tr_sol = soft_q_iteration(tmdp, fitted.theta_r,
                                                                 materialize(tr_agent, tmdp));
                    emit("transfer", "avg_loglik",
                         avg_loglik(per_seed[cell.seed_idx].heldout_transfer, tmdp,
                                    {tr_sol.policy, tr_true}));
                    emit("transfer", "kl_policy",
                         avg_kl_policy(transfer_world->true_solution.policy, tr_sol.policy,
                                       tmdp.n_states, tmdp.n_actions));
                }
            } catch (const std::exception&) {
                // record the cell as failed and keep the sweep going
                const double nan = std::numeric_limits<double>::quiet_NaN();
                rows.clear();
                emit("train", "avg_loglik", nan);
                emit("train", "kl_dynamics", nan);
                emit("train", "kl_policy", nan);
                if (transfer_world) {
                    emit("transfer", "avg_loglik", nan);
                    emit("transfer", "kl_policy", nan);
                }
            }
        }
    };

    int n_threads = plan.threads > 0 ? plan.threads
                                     : static_cast<int>(std::thread::hardware_concurrency());
    n_threads = std::max(1, std::min<int>(n_threads, static_cast<int>(cells.size())));
    std::vector<std::thread> pool;
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    std::vector<MetricRow> rows;
    for (const auto& r : results) rows.insert(rows.end(), r.rows.begin(), r.rows.end());
    std::sort(rows.begin(), rows.end(), [](const MetricRow& a, const MetricRow& b) {
        return std::tie(a.task, a.metric, a.estimator, a.size, a.seed) <
               std::tie(b.task, b.metric, b.estimator, b.size, b.seed);
    });
    return rows;
}

void write_metric_csv(const std::vector<MetricRow>& rows, const std::filesystem::path& path) {
    io::CsvWriter csv(path, {"task", "metric", "estimator", "size", "seed", "value"});
    for (const auto& r : rows)
        csv.row({r.task, r.metric, r.estimator, std::to_string(r.size), std::to_string(r.seed),
                 io::CsvWriter::num(r.value)});
}

double mean_metric(const std::vector<MetricRow>& rows, const std::string& task,
                   const std::string& metric, const std::string& estimator, int size) {
    double sum = 0.0;
    int n = 0;
    for (const auto& r : rows) {
        if (r.task != task || r.metric != metric || r.estimator != estimator || r.size != size)
            continue;
        if (std::isnan(r.value)) continue;
        sum += r.value;
        ++n;
    }
    return n > 0 ? sum / n : std::numeric_limits<double>::quiet_NaN();
}

} // namespace serd
