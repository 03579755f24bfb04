#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "serd/gridworld.hpp"
#include "serd/learner.hpp"
#include "serd/types.hpp"

namespace serd {

enum class Estimator {
    SerdTied,
    SerdUntied,
    MdceIrl,
    MEstimateOnly,  // m-estimated dynamics, zero reward weights
};

std::string to_string(Estimator e);
Estimator estimator_from_string(const std::string& name);

/**
 * Sweep description: train/transfer maps, strictly increasing demo-set sizes,
 * seeds, and the estimators to run. Demo sets are nested across sizes within
 * a seed; held-out sets are drawn per seed from derived streams.
 */
struct ExperimentPlan {
    std::string train_map = "builtin:train16";
    std::string transfer_map = "builtin:transfer24";
    std::vector<int> sizes = {1, 2, 4, 8, 16, 32, 64, 128};
    std::vector<std::uint64_t> seeds = {0,  1,  2,  3,  4,  5,  6,  7,  8,  9,
                                        10, 11, 12, 13, 14, 15, 16, 17, 18, 19};
    std::vector<Estimator> estimators = {Estimator::SerdTied, Estimator::MdceIrl,
                                         Estimator::MEstimateOnly};
    int heldout_count = 256;
    double gamma = gridworld::kReferenceDiscount;
    int demo_horizon = 200;
    int restarts = 3;
    int max_steps = 1000;
    // Gradient-proportional steps: coordinates without evidence barely move,
    // which keeps the m-estimate anchor intact on starved demo sets. The
    // adaptive rule is available but drifts unconstrained energies at full
    // step size.
    StepRule step_rule = StepRule::Constant;
    double step_scale = 0.01;
    double prior_count = 5.0;
    bool forest_includes_stay = true;
    bool run_transfer = true;
    int threads = 0;  // 0 = hardware concurrency
};

std::vector<std::string> validate(const ExperimentPlan& plan);

ExperimentPlan read_plan(const std::filesystem::path& path);
void write_plan(const ExperimentPlan& plan, const std::filesystem::path& path);

/// One output row. value is NaN when the cell's training failed.
struct MetricRow {
    std::string task;       // "train" | "transfer"
    std::string metric;     // "avg_loglik" | "kl_dynamics" | "kl_policy"
    std::string estimator;
    int size = 0;
    std::uint64_t seed = 0;
    double value = 0.0;
};

/**
 * Runs every (size, seed, estimator) cell: sample demos, train, score
 * held-out likelihood and the KL metrics, then the transfer task. Cells run
 * on a worker pool; rows come back sorted so the CSV is byte-reproducible.
 */
std::vector<MetricRow> run_experiment(const ExperimentPlan& plan);

void write_metric_csv(const std::vector<MetricRow>& rows, const std::filesystem::path& path);

/// Mean of a metric over seeds for one (task, metric, estimator, size) cell;
/// NaN rows are excluded (their count is reported separately).
double mean_metric(const std::vector<MetricRow>& rows, const std::string& task,
                   const std::string& metric, const std::string& estimator, int size);

} // namespace serd
