#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "serd/dynamics.hpp"
#include "serd/gridworld.hpp"
#include "serd/mdp.hpp"
#include "serd/traj.hpp"
#include "serd/types.hpp"

namespace serd {
namespace io {

// All readers throw DataError with a description of the offending field;
// writers throw std::runtime_error on filesystem failures.

/// JSON document with keys n_states, n_actions, n_features, discount,
/// start_dist, features (row-major), successors (list per (s,a)).
void write_mdp(const TabularMdp& mdp, const std::filesystem::path& path);
TabularMdp read_mdp(const std::filesystem::path& path);
std::string mdp_to_json(const TabularMdp& mdp);
TabularMdp mdp_from_json(const std::string& text);

/// FNV-1a over the canonical JSON serialization; identifies the environment
/// in trajectory file headers.
std::uint64_t mdp_hash(const TabularMdp& mdp);

/**
 * Parameter file: theta_r, tied flag, and energies as a flat list of
 * (model name, outcome name, energy) triples per role, plus the assignment
 * description ("gridworld" for map-derived assignments, explicit per-(s,a)
 * entries otherwise). Doubles round-trip exactly.
 */
struct ParamsFile {
    ParamVector params;
    int n_models = 0;
    int n_outcomes = 0;
    std::vector<std::string> model_names;
    std::vector<std::string> outcome_names;
    // "gridworld" or "explicit"; explicit files carry the assignment itself
    std::string assignment_kind = "gridworld";
    std::optional<DynamicsAssignment> explicit_assignment;
};

void write_params(const ParamsFile& file, const std::filesystem::path& path);
ParamsFile read_params(const std::filesystem::path& path);

/// One trajectory per line as whitespace-separated state:action tokens, after
/// a header line carrying the MDP hash, seed, and horizon.
void write_trajectories(const DemoSet& demos, std::uint64_t mdp_hash,
                        const std::filesystem::path& path);
struct TrajectoryFile {
    DemoSet demos;
    std::uint64_t mdp_hash = 0;
};
TrajectoryFile read_trajectories(const std::filesystem::path& path);

/// Plain-text map: header lines (width/height/goal/starts/terrain-threshold),
/// a "gray" block of row-major values, and an optional "terrain" block of
/// {f,o} rows overriding the threshold rule.
void write_map(const gridworld::MapSpec& map, const std::filesystem::path& path);
gridworld::MapSpec read_map(const std::filesystem::path& path);

/// Minimal CSV emitter: quotes nothing, writes doubles with round-trip
/// precision, NaN as "nan".
class CsvWriter {
public:
    explicit CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header);
    ~CsvWriter();
    void row(const std::vector<std::string>& cells);
    static std::string num(double v);

private:
    std::unique_ptr<std::ofstream> out_;
};

} // namespace io
} // namespace serd
