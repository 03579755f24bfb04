#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "serd/dynamics.hpp"
#include "serd/mdp.hpp"
#include "serd/types.hpp"

namespace serd {
namespace gridworld {

enum Action : int { North = 0, East = 1, South = 2, West = 3, Stay = 4 };
inline constexpr int kActions = 5;
inline constexpr int kModels = 9;    // {open,forest} x {N,E,S,W} + shared stay
inline constexpr int kOutcomes = 5;  // intended, left, right, opposite, stay
inline constexpr double kReferenceDiscount = 0.99;
inline constexpr double kImpossibleEnergy = -30.0;  // ~9.4e-14 relative mass

enum class Terrain : std::uint8_t { Open = 0, Forest = 1 };

/**
 * Terrain-navigation map: normalized grayscale (also the first reward
 * feature), a terrain class per cell, one goal cell, and a uniform start
 * distribution over the start cells.
 */
struct MapSpec {
    int width = 0;
    int height = 0;
    numvec gray;                                 // row-major height x width, in [0,1]
    std::vector<Terrain> terrain;                // same layout
    std::pair<int, int> goal{0, 0};              // (x, y)
    std::vector<std::pair<int, int>> starts;     // (x, y)
    double terrain_threshold = 0.5;              // gray < threshold => forest

    int cells() const { return width * height; }
    int state_of(int x, int y) const { return y * width + x; }
    int goal_state() const { return state_of(goal.first, goal.second); }
};

/// Diagnostics for MapSpec invariants; empty iff valid.
std::vector<std::string> validate(const MapSpec& map);

struct BuildOptions {
    // Whether the forest failure mass spreads over all four remaining
    // outcomes (including stay) or only the three other moves.
    bool forest_includes_stay = true;
};

struct GridWorld {
    TabularMdp mdp;
    AssignmentPtr assignment;
    BoltzmannDynamics true_dynamics;
    MapSpec map;
    BuildOptions options;
};

/**
 * Builds the navigation MDP: 5 actions, successor set {self,N,E,S,W} with
 * off-grid outcomes clamped to self, features (grayscale, goal indicator)
 * broadcast over actions, and the terrain-shared 9x5 dynamics models with the
 * published outcome rows as true energies.
 */
GridWorld build(const MapSpec& map, double gamma, const BuildOptions& opts = {});

/// True model parameters: theta_R = (6, 6) and the true-dynamics energy rows
/// (zero-probability outcomes clamped to kImpossibleEnergy). Tied layout.
ParamVector reference_params(const BuildOptions& opts = {});

/// Deterministic desk-scale maps: a light road network through dark forest.
MapSpec builtin_train_map();     // 16 x 16
MapSpec builtin_transfer_map();  // 24 x 24

/// Resolves "builtin:train16" / "builtin:transfer24", else loads a map file.
MapSpec resolve_map(const std::string& name_or_path);

} // namespace gridworld
} // namespace serd
