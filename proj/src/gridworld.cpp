#include "serd/gridworld.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

#include "serd/io.hpp"

namespace serd {
namespace gridworld {

std::vector<std::string> validate(const MapSpec& map) {
    std::vector<std::string> out;
    if (map.width <= 0 || map.height <= 0) out.push_back("map: non-positive dimensions");
    if (static_cast<int>(map.gray.size()) != map.cells())
        out.push_back("map: gray matrix has wrong size");
    if (static_cast<int>(map.terrain.size()) != map.cells())
        out.push_back("map: terrain matrix has wrong size");
    for (size_t i = 0; i < map.gray.size(); ++i)
        if (map.gray[i] < 0.0 || map.gray[i] > 1.0)
            out.push_back("map: gray[" + std::to_string(i) + "] outside [0,1]");
    auto in_bounds = [&map](int x, int y) {
        return x >= 0 && x < map.width && y >= 0 && y < map.height;
    };
    if (!in_bounds(map.goal.first, map.goal.second)) out.push_back("map: goal out of bounds");
    if (map.starts.empty()) out.push_back("map: no start cells");
    for (const auto& [x, y] : map.starts)
        if (!in_bounds(x, y))
            out.push_back("map: start (" + std::to_string(x) + "," + std::to_string(y) +
                          ") out of bounds");
    return out;
}

namespace {

constexpr int kDx[4] = {0, 1, 0, -1};  // N, E, S, W
constexpr int kDy[4] = {-1, 0, 1, 0};

// slot targets per action as compass directions; -1 means the current cell.
// Motion actions use (intended, left, right, opposite, stay); stay leads with
// the current cell and enumerates the compass neighbors.
constexpr int kSlotDirs[kActions][kOutcomes] = {
    {North, West, East, South, -1},   // action North
    {East, North, South, West, -1},   // action East
    {South, East, West, North, -1},   // action South
    {West, South, North, East, -1},   // action West
    {-1, North, East, South, West},   // action Stay
};

numvec true_row(int action, Terrain terrain, bool forest_includes_stay) {
    numvec row(kOutcomes, 0.0);
    if (action == Stay) {
        row[0] = 1.0;  // staying always succeeds
        return row;
    }
    if (terrain == Terrain::Open) {
        row[0] = 0.8;
        row[1] = 0.1;
        row[2] = 0.1;
        return row;
    }
    row[0] = 0.3;
    if (forest_includes_stay) {
        for (int k = 1; k < kOutcomes; ++k) row[k] = 0.7 / 4.0;
    } else {
        for (int k = 1; k < kOutcomes - 1; ++k) row[k] = 0.7 / 3.0;
    }
    return row;
}

numvec row_to_energies(const numvec& row) {
    numvec e(row.size());
    for (size_t k = 0; k < row.size(); ++k)
        e[k] = row[k] > 0.0 ? std::log(row[k]) : kImpossibleEnergy;
    return e;
}

int model_index(int action, Terrain terrain) {
    if (action == Stay) return 8;
    return (terrain == Terrain::Forest ? 4 : 0) + action;
}

} // namespace

GridWorld build(const MapSpec& map, double gamma, const BuildOptions& opts) {
    if (auto violations = validate(map); !violations.empty())
        throw std::invalid_argument("gridworld::build: " + violations.front());

    const int W = map.width;
    const int H = map.height;
    const int S = W * H;
    const int goal = map.goal_state();

    numvec start_dist(S, 0.0);
    for (const auto& [x, y] : map.starts) start_dist[map.state_of(x, y)] += 1.0;
    for (double& p : start_dist) p /= static_cast<double>(map.starts.size());

    // features: normalized grayscale and the goal indicator, state-dependent,
    // broadcast over actions
    numvec features(static_cast<size_t>(S) * kActions * 2, 0.0);
    for (int s = 0; s < S; ++s)
        for (int a = 0; a < kActions; ++a) {
            features[(static_cast<size_t>(s) * kActions + a) * 2 + 0] = map.gray[s];
            features[(static_cast<size_t>(s) * kActions + a) * 2 + 1] = (s == goal) ? 1.0 : 0.0;
        }

    // per-state distinct neighborhood {self, N, E, S, W}, off-grid clamped to
    // self; the successor set is shared by all actions of the state
    std::vector<indvec> succ_per_state(S);
    std::vector<std::array<int, 4>> neighbor_state(S);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const int s = y * W + x;
            indvec& set = succ_per_state[s];
            set.push_back(s);
            for (int d = 0; d < 4; ++d) {
                const int nx = x + kDx[d];
                const int ny = y + kDy[d];
                const int target =
                    (nx >= 0 && nx < W && ny >= 0 && ny < H) ? ny * W + nx : s;
                neighbor_state[s][d] = target;
                if (std::find(set.begin(), set.end(), target) == set.end()) set.push_back(target);
            }
        }

    std::vector<indvec> successor_sets(static_cast<size_t>(S) * kActions);
    for (int s = 0; s < S; ++s)
        for (int a = 0; a < kActions; ++a) successor_sets[s * kActions + a] = succ_per_state[s];

    TabularMdp mdp = make_mdp(S, kActions, 2, gamma, std::move(start_dist), std::move(features),
                              successor_sets);

    auto assign = std::make_shared<DynamicsAssignment>();
    assign->n_models = kModels;
    assign->n_outcomes = kOutcomes;
    assign->model_names = {"open-north", "open-east",   "open-south",   "open-west",
                           "forest-north", "forest-east", "forest-south", "forest-west",
                           "stay"};
    assign->outcome_names = {"intended", "left", "right", "opposite", "stay"};
    assign->model_of.resize(mdp.sa_count());
    assign->slot_to_succ.resize(static_cast<size_t>(mdp.sa_count()) * kOutcomes);

    for (int s = 0; s < S; ++s) {
        const indvec& set = succ_per_state[s];
        auto succ_index = [&set](int state) {
            return static_cast<int>(std::find(set.begin(), set.end(), state) - set.begin());
        };
        for (int a = 0; a < kActions; ++a) {
            const int sa = s * kActions + a;
            assign->model_of[sa] = model_index(a, map.terrain[s]);
            for (int k = 0; k < kOutcomes; ++k) {
                const int dir = kSlotDirs[a][k];
                const int target = dir < 0 ? s : neighbor_state[s][dir];
                assign->slot_to_succ[static_cast<size_t>(sa) * kOutcomes + k] =
                    succ_index(target);
            }
        }
    }

    GridWorld world;
    world.true_dynamics.assignment = assign;
    world.true_dynamics.energies = reference_params(opts).agent_energies;
    world.assignment = std::move(assign);
    world.mdp = std::move(mdp);
    world.map = map;
    world.options = opts;
    return world;
}

ParamVector reference_params(const BuildOptions& opts) {
    ParamVector p;
    p.tied = true;
    p.theta_r = {6.0, 6.0};
    p.agent_energies.reserve(static_cast<size_t>(kModels) * kOutcomes);
    for (int m = 0; m < kModels; ++m) {
        const int action = (m == 8) ? Stay : m % 4;
        const Terrain terrain = (m >= 4 && m < 8) ? Terrain::Forest : Terrain::Open;
        const numvec e = row_to_energies(true_row(action, terrain, opts.forest_includes_stay));
        p.agent_energies.insert(p.agent_energies.end(), e.begin(), e.end());
    }
    return p;
}

namespace {

// deterministic per-cell texture so the grayscale feature is informative
// beyond a binary road mask
double jitter(int x, int y, std::uint64_t salt) {
    const std::uint64_t h = split_seed(salt, (static_cast<std::uint64_t>(y) << 20) | x);
    return (static_cast<double>(h >> 11) * 0x1.0p-53 - 0.5) * 0.12;
}

struct Segment {
    int x0, y0, x1, y1;  // axis-aligned, inclusive
};

MapSpec make_map(int width, int height, const std::vector<Segment>& roads,
                 std::pair<int, int> goal, std::vector<std::pair<int, int>> starts,
                 std::uint64_t salt) {
    MapSpec map;
    map.width = width;
    map.height = height;
    map.goal = goal;
    map.starts = std::move(starts);
    map.gray.assign(map.cells(), 0.0);
    map.terrain.assign(map.cells(), Terrain::Forest);

    std::vector<char> road(map.cells(), 0);
    for (const auto& seg : roads)
        for (int y = std::min(seg.y0, seg.y1); y <= std::max(seg.y0, seg.y1); ++y)
            for (int x = std::min(seg.x0, seg.x1); x <= std::max(seg.x0, seg.x1); ++x)
                road[y * width + x] = 1;

    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const int s = y * width + x;
            const double base = road[s] ? 0.88 : 0.24;
            map.gray[s] = std::clamp(base + jitter(x, y, salt), 0.0, 1.0);
            map.terrain[s] = map.gray[s] < map.terrain_threshold ? Terrain::Forest : Terrain::Open;
        }
    return map;
}

} // namespace

MapSpec builtin_train_map() {
    // a road loop with a dead-end spur; the forest diagonal is the tempting
    // shortcut between the start corner and the goal
    const std::vector<Segment> roads = {
        {2, 13, 13, 13},  // south road
        {2, 2, 2, 13},    // west road
        {2, 2, 13, 2},    // north road
        {13, 2, 13, 8},   // east spur toward the goal
        {7, 2, 7, 7},     // inner spur
    };
    return make_map(16, 16, roads, {13, 3},
                    {{2, 13}, {3, 13}, {2, 12}, {5, 13}}, /*salt=*/0xA11CEULL);
}

MapSpec builtin_transfer_map() {
    const std::vector<Segment> roads = {
        {3, 20, 20, 20},  // south road
        {3, 3, 3, 20},    // west road
        {3, 3, 20, 3},    // north road
        {20, 3, 20, 12},  // east road segment
        {10, 3, 10, 14},  // inner north-south road
        {10, 14, 17, 14}, // inner east-west road
    };
    return make_map(24, 24, roads, {17, 14},
                    {{3, 20}, {4, 20}, {3, 19}, {8, 20}, {20, 20}}, /*salt=*/0xB0BULL);
}

MapSpec resolve_map(const std::string& name_or_path) {
    if (name_or_path == "builtin:train16") return builtin_train_map();
    if (name_or_path == "builtin:transfer24") return builtin_transfer_map();
    return io::read_map(name_or_path);
}

} // namespace gridworld
} // namespace serd
