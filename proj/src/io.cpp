#include "serd/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <memory>
#include <sstream>

namespace serd {
namespace io {

using nlohmann::json;

namespace {

std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spill(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

json parse(const std::string& text, const char* what) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw DataError(std::string(what) + ": malformed JSON");
    return j;
}

template <typename T>
T field(const json& j, const char* key, const char* what) {
    if (!j.contains(key)) throw DataError(std::string(what) + ": missing key '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw DataError(std::string(what) + ": key '" + key + "' has the wrong type");
    }
}

} // namespace

std::string mdp_to_json(const TabularMdp& mdp) {
    json j;
    j["n_states"] = mdp.n_states;
    j["n_actions"] = mdp.n_actions;
    j["n_features"] = mdp.n_features;
    j["discount"] = mdp.discount;
    j["start_dist"] = mdp.start_dist;
    j["features"] = mdp.features;
    std::vector<indvec> succ(mdp.sa_count());
    for (int sa = 0; sa < mdp.sa_count(); ++sa) {
        const auto set = mdp.successor_set(sa);
        succ[sa].assign(set.begin(), set.end());
    }
    j["successors"] = succ;
    return j.dump(2);
}

TabularMdp mdp_from_json(const std::string& text) {
    const json j = parse(text, "mdp file");
    const int n_states = field<int>(j, "n_states", "mdp file");
    const int n_actions = field<int>(j, "n_actions", "mdp file");
    const int n_features = field<int>(j, "n_features", "mdp file");
    const double discount = field<double>(j, "discount", "mdp file");
    auto start = field<numvec>(j, "start_dist", "mdp file");
    auto features = field<numvec>(j, "features", "mdp file");
    auto succ = field<std::vector<indvec>>(j, "successors", "mdp file");
    try {
        return make_mdp(n_states, n_actions, n_features, discount, std::move(start),
                        std::move(features), succ);
    } catch (const std::invalid_argument& e) {
        throw DataError(std::string("mdp file: ") + e.what());
    }
}

void write_mdp(const TabularMdp& mdp, const std::filesystem::path& path) {
    spill(path, mdp_to_json(mdp) + "\n");
}

TabularMdp read_mdp(const std::filesystem::path& path) { return mdp_from_json(slurp(path)); }

std::uint64_t mdp_hash(const TabularMdp& mdp) {
    const std::string canon = mdp_to_json(mdp);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : canon) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace {

json energies_to_triples(const numvec& energies, const ParamsFile& f) {
    json arr = json::array();
    for (int m = 0; m < f.n_models; ++m)
        for (int k = 0; k < f.n_outcomes; ++k)
            arr.push_back({{"model", f.model_names[m]},
                           {"outcome", f.outcome_names[k]},
                           {"energy", energies[static_cast<size_t>(m) * f.n_outcomes + k]}});
    return arr;
}

numvec triples_to_energies(const json& arr, const ParamsFile& f, const char* which) {
    numvec e(static_cast<size_t>(f.n_models) * f.n_outcomes,
             std::numeric_limits<double>::quiet_NaN());
    for (const auto& t : arr) {
        const std::string model = field<std::string>(t, "model", which);
        const std::string outcome = field<std::string>(t, "outcome", which);
        const double energy = field<double>(t, "energy", which);
        const auto mi = std::find(f.model_names.begin(), f.model_names.end(), model);
        const auto oi = std::find(f.outcome_names.begin(), f.outcome_names.end(), outcome);
        if (mi == f.model_names.end())
            throw DataError(std::string(which) + ": unknown model '" + model + "'");
        if (oi == f.outcome_names.end())
            throw DataError(std::string(which) + ": unknown outcome '" + outcome + "'");
        e[static_cast<size_t>(mi - f.model_names.begin()) * f.n_outcomes +
          (oi - f.outcome_names.begin())] = energy;
    }
    for (double v : e)
        if (std::isnan(v)) throw DataError(std::string(which) + ": missing energy entries");
    return e;
}

} // namespace

void write_params(const ParamsFile& file, const std::filesystem::path& path) {
    json j;
    j["tied"] = file.params.tied;
    j["theta_r"] = file.params.theta_r;
    j["n_models"] = file.n_models;
    j["n_outcomes"] = file.n_outcomes;
    j["model_names"] = file.model_names;
    j["outcome_names"] = file.outcome_names;
    j["agent_energies"] = energies_to_triples(file.params.agent_energies, file);
    if (!file.params.tied)
        j["true_energies"] = energies_to_triples(file.params.true_energies, file);
    j["assignment"] = file.assignment_kind;
    if (file.assignment_kind == "explicit") {
        if (!file.explicit_assignment)
            throw std::invalid_argument("write_params: explicit assignment missing");
        json ea;
        ea["model_of"] = file.explicit_assignment->model_of;
        ea["slot_to_succ"] = file.explicit_assignment->slot_to_succ;
        j["explicit_assignment"] = ea;
    }
    spill(path, j.dump(2) + "\n");
}

ParamsFile read_params(const std::filesystem::path& path) {
    const json j = parse(slurp(path), "params file");
    ParamsFile f;
    f.params.tied = field<bool>(j, "tied", "params file");
    f.params.theta_r = field<numvec>(j, "theta_r", "params file");
    f.n_models = field<int>(j, "n_models", "params file");
    f.n_outcomes = field<int>(j, "n_outcomes", "params file");
    f.model_names = field<std::vector<std::string>>(j, "model_names", "params file");
    f.outcome_names = field<std::vector<std::string>>(j, "outcome_names", "params file");
    if (static_cast<int>(f.model_names.size()) != f.n_models ||
        static_cast<int>(f.outcome_names.size()) != f.n_outcomes)
        throw DataError("params file: name lists do not match the declared model shape");
    if (!j.contains("agent_energies"))
        throw DataError("params file: missing key 'agent_energies'");
    f.params.agent_energies = triples_to_energies(j.at("agent_energies"), f, "params file");
    if (!f.params.tied) {
        if (!j.contains("true_energies"))
            throw DataError("params file: untied file needs 'true_energies'");
        f.params.true_energies = triples_to_energies(j.at("true_energies"), f, "params file");
    }
    f.assignment_kind = field<std::string>(j, "assignment", "params file");
    if (f.assignment_kind == "explicit") {
        const json& ea = j.at("explicit_assignment");
        DynamicsAssignment assign;
        assign.n_models = f.n_models;
        assign.n_outcomes = f.n_outcomes;
        assign.model_of = field<indvec>(ea, "model_of", "params file");
        assign.slot_to_succ = field<indvec>(ea, "slot_to_succ", "params file");
        assign.model_names = f.model_names;
        assign.outcome_names = f.outcome_names;
        f.explicit_assignment = std::move(assign);
    }
    return f;
}

void write_trajectories(const DemoSet& demos, std::uint64_t mdp_hash,
                        const std::filesystem::path& path) {
    std::ostringstream out;
    out << "# mdp=" << std::hex << mdp_hash << std::dec << " seed=" << demos.seed
        << " horizon=" << demos.horizon << " count=" << demos.size() << "\n";
    for (const auto& traj : demos.trajectories) {
        for (size_t t = 0; t < traj.steps.size(); ++t) {
            if (t) out << ' ';
            out << traj.steps[t].first << ':' << traj.steps[t].second;
        }
        out << '\n';
    }
    spill(path, out.str());
}

TrajectoryFile read_trajectories(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());

    TrajectoryFile f;
    std::string line;
    if (!std::getline(in, line) || line.rfind("# mdp=", 0) != 0)
        throw DataError("trajectory file: missing header line");
    {
        std::istringstream hs(line.substr(2));
        std::string tok;
        while (hs >> tok) {
            const auto eq = tok.find('=');
            if (eq == std::string::npos) continue;
            const std::string key = tok.substr(0, eq);
            const std::string val = tok.substr(eq + 1);
            try {
                if (key == "mdp") f.mdp_hash = std::stoull(val, nullptr, 16);
                else if (key == "seed") f.demos.seed = std::stoull(val);
                else if (key == "horizon") f.demos.horizon = std::stoi(val);
            } catch (const std::exception&) {
                throw DataError("trajectory file: bad header field '" + tok + "'");
            }
        }
    }
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        Trajectory traj;
        std::istringstream ls(line);
        std::string tok;
        while (ls >> tok) {
            const auto colon = tok.find(':');
            if (colon == std::string::npos)
                throw DataError("trajectory file: token '" + tok + "' is not state:action");
            try {
                traj.steps.emplace_back(std::stoi(tok.substr(0, colon)),
                                        std::stoi(tok.substr(colon + 1)));
            } catch (const std::exception&) {
                throw DataError("trajectory file: token '" + tok + "' is not state:action");
            }
        }
        if (!traj.steps.empty()) f.demos.trajectories.push_back(std::move(traj));
    }
    return f;
}

void write_map(const gridworld::MapSpec& map, const std::filesystem::path& path) {
    std::ostringstream out;
    out << "width " << map.width << "\n"
        << "height " << map.height << "\n"
        << "goal " << map.goal.first << ' ' << map.goal.second << "\n"
        << "starts";
    for (const auto& [x, y] : map.starts) out << ' ' << x << ' ' << y;
    out << "\n";
    out << "terrain-threshold " << CsvWriter::num(map.terrain_threshold) << "\n";
    out << "gray\n";
    for (int y = 0; y < map.height; ++y) {
        for (int x = 0; x < map.width; ++x) {
            if (x) out << ' ';
            out << CsvWriter::num(map.gray[y * map.width + x]);
        }
        out << '\n';
    }
    out << "terrain\n";
    for (int y = 0; y < map.height; ++y) {
        for (int x = 0; x < map.width; ++x)
            out << (map.terrain[y * map.width + x] == gridworld::Terrain::Forest ? 'f' : 'o');
        out << '\n';
    }
    spill(path, out.str());
}

gridworld::MapSpec read_map(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());

    gridworld::MapSpec map;
    bool have_terrain = false;
    std::string line;
    enum { Header, Gray, Terrain } section = Header;
    int gray_row = 0, terrain_row = 0;

    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        if (section == Header) {
            std::string key;
            ls >> key;
            if (key == "width") ls >> map.width;
            else if (key == "height") ls >> map.height;
            else if (key == "goal") ls >> map.goal.first >> map.goal.second;
            else if (key == "starts") {
                int x, y;
                while (ls >> x >> y) map.starts.emplace_back(x, y);
            } else if (key == "terrain-threshold") ls >> map.terrain_threshold;
            else if (key == "gray") {
                if (map.width <= 0 || map.height <= 0)
                    throw DataError("map file: dimensions must precede the gray block");
                map.gray.assign(map.cells(), 0.0);
                section = Gray;
            } else throw DataError("map file: unknown header key '" + key + "'");
            if (ls.fail() && key != "starts")
                throw DataError("map file: malformed header line '" + line + "'");
        } else if (section == Gray) {
            if (line == "terrain") {
                section = Terrain;
                map.terrain.assign(map.cells(), gridworld::Terrain::Open);
                have_terrain = true;
                continue;
            }
            if (gray_row >= map.height) throw DataError("map file: too many gray rows");
            for (int x = 0; x < map.width; ++x)
                if (!(ls >> map.gray[gray_row * map.width + x]))
                    throw DataError("map file: gray row " + std::to_string(gray_row) +
                                    " is too short");
            ++gray_row;
        } else {
            if (terrain_row >= map.height) throw DataError("map file: too many terrain rows");
            std::string row;
            ls >> row;
            if (static_cast<int>(row.size()) != map.width)
                throw DataError("map file: terrain row " + std::to_string(terrain_row) +
                                " has wrong width");
            for (int x = 0; x < map.width; ++x) {
                if (row[x] != 'f' && row[x] != 'o')
                    throw DataError("map file: terrain cells must be 'f' or 'o'");
                map.terrain[terrain_row * map.width + x] =
                    row[x] == 'f' ? gridworld::Terrain::Forest : gridworld::Terrain::Open;
            }
            ++terrain_row;
        }
    }
    if (gray_row != map.height) throw DataError("map file: gray block incomplete");
    if (have_terrain && terrain_row != map.height)
        throw DataError("map file: terrain block incomplete");
    if (!have_terrain) {
        map.terrain.resize(map.cells());
        for (int s = 0; s < map.cells(); ++s)
            map.terrain[s] = map.gray[s] < map.terrain_threshold ? gridworld::Terrain::Forest
                                                                 : gridworld::Terrain::Open;
    }
    if (auto violations = gridworld::validate(map); !violations.empty())
        throw DataError("map file: " + violations.front());
    return map;
}

CsvWriter::CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header)
    : out_(std::make_unique<std::ofstream>()) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    out_->open(path);
    if (!*out_) throw std::runtime_error("cannot write " + path.string());
    row(header);
}

CsvWriter::~CsvWriter() = default;

void CsvWriter::row(const std::vector<std::string>& cells) {
    for (size_t i = 0; i < cells.size(); ++i) {
        if (i) *out_ << ',';
        *out_ << cells[i];
    }
    *out_ << '\n';
}

std::string CsvWriter::num(double v) {
    if (std::isnan(v)) return "nan";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    // trim to the shortest representation that round-trips
    for (int prec = 1; prec < 17; ++prec) {
        char probe[32];
        std::snprintf(probe, sizeof probe, "%.*g", prec, v);
        if (std::strtod(probe, nullptr) == v) return probe;
    }
    return buf;
}

} // namespace io
} // namespace serd
