#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace serd {

using numvec = std::vector<double>;
using indvec = std::vector<int>;

/// Thrown when a fixed-point solver exhausts its iteration budget above tolerance.
class ConvergenceError : public std::runtime_error {
public:
    ConvergenceError(const std::string& what, double residual, long iterations)
        : std::runtime_error(what), residual_(residual), iterations_(iterations) {}

    double residual() const noexcept { return residual_; }
    long iterations() const noexcept { return iterations_; }

private:
    double residual_;
    long iterations_;
};

/// Thrown when demonstrations or parameter files disagree with the MDP structure.
class DataError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// splitmix64; used to derive independent PRNG streams from a master seed.
inline std::uint64_t split_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

} // namespace serd
