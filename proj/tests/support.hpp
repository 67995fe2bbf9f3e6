#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <unistd.h>
#include <vector>

#include "celldet/grid.hpp"

namespace testing {

// Unique scratch directory removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("celldet_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline double relative_error(double a, double b) {
    return std::abs(a - b) / std::max({1e-8, std::abs(a), std::abs(b)});
}

// Central difference of f along coordinate i of x.
inline double central_difference(const std::function<double(const std::vector<double>&)>& f,
                                 std::vector<double> x, std::size_t i, double h = 1e-6) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double up = f(x);
    x[i] = x0 - h;
    const double down = f(x);
    return (up - down) / (2 * h);
}

inline celldet::RealGrid random_grid(std::mt19937_64& rng, int h, int w, double lo = 0.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    celldet::RealGrid g(h, w);
    for (auto& v : g) v = u(rng);
    return g;
}

struct PuInstance {
    std::vector<double> scores_p;
    std::vector<double> scores_u;
    double prior = 0.5;
};

// Random score vectors; every third instance pushes the unlabeled scores
// negative and the positive scores up so that the clamp engages.
inline PuInstance random_pu_instance(std::mt19937_64& rng, int trial) {
    std::normal_distribution<double> n(0.0, 2.0);
    std::uniform_real_distribution<double> prior(0.05, 0.95);
    PuInstance inst;
    inst.scores_p.resize(1 + rng() % 10);
    inst.scores_u.resize(1 + rng() % 10);
    const double shift = trial % 3 == 0 ? 4.0 : 0.0;
    for (auto& v : inst.scores_p) v = n(rng) + shift;
    for (auto& v : inst.scores_u) v = n(rng) - shift;
    inst.prior = prior(rng);
    return inst;
}

}  // namespace testing
