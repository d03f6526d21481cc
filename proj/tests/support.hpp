#pragma once

#include "catqvi/config.hpp"

#include <cstdint>
#include <fstream>
#include <random>
#include <string>

#include <json.hpp>

namespace catqvi::testing {

inline std::string profile_path(const std::string& name) {
    return std::string(CATQVI_PROFILE_DIR) + "/" + name + ".json";
}

inline nlohmann::json profile_json(const std::string& name) {
    std::ifstream in(profile_path(name));
    return nlohmann::json::parse(in);
}

inline ModelBundle profile(const std::string& name) { return validate_config(profile_json(name)); }

/// Small hand-rolled generator for property tests; every case is reproducible
/// from (seed, case index).
class Gen {
public:
    explicit Gen(std::uint64_t seed) : rng_(seed) {}

    double uniform(double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng_); }
    std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }
    bool coin(double p = 0.5) { return std::bernoulli_distribution(p)(rng_); }
    std::mt19937_64& engine() { return rng_; }

private:
    std::mt19937_64 rng_;
};

/// Composite Simpson rule with n (even) panels.
template <class F>
double simpson(F&& f, double a, double b, int n = 2000) {
    const double h = (b - a) / n;
    double s = f(a) + f(b);
    for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
    return s * h / 3.0;
}

}  // namespace catqvi::testing
