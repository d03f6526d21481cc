#pragma once

// Validated configuration bundle. Files are JSON documents; every key is
// optional and falls back to the Florida Gamma-prior calibration. See
// docs/config.md for the key reference.

#include "catqvi/bayes_filter.hpp"
#include "catqvi/error.hpp"
#include "catqvi/market_types.hpp"
#include "catqvi/model_core.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace catqvi {

struct AxisRange {
    double min = 0.0;
    double max = 1.0;
    double step = 1.0;

    std::size_t count() const;
    double at(std::size_t i) const { return min + step * static_cast<double>(i); }
};

struct GridConfig {
    double h_time = 0.05;
    AxisRange x1{-30.0, 15.0, 1.0};
    AxisRange x2{0.0, 3.0, 0.5};
    AxisRange alpha{25.0, 31.0, 1.0};
    std::size_t simplex_divisions = 6;
    std::size_t r_count = 2;
    bool store_all_values = false;
    double max_memory_gb = 8.0;
};

struct CouponNoise {
    std::vector<double> atoms{0.0};
    std::vector<double> weights{1.0};
};

/// Finite-support uncertainty on the severity law: candidate GPD parameter
/// sets with prior weights; `truth` selects the law used to draw claims.
struct SeverityHook {
    std::vector<SeverityModel> candidates;
    std::vector<double> prior;
    std::size_t truth = 0;
};

/// Finite-support uncertainty on the coupon noise: each candidate value of
/// the coupon parameter carries its own weights over the noise atoms.
struct CouponHook {
    std::vector<double> support;
    std::vector<double> prior;
    std::vector<std::vector<double>> atom_weights;
    std::size_t truth = 0;
};

enum class SeverityMode { Atoms, Continuous };

struct SimulationConfig {
    double lambda0 = 0.6;
    std::uint64_t seed = 20240101;
    std::size_t n_paths = 1000;
    SeverityMode severity_mode = SeverityMode::Atoms;
};

struct ModelBundle {
    std::string name;
    IntensityModel intensity = IntensityModel::gamma_form({});
    SeverityModel severity;
    EconomicParams econ;
    PriorState prior{GammaPosterior{}, std::nullopt, std::nullopt};
    std::vector<double> return_periods{10.0, 50.0, 200.0, 1000.0};
    double warming_slope = 0.0;
    CouponNoise noise;
    std::optional<SeverityHook> severity_hook;
    std::optional<CouponHook> coupon_hook;
    LayerSpec layers;
    GridConfig grid;
    SimulationConfig sim;
};

/// Parses and checks every invariant; throws ConfigError carrying all
/// violations with their key paths.
ModelBundle validate_config(const nlohmann::json& raw);

/// Reads and validates a config file. Throws IoError if it cannot be read.
ModelBundle load_config(const std::filesystem::path& path);

/// Applies dotted-path overrides such as {"grid.x1.min", "-20"} to a raw document.
void apply_override(nlohmann::json& raw, std::string_view dotted_path, double value);

/// Canonical JSON rendering of a validated bundle (config echo in outputs).
nlohmann::json to_json(const ModelBundle& bundle);

std::string read_text_file(const std::filesystem::path& path);

/// Lower-case hex SHA-256 digest.
std::string sha256_hex(std::string_view bytes);

}  // namespace catqvi
