#pragma once

// Explicit monotone scheme for the impulse-control problem. One backward
// sweep over the time lattice; every node takes the larger of the
// continuation candidate and the best issuance candidate, both read from the
// next slice.
//
// Node layout: the running-bond configurations are stored canonically as
// sorted tuples of bond cells (layer, elapsed index, coupon index), grouped
// into classes by the number of running bonds. A node is
// (tuple, prior, x2, x1) with x1 fastest.

#include "catqvi/bayes_filter.hpp"
#include "catqvi/catbond_state.hpp"
#include "catqvi/config.hpp"
#include "catqvi/market_types.hpp"
#include "catqvi/model_core.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace catqvi {

/// Uniform axis; `count` nodes at min + i * step.
struct Axis {
    std::string name;
    double min = 0.0;
    double step = 1.0;
    std::size_t count = 1;

    double at(std::size_t i) const { return min + step * static_cast<double>(i); }
    double max() const { return at(count - 1); }
    static Axis from_range(std::string name, const AxisRange& r);
};

/// Cell of a uniform axis enclosing x: value = (1 - frac) v[lo] + frac v[lo + 1].
struct Bracket {
    std::size_t lo = 0;
    double frac = 0.0;
    bool clamped = false;
};

/// Points outside the axis are clamped to the nearest edge (and flagged).
Bracket locate(const Axis& axis, double x);

/// One-sided difference at `index` of a strided line of `count` values:
/// forward if velocity >= 0, backward otherwise. A missing neighbor (edge
/// of the box) contributes a zero difference.
double upwind_derivative(std::span<const double> values, std::size_t offset, std::size_t stride,
                         std::size_t count, std::size_t index, double step, double velocity);

/// Window-averaged posterior-mean intensity (1/h) * int_t^{t+h} E[Lambda(s, .)] ds.
/// Gamma prior: (alpha / beta(t)) times the window average of the seasonality.
double lambda_bar(double t, double h, const GammaPosterior& post, const IntensityModel& model);
double lambda_bar(double t, double h, const ScenarioWeights& w, const IntensityModel& model);

/// Interpolation stencil: up to eight (index, weight) pairs, weights >= 0 summing to one.
struct Stencil {
    std::array<std::uint32_t, 8> index{};
    std::array<double, 8> weight{};
    std::uint8_t size = 0;

    void add(std::uint32_t i, double w) {
        index[size] = i;
        weight[size] = w;
        ++size;
    }
};

/// Multilinear interpolation on a row-major regular grid (last axis fastest),
/// clamping to the bounding box. Also returns the corner indices and weights.
struct GridInterpolation {
    double value = 0.0;
    bool clamped = false;
    std::vector<std::pair<std::size_t, double>> weights;
};
GridInterpolation interpolate(std::span<const double> values, std::span<const Axis> axes,
                              std::span<const double> point);

/// Discretization of the intensity posterior.
///  * Gamma prior: the shape axis alpha (beta is a deterministic function of t).
///  * Scenario prior with L levels: the lattice {w : m w integer} on the
///    (L-1)-simplex, interpolated barycentrically on the Kuhn triangulation of
///    the cumulative coordinates.
class PriorLattice {
public:
    static PriorLattice gamma(Axis alpha, double beta0, Seasonality season);
    static PriorLattice simplex(std::size_t levels, std::size_t divisions);

    IntensityVariant variant() const noexcept { return variant_; }
    std::size_t size() const noexcept { return size_; }
    const Axis& alpha_axis() const noexcept { return alpha_; }
    std::size_t divisions() const noexcept { return divisions_; }
    std::size_t levels() const noexcept { return levels_; }

    /// Gamma lattice: alpha at node i and beta at time t.
    double alpha_at(std::size_t i) const { return alpha_.at(i); }
    double beta_at(double t) const;

    /// Scenario lattice: weights at node i.
    std::vector<double> weights_at(std::size_t i) const;

    /// Posterior at node i and time t.
    LambdaPosterior posterior_at(std::size_t i, double t) const;

    /// Interpolation stencil for an off-grid alpha / weight vector.
    Stencil stencil_alpha(double alpha, bool* clamped = nullptr) const;
    Stencil stencil_weights(std::span<const double> w) const;
    Stencil stencil(const LambdaPosterior& post, bool* clamped = nullptr) const;

    /// Nearest lattice node.
    std::size_t nearest(const LambdaPosterior& post, bool* clamped = nullptr) const;

private:
    IntensityVariant variant_ = IntensityVariant::Gamma;
    std::size_t size_ = 0;
    Axis alpha_;
    double beta0_ = 0.0;
    Seasonality season_;
    std::size_t levels_ = 0;
    std::size_t divisions_ = 0;
    std::vector<std::vector<std::uint16_t>> cumulative_;   // node -> cumulative coordinates
    std::vector<std::int32_t> table_;                      // dense (m+1)^(L-1) -> node
    std::size_t table_index(std::span<const std::uint16_t> c) const;
};

/// One running bond on the lattice. `elapsed` counts time steps, `coupon` the
/// node of the per-layer coupon axis.
struct BondCell {
    int layer = 1;
    std::size_t elapsed = 0;
    std::size_t coupon = 0;
};

/// Configurations with the same number of running bonds.
struct ConfigClass {
    std::size_t running = 0;
    std::size_t first_tuple = 0;
    std::size_t tuple_count = 0;
};

struct SolverOptions {
    bool claims_enabled = true;
    /// Replaces the gain both as terminal slice and as the x1-edge boundary
    /// value. Arguments: x1, x2, prior node, tuple.
    std::function<double(double, double, std::size_t, std::size_t)> terminal_override;
    unsigned threads = 1;
    std::optional<bool> store_all_values;
};

struct CflReport {
    bool ok = true;
    double max_ratio = 0.0;
    double t = 0.0;
    double x1 = 0.0;
    double x2 = 0.0;
    double coupon_sum = 0.0;
    double lambda_bar = 0.0;
    std::size_t prior_node = 0;
    double h_time = 0.0;
    double required_h = 0.0;

    nlohmann::json to_json() const;
};

/// Geometry of the x1 boundary layer: nodes within one jump reach plus the
/// drift reach over the horizon of an edge can feel the edge condition.
struct CoverageReport {
    double x1_min = 0.0;
    double x1_max = 0.0;
    double max_jump = 0.0;
    double max_drift_speed = 0.0;
    double horizon = 0.0;
    double safe_min = 0.0;
    double safe_max = 0.0;
    double x2_top = 0.0;
    double max_bump = 0.0;

    nlohmann::json to_json() const;
};

/// Grids, configuration table and the lookup tables of the scheme.
class Workspace {
public:
    /// Materializes axes and configuration classes; checks the CFL bound and
    /// the memory budget before anything large is allocated.
    static std::shared_ptr<const Workspace> build(const ModelBundle& bundle, SolverOptions options = {});

    const ModelBundle& bundle() const noexcept { return bundle_; }
    const SolverOptions& options() const noexcept { return options_; }

    double h() const noexcept { return h_; }
    std::size_t steps() const noexcept { return steps_; }
    double time_at(std::size_t n) const { return h_ * static_cast<double>(n); }
    const Axis& x1() const noexcept { return x1_; }
    const Axis& x2() const noexcept { return x2_; }
    const PriorLattice& prior() const noexcept { return prior_; }
    std::size_t layer_count() const noexcept { return layer_count_; }
    std::size_t elapsed_count() const noexcept { return elapsed_count_; }
    std::size_t coupon_count() const noexcept { return coupon_count_; }
    const Axis& coupon_axis(int layer) const { return coupon_axes_.at(static_cast<std::size_t>(layer - 1)); }
    std::size_t max_bonds() const noexcept { return max_bonds_; }

    const std::vector<ConfigClass>& classes() const noexcept { return classes_; }
    std::size_t tuple_count() const noexcept { return tuple_running_.size(); }
    std::size_t tuple_running(std::size_t tuple) const { return tuple_running_[tuple]; }
    std::span<const std::uint32_t> tuple_cells(std::size_t tuple) const;
    BondCell cell(std::uint32_t id) const;
    std::uint32_t cell_id(const BondCell& c) const;
    std::size_t cell_count() const noexcept { return layer_count_ * elapsed_count_ * coupon_count_; }

    /// Tuple index of a multiset of cells (any order); throws DomainError if
    /// the configuration is not representable.
    std::size_t tuple_of(std::vector<std::uint32_t> cells) const;

    /// Book represented by a tuple (coupon values at the coupon nodes).
    BondBook book_of(std::size_t tuple) const;

    /// Tuple after one time step: elapsed + 1, bonds reaching the maturity removed.
    std::size_t advanced(std::size_t tuple) const { return advanced_[tuple]; }
    /// Tuple of `cells` after removing the bonds whose elapsed index reached
    /// the maturity (the maturity lift). Elapsed indices may equal elapsed_count().
    std::size_t maturity_lift(std::vector<BondCell> cells) const;
    /// Tuple after inserting a fresh bond (layer, elapsed 1, coupon node) into
    /// `tuple`; -1 if the book is full.
    std::int64_t inserted(std::size_t tuple, int layer, std::size_t coupon_node) const;

    double coupon_sum(std::size_t tuple) const { return coupon_sum_[tuple]; }
    double remaining(std::size_t tuple) const { return remaining_[tuple]; }

    std::size_t prior_count() const noexcept { return prior_.size(); }
    std::size_t nodes_per_tuple() const noexcept { return prior_.size() * x2_.count * x1_.count; }
    std::size_t node_count() const noexcept { return tuple_count() * nodes_per_tuple(); }
    std::size_t node_index(std::size_t tuple, std::size_t ip, std::size_t i2, std::size_t i1) const {
        return ((tuple * prior_.size() + ip) * x2_.count + i2) * x1_.count + i1;
    }
    struct NodeCoords {
        std::size_t tuple, ip, i2, i1;
    };
    NodeCoords coords(std::size_t node) const;

    double memory_estimate_bytes() const;

    const std::vector<SeverityAtom>& atoms() const noexcept { return atoms_; }
    const std::vector<double>& atom_bumps() const noexcept { return bumps_; }
    const std::vector<double>& noise_atoms() const noexcept { return noise_atoms_; }
    const std::vector<double>& noise_weights() const noexcept { return noise_weights_; }

    /// Boundary / terminal value at a node (the gain unless overridden).
    double edge_value(std::size_t tuple, std::size_t ip, std::size_t i2, std::size_t i1) const;

    const CflReport& cfl() const noexcept { return cfl_; }
    const CoverageReport& coverage() const noexcept { return coverage_; }

    Workspace(const Workspace&) = delete;
    Workspace& operator=(const Workspace&) = delete;

private:
    Workspace() = default;
    void enumerate_configurations();
    void check_cfl();

    ModelBundle bundle_;
    SolverOptions options_;
    double h_ = 0.0;
    std::size_t steps_ = 0;
    Axis x1_, x2_;
    PriorLattice prior_;
    std::size_t layer_count_ = 0, elapsed_count_ = 0, coupon_count_ = 0, max_bonds_ = 0;
    std::vector<Axis> coupon_axes_;
    std::vector<ConfigClass> classes_;
    std::vector<std::uint32_t> cells_flat_;     // tuple * max_bonds + j
    std::vector<std::uint8_t> tuple_running_;
    std::vector<std::vector<std::int32_t>> lookup_;   // per class, dense cell_count^n
    std::vector<std::uint32_t> advanced_;
    std::vector<std::int64_t> inserted_;        // (tuple * L + k - 1) * nr + ir
    std::vector<double> coupon_sum_, remaining_;
    std::vector<SeverityAtom> atoms_;
    std::vector<double> bumps_;
    std::vector<double> noise_atoms_, noise_weights_;
    CflReport cfl_;
    CoverageReport coverage_;
};

/// Per-slice coefficients shared by every node of one backward step.
struct StepContext {
    std::size_t n = 0;
    double t = 0.0;
    double h = 0.0;
    double premium = 0.0;
    std::vector<double> lam_bar;          // per prior node
    std::vector<Stencil> advance;         // per prior node: posterior after one step
    std::vector<Stencil> jump;            // per prior node: posterior after a claim
    std::vector<std::uint32_t> settle_target;   // (tuple * A + a): book after settlement
    std::vector<double> jump_dx1;               // (tuple * A + a): -u + payoff
    std::vector<Bracket> x2_target;             // (a * N2 + i2)
    std::vector<Bracket> coupon_target;         // ((k - 1) * E + e) * N2 + i2
};

StepContext make_step_context(const Workspace& ws, std::size_t n);

enum : std::uint8_t { kActionWait = 0 };

struct QueryPoint {
    double t = 0.0;
    MarketState x;
    LambdaPosterior posterior = GammaPosterior{};
    BondBook book;
};

struct QueryResult {
    double value = 0.0;
    bool clamped = false;
    std::size_t slice = 0;
};

struct PolicyQuery {
    std::uint8_t action = kActionWait;
    bool clamped = false;
    std::size_t slice = 0;
};

/// Solved value slices (those kept) and the policy for every slice.
class Solution {
public:
    Solution(std::shared_ptr<const Workspace> ws, std::vector<std::vector<double>> values,
             std::vector<std::vector<std::uint8_t>> policy);

    const Workspace& workspace() const noexcept { return *ws_; }
    std::shared_ptr<const Workspace> workspace_ptr() const noexcept { return ws_; }
    bool has_values(std::size_t slice) const { return !values_.at(slice).empty(); }
    std::span<const double> values(std::size_t slice) const { return values_.at(slice); }
    std::span<const std::uint8_t> policy(std::size_t slice) const { return policy_.at(slice); }
    std::size_t slices() const noexcept { return policy_.size(); }

    /// Multilinear value at an off-grid point; nearest stored slice in time.
    QueryResult query_value(const QueryPoint& q) const;
    /// Action at the nearest node after canonicalizing the book.
    PolicyQuery query_policy(const QueryPoint& q) const;
    /// Nearest slice index for a time.
    std::size_t slice_of(double t) const;

private:
    std::shared_ptr<const Workspace> ws_;
    std::vector<std::vector<double>> values_;
    std::vector<std::vector<std::uint8_t>> policy_;
};

/// Terminal slice g v K[g]; `policy` receives the terminal actions.
std::vector<double> terminal_slice(const Workspace& ws, std::vector<std::uint8_t>* policy);

/// Slice n computed from slice n + 1.
std::vector<double> backward_step(const Workspace& ws, std::size_t n, std::span<const double> next,
                                  std::vector<std::uint8_t>* policy);

Solution backward_induction(std::shared_ptr<const Workspace> ws);

/// Relative margin below which an issuance candidate does not beat waiting.
inline constexpr double kTieTolerance = 1e-12;

}  // namespace catqvi
