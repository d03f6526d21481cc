#pragma once

// Forward Monte Carlo of the controlled system: claims by thinning, severity
// draws, Bayes filtering of the intensity level, the bond lifecycle and the
// exact cash flow between events. Actions are taken on the time lattice.

#include "catqvi/bayes_filter.hpp"
#include "catqvi/catbond_state.hpp"
#include "catqvi/config.hpp"
#include "catqvi/market_types.hpp"
#include "catqvi/model_core.hpp"

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <json.hpp>

namespace catqvi {

class Solution;

struct ScenarioTruth {
    double lambda0 = 0.6;
    std::uint64_t seed = 20240101;
    std::size_t n_paths = 1000;
};

/// Independent random streams of one path.
enum class Stream : std::uint64_t { Claims = 1, Severity = 2, Noise = 3 };

/// mt19937_64 seeded through SplitMix64 from (seed, path, stream): paths and
/// streams are reproducible and independent of how paths are scheduled.
std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t path, Stream stream);

/// Sorted claim times on [0, horizon) for the true level lambda0 (thinning
/// against the constant majorant of the intensity).
std::vector<double> sample_claims(const IntensityModel& model, double lambda0, double horizon,
                                  std::mt19937_64& rng);

struct SeverityDraw {
    double industry = 0.0;
    double insurer = 0.0;
};

/// Atoms mode draws one of the equal-weight atoms; continuous mode inverts
/// the capped GPD.
SeverityDraw sample_severity(const SeverityModel& model, SeverityMode mode,
                             std::span<const SeverityAtom> atoms, std::mt19937_64& rng);

enum class EventKind { Claim, Issue, EventSettlement, MaturitySettlement };
const char* to_string(EventKind kind);

/// Posterior summary columns: (alpha, beta, mean) for a Gamma posterior,
/// the first three scenario weights otherwise.
std::array<double, 3> posterior_summary(const LambdaPosterior& post);

struct EventRecord {
    double t = 0.0;
    EventKind kind = EventKind::Claim;
    double loss = 0.0;     // insurer scale
    double payoff = 0.0;
    int layer = 0;
    double coupon = 0.0;
    MarketState x;         // state right after the event
    std::array<double, 3> posterior{};
};

struct StateSample {
    double t = 0.0;
    MarketState x;
    std::array<double, 3> posterior{};
    BondBook book;
};

/// Integrated cash components of one path.
struct CashLedger {
    double premium = 0.0;
    double interest = 0.0;
    double coupons = 0.0;
    double claims = 0.0;
    double payoffs = 0.0;
    double issue_costs = 0.0;
};

struct PathRecord {
    std::vector<EventRecord> events;
    std::vector<StateSample> samples;
    MarketState initial;
    MarketState final_state;
    LambdaPosterior final_posterior = GammaPosterior{};
    std::optional<FiniteSupportPosterior> severity_posterior;
    std::optional<FiniteSupportPosterior> coupon_posterior;
    BondBook final_book;
    double utility = 0.0;
    CashLedger ledger;
    std::size_t issues = 0;
    std::size_t claims = 0;
    std::size_t clamped_queries = 0;
    std::size_t max_running = 0;
};

/// Decides the action at lattice step `step`: 0 waits, k issues on layer k.
class PolicySource {
public:
    virtual ~PolicySource() = default;
    virtual std::uint8_t decide(std::size_t step, double t, const MarketState& x, const LambdaPosterior& post,
                                const BondBook& book, bool& clamped) const = 0;
};

class NoBondPolicy final : public PolicySource {
public:
    std::uint8_t decide(std::size_t, double, const MarketState&, const LambdaPosterior&, const BondBook&,
                        bool&) const override {
        return 0;
    }
};

/// Issues on the given layer at the given lattice steps (when a slot is free).
class ScriptedPolicy final : public PolicySource {
public:
    explicit ScriptedPolicy(std::map<std::size_t, std::uint8_t> actions) : actions_(std::move(actions)) {}
    std::uint8_t decide(std::size_t step, double, const MarketState&, const LambdaPosterior&, const BondBook&,
                        bool&) const override;

private:
    std::map<std::size_t, std::uint8_t> actions_;
};

/// Nearest-node lookup in a solved policy table.
class GridPolicy final : public PolicySource {
public:
    explicit GridPolicy(const Solution& solution) : solution_(solution) {}
    std::uint8_t decide(std::size_t step, double t, const MarketState& x, const LambdaPosterior& post,
                        const BondBook& book, bool& clamped) const override;

private:
    const Solution& solution_;
};

struct SimOptions {
    bool record_events = true;
    bool record_samples = false;
    unsigned threads = 1;
};

PathRecord run_path(const ModelBundle& bundle, const PolicySource& policy, const ScenarioTruth& truth,
                    std::size_t path_index, const SimOptions& options = {});

struct MonteCarloSummary {
    std::size_t n_paths = 0;
    std::uint64_t seed = 0;
    double lambda0 = 0.0;
    std::vector<double> final_cash;
    std::vector<double> utility;
    std::vector<std::array<double, 3>> terminal_posterior;
    double mean_cash = 0.0;
    double sd_cash = 0.0;
    double mean_utility = 0.0;
    double sd_utility = 0.0;
    double mean_issues = 0.0;
    double mean_claims = 0.0;
    std::size_t clamped_queries = 0;
    std::size_t max_running = 0;

    /// Empirical quantile (linear interpolation between order statistics).
    double cash_quantile(double p) const;
    nlohmann::json to_json() const;
};

MonteCarloSummary run_monte_carlo(const ModelBundle& bundle, const PolicySource& policy,
                                  const ScenarioTruth& truth, const SimOptions& options = {});

/// Type-7 empirical quantile of an unsorted sample.
double empirical_quantile(std::vector<double> sample, double p);

/// Pairwise (cascade) summation; the result does not depend on threading.
double pairwise_sum(std::span<const double> v);

/// Gaussian kernel density with Silverman's bandwidth on `points` equispaced
/// abscissae covering the sample +- 3 bandwidths.
std::vector<std::pair<double, double>> kernel_density(std::span<const double> sample, std::size_t points = 256);

void write_event_log_csv(const PathRecord& path, std::ostream& out);
void write_density_csv(std::span<const std::pair<double, double>> density, std::ostream& out);

}  // namespace catqvi
