#pragma once

// Static model ingredients: hurricane seasonality, the two intensity
// families, the bounded generalized Pareto severity and the economic
// constants of the issuance problem.

#include <cstddef>
#include <span>
#include <vector>

namespace catqvi {

/// Seasonal arrival weight: a Beta(alpha_hat, beta_hat) bump supported on the
/// fraction-of-year window (d0, d1), periodic with period one year.
///
/// With `normalize_yearly` the bump is divided by (d1 - d0) so that every
/// calendar year integrates to exactly one; the yearly expected claim count
/// of the Gamma family is then the intensity level itself.
struct Seasonality {
    double d0 = 0.4958;
    double d1 = 0.8736;
    double alpha_hat = 8.0;
    double beta_hat = 6.0;
    bool normalize_yearly = true;

    /// h(t) in 1/year; zero out of season.
    double operator()(double t) const;

    /// Integral of h over [0, t].
    double cumulative(double t) const;

    /// Integral of h over [t, s] (s >= t).
    double integral(double t, double s) const { return cumulative(s) - cumulative(t); }

    /// Integral of h over one whole year.
    double yearly_integral() const;

    /// Location of the in-season maximum (fraction of year), the Beta mode.
    double peak_location() const;

    /// sup_t h(t); +inf when a shape parameter is below one.
    double max_value() const;
};

/// Which parametrized intensity family is in use.
enum class IntensityVariant { Gamma, Bernoulli };

/// Lambda(t, lambda):
///  * Gamma form: lambda * h(t), lambda >= 0 arbitrary;
///  * Bernoulli form: 0.5 * h(t) * (1 + floor(t) * lambda / T), lambda drawn
///    from a finite set of scenario levels.
class IntensityModel {
public:
    static IntensityModel gamma_form(Seasonality season);
    static IntensityModel bernoulli_form(Seasonality season, double horizon,
                                         std::vector<double> levels);

    IntensityVariant variant() const noexcept { return variant_; }
    const Seasonality& seasonality() const noexcept { return season_; }
    double horizon() const noexcept { return horizon_; }
    std::span<const double> levels() const noexcept { return levels_; }

    /// Validated rate. Bernoulli form rejects levels outside the scenario set.
    double rate(double t, double lambda) const;

    /// Rate of scenario `i` (Bernoulli) without level lookup.
    double rate_for_level(double t, std::size_t i) const;

    /// Rate evaluated for any lambda >= 0, used by grid-posterior oracles.
    double rate_unchecked(double t, double lambda) const;

    /// Integral of Lambda(u, lambda) over [t, s] for any lambda >= 0.
    double integrated(double t, double s, double lambda) const;

    /// Upper bound of Lambda(., lambda) on [0, horizon] for thinning.
    double majorant(double lambda, double horizon) const;

    /// Index of `lambda` in the scenario set, or throws DomainError.
    std::size_t level_index(double lambda) const;

private:
    IntensityVariant variant_ = IntensityVariant::Gamma;
    Seasonality season_;
    double horizon_ = 0.0;
    std::vector<double> levels_;
};

enum class LossScale { Industry, Insurer };

/// Generalized Pareto claim severity, capped at the total exposure.
/// Industry losses are in billions; insurer losses are industry x market share.
struct SeverityModel {
    double mu = 0.5;
    double sigma = 5.0;
    double xi = 0.5;
    double exposure_cap = 4000.0;
    double market_share = 0.1;
    std::size_t n_atoms = 2500;

    /// Capped GPD inverse cdf; p must lie in [0, 1).
    double quantile(double p, LossScale scale = LossScale::Industry) const;

    /// Uncapped GPD cdf at an industry-scale loss.
    double cdf(double u_industry) const;

    /// P(claim > x) at an insurer-scale threshold, honoring the cap.
    double exceedance(double x_insurer) const;

    /// Uncapped GPD density at an industry-scale loss.
    double density(double u_industry) const;

    /// mu + sigma / (1 - xi), industry scale.
    double mean_uncapped() const;
};

struct SeverityAtom {
    double loss;    // insurer scale
    double weight;
};

/// Equal-weight atoms at quantile levels k/(n+1), k = 1..n, insurer scale.
std::vector<SeverityAtom> discretize_severity(const SeverityModel& model);
std::vector<SeverityAtom> discretize_severity(const SeverityModel& model, std::size_t n_atoms);

struct EconomicParams {
    double premium_rate = 0.6825;
    double interest = 0.01;
    double issue_cost = 0.0025;
    double penalty_decay = 2.0;
    double penalty_bump_scale = 0.05;
    double risk_aversion = 1.0;
    double gain_floor = -1e300;
    double maturity = 3.0;
    double horizon = 30.0;
    std::size_t max_bonds = 2;
    double warming_premium_slope = 0.0;
    double initial_cash = 0.0;
};

/// Premium rate at which the insurer breaks even for intensity level `lambda`:
/// lambda * e0 * E[U].
double breakeven_premium(double lambda, const SeverityModel& severity);

/// Smallest q <= max_den with |x - p/q| <= tol, or 0 if none exists.
long long rational_denominator(double x, long long max_den = 100000, double tol = 1e-9);

/// Largest step h such that both a/h and b/h are integers (a/b rational).
double common_lattice_step(double a, double b);

}  // namespace catqvi
