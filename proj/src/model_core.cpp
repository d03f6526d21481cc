#include "catqvi/model_core.hpp"

#include "catqvi/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <boost/math/special_functions/beta.hpp>

namespace catqvi {

namespace {

double beta_pdf(double a, double b, double y) {
    if (y <= 0.0 || y >= 1.0) {
        if (y == 0.0 && a == 1.0) return b;
        if (y == 1.0 && b == 1.0) return a;
        return (y == 0.0 && a < 1.0) || (y == 1.0 && b < 1.0)
                   ? std::numeric_limits<double>::infinity()
                   : 0.0;
    }
    return boost::math::ibeta_derivative(a, b, y);
}

}  // namespace

double Seasonality::operator()(double t) const {
    const double tau = t - std::floor(t);
    if (tau <= d0 || tau >= d1) return 0.0;
    const double width = d1 - d0;
    const double value = beta_pdf(alpha_hat, beta_hat, (tau - d0) / width);
    return normalize_yearly ? value / width : value;
}

double Seasonality::yearly_integral() const {
    return normalize_yearly ? 1.0 : d1 - d0;
}

double Seasonality::cumulative(double t) const {
    const double years = std::floor(t);
    const double tau = t - years;
    const double y = std::clamp((tau - d0) / (d1 - d0), 0.0, 1.0);
    double partial = 0.0;
    if (y >= 1.0) {
        partial = 1.0;
    } else if (y > 0.0) {
        partial = boost::math::ibeta(alpha_hat, beta_hat, y);
    }
    return (years + partial) * yearly_integral();
}

double Seasonality::peak_location() const {
    double y = 0.5;
    if (alpha_hat > 1.0 && beta_hat > 1.0) {
        y = (alpha_hat - 1.0) / (alpha_hat + beta_hat - 2.0);
    } else if (alpha_hat <= 1.0 && beta_hat > 1.0) {
        y = 0.0;
    } else if (alpha_hat > 1.0 && beta_hat <= 1.0) {
        y = 1.0;
    }
    return d0 + y * (d1 - d0);
}

double Seasonality::max_value() const {
    if (alpha_hat < 1.0 || beta_hat < 1.0) return std::numeric_limits<double>::infinity();
    const double y = (peak_location() - d0) / (d1 - d0);
    const double value = beta_pdf(alpha_hat, beta_hat, y);
    return normalize_yearly ? value / (d1 - d0) : value;
}

IntensityModel IntensityModel::gamma_form(Seasonality season) {
    IntensityModel m;
    m.variant_ = IntensityVariant::Gamma;
    m.season_ = season;
    return m;
}

IntensityModel IntensityModel::bernoulli_form(Seasonality season, double horizon,
                                              std::vector<double> levels) {
    if (levels.empty()) throw DomainError("scenario set must not be empty");
    for (std::size_t i = 0; i < levels.size(); ++i) {
        if (levels[i] < 0.0) throw DomainError("scenario levels must be nonnegative");
        if (i > 0 && levels[i] <= levels[i - 1])
            throw DomainError("scenario levels must be strictly increasing");
    }
    if (!(horizon > 0.0)) throw DomainError("horizon must be positive");
    IntensityModel m;
    m.variant_ = IntensityVariant::Bernoulli;
    m.season_ = season;
    m.horizon_ = horizon;
    m.levels_ = std::move(levels);
    return m;
}

std::size_t IntensityModel::level_index(double lambda) const {
    for (std::size_t i = 0; i < levels_.size(); ++i) {
        if (std::abs(levels_[i] - lambda) <= 1e-12 * std::max(1.0, std::abs(lambda))) return i;
    }
    throw DomainError("intensity level " + std::to_string(lambda) +
                      " is not in the scenario set");
}

double IntensityModel::rate_unchecked(double t, double lambda) const {
    const double h = season_(t);
    if (variant_ == IntensityVariant::Gamma) return lambda * h;
    return 0.5 * h * (1.0 + std::floor(t) * lambda / horizon_);
}

double IntensityModel::rate(double t, double lambda) const {
    if (variant_ == IntensityVariant::Bernoulli) {
        (void)level_index(lambda);
    } else if (lambda < 0.0) {
        throw DomainError("intensity level must be nonnegative");
    }
    return rate_unchecked(t, lambda);
}

double IntensityModel::rate_for_level(double t, std::size_t i) const {
    return rate_unchecked(t, levels_.at(i));
}

double IntensityModel::integrated(double t, double s, double lambda) const {
    if (s <= t) return 0.0;
    if (variant_ == IntensityVariant::Gamma) return lambda * season_.integral(t, s);
    double total = 0.0;
    double a = t;
    while (a < s) {
        const double year = std::floor(a);
        const double b = std::min(s, year + 1.0);
        total += 0.5 * (1.0 + year * lambda / horizon_) * season_.integral(a, b);
        a = b;
    }
    return total;
}

double IntensityModel::majorant(double lambda, double /*horizon*/) const {
    const double hmax = season_.max_value();
    if (variant_ == IntensityVariant::Gamma) return lambda * hmax;
    return 0.5 * hmax * (1.0 + lambda);
}

double SeverityModel::quantile(double p, LossScale scale) const {
    if (!(p >= 0.0 && p < 1.0)) throw DomainError("quantile level must lie in [0, 1)");
    const double q = std::min(mu + (sigma / xi) * (std::pow(1.0 - p, -xi) - 1.0), exposure_cap);
    return scale == LossScale::Insurer ? market_share * q : q;
}

double SeverityModel::cdf(double u_industry) const {
    if (u_industry <= mu) return 0.0;
    return 1.0 - std::pow(1.0 + xi * (u_industry - mu) / sigma, -1.0 / xi);
}

double SeverityModel::exceedance(double x_insurer) const {
    const double u = x_insurer / market_share;
    if (u < mu) return 1.0;
    if (u >= exposure_cap) return 0.0;
    return std::pow(1.0 + xi * (u - mu) / sigma, -1.0 / xi);
}

double SeverityModel::density(double u_industry) const {
    if (u_industry < mu) return 0.0;
    return std::pow(1.0 + xi * (u_industry - mu) / sigma, -1.0 / xi - 1.0) / sigma;
}

double SeverityModel::mean_uncapped() const { return mu + sigma / (1.0 - xi); }

std::vector<SeverityAtom> discretize_severity(const SeverityModel& model, std::size_t n_atoms) {
    if (n_atoms == 0) throw DomainError("severity discretization needs at least one atom");
    std::vector<SeverityAtom> atoms;
    atoms.reserve(n_atoms);
    const double weight = 1.0 / static_cast<double>(n_atoms);
    const double denom = static_cast<double>(n_atoms + 1);
    for (std::size_t k = 1; k <= n_atoms; ++k) {
        atoms.push_back({model.quantile(static_cast<double>(k) / denom, LossScale::Insurer), weight});
    }
    return atoms;
}

std::vector<SeverityAtom> discretize_severity(const SeverityModel& model) {
    return discretize_severity(model, model.n_atoms);
}

double breakeven_premium(double lambda, const SeverityModel& severity) {
    return lambda * severity.market_share * severity.mean_uncapped();
}

long long rational_denominator(double x, long long max_den, double tol) {
    if (!std::isfinite(x)) return 0;
    for (long long q = 1; q <= max_den; ++q) {
        const double p = std::round(x * static_cast<double>(q));
        if (std::abs(x - p / static_cast<double>(q)) <= tol * std::max(1.0, std::abs(x))) return q;
    }
    return 0;
}

double common_lattice_step(double a, double b) {
    const long long q = rational_denominator(a / b);
    if (q == 0) throw DomainError("ratio is not a (small-denominator) rational number");
    return b / static_cast<double>(q);
}

}  // namespace catqvi
