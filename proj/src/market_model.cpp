#include "catqvi/market_model.hpp"

#include "catqvi/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace catqvi {

double LayerSpec::warming_factor(double t) const { return 1.0 + warming_slope * t / horizon; }

double LayerSpec::oep_at(double tau, double t) const {
    for (std::size_t i = 0; i < return_periods.size(); ++i) {
        if (return_periods[i] == tau) return base_oep.at(i) * warming_factor(t);
    }
    throw DomainError("return period " + std::to_string(tau) + " is not configured");
}

void LayerSpec::check_layer(int k) const {
    if (k < 1 || static_cast<std::size_t>(k) > layer_count()) {
        throw DomainError("layer index " + std::to_string(k) + " out of range");
    }
}

double LayerSpec::attachment(int k, double t) const {
    check_layer(k);
    return base_oep[static_cast<std::size_t>(k - 1)] * warming_factor(t);
}

double LayerSpec::capacity(int k, double t) const {
    check_layer(k);
    const auto i = static_cast<std::size_t>(k - 1);
    return (base_oep[i + 1] - base_oep[i]) * warming_factor(t);
}

double LayerSpec::price_weight(int k) const {
    check_layer(k);
    const auto i = static_cast<std::size_t>(k - 1);
    const double lo = 1.0 / return_periods[i];
    const double hi = 1.0 / return_periods[i + 1];
    return hi + 0.5 * (lo - hi);
}

double yearly_max_cdf(double x, const LambdaPosterior& posterior, const SeverityModel& severity,
                      const IntensityModel& intensity) {
    const double s = x < 0.0 ? 1.0 : severity.exceedance(x);
    if (const auto* g = std::get_if<GammaPosterior>(&posterior)) {
        const double rate = s * intensity.seasonality().yearly_integral();
        return std::exp(-g->alpha * std::log1p(rate / g->beta));
    }
    const auto& w = std::get<ScenarioWeights>(posterior).weights;
    const auto levels = intensity.levels();
    double p = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        p += w[i] * std::exp(-s * intensity.integrated(0.0, 1.0, levels[i]));
    }
    return p;
}

double oep_base(double tau, const LambdaPosterior& posterior, const SeverityModel& severity,
                const IntensityModel& intensity) {
    if (!(tau > 1.0)) throw DomainError("return period must exceed 1");
    const double level = 1.0 - 1.0 / tau;
    const auto cdf = [&](double x) { return yearly_max_cdf(x, posterior, severity, intensity); };
    if (cdf(0.0) >= level) return 0.0;
    double lo = severity.market_share * severity.mu;
    double hi = severity.market_share * severity.exposure_cap;
    if (cdf(lo) >= level) return lo;
    for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double p = cdf(mid);
        if (!std::isfinite(p)) throw NumericalError("OEP bisection hit a non-finite probability");
        (p >= level ? hi : lo) = mid;
    }
    if (hi - lo > 1e-9) throw NumericalError("OEP bisection did not converge");
    return hi;
}

LayerSpec make_layers(std::span<const double> return_periods, const LambdaPosterior& prior,
                      const SeverityModel& severity, const IntensityModel& intensity,
                      double warming_slope, double horizon) {
    if (return_periods.size() < 2) throw DomainError("at least two return periods are required");
    LayerSpec spec;
    spec.return_periods.assign(return_periods.begin(), return_periods.end());
    spec.warming_slope = warming_slope;
    spec.horizon = horizon;
    for (std::size_t i = 0; i < return_periods.size(); ++i) {
        if (!(return_periods[i] > 1.0)) throw DomainError("return periods must exceed 1");
        if (i > 0 && return_periods[i] <= return_periods[i - 1]) {
            throw DomainError("return periods must be strictly increasing");
        }
        spec.base_oep.push_back(oep_base(return_periods[i], prior, severity, intensity));
        if (i > 0 && spec.base_oep[i] <= spec.base_oep[i - 1]) {
            throw DomainError("OEP thresholds are not strictly increasing in the return period");
        }
    }
    return spec;
}

double oep_at(const LayerSpec& layers, double tau, double t) { return layers.oep_at(tau, t); }

double layer_capacity(const LayerSpec& layers, int k, double t) { return layers.capacity(k, t); }

CouponQuote coupon_rate(int k, double x2, double eps, double t, const LayerSpec& layers) {
    const double rate = layers.price_weight(k) * layers.capacity(k, t) * (1.0 + x2 + eps);
    if (rate < 0.0) return {0.0, true};
    return {rate, false};
}

double premium_rate(double t, const EconomicParams& econ) {
    return econ.premium_rate * (1.0 + econ.warming_premium_slope * t / econ.horizon);
}

MarketState drift(const MarketState& x, double t, double coupon_sum, const EconomicParams& econ) {
    return {premium_rate(t, econ) + econ.interest * x.x1 - coupon_sum, -econ.penalty_decay * x.x2};
}

MarketState drift(const MarketState& x, double t, const BondBook& book, const EconomicParams& econ) {
    return drift(x, t, book.coupon_sum(), econ);
}

double penalty_bump(double u_industry, const SeverityModel& severity, const EconomicParams& econ) {
    return econ.penalty_bump_scale / (1.0 - severity.cdf(u_industry));
}

MarketState claim_jump(const MarketState& x, double u_insurer, double u_industry,
                       const SeverityModel& severity, const EconomicParams& econ) {
    if (!(u_industry > severity.mu)) {
        throw DomainError("claim below the modeling threshold");
    }
    if (std::abs(u_insurer - severity.market_share * u_industry) >
        1e-9 * std::max(1.0, std::abs(u_insurer))) {
        throw DomainError("insurer loss is not the market share of the industry loss");
    }
    return {x.x1 - u_insurer, x.x2 + penalty_bump(u_industry, severity, econ)};
}

GainSpec GainSpec::from(const EconomicParams& econ) {
    return {econ.risk_aversion, econ.issue_cost, econ.maturity, econ.gain_floor};
}

double gain(double x1, double remaining_maturity, const GainSpec& spec) {
    const double exponent = -spec.risk_aversion * (x1 + spec.issue_cost / spec.maturity * remaining_maturity);
    if (exponent >= std::log(-spec.floor)) return spec.floor;
    return -std::exp(exponent);
}

double gain(const MarketState& x, const BondBook& book, const GainSpec& spec) {
    double remaining = 0.0;
    for (const auto& s : book.slots()) {
        if (s) remaining += spec.maturity - s->elapsed;
    }
    return gain(x.x1, remaining, spec);
}

}  // namespace catqvi
