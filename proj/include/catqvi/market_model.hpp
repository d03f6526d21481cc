#pragma once

// Financial layer of the Florida example: OEP curve and layers, coupon
// pricing, drift and claim jump of the output process, terminal gain.

#include "catqvi/bayes_filter.hpp"
#include "catqvi/catbond_state.hpp"
#include "catqvi/market_types.hpp"
#include "catqvi/model_core.hpp"

#include <span>

namespace catqvi {

/// P(largest insurer-scale claim of year one <= x) under the predictive law.
double yearly_max_cdf(double x, const LambdaPosterior& posterior, const SeverityModel& severity,
                      const IntensityModel& intensity);

/// (1 - 1/tau)-quantile of the largest claim of year one, insurer scale.
/// Throws DomainError for tau <= 1 and NumericalError if bisection stalls.
double oep_base(double tau, const LambdaPosterior& posterior, const SeverityModel& severity,
                const IntensityModel& intensity);

/// Layer thresholds computed once from the initial prior.
LayerSpec make_layers(std::span<const double> return_periods, const LambdaPosterior& prior,
                      const SeverityModel& severity, const IntensityModel& intensity,
                      double warming_slope, double horizon);

double oep_at(const LayerSpec& layers, double tau, double t);
double layer_capacity(const LayerSpec& layers, int k, double t);

struct CouponQuote {
    double rate = 0.0;
    bool clamped = false;   // the affine price went negative and was floored at 0
};

/// price_weight(k) * capacity(k, t) * (1 + x2 + eps).
CouponQuote coupon_rate(int k, double x2, double eps, double t, const LayerSpec& layers);

/// Time derivative of X between claims with the coupons of `book` flowing out.
MarketState drift(const MarketState& x, double t, const BondBook& book, const EconomicParams& econ);

/// Same as `drift` with the coupon total given directly.
MarketState drift(const MarketState& x, double t, double coupon_sum, const EconomicParams& econ);

/// Premium inflow rate at t, mu (1 + slope t / T).
double premium_rate(double t, const EconomicParams& econ);

/// Price-penalty increase after a claim of industry size u: scale / (1 - F(u)).
double penalty_bump(double u_industry, const SeverityModel& severity, const EconomicParams& econ);

/// Cash drops by the insurer loss, the penalty rises by penalty_bump.
MarketState claim_jump(const MarketState& x, double u_insurer, double u_industry,
                       const SeverityModel& severity, const EconomicParams& econ);

struct GainSpec {
    double risk_aversion = 1.0;
    double issue_cost = 0.0025;
    double maturity = 3.0;
    double floor = -1e300;

    static GainSpec from(const EconomicParams& econ);
};

/// max(-exp(-gamma (x1 + H0/ell * sum_running (ell - l))), C_hat).
double gain(const MarketState& x, const BondBook& book, const GainSpec& spec);

/// Gain with the remaining-maturity total sum_running (ell - l) given directly.
double gain(double x1, double remaining_maturity, const GainSpec& spec);

}  // namespace catqvi
