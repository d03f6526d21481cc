#pragma once

#include <cstddef>
#include <vector>

namespace catqvi {

/// Output process X: insurer cash (billions) and market price penalty.
struct MarketState {
    double x1 = 0.0;
    double x2 = 0.0;

    friend bool operator==(const MarketState&, const MarketState&) = default;
};

/// Occurrence-exceedance layers. `return_periods` holds K_1 < ... < K_{L+1};
/// layer k (1-based) covers [OEP(K_k), OEP(K_{k+1})]. Thresholds are insurer
/// scale, frozen at t = 0 and inflated by the deterministic warming factor.
struct LayerSpec {
    std::vector<double> return_periods{10.0, 50.0, 200.0, 1000.0};
    std::vector<double> base_oep;
    double warming_slope = 0.0;
    double horizon = 30.0;

    std::size_t layer_count() const { return return_periods.size() - 1; }

    /// 1 + warming_slope * t / T.
    double warming_factor(double t) const;

    /// OEP^t for a configured return period.
    double oep_at(double tau, double t) const;

    /// Lower bound of layer k at time t.
    double attachment(int k, double t) const;

    /// OEP(K_{k+1}) - OEP(K_k) at time t.
    double capacity(int k, double t) const;

    /// 1/K_{k+1} + (1/K_k - 1/K_{k+1}) / 2: probability-weighted layer loss
    /// fraction used to price the coupon.
    double price_weight(int k) const;

    void check_layer(int k) const;
};

}  // namespace catqvi
