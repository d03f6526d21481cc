#include "catqvi/error.hpp"
#include "catqvi/market_model.hpp"

#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

using namespace catqvi;
using catqvi::testing::Gen;

namespace {

const std::vector<double> kPeriods{10.0, 50.0, 200.0, 1000.0};

LayerSpec layers_with(double warming) {
    return make_layers(kPeriods, GammaPosterior{25.0, 50.0}, SeverityModel{}, IntensityModel::gamma_form({}),
                       warming, 30.0);
}

// P(max <= x) when the yearly count is Poisson(lambda), lambda ~ Gamma(a, b):
// the Gamma Laplace transform evaluated at the exceedance probability.
double gamma_poisson_max_cdf(double x, double a, double b, const SeverityModel& s) {
    const double p = std::pow(1.0 + s.xi * (10.0 * x - s.mu) / s.sigma, -1.0 / s.xi);
    return std::pow(b / (b + p), a);
}

}  // namespace

TEST(Oep, YearlyMaxCdfHasTheGammaPoissonClosedForm) {
    const SeverityModel s;
    const auto m = IntensityModel::gamma_form({});
    Gen g(41);
    for (int i = 0; i < 200; ++i) {
        const double x = g.uniform(0.06, 50.0);
        EXPECT_NEAR(yearly_max_cdf(x, GammaPosterior{25.0, 50.0}, s, m), gamma_poisson_max_cdf(x, 25.0, 50.0, s),
                    1e-12);
    }
}

TEST(Oep, FloridaThresholdsAtDefaultPeriods) {
    const std::vector<double> expect{1.23, 4.0, 9.0, 21.5};
    const auto layers = layers_with(0.0);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_NEAR(layers.base_oep[i], expect[i], 0.02 * expect[i]) << "tau=" << kPeriods[i];
        const double level = 1.0 - 1.0 / kPeriods[i];
        EXPECT_NEAR(gamma_poisson_max_cdf(layers.base_oep[i], 25.0, 50.0, SeverityModel{}), level, 1e-10);
    }
}

TEST(Oep, ThresholdIncreasesWithReturnPeriod) {
    const SeverityModel s;
    const auto m = IntensityModel::gamma_form({});
    Gen g(42);
    for (int i = 0; i < 50; ++i) {
        const double a = g.uniform(1.5, 500.0);
        const double b = a * g.uniform(1.01, 3.0);
        EXPECT_LT(oep_base(a, GammaPosterior{25.0, 50.0}, s, m), oep_base(b, GammaPosterior{25.0, 50.0}, s, m));
    }
}

TEST(Oep, RejectsReturnPeriodsAtMostOne) {
    const SeverityModel s;
    const auto m = IntensityModel::gamma_form({});
    EXPECT_THROW((void)oep_base(1.0, GammaPosterior{}, s, m), DomainError);
    EXPECT_THROW((void)oep_base(0.5, GammaPosterior{}, s, m), DomainError);
}

TEST(Oep, WarmingInflatesThresholdsLinearly) {
    const auto layers = layers_with(0.35);
    EXPECT_NEAR(layers.oep_at(50.0, 30.0) / layers.oep_at(50.0, 0.0), 1.35, 1e-14);
    EXPECT_NEAR(layers.warming_factor(15.0), 1.175, 1e-14);
    EXPECT_THROW((void)layers.oep_at(20.0, 0.0), DomainError);
}

TEST(Oep, ScenarioPriorMatchesMixtureOfPoissonLaws) {
    const SeverityModel s;
    const auto m = IntensityModel::bernoulli_form({}, 30.0, {0.2, 0.3, 0.4});
    const ScenarioWeights w{{0.2, 0.5, 0.3}};
    const double x = 3.0;
    const double p = s.exceedance(x);
    double expect = 0.0;
    for (std::size_t i = 0; i < 3; ++i) expect += w.weights[i] * std::exp(-p * m.integrated(0.0, 1.0, m.levels()[i]));
    EXPECT_NEAR(yearly_max_cdf(x, w, s, m), expect, 1e-14);
}

TEST(Oep, ClosedFormInsideMonteCarloConfidenceBand) {
    // 2e5 simulated years: lambda ~ Gamma, count ~ Poisson, max of GPD draws.
    const SeverityModel s;
    std::mt19937_64 rng(4242);
    std::gamma_distribution<double> lam(25.0, 1.0 / 50.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const std::size_t years = 200000;
    std::vector<double> max_loss(years, 0.0);
    for (auto& m : max_loss) {
        std::poisson_distribution<int> count(lam(rng));
        for (int k = count(rng); k > 0; --k) m = std::max(m, s.quantile(unif(rng), LossScale::Insurer));
    }
    std::sort(max_loss.begin(), max_loss.end());
    const auto layers = layers_with(0.0);
    for (std::size_t i = 0; i < 3; ++i) {
        const double p = 1.0 - 1.0 / kPeriods[i];
        const double half = 2.576 * std::sqrt(years * p * (1 - p));
        const auto lo = static_cast<std::size_t>(std::floor(years * p - half));
        const auto hi = static_cast<std::size_t>(std::ceil(years * p + half));
        EXPECT_GE(layers.base_oep[i], max_loss[lo]) << "tau=" << kPeriods[i];
        EXPECT_LE(layers.base_oep[i], max_loss[std::min(hi, years - 1)]) << "tau=" << kPeriods[i];
    }
}

TEST(Coupon, PriceWeightsAndAffineQuote) {
    const auto layers = layers_with(0.0);
    EXPECT_NEAR(layers.price_weight(1), 0.06, 1e-15);
    EXPECT_NEAR(layers.price_weight(2), 0.0125, 1e-15);
    EXPECT_NEAR(layers.price_weight(3), 0.003, 1e-15);
    Gen g(43);
    for (int i = 0; i < 100; ++i) {
        const int k = 1 + static_cast<int>(g.index(3));
        const double x2 = g.uniform(0.0, 3.0), eps = g.uniform(-0.2, 0.2), t = g.uniform(0.0, 30.0);
        const auto q = coupon_rate(k, x2, eps, t, layers);
        EXPECT_NEAR(q.rate, layers.price_weight(k) * layers.capacity(k, t) * (1 + x2 + eps), 1e-14);
        EXPECT_FALSE(q.clamped);
    }
    const auto neg = coupon_rate(1, 0.0, -1.5, 0.0, layers);
    EXPECT_EQ(neg.rate, 0.0);
    EXPECT_TRUE(neg.clamped);
    EXPECT_THROW((void)coupon_rate(4, 0.0, 0.0, 0.0, layers), DomainError);
}

TEST(Drift, PremiumAtEmptyBookAndOrigin) {
    const EconomicParams e;
    const MarketState d = drift(MarketState{0.0, 0.0}, 0.0, BondBook(2), e);
    EXPECT_EQ(d.x1, 0.6825);
    EXPECT_EQ(d.x2, 0.0);
}

TEST(Drift, LinearInCashPenaltyAndCoupons) {
    EconomicParams e;
    e.warming_premium_slope = 0.35;
    Gen g(44);
    for (int i = 0; i < 100; ++i) {
        const MarketState x{g.uniform(-10.0, 10.0), g.uniform(0.0, 3.0)};
        const double t = g.uniform(0.0, 30.0), c = g.uniform(0.0, 0.5);
        const MarketState d = drift(x, t, c, e);
        EXPECT_NEAR(d.x1, 0.6825 * (1 + 0.35 * t / 30.0) + 0.01 * x.x1 - c, 1e-13);
        EXPECT_NEAR(d.x2, -2.0 * x.x2, 1e-14);
    }
}

TEST(ClaimJump, CashDropsAndPenaltyRises) {
    const SeverityModel s;
    const EconomicParams e;
    const MarketState x = claim_jump({1.0, 0.2}, 2.2, 22.0, s, e);
    EXPECT_NEAR(x.x1, -1.2, 1e-14);
    EXPECT_NEAR(x.x2, 0.2 + 0.05 / (1.0 - s.cdf(22.0)), 1e-12);
    EXPECT_THROW((void)claim_jump({}, 0.04, 0.4, s, e), DomainError);
    EXPECT_THROW((void)claim_jump({}, 1.0, 22.0, s, e), DomainError);
}

TEST(Gain, CaraWithIssueCostCompensationAndFloor) {
    GainSpec spec{1.0, 0.0025, 3.0, -50.0};
    EXPECT_NEAR(gain(0.0, 0.0, spec), -1.0, 1e-15);
    EXPECT_NEAR(gain(1.0, 1.5, spec), -std::exp(-(1.0 + 0.0025 / 3.0 * 1.5)), 1e-15);
    EXPECT_EQ(gain(-10.0, 0.0, spec), -50.0);
    Gen g(45);
    for (int i = 0; i < 200; ++i) {
        const double a = g.uniform(-10.0, 10.0), b = a + g.uniform(0.0, 2.0);
        EXPECT_LE(gain(a, 0.0, spec), gain(b, 0.0, spec));
        EXPECT_LE(gain(a, 0.0, spec), 0.0);
        EXPECT_GE(gain(a, 0.0, spec), spec.floor);
    }
}
