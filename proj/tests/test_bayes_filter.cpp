#include "catqvi/bayes_filter.hpp"
#include "catqvi/error.hpp"

#include "support.hpp"

#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

using namespace catqvi;
using catqvi::testing::Gen;

namespace {

std::vector<double> event_log(Gen& g, double horizon, std::size_t n) {
    std::vector<double> t;
    const Seasonality s;
    while (t.size() < n) {
        const double c = g.uniform(0.0, horizon);
        if (s(c) > 0.0) t.push_back(c);
    }
    std::sort(t.begin(), t.end());
    return t;
}

}  // namespace

TEST(GammaPosterior, AdvanceAddsIntegratedSeasonalityToRate) {
    const auto m = IntensityModel::gamma_form({});
    const GammaPosterior p{25.0, 50.0};
    const auto q = gamma_advance(p, 0.2, 2.7, m);
    EXPECT_EQ(q.alpha, 25.0);
    EXPECT_NEAR(q.beta, 50.0 + m.seasonality().integral(0.2, 2.7), 1e-12);
    const auto j = gamma_jump(q);
    EXPECT_EQ(j.alpha, 26.0);
    EXPECT_EQ(j.beta, q.beta);
}

TEST(GammaPosterior, EmptyIntervalIsIdentity) {
    const auto m = IntensityModel::gamma_form({});
    const GammaPosterior p{3.0, 4.0};
    const auto q = gamma_advance(p, 1.5, 1.5, m);
    EXPECT_EQ(q.alpha, p.alpha);
    EXPECT_EQ(q.beta, p.beta);
}

TEST(GammaPosterior, AdvanceComposes) {
    const auto m = IntensityModel::gamma_form({});
    Gen g(21);
    for (int i = 0; i < 100; ++i) {
        const double a = g.uniform(0.0, 5.0), b = a + g.uniform(0.0, 2.0), c = b + g.uniform(0.0, 2.0);
        const GammaPosterior p{g.uniform(1.0, 40.0), g.uniform(1.0, 60.0)};
        const auto two = gamma_advance(gamma_advance(p, a, b, m), b, c, m);
        const auto one = gamma_advance(p, a, c, m);
        EXPECT_NEAR(two.beta, one.beta, 1e-12 * one.beta);
    }
}

TEST(GammaPosterior, MatchesGridOracleOnRandomLogs) {
    const auto m = IntensityModel::gamma_form({});
    Gen g(22);
    for (int c = 0; c < 5; ++c) {
        const double horizon = g.uniform(1.0, 6.0);
        const auto events = event_log(g, horizon, 1 + g.index(6));
        GammaPosterior post{25.0, 50.0};
        auto grid = GridPosterior::discretized_gamma(25.0, 50.0, 1e-6, 2.5, 4001);
        double t = 0.0;
        for (double z : events) {
            post = gamma_jump(gamma_advance(post, t, z, m));
            grid = grid_jump(grid_advance(grid, t, z, m), z, m);
            t = z;
            EXPECT_NEAR(grid.mean(), post.mean(), 1e-5 * post.mean());
            EXPECT_NEAR(std::sqrt(grid.variance()), post.sd(), 1e-5 * post.sd());
        }
    }
}

TEST(ScenarioWeights, ClosedFormEqualsSequentialUpdates) {
    const auto m = IntensityModel::bernoulli_form({}, 30.0, {0.2, 0.3, 0.4});
    Gen g(23);
    for (int c = 0; c < 10; ++c) {
        const auto events = event_log(g, 30.0, 10 + g.index(20));
        ScenarioWeights w = ScenarioWeights::uniform(3);
        double t = 0.0;
        for (double z : events) {
            w = scenario_jump(scenario_advance(w, t, z, m), z, m);
            t = z;
        }
        w = scenario_advance(w, t, 30.0, m);

        // Likelihood product in closed form: prod Lambda(z_j) * exp(-int Lambda).
        std::vector<double> logw(3);
        for (std::size_t i = 0; i < 3; ++i) {
            logw[i] = -m.integrated(0.0, 30.0, m.levels()[i]);
            for (double z : events) logw[i] += std::log(m.rate_for_level(z, i));
        }
        const double top = *std::max_element(logw.begin(), logw.end());
        double total = 0.0;
        for (double& l : logw) total += (l = std::exp(l - top));
        for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(w.weights[i], logw[i] / total, 1e-12);
    }
}

TEST(ScenarioWeights, AgreesWithGridOnTheScenarioSupport) {
    const auto m = IntensityModel::bernoulli_form({}, 30.0, {0.2, 0.3, 0.4});
    GridPosterior grid{{0.2, 0.3, 0.4}, {0.2, 0.5, 0.3}};
    ScenarioWeights w{{0.2, 0.5, 0.3}};
    Gen g(24);
    const auto events = event_log(g, 10.0, 12);
    double t = 0.0;
    for (double z : events) {
        w = scenario_jump(scenario_advance(w, t, z, m), z, m);
        grid = grid_jump(grid_advance(grid, t, z, m), z, m);
        t = z;
        for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(w.weights[i], grid.weights[i], 1e-12);
    }
}

TEST(ScenarioWeights, StayOnTheSimplex) {
    const auto m = IntensityModel::bernoulli_form({}, 30.0, {0.2, 0.3, 0.4});
    Gen g(25);
    for (int c = 0; c < 200; ++c) {
        ScenarioWeights w{{g.uniform(0.01, 1.0), g.uniform(0.01, 1.0), g.uniform(0.01, 1.0)}};
        normalize_weights(w.weights, "test");
        const double a = g.uniform(0.0, 29.0);
        w = scenario_advance(w, a, a + g.uniform(0.0, 1.0), m);
        double s = 0.0;
        for (double x : w.weights) {
            EXPECT_GE(x, 0.0);
            s += x;
        }
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(Posterior, NoEventsLowersTheGammaMean) {
    const auto m = IntensityModel::gamma_form({});
    LambdaPosterior p = GammaPosterior{25.0, 50.0};
    double last = std::get<GammaPosterior>(p).mean();
    for (int k = 1; k <= 40; ++k) {
        p = advance(p, (k - 1) * 0.25, k * 0.25, m);
        const double mean = std::get<GammaPosterior>(p).mean();
        EXPECT_LE(mean, last);
        last = mean;
    }
    EXPECT_NEAR(last, 25.0 / 60.0, 1e-12);
}

TEST(Posterior, OneEventPerYearAtRateMatchingKeepsMeanNearPrior) {
    // With yearly-normalized seasonality each year adds one to beta; one claim
    // per year adds one to alpha, so the mean drifts from a/b to (a+n)/(b+n).
    const auto m = IntensityModel::gamma_form({});
    LambdaPosterior p = GammaPosterior{25.0, 50.0};
    double t = 0.0;
    for (int y = 0; y < 10; ++y) {
        const double z = y + m.seasonality().peak_location();
        p = jump(advance(p, t, z, m), z, m);
        t = z;
    }
    p = advance(p, t, 10.0, m);
    EXPECT_NEAR(std::get<GammaPosterior>(p).mean(), 35.0 / 60.0, 1e-12);
}

TEST(MarkPosterior, UpdateNormalizesAndRejectsZeroMass) {
    const FiniteSupportPosterior p{{1.0, 2.0}, {0.5, 0.5}};
    const std::vector<double> lik{1.0, 3.0};
    const auto q = mark_jump_update(p, lik);
    EXPECT_NEAR(q.weights[0], 0.25, 1e-15);
    EXPECT_NEAR(q.weights[1], 0.75, 1e-15);
    const std::vector<double> zero{0.0, 0.0};
    EXPECT_THROW((void)mark_jump_update(p, zero), NumericalError);
}

TEST(MeanIntensity, MatchesPosteriorMeanTimesSeasonality) {
    const auto m = IntensityModel::gamma_form({});
    const GammaPosterior p{30.0, 50.0};
    EXPECT_NEAR(mean_intensity(p, 0.7, m), 0.6 * m.seasonality()(0.7), 1e-14);
    const auto b = IntensityModel::bernoulli_form({}, 30.0, {0.2, 0.3, 0.4});
    const ScenarioWeights w{{0.0, 1.0, 0.0}};
    EXPECT_NEAR(mean_intensity(w, 5.7, b), b.rate(5.7, 0.3), 1e-14);
}
