#include "catqvi/catbond_state.hpp"
#include "catqvi/error.hpp"
#include "catqvi/market_model.hpp"

#include "support.hpp"

#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

using namespace catqvi;
using catqvi::testing::Gen;

namespace {

LayerSpec florida_layers(double warming = 0.0) {
    const std::vector<double> periods{10.0, 50.0, 200.0, 1000.0};
    return make_layers(periods, GammaPosterior{25.0, 50.0}, SeverityModel{}, IntensityModel::gamma_form({}),
                       warming, 30.0);
}

BondSlot random_slot(Gen& g) {
    BondSlot s;
    s.layer = 1 + static_cast<int>(g.index(3));
    s.coupon = std::round(g.uniform(0.0, 0.3) * 100.0) / 100.0;
    s.elapsed = std::round(g.uniform(0.0, 2.9) * 20.0) / 20.0;
    return s;
}

BondBook random_book(Gen& g, std::size_t capacity) {
    BondBook b(capacity);
    for (auto& slot : b.mutable_slots()) {
        if (g.coin(0.6)) slot = random_slot(g);
    }
    return b;
}

}  // namespace

TEST(BondBook, CountsAndCoupons) {
    const BondBook b(3, {BondSlot{1, 0.1, 0.5, {}}, BondSlot{2, 0.05, 1.0, {}}});
    EXPECT_EQ(b.capacity(), 3u);
    EXPECT_EQ(b.running(), 2u);
    EXPECT_FALSE(b.full());
    EXPECT_NEAR(b.coupon_sum(), 0.15, 1e-15);
    EXPECT_THROW(BondBook(1, {BondSlot{}, BondSlot{}}), DomainError);
}

TEST(BondBook, CanonicalizeIsIdempotentAndOrderFree) {
    Gen g(31);
    for (int c = 0; c < 500; ++c) {
        const BondBook b = random_book(g, 1 + g.index(4));
        const BondBook once = canonicalize(b);
        EXPECT_EQ(canonicalize(once), once);
        auto slots = b.slots();
        std::shuffle(slots.begin(), slots.end(), g.engine());
        BondBook shuffled(slots.size());
        shuffled.mutable_slots() = slots;
        EXPECT_EQ(canonicalize(shuffled), once);
        EXPECT_EQ(once.running(), b.running());
        bool seen_empty = false;
        for (const auto& s : once.slots()) {
            if (!s) {
                seen_empty = true;
            } else {
                EXPECT_FALSE(seen_empty) << "empty slot before a running one";
            }
        }
    }
}

TEST(BondBook, IssueFillsFirstEmptySlotAndRefusesWhenFull) {
    BondBook b(2);
    b = issue(b, BondSlot{2, 0.03, 1.7, {}});
    ASSERT_TRUE(b.slots()[0].has_value());
    EXPECT_EQ(b.slots()[0]->elapsed, 0.0);
    b = issue(b, BondSlot{1, 0.1, 0.0, {}});
    EXPECT_TRUE(b.full());
    EXPECT_THROW((void)issue(b, BondSlot{}), DomainError);
    EXPECT_THROW((void)issue(BondBook(0), BondSlot{}), DomainError);
}

TEST(Settlement, TriggersExactlyTheAttachedLayers) {
    const LayerSpec layers = florida_layers();
    const BondBook b(3, {BondSlot{1, 0.1, 0.5, {}}, BondSlot{2, 0.05, 0.5, {}}, BondSlot{3, 0.01, 0.5, {}}});
    Gen g(32);
    for (int c = 0; c < 300; ++c) {
        const double u = g.uniform(0.0, 30.0);
        const auto r = settle_event(b, u, 1.0, layers);
        std::size_t expect = 0;
        for (int k = 1; k <= 3; ++k) expect += layers.attachment(k, 0.5) <= u;
        EXPECT_EQ(r.triggered.size(), expect);
        EXPECT_EQ(r.book.running(), 3 - expect);
        double pay = 0.0;
        for (int k = 1; k <= 3; ++k) {
            pay += std::clamp(u - layers.attachment(k, 0.5), 0.0, layers.capacity(k, 0.5));
        }
        EXPECT_NEAR(total_payoff(b, u, 1.0, layers), pay, 1e-12);
    }
}

TEST(Settlement, PayoffIsCappedAtCapacity) {
    const LayerSpec layers = florida_layers();
    const BondSlot s{2, 0.05, 0.0, {}};
    EXPECT_EQ(bond_payoff(s, layers.attachment(2, 0.0) - 0.1, 0.0, layers), 0.0);
    EXPECT_NEAR(bond_payoff(s, layers.attachment(2, 0.0) + 0.7, 0.0, layers), 0.7, 1e-12);
    EXPECT_NEAR(bond_payoff(s, 1e3, 0.0, layers), layers.capacity(2, 0.0), 1e-12);
}

TEST(Settlement, ThresholdsAreFrozenAtIssueTime) {
    const LayerSpec layers = florida_layers(0.35);
    // Issued at t = 0 and observed at t = 2: the attachment stays at the t = 0 value.
    const BondSlot s{1, 0.1, 2.0, {}};
    const double a0 = layers.attachment(1, 0.0);
    EXPECT_NEAR(bond_payoff(s, a0 + 0.5, 2.0, layers), 0.5, 1e-12);
}

TEST(Settlement, MaturityRemovesExpiredBondsOnly) {
    const BondBook b(2, {BondSlot{1, 0.1, 3.0 - 1e-12, {}}, BondSlot{2, 0.05, 2.95, {}}});
    const BondBook s = settle_maturity(b, 3.0);
    EXPECT_EQ(s.running(), 1u);
    EXPECT_EQ(s.bonds().front().layer, 2);
    const BondBook a = advance_elapsed(b, 0.05);
    EXPECT_NEAR(a.bonds()[1].elapsed, 3.0, 1e-12);
}

TEST(BookMetric, IsAMetricOnRandomBooks) {
    Gen g(33);
    for (int c = 0; c < 300; ++c) {
        const std::size_t cap = 1 + g.index(3);
        const BondBook a = random_book(g, cap), b = random_book(g, cap), d = random_book(g, cap);
        EXPECT_EQ(distance(a, a), 0.0);
        EXPECT_NEAR(distance(a, b), distance(b, a), 1e-15);
        EXPECT_LE(distance(a, d), distance(a, b) + distance(b, d) + 1e-12);
        if (distance(a, b) == 0.0) {
            EXPECT_EQ(a, b);
        }
    }
}

TEST(BookMetric, AsymmetricSlotCostsItsNormPlusOne) {
    const BondBook empty(1);
    const BondBook one(1, {BondSlot{1, 0.0, 0.0, {}}});
    // (layer 1)^2 + 1 for the running indicator.
    EXPECT_NEAR(squared_distance(empty, one), 2.0, 1e-15);
}
