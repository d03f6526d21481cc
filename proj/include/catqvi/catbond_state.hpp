#pragma once

// Running CAT bonds. A book has kappa slots; each slot is either empty or
// holds one bond (layer, coupon rate, elapsed time). Books are stored in
// canonical order so that any two permutations of the same set of bonds are
// the same value.

#include "catqvi/market_types.hpp"

#include <optional>
#include <vector>

namespace catqvi {

struct BondSlot {
    int layer = 1;          // 1-based layer index
    double coupon = 0.0;    // cash per year
    double elapsed = 0.0;   // years since issue, in [0, maturity)
    std::optional<MarketState> issue_state;

    friend bool operator==(const BondSlot&, const BondSlot&) = default;
};

/// Strict weak order used for canonical storage: (layer, elapsed, coupon).
bool canonical_less(const BondSlot& a, const BondSlot& b);

class BondBook {
public:
    BondBook() = default;
    explicit BondBook(std::size_t capacity) : slots_(capacity) {}
    BondBook(std::size_t capacity, std::vector<BondSlot> running);

    std::size_t capacity() const noexcept { return slots_.size(); }
    std::size_t running() const noexcept;
    bool full() const noexcept { return running() == capacity(); }
    bool empty() const noexcept { return running() == 0; }

    const std::vector<std::optional<BondSlot>>& slots() const noexcept { return slots_; }
    std::vector<std::optional<BondSlot>>& mutable_slots() noexcept { return slots_; }

    /// Running slots in stored order.
    std::vector<BondSlot> bonds() const;

    double coupon_sum() const;

    friend bool operator==(const BondBook&, const BondBook&) = default;

private:
    std::vector<std::optional<BondSlot>> slots_;
};

/// Running slots sorted by (layer, elapsed, coupon), empties last. Idempotent.
BondBook canonicalize(const BondBook& book);

/// Places `slot` (elapsed reset to 0) in the first empty slot. Throws
/// DomainError when kappa bonds are already running.
BondBook issue(const BondBook& book, BondSlot slot);

struct SettleResult {
    BondBook book;
    std::vector<std::size_t> triggered;   // slot indices of the input book
};

/// Empties every running slot whose attachment (evaluated at its issue time
/// t - elapsed) is at most the insurer-scale loss `u`.
SettleResult settle_event(const BondBook& book, double u, double t, const LayerSpec& layers);

/// Empties slots whose elapsed time reached `maturity` (up to lattice round-off).
BondBook settle_maturity(const BondBook& book, double maturity);

BondBook advance_elapsed(const BondBook& book, double dt);

/// Sum over triggered bonds of min((u - a)^+, capacity), both taken at issue time.
double total_payoff(const BondBook& book, double u, double t, const LayerSpec& layers);

/// Payoff of one bond at loss u observed at time t.
double bond_payoff(const BondSlot& bond, double u, double t, const LayerSpec& layers);

/// The book metric before the square root: squared coordinate differences on
/// slots running in both books, squared norms of slots running in only one,
/// plus the number of such asymmetric slots.
double squared_distance(const BondBook& a, const BondBook& b);

/// sqrt(squared_distance): the Euclidean distance of the embedding
/// slot -> (layer, coupon, issue state, elapsed, 1), empty -> 0.
double distance(const BondBook& a, const BondBook& b);

/// Slack used when comparing elapsed times against the maturity.
inline constexpr double kLatticeSlack = 1e-9;

}  // namespace catqvi
