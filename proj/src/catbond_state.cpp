#include "catqvi/catbond_state.hpp"

#include "catqvi/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <tuple>

namespace catqvi {

bool canonical_less(const BondSlot& a, const BondSlot& b) {
    return std::tie(a.layer, a.elapsed, a.coupon) < std::tie(b.layer, b.elapsed, b.coupon);
}

BondBook::BondBook(std::size_t capacity, std::vector<BondSlot> running) : slots_(capacity) {
    if (running.size() > capacity) throw DomainError("more running bonds than slots");
    for (std::size_t i = 0; i < running.size(); ++i) slots_[i] = std::move(running[i]);
}

std::size_t BondBook::running() const noexcept {
    return static_cast<std::size_t>(
        std::count_if(slots_.begin(), slots_.end(), [](const auto& s) { return s.has_value(); }));
}

std::vector<BondSlot> BondBook::bonds() const {
    std::vector<BondSlot> out;
    for (const auto& s : slots_) {
        if (s) out.push_back(*s);
    }
    return out;
}

double BondBook::coupon_sum() const {
    double c = 0.0;
    for (const auto& s : slots_) {
        if (s) c += s->coupon;
    }
    return c;
}

BondBook canonicalize(const BondBook& book) {
    auto running = book.bonds();
    std::stable_sort(running.begin(), running.end(), canonical_less);
    return BondBook(book.capacity(), std::move(running));
}

BondBook issue(const BondBook& book, BondSlot slot) {
    auto& slots = book.slots();
    const auto free = std::find_if(slots.begin(), slots.end(), [](const auto& s) { return !s; });
    if (free == slots.end()) {
        throw DomainError(std::to_string(book.capacity()) + " bonds already running");
    }
    BondBook out = book;
    slot.elapsed = 0.0;
    out.mutable_slots()[static_cast<std::size_t>(free - slots.begin())] = std::move(slot);
    return canonicalize(out);
}

double bond_payoff(const BondSlot& bond, double u, double t, const LayerSpec& layers) {
    const double issued = t - bond.elapsed;
    const double a = layers.attachment(bond.layer, issued);
    if (u < a) return 0.0;
    return std::min(u - a, layers.capacity(bond.layer, issued));
}

SettleResult settle_event(const BondBook& book, double u, double t, const LayerSpec& layers) {
    SettleResult r{book, {}};
    auto& slots = r.book.mutable_slots();
    for (std::size_t j = 0; j < slots.size(); ++j) {
        if (!slots[j]) continue;
        if (layers.attachment(slots[j]->layer, t - slots[j]->elapsed) <= u) {
            r.triggered.push_back(j);
            slots[j].reset();
        }
    }
    r.book = canonicalize(r.book);
    return r;
}

BondBook settle_maturity(const BondBook& book, double maturity) {
    BondBook out = book;
    for (auto& s : out.mutable_slots()) {
        if (s && s->elapsed >= maturity - kLatticeSlack * std::max(1.0, maturity)) s.reset();
    }
    return canonicalize(out);
}

BondBook advance_elapsed(const BondBook& book, double dt) {
    if (dt < 0.0) throw DomainError("advance_elapsed: dt must be nonnegative");
    BondBook out = book;
    for (auto& s : out.mutable_slots()) {
        if (s) s->elapsed += dt;
    }
    return out;
}

double total_payoff(const BondBook& book, double u, double t, const LayerSpec& layers) {
    double total = 0.0;
    for (const auto& s : book.slots()) {
        if (s) total += bond_payoff(*s, u, t, layers);
    }
    return total;
}

namespace {

double slot_norm2(const BondSlot& s) {
    double v = static_cast<double>(s.layer) * s.layer + s.coupon * s.coupon + s.elapsed * s.elapsed;
    if (s.issue_state) v += s.issue_state->x1 * s.issue_state->x1 + s.issue_state->x2 * s.issue_state->x2;
    return v;
}

double slot_diff2(const BondSlot& a, const BondSlot& b) {
    const double dk = static_cast<double>(a.layer - b.layer);
    const double dr = a.coupon - b.coupon;
    const double dl = a.elapsed - b.elapsed;
    double v = dk * dk + dr * dr + dl * dl;
    const MarketState za = a.issue_state.value_or(MarketState{});
    const MarketState zb = b.issue_state.value_or(MarketState{});
    v += (za.x1 - zb.x1) * (za.x1 - zb.x1) + (za.x2 - zb.x2) * (za.x2 - zb.x2);
    return v;
}

}  // namespace

double squared_distance(const BondBook& a, const BondBook& b) {
    if (a.capacity() != b.capacity()) throw DomainError("books of different capacity");
    double d = 0.0;
    for (std::size_t j = 0; j < a.capacity(); ++j) {
        const auto& sa = a.slots()[j];
        const auto& sb = b.slots()[j];
        if (sa && sb) {
            d += slot_diff2(*sa, *sb);
        } else if (sa) {
            d += slot_norm2(*sa) + 1.0;
        } else if (sb) {
            d += slot_norm2(*sb) + 1.0;
        }
    }
    return d;
}

double distance(const BondBook& a, const BondBook& b) { return std::sqrt(squared_distance(a, b)); }

}  // namespace catqvi
