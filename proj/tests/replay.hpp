#pragma once

#include "catqvi/config.hpp"
#include "catqvi/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

namespace catqvi::testing {

inline double premium_at(const EconomicParams& e, double t) {
    return e.premium_rate * (1.0 + e.warming_premium_slope * t / e.horizon);
}

// Classical RK4 on x1' = p(t) + r x1 - C over [a, b].
inline double rk4(double x, double a, double b, double coupons, const EconomicParams& e) {
    if (b <= a) return x;
    const int n = std::max(1, static_cast<int>(std::ceil((b - a) / 0.01)));
    const double h = (b - a) / n;
    const auto f = [&](double t, double y) { return premium_at(e, t) + e.interest * y - coupons; };
    double t = a;
    for (int i = 0; i < n; ++i) {
        const double k1 = f(t, x);
        const double k2 = f(t + h / 2, x + h / 2 * k1);
        const double k3 = f(t + h / 2, x + h / 2 * k2);
        const double k4 = f(t + h, x + h * k3);
        x += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
        t += h;
    }
    return x;
}

struct Replay {
    double final_x1 = 0.0;
    double worst_event_gap = 0.0;
    std::size_t max_running = 0;
};

// Rebuilds the cash path from the event log alone.
inline Replay replay(const PathRecord& path, const ModelBundle& b) {
    Replay out;
    std::vector<std::pair<int, double>> live;
    double x1 = path.initial.x1, t = 0.0;
    double coupons = 0.0;
    for (const auto& ev : path.events) {
        x1 = rk4(x1, t, ev.t, coupons, b.econ);
        t = ev.t;
        switch (ev.kind) {
            case EventKind::Claim: x1 += -ev.loss + ev.payoff; break;
            case EventKind::Issue:
                x1 -= b.econ.issue_cost;
                live.emplace_back(ev.layer, ev.coupon);
                break;
            case EventKind::EventSettlement:
            case EventKind::MaturitySettlement: {
                const auto it = std::find(live.begin(), live.end(), std::make_pair(ev.layer, ev.coupon));
                if (it == live.end()) throw std::runtime_error("settlement of a bond that never ran");
                live.erase(it);
                break;
            }
        }
        coupons = 0.0;
        for (const auto& l : live) coupons += l.second;
        out.max_running = std::max(out.max_running, live.size());
        out.worst_event_gap = std::max(out.worst_event_gap, std::abs(x1 - ev.x.x1) / std::max(1.0, std::abs(x1)));
    }
    out.final_x1 = rk4(x1, t, b.econ.horizon, coupons, b.econ);
    return out;
}

}  // namespace catqvi::testing
