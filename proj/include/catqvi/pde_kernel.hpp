#pragma once

// Node update of the explicit scheme written once as a stencil: each
// candidate is a combination of next-slice nodes, reported to a sink as
// (node index, weight). The solver sums; the audit tests record the weights.

#include "catqvi/pde_solver.hpp"

#include <cmath>

namespace catqvi {

inline bool is_edge_node(const Workspace& ws, std::size_t i1) {
    return i1 == 0 || i1 + 1 == ws.x1().count;
}

/// Continuation candidate: transport along the drift (upwind), elapsed and
/// posterior advance, and the averaged claim term.
template <class Sink>
void continuation_stencil(const Workspace& ws, const StepContext& ctx, std::size_t tuple,
                          std::size_t ip, std::size_t i2, std::size_t i1, Sink&& sink) {
    const auto& econ = ws.bundle().econ;
    const std::size_t n1 = ws.x1().count;
    const std::size_t n2 = ws.x2().count;
    const double x1 = ws.x1().at(i1);
    const double x2 = ws.x2().at(i2);
    const std::size_t next_tuple = ws.advanced(tuple);

    const double mu1 = ctx.premium + econ.interest * x1 - ws.coupon_sum(tuple);
    const double mu2 = -econ.penalty_decay * x2;
    double c1 = ctx.h * std::abs(mu1) / ws.x1().step;
    double c2 = ctx.h * std::abs(mu2) / ws.x2().step;
    std::size_t up1 = i1;
    if (mu1 >= 0.0) {
        if (i1 + 1 < n1) up1 = i1 + 1;
    } else if (i1 > 0) {
        up1 = i1 - 1;
    }
    std::size_t up2 = i2;
    if (mu2 >= 0.0) {
        if (i2 + 1 < n2) up2 = i2 + 1;
    } else if (i2 > 0) {
        up2 = i2 - 1;
    }
    if (up1 == i1) c1 = 0.0;
    if (up2 == i2) c2 = 0.0;
    const double cj = ws.options().claims_enabled ? ctx.h * ctx.lam_bar[ip] : 0.0;
    const double c0 = 1.0 - c1 - c2 - cj;

    const Stencil& adv = ctx.advance[ip];
    for (std::size_t v = 0; v < adv.size; ++v) {
        const std::size_t base = ws.node_index(next_tuple, adv.index[v], 0, 0);
        const double w = adv.weight[v];
        sink(base + i2 * n1 + i1, w * c0);
        if (c1 > 0.0) sink(base + i2 * n1 + up1, w * c1);
        if (c2 > 0.0) sink(base + up2 * n1 + i1, w * c2);
    }
    if (cj <= 0.0) return;

    const std::size_t n_atoms = ws.atoms().size();
    const Stencil& jmp = ctx.jump[ip];
    for (std::size_t a = 0; a < n_atoms; ++a) {
        const std::size_t key = next_tuple * n_atoms + a;
        const std::size_t target = ctx.settle_target[key];
        const Bracket b1 = locate(ws.x1(), x1 + ctx.jump_dx1[key]);
        const Bracket& b2 = ctx.x2_target[a * n2 + i2];
        const double wa = cj * ws.atoms()[a].weight;
        const double f1 = b1.frac;
        const double f2 = b2.frac;
        for (std::size_t v = 0; v < jmp.size; ++v) {
            const std::size_t base = ws.node_index(target, jmp.index[v], b2.lo, b1.lo);
            const double w = wa * jmp.weight[v];
            sink(base, w * (1.0 - f1) * (1.0 - f2));
            sink(base + 1, w * f1 * (1.0 - f2));
            sink(base + n1, w * (1.0 - f1) * f2);
            sink(base + n1 + 1, w * f1 * f2);
        }
    }
}

/// Issuance candidate for `layer`: pay H0, draw the coupon noise, insert the
/// bond, advance time and posterior.
template <class Sink>
void issue_stencil(const Workspace& ws, const StepContext& ctx, std::size_t tuple, std::size_t ip,
                   std::size_t i2, std::size_t i1, int layer, Sink&& sink) {
    const std::size_t n2 = ws.x2().count;
    const std::size_t next_tuple = ws.advanced(tuple);
    const Bracket b1 = locate(ws.x1(), ws.x1().at(i1) - ws.bundle().econ.issue_cost);
    const std::size_t n_noise = ws.noise_atoms().size();
    const Stencil& adv = ctx.advance[ip];
    for (std::size_t e = 0; e < n_noise; ++e) {
        const Bracket& br =
            ctx.coupon_target[(static_cast<std::size_t>(layer - 1) * n_noise + e) * n2 + i2];
        const double we = ws.noise_weights()[e];
        for (std::size_t side = 0; side < 2; ++side) {
            const double wr = side == 0 ? 1.0 - br.frac : br.frac;
            if (wr <= 0.0) continue;
            const auto target = static_cast<std::size_t>(ws.inserted(next_tuple, layer, br.lo + side));
            for (std::size_t v = 0; v < adv.size; ++v) {
                const std::size_t base = ws.node_index(target, adv.index[v], i2, b1.lo);
                const double w = we * wr * adv.weight[v];
                sink(base, w * (1.0 - b1.frac));
                sink(base + 1, w * b1.frac);
            }
        }
    }
}

}  // namespace catqvi
