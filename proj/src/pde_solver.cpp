#include "catqvi/pde_solver.hpp"

#include "catqvi/error.hpp"
#include "catqvi/market_model.hpp"
#include "catqvi/pde_kernel.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>

namespace catqvi {

Axis Axis::from_range(std::string name, const AxisRange& r) {
    return Axis{std::move(name), r.min, r.step, r.count()};
}

Bracket locate(const Axis& axis, double x) {
    Bracket b;
    if (axis.count < 2) return b;
    double pos = (x - axis.min) / axis.step;
    const double top = static_cast<double>(axis.count - 1);
    const double snapped = std::round(pos);
    if (std::abs(pos - snapped) < 1e-9) pos = snapped;
    if (pos <= 0.0) {
        b.clamped = pos < 0.0;
        return b;
    }
    if (pos >= top) {
        b.clamped = pos > top;
        b.lo = axis.count - 2;
        b.frac = 1.0;
        return b;
    }
    b.lo = std::min(static_cast<std::size_t>(pos), axis.count - 2);
    b.frac = pos - static_cast<double>(b.lo);
    return b;
}

double upwind_derivative(std::span<const double> values, std::size_t offset, std::size_t stride,
                         std::size_t count, std::size_t index, double step, double velocity) {
    const auto at = [&](std::size_t i) { return values[offset + i * stride]; };
    if (velocity >= 0.0) {
        if (index + 1 >= count) return 0.0;
        return (at(index + 1) - at(index)) / step;
    }
    if (index == 0) return 0.0;
    return (at(index) - at(index - 1)) / step;
}

double lambda_bar(double t, double h, const GammaPosterior& post, const IntensityModel& model) {
    return post.alpha / post.beta * model.seasonality().integral(t, t + h) / h;
}

double lambda_bar(double t, double h, const ScenarioWeights& w, const IntensityModel& model) {
    const auto levels = model.levels();
    double total = 0.0;
    for (std::size_t i = 0; i < w.weights.size(); ++i) {
        total += w.weights[i] * model.integrated(t, t + h, levels[i]);
    }
    return total / h;
}

GridInterpolation interpolate(std::span<const double> values, std::span<const Axis> axes,
                              std::span<const double> point) {
    if (axes.size() != point.size()) throw DomainError("interpolate: point dimension mismatch");
    const std::size_t d = axes.size();
    std::vector<Bracket> br(d);
    std::vector<std::size_t> stride(d, 1);
    GridInterpolation out;
    for (std::size_t k = d; k-- > 0;) {
        br[k] = locate(axes[k], point[k]);
        out.clamped = out.clamped || br[k].clamped;
        if (k + 1 < d) stride[k] = stride[k + 1] * axes[k + 1].count;
    }
    for (std::size_t corner = 0; corner < (std::size_t{1} << d); ++corner) {
        double w = 1.0;
        std::size_t idx = 0;
        for (std::size_t k = 0; k < d; ++k) {
            const bool upper = (corner >> k) & 1U;
            if (axes[k].count < 2) {
                if (upper) w = 0.0;
                continue;
            }
            w *= upper ? br[k].frac : 1.0 - br[k].frac;
            idx += (br[k].lo + (upper ? 1 : 0)) * stride[k];
        }
        if (w <= 0.0) continue;
        out.weights.emplace_back(idx, w);
        out.value += w * values[idx];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Prior lattice

PriorLattice PriorLattice::gamma(Axis alpha, double beta0, Seasonality season) {
    PriorLattice p;
    p.variant_ = IntensityVariant::Gamma;
    p.alpha_ = std::move(alpha);
    p.size_ = p.alpha_.count;
    p.beta0_ = beta0;
    p.season_ = season;
    return p;
}

PriorLattice PriorLattice::simplex(std::size_t levels, std::size_t divisions) {
    if (levels == 0 || divisions == 0) throw DomainError("simplex lattice needs levels and divisions");
    PriorLattice p;
    p.variant_ = IntensityVariant::Bernoulli;
    p.levels_ = levels;
    p.divisions_ = divisions;
    const std::size_t dims = levels - 1;
    std::size_t table_size = 1;
    for (std::size_t i = 0; i < dims; ++i) table_size *= divisions + 1;
    p.table_.assign(table_size, -1);
    std::vector<std::uint16_t> c(dims, 0);
    // Nondecreasing sequences 0 <= c_1 <= ... <= c_dims <= m in lexicographic order.
    std::function<void(std::size_t, std::uint16_t)> rec = [&](std::size_t j, std::uint16_t lo) {
        if (j == dims) {
            p.table_[p.table_index(c)] = static_cast<std::int32_t>(p.cumulative_.size());
            p.cumulative_.push_back(c);
            return;
        }
        for (std::uint16_t v = lo; v <= divisions; ++v) {
            c[j] = v;
            rec(j + 1, v);
        }
    };
    rec(0, 0);
    p.size_ = p.cumulative_.size();
    return p;
}

std::size_t PriorLattice::table_index(std::span<const std::uint16_t> c) const {
    std::size_t idx = 0;
    for (std::size_t j = 0; j < c.size(); ++j) idx = idx * (divisions_ + 1) + c[j];
    return idx;
}

double PriorLattice::beta_at(double t) const { return beta0_ + season_.cumulative(t); }

std::vector<double> PriorLattice::weights_at(std::size_t i) const {
    const auto& c = cumulative_.at(i);
    const double m = static_cast<double>(divisions_);
    std::vector<double> w(levels_);
    double prev = 0.0;
    for (std::size_t j = 0; j + 1 < levels_; ++j) {
        w[j] = (c[j] - prev) / m;
        prev = c[j];
    }
    w[levels_ - 1] = (m - prev) / m;
    return w;
}

LambdaPosterior PriorLattice::posterior_at(std::size_t i, double t) const {
    if (variant_ == IntensityVariant::Gamma) return GammaPosterior{alpha_at(i), beta_at(t)};
    return ScenarioWeights{weights_at(i)};
}

Stencil PriorLattice::stencil_alpha(double alpha, bool* clamped) const {
    Stencil s;
    const Bracket b = locate(alpha_, alpha);
    if (clamped) *clamped = b.clamped;
    if (alpha_.count < 2) {
        s.add(0, 1.0);
        return s;
    }
    if (b.frac < 1.0) s.add(static_cast<std::uint32_t>(b.lo), 1.0 - b.frac);
    if (b.frac > 0.0) s.add(static_cast<std::uint32_t>(b.lo + 1), b.frac);
    return s;
}

Stencil PriorLattice::stencil_weights(std::span<const double> w) const {
    Stencil s;
    if (w.size() != levels_) throw DomainError("weight vector does not match the scenario count");
    const std::size_t dims = levels_ - 1;
    if (dims == 0) {
        s.add(0, 1.0);
        return s;
    }
    if (dims + 1 > s.index.size()) throw DomainError("too many scenario levels for the lattice");
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    if (!(total > 0.0)) throw NumericalError("scenario weights have no mass");
    const double m = static_cast<double>(divisions_);
    std::vector<double> y(dims);
    std::vector<std::uint16_t> base(dims);
    std::vector<double> frac(dims);
    double run = 0.0;
    for (std::size_t j = 0; j < dims; ++j) {
        run += std::max(w[j], 0.0) / total;
        double v = std::clamp(run * m, 0.0, m);
        if (std::abs(v - std::round(v)) < 1e-9) v = std::round(v);
        y[j] = v;
        const double fl = std::min(std::floor(v), m - 1.0);
        base[j] = static_cast<std::uint16_t>(fl);
        frac[j] = v - fl;
    }
    std::vector<std::size_t> order(dims);
    std::iota(order.begin(), order.end(), 0);
    // Descending fractions; ties put the later coordinate first so every vertex stays monotone.
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (frac[a] != frac[b]) return frac[a] > frac[b];
        return a > b;
    });
    std::vector<std::uint16_t> vertex = base;
    const auto emit = [&](double weight) {
        if (weight <= 0.0) return;
        const std::int32_t node = table_[table_index(vertex)];
        if (node < 0) throw NumericalError("simplex interpolation left the lattice");
        s.add(static_cast<std::uint32_t>(node), weight);
    };
    emit(1.0 - frac[order[0]]);
    for (std::size_t k = 0; k < dims; ++k) {
        vertex[order[k]] += 1;
        const double next = k + 1 < dims ? frac[order[k + 1]] : 0.0;
        emit(frac[order[k]] - next);
    }
    return s;
}

Stencil PriorLattice::stencil(const LambdaPosterior& post, bool* clamped) const {
    if (variant_ == IntensityVariant::Gamma) {
        const auto* g = std::get_if<GammaPosterior>(&post);
        if (!g) throw DomainError("Gamma lattice queried with scenario weights");
        return stencil_alpha(g->alpha, clamped);
    }
    const auto* s = std::get_if<ScenarioWeights>(&post);
    if (!s) throw DomainError("scenario lattice queried with a Gamma posterior");
    if (clamped) *clamped = false;
    return stencil_weights(s->weights);
}

std::size_t PriorLattice::nearest(const LambdaPosterior& post, bool* clamped) const {
    const Stencil s = stencil(post, clamped);
    std::size_t best = 0;
    for (std::size_t v = 1; v < s.size; ++v) {
        if (s.weight[v] > s.weight[best]) best = v;
    }
    return s.index[best];
}

// ---------------------------------------------------------------------------
// Reports

nlohmann::json CflReport::to_json() const {
    return {{"ok", ok},
            {"max_ratio", max_ratio},
            {"worst_node", {{"t", t}, {"x1", x1}, {"x2", x2}, {"coupon_sum", coupon_sum},
                            {"prior_node", prior_node}, {"lambda_bar", lambda_bar}}},
            {"h_time", h_time},
            {"required_h_time", required_h}};
}

nlohmann::json CoverageReport::to_json() const {
    return {{"x1_box", {x1_min, x1_max}},
            {"max_jump", max_jump},
            {"max_drift_speed", max_drift_speed},
            {"horizon", horizon},
            {"x1_safe_region", {safe_min, safe_max}},
            {"x1_safe_region_empty", safe_min > safe_max},
            {"x2_top", x2_top},
            {"max_bump", max_bump}};
}

// ---------------------------------------------------------------------------
// Workspace

namespace {

std::size_t checked_ratio(double a, double b, const char* what) {
    const double r = a / b;
    const double n = std::round(r);
    if (std::abs(r - n) > 1e-9 * std::max(1.0, r) || n < 1.0) {
        throw ConfigError("grid.h_time", std::string(what) + " / h_time must be a positive integer");
    }
    return static_cast<std::size_t>(n);
}

}  // namespace

std::shared_ptr<const Workspace> Workspace::build(const ModelBundle& bundle, SolverOptions options) {
    std::shared_ptr<Workspace> ws(new Workspace());
    ws->bundle_ = bundle;
    ws->options_ = std::move(options);
    const auto& g = bundle.grid;
    const auto& econ = bundle.econ;
    ws->h_ = g.h_time;
    ws->steps_ = checked_ratio(econ.horizon, g.h_time, "horizon");
    ws->elapsed_count_ = checked_ratio(econ.maturity, g.h_time, "maturity");
    ws->x1_ = Axis::from_range("x1", g.x1);
    ws->x2_ = Axis::from_range("x2", g.x2);
    if (ws->x1_.count < 3) throw ConfigError("grid.x1", "x1 axis needs at least three nodes");

    if (bundle.intensity.variant() == IntensityVariant::Gamma) {
        const auto* prior = std::get_if<GammaPosterior>(&bundle.prior.lambda);
        if (!prior) throw ConfigError("model.intensity", "Gamma form requires a Gamma prior");
        ws->prior_ = PriorLattice::gamma(Axis::from_range("alpha", g.alpha), prior->beta,
                                         bundle.intensity.seasonality());
        if (prior->alpha < g.alpha.min || prior->alpha > g.alpha.max) {
            spdlog::warn("prior shape {} lies outside the alpha axis", prior->alpha);
        }
    } else {
        ws->prior_ = PriorLattice::simplex(bundle.intensity.levels().size(), g.simplex_divisions);
    }

    ws->layer_count_ = bundle.layers.layer_count();
    ws->coupon_count_ = g.r_count;
    ws->max_bonds_ = econ.max_bonds;
    if (ws->max_bonds_ > 0 && ws->elapsed_count_ < 2) {
        throw ConfigError("grid.h_time", "maturity must span at least two time steps");
    }
    if (ws->max_bonds_ > 255) throw ConfigError("economics.max_bonds", "too many bond slots");

    // Noise atoms; a coupon-parameter hook is frozen at its prior mixture.
    ws->noise_atoms_ = bundle.noise.atoms;
    ws->noise_weights_ = bundle.noise.weights;
    if (bundle.coupon_hook) {
        const auto& hook = *bundle.coupon_hook;
        std::fill(ws->noise_weights_.begin(), ws->noise_weights_.end(), 0.0);
        for (std::size_t c = 0; c < hook.prior.size(); ++c) {
            for (std::size_t e = 0; e < ws->noise_weights_.size(); ++e) {
                ws->noise_weights_[e] += hook.prior[c] * hook.atom_weights[c][e];
            }
        }
    }

    // Coupon axes per layer cover every coupon the pricing rule can quote.
    const double eps_lo = *std::min_element(ws->noise_atoms_.begin(), ws->noise_atoms_.end());
    const double eps_hi = *std::max_element(ws->noise_atoms_.begin(), ws->noise_atoms_.end());
    for (std::size_t k = 1; k <= ws->layer_count_; ++k) {
        double lo = std::numeric_limits<double>::infinity();
        double hi = -lo;
        for (double t : {0.0, econ.horizon}) {
            for (double x2 : {ws->x2_.min, ws->x2_.max()}) {
                for (double eps : {eps_lo, eps_hi}) {
                    const double r = coupon_rate(static_cast<int>(k), x2, eps, t, bundle.layers).rate;
                    lo = std::min(lo, r);
                    hi = std::max(hi, r);
                }
            }
        }
        if (hi - lo < 1e-12) hi = lo + 1e-6;
        ws->coupon_axes_.push_back(Axis{"r" + std::to_string(k), lo,
                                        (hi - lo) / static_cast<double>(ws->coupon_count_ - 1),
                                        ws->coupon_count_});
    }

    // Severity atoms; a severity-law hook is frozen at its prior mixture.
    std::vector<std::pair<SeverityAtom, const SeverityModel*>> atoms;
    if (bundle.severity_hook) {
        const auto& hook = *bundle.severity_hook;
        for (std::size_t c = 0; c < hook.candidates.size(); ++c) {
            if (hook.prior[c] <= 0.0) continue;
            for (auto a : discretize_severity(hook.candidates[c])) {
                a.weight *= hook.prior[c];
                atoms.emplace_back(a, &hook.candidates[c]);
            }
        }
    } else {
        for (const auto& a : discretize_severity(bundle.severity)) atoms.emplace_back(a, &bundle.severity);
    }
    for (const auto& [a, law] : atoms) {
        ws->atoms_.push_back(a);
        ws->bumps_.push_back(penalty_bump(a.loss / law->market_share, *law, econ));
    }

    ws->enumerate_configurations();
    ws->check_cfl();

    const double bytes = ws->memory_estimate_bytes();
    spdlog::info("workspace: {} configurations in {} classes, {} nodes, ~{:.1f} MB", ws->tuple_count(),
                 ws->classes_.size(), ws->node_count(), bytes / 1e6);
    if (bytes > g.max_memory_gb * 1e9) {
        std::ostringstream msg;
        msg << "grid needs about " << bytes / 1e9 << " GB (" << ws->node_count()
            << " nodes), above grid.max_memory_gb = " << g.max_memory_gb;
        throw NumericalError(msg.str());
    }
    return ws;
}

void Workspace::enumerate_configurations() {
    const std::size_t n_cells = cell_count();
    const std::size_t kappa = max_bonds_;
    double table_total = 0.0;
    for (std::size_t n = 0; n <= kappa; ++n) table_total += std::pow(static_cast<double>(n_cells), n);
    if (table_total > 2e8) throw NumericalError("configuration lookup table too large; reduce the grid");

    std::vector<std::uint32_t> cur;
    lookup_.assign(kappa + 1, {});
    for (std::size_t n = 0; n <= kappa; ++n) {
        std::size_t size = 1;
        for (std::size_t j = 0; j < n; ++j) size *= n_cells;
        lookup_[n].assign(size, -1);
        ConfigClass cls{n, tuple_running_.size(), 0};
        cur.assign(n, 0);
        std::function<void(std::size_t, std::uint32_t)> rec = [&](std::size_t j, std::uint32_t lo) {
            if (j == n) {
                std::size_t idx = 0;
                for (std::size_t q = n; q-- > 0;) idx = idx * n_cells + cur[q];
                lookup_[n][idx] = static_cast<std::int32_t>(tuple_running_.size());
                tuple_running_.push_back(static_cast<std::uint8_t>(n));
                for (std::size_t q = 0; q < kappa; ++q) cells_flat_.push_back(q < n ? cur[q] : 0);
                ++cls.tuple_count;
                return;
            }
            for (std::uint32_t c = lo; c < n_cells; ++c) {
                cur[j] = c;
                rec(j + 1, c);
            }
        };
        rec(0, 0);
        classes_.push_back(cls);
    }

    const std::size_t n_tuples = tuple_running_.size();
    const double ell = bundle_.econ.maturity;
    advanced_.resize(n_tuples);
    coupon_sum_.resize(n_tuples);
    remaining_.resize(n_tuples);
    inserted_.assign(n_tuples * layer_count_ * coupon_count_, -1);
    for (std::size_t tu = 0; tu < n_tuples; ++tu) {
        std::vector<BondCell> next;
        double coupons = 0.0;
        double remaining = 0.0;
        for (const auto id : tuple_cells(tu)) {
            BondCell c = cell(id);
            coupons += coupon_axis(c.layer).at(c.coupon);
            remaining += ell - time_at(c.elapsed);
            c.elapsed += 1;
            next.push_back(c);
        }
        coupon_sum_[tu] = coupons;
        remaining_[tu] = remaining;
        advanced_[tu] = static_cast<std::uint32_t>(maturity_lift(std::move(next)));
        if (tuple_running_[tu] >= kappa) continue;
        const auto cells = tuple_cells(tu);
        for (std::size_t k = 1; k <= layer_count_; ++k) {
            for (std::size_t ir = 0; ir < coupon_count_; ++ir) {
                std::vector<std::uint32_t> with(cells.begin(), cells.end());
                with.push_back(cell_id(BondCell{static_cast<int>(k), 1, ir}));
                inserted_[(tu * layer_count_ + k - 1) * coupon_count_ + ir] =
                    static_cast<std::int64_t>(tuple_of(std::move(with)));
            }
        }
    }
}

std::span<const std::uint32_t> Workspace::tuple_cells(std::size_t tuple) const {
    return {cells_flat_.data() + tuple * max_bonds_, tuple_running_[tuple]};
}

BondCell Workspace::cell(std::uint32_t id) const {
    BondCell c;
    c.coupon = id % coupon_count_;
    id /= static_cast<std::uint32_t>(coupon_count_);
    c.elapsed = id % elapsed_count_;
    c.layer = static_cast<int>(id / elapsed_count_) + 1;
    return c;
}

std::uint32_t Workspace::cell_id(const BondCell& c) const {
    if (c.layer < 1 || static_cast<std::size_t>(c.layer) > layer_count_ || c.elapsed >= elapsed_count_ ||
        c.coupon >= coupon_count_) {
        throw DomainError("bond cell outside the lattice");
    }
    return static_cast<std::uint32_t>(
        ((static_cast<std::size_t>(c.layer - 1) * elapsed_count_ + c.elapsed) * coupon_count_ + c.coupon));
}

std::size_t Workspace::tuple_of(std::vector<std::uint32_t> cells) const {
    if (cells.size() > max_bonds_) {
        throw DomainError(std::to_string(cells.size()) + " bonds exceed the " + std::to_string(max_bonds_) +
                          " available slots");
    }
    std::sort(cells.begin(), cells.end());
    std::size_t idx = 0;
    for (std::size_t q = cells.size(); q-- > 0;) {
        if (cells[q] >= cell_count()) throw DomainError("bond cell outside the lattice");
        idx = idx * cell_count() + cells[q];
    }
    const std::int32_t t = lookup_[cells.size()][idx];
    if (t < 0) throw DomainError("configuration is not on the lattice");
    return static_cast<std::size_t>(t);
}

std::size_t Workspace::maturity_lift(std::vector<BondCell> cells) const {
    std::vector<std::uint32_t> ids;
    for (const auto& c : cells) {
        if (c.elapsed >= elapsed_count_) continue;
        ids.push_back(cell_id(c));
    }
    return tuple_of(std::move(ids));
}

std::int64_t Workspace::inserted(std::size_t tuple, int layer, std::size_t coupon_node) const {
    return inserted_[(tuple * layer_count_ + static_cast<std::size_t>(layer - 1)) * coupon_count_ + coupon_node];
}

BondBook Workspace::book_of(std::size_t tuple) const {
    std::vector<BondSlot> slots;
    for (const auto id : tuple_cells(tuple)) {
        const BondCell c = cell(id);
        slots.push_back(BondSlot{c.layer, coupon_axis(c.layer).at(c.coupon), time_at(c.elapsed), std::nullopt});
    }
    return canonicalize(BondBook(max_bonds_, std::move(slots)));
}

Workspace::NodeCoords Workspace::coords(std::size_t node) const {
    NodeCoords c{};
    c.i1 = node % x1_.count;
    node /= x1_.count;
    c.i2 = node % x2_.count;
    node /= x2_.count;
    c.ip = node % prior_.size();
    c.tuple = node / prior_.size();
    return c;
}

double Workspace::memory_estimate_bytes() const {
    const double nodes = static_cast<double>(node_count());
    const bool store_all = options_.store_all_values.value_or(bundle_.grid.store_all_values);
    const double slices = static_cast<double>(steps_ + 1);
    double bytes = nodes * 8.0 * 2.0 + nodes * slices;
    bytes += store_all ? nodes * 8.0 * slices : nodes * 8.0;
    return bytes;
}

double Workspace::edge_value(std::size_t tuple, std::size_t ip, std::size_t i2, std::size_t i1) const {
    if (options_.terminal_override) return options_.terminal_override(x1_.at(i1), x2_.at(i2), ip, tuple);
    return gain(x1_.at(i1), remaining_[tuple], GainSpec::from(bundle_.econ));
}

void Workspace::check_cfl() {
    const auto& econ = bundle_.econ;
    const auto [cmin, cmax] = std::minmax_element(coupon_sum_.begin(), coupon_sum_.end());
    const double x1_lo = x1_.at(1);
    const double x1_hi = x1_.at(x1_.count - 2);
    const double mu2 = econ.penalty_decay * std::max(std::abs(x2_.min), std::abs(x2_.max()));
    const double x2_worst = std::abs(x2_.min) > std::abs(x2_.max()) ? x2_.min : x2_.max();
    CflReport rep;
    rep.h_time = h_;
    double max_speed = 0.0;
    for (std::size_t n = 0; n < steps_; ++n) {
        const double t = time_at(n);
        const double prem = premium_rate(t, econ);
        double lam = 0.0;
        std::size_t lam_node = 0;
        if (options_.claims_enabled) {
            for (std::size_t ip = 0; ip < prior_.size(); ++ip) {
                const auto post = prior_.posterior_at(ip, t);
                const double l = std::visit([&](const auto& p) { return lambda_bar(t, h_, p, bundle_.intensity); }, post);
                if (l > lam) {
                    lam = l;
                    lam_node = ip;
                }
            }
        }
        for (double x1 : {x1_lo, x1_hi}) {
            for (double c : {*cmin, *cmax}) {
                const double mu1 = std::abs(prem + econ.interest * x1 - c);
                max_speed = std::max(max_speed, mu1);
                const double ratio = h_ * (mu1 / x1_.step + mu2 / x2_.step + lam);
                if (ratio > rep.max_ratio) {
                    rep.max_ratio = ratio;
                    rep.t = t;
                    rep.x1 = x1;
                    rep.x2 = x2_worst;
                    rep.coupon_sum = c;
                    rep.lambda_bar = lam;
                    rep.prior_node = lam_node;
                }
            }
        }
    }
    rep.required_h = rep.max_ratio > 0.0 ? h_ / rep.max_ratio : h_;
    rep.ok = rep.max_ratio <= 1.0 + 1e-12;
    cfl_ = rep;

    double max_jump = 0.0;
    for (const auto& a : atoms_) max_jump = std::max(max_jump, a.loss);
    coverage_.x1_min = x1_.min;
    coverage_.x1_max = x1_.max();
    coverage_.max_jump = options_.claims_enabled ? max_jump : 0.0;
    coverage_.max_drift_speed = max_speed;
    coverage_.horizon = econ.horizon;
    coverage_.safe_min = x1_.min + coverage_.max_jump + max_speed * econ.horizon;
    coverage_.safe_max = x1_.max() - max_speed * econ.horizon;
    coverage_.x2_top = x2_.max();
    coverage_.max_bump = bumps_.empty() ? 0.0 : *std::max_element(bumps_.begin(), bumps_.end());

    if (!rep.ok) {
        std::ostringstream msg;
        msg << "CFL bound violated: h_time * (|mu1|/h_x1 + |mu2|/h_x2 + lambda_bar) = " << rep.max_ratio
            << " > 1 at t=" << rep.t << ", x1=" << rep.x1 << ", x2=" << rep.x2
            << ", coupon sum=" << rep.coupon_sum << ", prior node " << rep.prior_node
            << "; h_time must be at most about " << rep.required_h;
        throw NumericalError(msg.str());
    }
}

// ---------------------------------------------------------------------------
// Step coefficients

StepContext make_step_context(const Workspace& ws, std::size_t n) {
    const auto& b = ws.bundle();
    StepContext ctx;
    ctx.n = n;
    ctx.h = ws.h();
    ctx.t = ws.time_at(n);
    ctx.premium = premium_rate(ctx.t, b.econ);
    const double t = ctx.t;
    const double h = ctx.h;
    const auto& prior = ws.prior();
    const std::size_t np = prior.size();
    ctx.lam_bar.resize(np);
    ctx.advance.resize(np);
    ctx.jump.resize(np);
    for (std::size_t ip = 0; ip < np; ++ip) {
        if (prior.variant() == IntensityVariant::Gamma) {
            const GammaPosterior post{prior.alpha_at(ip), prior.beta_at(t)};
            ctx.lam_bar[ip] = lambda_bar(t, h, post, b.intensity);
            ctx.advance[ip].add(static_cast<std::uint32_t>(ip), 1.0);
            ctx.jump[ip] = prior.stencil_alpha(post.alpha + 1.0);
        } else {
            const ScenarioWeights w{prior.weights_at(ip)};
            ctx.lam_bar[ip] = lambda_bar(t, h, w, b.intensity);
            ctx.advance[ip] = prior.stencil_weights(scenario_advance(w, t, t + h, b.intensity).weights);
            // Claim somewhere in the window: reweight by the window-integrated rates.
            std::vector<double> post = w.weights;
            const auto levels = b.intensity.levels();
            double total = 0.0;
            for (std::size_t i = 0; i < post.size(); ++i) {
                post[i] *= b.intensity.integrated(t, t + h, levels[i]);
                total += post[i];
            }
            if (total > 0.0) {
                ctx.jump[ip] = prior.stencil_weights(post);
            } else {
                ctx.jump[ip].add(static_cast<std::uint32_t>(ip), 1.0);
            }
        }
    }

    const std::size_t n_atoms = ws.atoms().size();
    const std::size_t n_tuples = ws.tuple_count();
    const std::size_t n2 = ws.x2().count;
    if (ws.options().claims_enabled) {
        ctx.settle_target.resize(n_tuples * n_atoms);
        ctx.jump_dx1.resize(n_tuples * n_atoms);
        const double t_next = t + h;
        for (std::size_t tu = 0; tu < n_tuples; ++tu) {
            const auto cells = ws.tuple_cells(tu);
            std::vector<BondCell> bonds;
            for (const auto id : cells) bonds.push_back(ws.cell(id));
            for (std::size_t a = 0; a < n_atoms; ++a) {
                const double u = ws.atoms()[a].loss;
                double payoff = 0.0;
                std::vector<std::uint32_t> keep;
                for (std::size_t j = 0; j < bonds.size(); ++j) {
                    const double issued = t_next - ws.time_at(bonds[j].elapsed);
                    const double attach = b.layers.attachment(bonds[j].layer, issued);
                    if (attach <= u) {
                        payoff += std::min(u - attach, b.layers.capacity(bonds[j].layer, issued));
                    } else {
                        keep.push_back(cells[j]);
                    }
                }
                ctx.settle_target[tu * n_atoms + a] =
                    keep.size() == cells.size() ? static_cast<std::uint32_t>(tu)
                                                : static_cast<std::uint32_t>(ws.tuple_of(std::move(keep)));
                ctx.jump_dx1[tu * n_atoms + a] = -u + payoff;
            }
        }
        ctx.x2_target.resize(n_atoms * n2);
        for (std::size_t a = 0; a < n_atoms; ++a) {
            for (std::size_t i2 = 0; i2 < n2; ++i2) {
                ctx.x2_target[a * n2 + i2] = locate(ws.x2(), ws.x2().at(i2) + ws.atom_bumps()[a]);
            }
        }
    }

    if (ws.max_bonds() > 0) {
        const std::size_t n_noise = ws.noise_atoms().size();
        ctx.coupon_target.resize(ws.layer_count() * n_noise * n2);
        for (std::size_t k = 1; k <= ws.layer_count(); ++k) {
            for (std::size_t e = 0; e < n_noise; ++e) {
                for (std::size_t i2 = 0; i2 < n2; ++i2) {
                    const double r = coupon_rate(static_cast<int>(k), ws.x2().at(i2), ws.noise_atoms()[e], t,
                                                 b.layers).rate;
                    ctx.coupon_target[((k - 1) * n_noise + e) * n2 + i2] =
                        locate(ws.coupon_axis(static_cast<int>(k)), r);
                }
            }
        }
    }
    return ctx;
}

// ---------------------------------------------------------------------------
// Backward induction

namespace {

struct SumSink {
    std::span<const double> next;
    double acc = 0.0;
    void operator()(std::size_t i, double w) { acc += w * next[i]; }
};

template <class Body>
void parallel_tuples(const Workspace& ws, Body&& body) {
    const std::size_t n_tuples = ws.tuple_count();
    const unsigned requested = ws.options().threads == 0 ? std::max(1U, std::thread::hardware_concurrency())
                                                         : ws.options().threads;
    const auto workers = static_cast<unsigned>(std::min<std::size_t>(requested, n_tuples));
    if (workers <= 1) {
        for (std::size_t tu = 0; tu < n_tuples; ++tu) body(tu);
        return;
    }
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t tu = w; tu < n_tuples; tu += workers) body(tu);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

[[noreturn]] void non_finite(const Workspace& ws, std::size_t n, std::size_t tu, std::size_t ip, std::size_t i2,
                             std::size_t i1, double v) {
    std::ostringstream msg;
    msg << "non-finite value " << v << " at slice " << n << " (t=" << ws.time_at(n) << "), configuration " << tu
        << ", prior node " << ip << ", x2=" << ws.x2().at(i2) << ", x1=" << ws.x1().at(i1);
    throw NumericalError(msg.str());
}

bool beats(double candidate, double incumbent) {
    return candidate > incumbent + kTieTolerance * std::abs(incumbent);
}

}  // namespace

std::vector<double> terminal_slice(const Workspace& ws, std::vector<std::uint8_t>* policy) {
    std::vector<double> out(ws.node_count());
    if (policy) policy->assign(ws.node_count(), kActionWait);
    const auto spec = GainSpec::from(ws.bundle().econ);
    const double ell = ws.bundle().econ.maturity;
    const double cost = ws.bundle().econ.issue_cost;
    const bool analytic = !ws.options().terminal_override;
    parallel_tuples(ws, [&](std::size_t tu) {
        const bool can_issue = analytic && ws.tuple_running(tu) < ws.max_bonds();
        for (std::size_t ip = 0; ip < ws.prior_count(); ++ip) {
            for (std::size_t i2 = 0; i2 < ws.x2().count; ++i2) {
                for (std::size_t i1 = 0; i1 < ws.x1().count; ++i1) {
                    const std::size_t node = ws.node_index(tu, ip, i2, i1);
                    double v = ws.edge_value(tu, ip, i2, i1);
                    if (can_issue && !is_edge_node(ws, i1)) {
                        const double k = gain(ws.x1().at(i1) - cost, ws.remaining(tu) + ell, spec);
                        if (beats(k, v)) {
                            v = k;
                            if (policy) (*policy)[node] = 1;
                        }
                    }
                    if (!std::isfinite(v)) non_finite(ws, ws.steps(), tu, ip, i2, i1, v);
                    out[node] = v;
                }
            }
        }
    });
    return out;
}

std::vector<double> backward_step(const Workspace& ws, std::size_t n, std::span<const double> next,
                                  std::vector<std::uint8_t>* policy) {
    if (next.size() != ws.node_count()) throw DomainError("backward_step: slice size mismatch");
    if (n >= ws.steps()) throw DomainError("backward_step: slice index out of range");
    const StepContext ctx = make_step_context(ws, n);
    std::vector<double> out(ws.node_count());
    if (policy) policy->assign(ws.node_count(), kActionWait);
    const int layers = static_cast<int>(ws.layer_count());
    parallel_tuples(ws, [&](std::size_t tu) {
        const bool can_issue = ws.tuple_running(tu) < ws.max_bonds();
        for (std::size_t ip = 0; ip < ws.prior_count(); ++ip) {
            for (std::size_t i2 = 0; i2 < ws.x2().count; ++i2) {
                for (std::size_t i1 = 0; i1 < ws.x1().count; ++i1) {
                    const std::size_t node = ws.node_index(tu, ip, i2, i1);
                    if (is_edge_node(ws, i1)) {
                        out[node] = ws.edge_value(tu, ip, i2, i1);
                        continue;
                    }
                    SumSink wait{next};
                    continuation_stencil(ws, ctx, tu, ip, i2, i1, wait);
                    double best = wait.acc;
                    std::uint8_t action = kActionWait;
                    if (can_issue) {
                        for (int k = 1; k <= layers; ++k) {
                            SumSink cand{next};
                            issue_stencil(ws, ctx, tu, ip, i2, i1, k, cand);
                            if (beats(cand.acc, best)) {
                                best = cand.acc;
                                action = static_cast<std::uint8_t>(k);
                            }
                        }
                    }
                    if (!std::isfinite(best)) non_finite(ws, n, tu, ip, i2, i1, best);
                    out[node] = best;
                    if (policy) (*policy)[node] = action;
                }
            }
        }
    });
    return out;
}

Solution backward_induction(std::shared_ptr<const Workspace> ws) {
    const std::size_t steps = ws->steps();
    const bool store_all = ws->options().store_all_values.value_or(ws->bundle().grid.store_all_values);
    std::vector<std::vector<double>> values(steps + 1);
    std::vector<std::vector<std::uint8_t>> policy(steps + 1);
    std::vector<double> cur = terminal_slice(*ws, &policy[steps]);
    if (store_all || steps == 0) values[steps] = cur;
    for (std::size_t n = steps; n-- > 0;) {
        cur = backward_step(*ws, n, cur, &policy[n]);
        if (store_all || n == 0) values[n] = cur;
        spdlog::debug("slice {} / {} done", steps - n, steps);
    }
    return Solution(std::move(ws), std::move(values), std::move(policy));
}

// ---------------------------------------------------------------------------
// Queries

Solution::Solution(std::shared_ptr<const Workspace> ws, std::vector<std::vector<double>> values,
                   std::vector<std::vector<std::uint8_t>> policy)
    : ws_(std::move(ws)), values_(std::move(values)), policy_(std::move(policy)) {
    if (values_.size() != policy_.size()) throw DomainError("value and policy slice counts differ");
}

std::size_t Solution::slice_of(double t) const {
    const double pos = t / ws_->h();
    const auto n = static_cast<long long>(std::llround(pos));
    return static_cast<std::size_t>(std::clamp<long long>(n, 0, static_cast<long long>(ws_->steps())));
}

namespace {

struct BookCells {
    // For each running bond: layer, elapsed node and the coupon bracket.
    std::vector<BondCell> lo;
    std::vector<double> frac;
    bool clamped = false;
};

BookCells book_cells(const Workspace& ws, const BondBook& book, bool nearest_coupon) {
    BookCells out;
    for (const auto& b : canonicalize(book).bonds()) {
        const double pos = b.elapsed / ws.h();
        const auto il = static_cast<long long>(std::llround(pos));
        if (il < 0 || static_cast<std::size_t>(il) >= ws.elapsed_count()) {
            throw DomainError("bond elapsed time outside [0, maturity)");
        }
        const Bracket br = locate(ws.coupon_axis(b.layer), b.coupon);
        out.clamped = out.clamped || br.clamped;
        BondCell c{b.layer, static_cast<std::size_t>(il), br.lo};
        double f = br.frac;
        if (nearest_coupon) {
            if (f >= 0.5) c.coupon += 1;
            f = 0.0;
        }
        out.lo.push_back(c);
        out.frac.push_back(f);
    }
    return out;
}

}  // namespace

QueryResult Solution::query_value(const QueryPoint& q) const {
    const Workspace& ws = *ws_;
    QueryResult r;
    r.slice = slice_of(q.t);
    if (!has_values(r.slice)) {
        throw DomainError("values of slice " + std::to_string(r.slice) +
                          " were not kept; solve with grid.store_all_values");
    }
    const auto vals = values(r.slice);
    const BookCells cells = book_cells(ws, q.book, false);
    bool clamped_p = false;
    const Stencil ps = ws.prior().stencil(q.posterior, &clamped_p);
    const Bracket b1 = locate(ws.x1(), q.x.x1);
    const Bracket b2 = locate(ws.x2(), q.x.x2);
    r.clamped = cells.clamped || clamped_p || b1.clamped || b2.clamped;
    const std::size_t nb = cells.lo.size();
    const std::size_t n1 = ws.x1().count;
    double total = 0.0;
    for (std::size_t combo = 0; combo < (std::size_t{1} << nb); ++combo) {
        double wb = 1.0;
        std::vector<std::uint32_t> ids;
        for (std::size_t j = 0; j < nb; ++j) {
            const bool up = (combo >> j) & 1U;
            const double w = up ? cells.frac[j] : 1.0 - cells.frac[j];
            wb *= w;
            BondCell c = cells.lo[j];
            if (up) c.coupon += 1;
            ids.push_back(ws.cell_id(c));
        }
        if (wb <= 0.0) continue;
        const std::size_t tu = ws.tuple_of(std::move(ids));
        for (std::size_t v = 0; v < ps.size; ++v) {
            const std::size_t base = ws.node_index(tu, ps.index[v], b2.lo, b1.lo);
            const double w = wb * ps.weight[v];
            double acc = (1.0 - b1.frac) * (1.0 - b2.frac) * vals[base];
            if (b1.frac > 0.0) acc += b1.frac * (1.0 - b2.frac) * vals[base + 1];
            if (b2.frac > 0.0) acc += (1.0 - b1.frac) * b2.frac * vals[base + n1];
            if (b1.frac > 0.0 && b2.frac > 0.0) acc += b1.frac * b2.frac * vals[base + n1 + 1];
            total += w * acc;
        }
    }
    r.value = total;
    return r;
}

PolicyQuery Solution::query_policy(const QueryPoint& q) const {
    const Workspace& ws = *ws_;
    PolicyQuery r;
    r.slice = slice_of(q.t);
    const BookCells cells = book_cells(ws, q.book, true);
    std::vector<std::uint32_t> ids;
    for (const auto& c : cells.lo) ids.push_back(ws.cell_id(c));
    const std::size_t tu = ws.tuple_of(std::move(ids));
    bool clamped_p = false;
    const std::size_t ip = ws.prior().nearest(q.posterior, &clamped_p);
    const Bracket b1 = locate(ws.x1(), q.x.x1);
    const Bracket b2 = locate(ws.x2(), q.x.x2);
    const std::size_t i1 = b1.lo + (b1.frac >= 0.5 ? 1 : 0);
    const std::size_t i2 = b2.lo + (b2.frac >= 0.5 ? 1 : 0);
    r.clamped = cells.clamped || clamped_p || b1.clamped || b2.clamped;
    r.action = policy(r.slice)[ws.node_index(tu, ip, i2, i1)];
    return r;
}

}  // namespace catqvi
