#include "catqvi/simulator.hpp"

#include "catqvi/error.hpp"
#include "catqvi/market_model.hpp"
#include "catqvi/pde_solver.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <thread>

namespace catqvi {

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace

std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t path, Stream stream) {
    std::uint64_t s = seed;
    std::uint64_t key = splitmix64(s);
    s = key ^ path;
    key = splitmix64(s);
    s = key ^ static_cast<std::uint64_t>(stream);
    const std::uint64_t a = splitmix64(s);
    const std::uint64_t b = splitmix64(s);
    std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                      static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
    return std::mt19937_64(seq);
}

std::vector<double> sample_claims(const IntensityModel& model, double lambda0, double horizon,
                                  std::mt19937_64& rng) {
    std::vector<double> times;
    const double bound = model.majorant(lambda0, horizon);
    if (!(bound > 0.0)) return times;
    if (!std::isfinite(bound)) throw NumericalError("intensity has no finite majorant");
    std::exponential_distribution<double> gap(bound);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    double t = 0.0;
    while (true) {
        t += gap(rng);
        if (t >= horizon) break;
        if (unif(rng) * bound < model.rate(t, lambda0)) times.push_back(t);
    }
    return times;
}

SeverityDraw sample_severity(const SeverityModel& model, SeverityMode mode, std::span<const SeverityAtom> atoms,
                             std::mt19937_64& rng) {
    SeverityDraw d;
    if (mode == SeverityMode::Atoms) {
        if (atoms.empty()) throw DomainError("no severity atoms to draw from");
        std::uniform_int_distribution<std::size_t> pick(0, atoms.size() - 1);
        d.insurer = atoms[pick(rng)].loss;
        d.industry = d.insurer / model.market_share;
        return d;
    }
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    double p = 0.0;
    while (p <= 0.0) p = unif(rng);   // p = 0 would sit exactly on the threshold
    d.industry = model.quantile(p);
    d.insurer = model.market_share * d.industry;
    return d;
}

const char* to_string(EventKind kind) {
    switch (kind) {
        case EventKind::Claim: return "claim";
        case EventKind::Issue: return "issue";
        case EventKind::EventSettlement: return "event-settlement";
        case EventKind::MaturitySettlement: return "maturity-settlement";
    }
    return "unknown";
}

std::array<double, 3> posterior_summary(const LambdaPosterior& post) {
    if (const auto* g = std::get_if<GammaPosterior>(&post)) return {g->alpha, g->beta, g->mean()};
    const auto& w = std::get<ScenarioWeights>(post).weights;
    std::array<double, 3> out{0.0, 0.0, 0.0};
    for (std::size_t i = 0; i < std::min<std::size_t>(3, w.size()); ++i) out[i] = w[i];
    return out;
}

std::uint8_t ScriptedPolicy::decide(std::size_t step, double, const MarketState&, const LambdaPosterior&,
                                    const BondBook&, bool&) const {
    const auto it = actions_.find(step);
    return it == actions_.end() ? 0 : it->second;
}

std::uint8_t GridPolicy::decide(std::size_t step, double t, const MarketState& x, const LambdaPosterior& post,
                                const BondBook& book, bool& clamped) const {
    (void)step;
    QueryPoint q;
    q.t = t;
    q.x = x;
    q.posterior = post;
    q.book = book;
    const PolicyQuery r = solution_.query_policy(q);
    clamped = r.clamped;
    return r.action;
}

namespace {

struct ActiveBond {
    int layer = 1;
    double coupon = 0.0;
    std::size_t issue_step = 0;
    double issue_time = 0.0;
};

class PathRunner {
public:
    PathRunner(const ModelBundle& b, const PolicySource& policy, const ScenarioTruth& truth, std::size_t path,
               const SimOptions& opt)
        : b_(b), policy_(policy), truth_(truth), opt_(opt),
          claims_rng_(make_stream(truth.seed, path, Stream::Claims)),
          severity_rng_(make_stream(truth.seed, path, Stream::Severity)),
          noise_rng_(make_stream(truth.seed, path, Stream::Noise)) {
        h_ = b.grid.h_time;
        steps_ = static_cast<std::size_t>(std::llround(b.econ.horizon / h_));
        maturity_steps_ = static_cast<std::size_t>(std::llround(b.econ.maturity / h_));
        severity_law_ = b.severity_hook ? b.severity_hook->candidates.at(b.severity_hook->truth) : b.severity;
        if (b.sim.severity_mode == SeverityMode::Atoms) atoms_ = discretize_severity(severity_law_);
        noise_weights_ = b.coupon_hook ? b.coupon_hook->atom_weights.at(b.coupon_hook->truth) : b.noise.weights;
        rec_.initial = {b.econ.initial_cash, 0.0};
        x_ = rec_.initial;
        post_ = b.prior.lambda;
        rec_.severity_posterior = b.prior.severity;
        rec_.coupon_posterior = b.prior.coupon;
    }

    PathRecord run() {
        const auto claims = sample_claims(b_.intensity, truth_.lambda0, b_.econ.horizon, claims_rng_);
        std::size_t next_claim = 0;
        for (std::size_t n = 0; n <= steps_; ++n) {
            const double tn = static_cast<double>(n) * h_;
            settle_maturities(n, tn);
            while (next_claim < claims.size() && claims[next_claim] <= tn) claim(claims[next_claim++]);
            if (n == steps_) break;
            act(n, tn);
            if (opt_.record_samples) sample(tn);
            const double t_next = static_cast<double>(n + 1) * h_;
            while (next_claim < claims.size() && claims[next_claim] < t_next) {
                flow_to(claims[next_claim]);
                claim(claims[next_claim++]);
            }
            flow_to(t_next);
        }
        if (opt_.record_samples) sample(t_);
        rec_.final_state = x_;
        rec_.final_posterior = post_;
        rec_.final_book = book(t_);
        double remaining = 0.0;
        for (const auto& a : active_) remaining += b_.econ.maturity - (t_ - a.issue_time);
        rec_.utility = gain(x_.x1, remaining, GainSpec::from(b_.econ));
        return std::move(rec_);
    }

private:
    BondBook book(double t) const {
        std::vector<BondSlot> slots;
        for (const auto& a : active_) slots.push_back(BondSlot{a.layer, a.coupon, t - a.issue_time, std::nullopt});
        return BondBook(b_.econ.max_bonds, std::move(slots));
    }

    double coupon_sum() const {
        double c = 0.0;
        for (const auto& a : active_) c += a.coupon;
        return c;
    }

    void log(EventKind kind, double t, double loss, double payoff, int layer, double coupon) {
        if (!opt_.record_events) return;
        rec_.events.push_back(EventRecord{t, kind, loss, payoff, layer, coupon, x_, posterior_summary(post_)});
    }

    void sample(double t) {
        rec_.samples.push_back(StateSample{t, x_, posterior_summary(post_), canonicalize(book(t))});
    }

    // Exact solution of x1' = p0 + p1 s + r x1 - C, x2' = -rho x2 over [t_, t].
    void flow_to(double t) {
        const double dt = t - t_;
        if (dt <= 0.0) return;
        const auto& e = b_.econ;
        const double p1 = e.premium_rate * e.warming_premium_slope / e.horizon;
        const double p_start = e.premium_rate + p1 * t_;
        const double c = coupon_sum();
        const double r = e.interest;
        double growth = 1.0, e1 = dt, e2 = 0.5 * dt * dt;
        if (r > 0.0) {
            const double rd = r * dt;
            growth = std::exp(rd);
            e1 = std::expm1(rd) / r;
            e2 = rd < 1e-4 ? dt * dt * (0.5 + rd / 6.0 + rd * rd / 24.0) : (e1 - dt) / r;
        }
        const double x1_new = growth * x_.x1 + (p_start - c) * e1 + p1 * e2;
        const double premium = p_start * dt + 0.5 * p1 * dt * dt;
        rec_.ledger.premium += premium;
        rec_.ledger.coupons += c * dt;
        rec_.ledger.interest += (x1_new - x_.x1) - premium + c * dt;
        x_.x1 = x1_new;
        x_.x2 *= std::exp(-e.penalty_decay * dt);
        post_ = advance(post_, t_, t, b_.intensity);
        t_ = t;
        if (!std::isfinite(x_.x1) || !std::isfinite(x_.x2)) throw NumericalError("non-finite state in simulation");
    }

    void settle_maturities(std::size_t n, double t) {
        for (std::size_t j = 0; j < active_.size();) {
            if (n - active_[j].issue_step >= maturity_steps_) {
                const ActiveBond done = active_[j];
                active_.erase(active_.begin() + static_cast<std::ptrdiff_t>(j));
                log(EventKind::MaturitySettlement, t, 0.0, 0.0, done.layer, done.coupon);
            } else {
                ++j;
            }
        }
    }

    void claim(double zeta) {
        const SeverityDraw d = sample_severity(severity_law_, b_.sim.severity_mode, atoms_, severity_rng_);
        const BondBook before = book(zeta);
        const SettleResult settled = settle_event(before, d.insurer, zeta, b_.layers);
        double payoff = 0.0;
        std::vector<std::pair<ActiveBond, double>> paid;
        for (const std::size_t j : settled.triggered) {
            const double p = bond_payoff(*before.slots()[j], d.insurer, zeta, b_.layers);
            payoff += p;
            paid.emplace_back(active_[j], p);
        }
        for (std::size_t q = settled.triggered.size(); q-- > 0;) {
            active_.erase(active_.begin() + static_cast<std::ptrdiff_t>(settled.triggered[q]));
        }
        x_ = claim_jump(x_, d.insurer, d.industry, severity_law_, b_.econ);
        x_.x1 += payoff;
        rec_.ledger.claims += d.insurer;
        rec_.ledger.payoffs += payoff;
        post_ = jump(post_, zeta, b_.intensity);
        if (rec_.severity_posterior && b_.severity_hook) {
            std::vector<double> lik;
            for (const auto& cand : b_.severity_hook->candidates) lik.push_back(cand.density(d.industry));
            rec_.severity_posterior = mark_jump_update(*rec_.severity_posterior, lik);
        }
        ++rec_.claims;
        log(EventKind::Claim, zeta, d.insurer, payoff, 0, 0.0);
        for (const auto& [bond, p] : paid) log(EventKind::EventSettlement, zeta, d.insurer, p, bond.layer, bond.coupon);
    }

    void act(std::size_t n, double t) {
        if (active_.size() >= b_.econ.max_bonds) return;
        bool clamped = false;
        const std::uint8_t action = policy_.decide(n, t, x_, post_, canonicalize(book(t)), clamped);
        if (clamped) ++rec_.clamped_queries;
        if (action == 0) return;
        const int layer = action;
        b_.layers.check_layer(layer);
        std::discrete_distribution<std::size_t> pick(noise_weights_.begin(), noise_weights_.end());
        const std::size_t e = pick(noise_rng_);
        const double coupon = coupon_rate(layer, x_.x2, b_.noise.atoms[e], t, b_.layers).rate;
        x_.x1 -= b_.econ.issue_cost;
        rec_.ledger.issue_costs += b_.econ.issue_cost;
        active_.push_back(ActiveBond{layer, coupon, n, t});
        rec_.max_running = std::max(rec_.max_running, active_.size());
        ++rec_.issues;
        if (rec_.coupon_posterior && b_.coupon_hook) {
            std::vector<double> lik;
            for (const auto& row : b_.coupon_hook->atom_weights) lik.push_back(row[e]);
            rec_.coupon_posterior = mark_jump_update(*rec_.coupon_posterior, lik);
        }
        log(EventKind::Issue, t, 0.0, 0.0, layer, coupon);
    }

    const ModelBundle& b_;
    const PolicySource& policy_;
    const ScenarioTruth& truth_;
    const SimOptions& opt_;
    std::mt19937_64 claims_rng_, severity_rng_, noise_rng_;
    double h_ = 0.0;
    std::size_t steps_ = 0, maturity_steps_ = 0;
    SeverityModel severity_law_;
    std::vector<SeverityAtom> atoms_;
    std::vector<double> noise_weights_;
    double t_ = 0.0;
    MarketState x_;
    LambdaPosterior post_;
    std::vector<ActiveBond> active_;
    PathRecord rec_;
};

}  // namespace

PathRecord run_path(const ModelBundle& bundle, const PolicySource& policy, const ScenarioTruth& truth,
                    std::size_t path_index, const SimOptions& options) {
    return PathRunner(bundle, policy, truth, path_index, options).run();
}

double pairwise_sum(std::span<const double> v) {
    if (v.size() <= 8) {
        double s = 0.0;
        for (double x : v) s += x;
        return s;
    }
    const std::size_t half = v.size() / 2;
    return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

double empirical_quantile(std::vector<double> sample, double p) {
    if (sample.empty()) throw DomainError("quantile of an empty sample");
    if (!(p >= 0.0 && p <= 1.0)) throw DomainError("quantile level must lie in [0, 1]");
    std::sort(sample.begin(), sample.end());
    const double pos = p * static_cast<double>(sample.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sample.size() - 1);
    return sample[lo] + (pos - static_cast<double>(lo)) * (sample[hi] - sample[lo]);
}

namespace {

std::pair<double, double> mean_sd(std::span<const double> v) {
    const double n = static_cast<double>(v.size());
    const double mean = pairwise_sum(v) / n;
    std::vector<double> sq(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) sq[i] = (v[i] - mean) * (v[i] - mean);
    const double var = v.size() > 1 ? pairwise_sum(sq) / (n - 1.0) : 0.0;
    return {mean, std::sqrt(var)};
}

}  // namespace

double MonteCarloSummary::cash_quantile(double p) const { return empirical_quantile(final_cash, p); }

nlohmann::json MonteCarloSummary::to_json() const {
    nlohmann::json j;
    j["n_paths"] = n_paths;
    j["seed"] = seed;
    j["lambda0"] = lambda0;
    j["final_cash"] = {{"mean", mean_cash},
                       {"sd", sd_cash},
                       {"q0.005", cash_quantile(0.005)},
                       {"q0.05", cash_quantile(0.05)},
                       {"q0.5", cash_quantile(0.5)},
                       {"q0.95", cash_quantile(0.95)},
                       {"min", *std::min_element(final_cash.begin(), final_cash.end())},
                       {"max", *std::max_element(final_cash.begin(), final_cash.end())}};
    j["utility"] = {{"mean", mean_utility}, {"sd", sd_utility}};
    j["issues_per_path"] = mean_issues;
    j["claims_per_path"] = mean_claims;
    j["clamped_policy_queries"] = clamped_queries;
    j["max_running_bonds"] = max_running;
    std::array<double, 3> post_mean{};
    for (std::size_t c = 0; c < 3; ++c) {
        std::vector<double> col;
        for (const auto& p : terminal_posterior) col.push_back(p[c]);
        post_mean[c] = pairwise_sum(col) / static_cast<double>(col.size());
    }
    j["terminal_posterior_mean"] = post_mean;
    return j;
}

MonteCarloSummary run_monte_carlo(const ModelBundle& bundle, const PolicySource& policy, const ScenarioTruth& truth,
                                  const SimOptions& options) {
    if (truth.n_paths < 1) throw DomainError("at least one path is required");
    MonteCarloSummary s;
    s.n_paths = truth.n_paths;
    s.seed = truth.seed;
    s.lambda0 = truth.lambda0;
    s.final_cash.resize(truth.n_paths);
    s.utility.resize(truth.n_paths);
    s.terminal_posterior.resize(truth.n_paths);
    std::vector<double> issues(truth.n_paths), claims(truth.n_paths);
    std::vector<std::size_t> clamped(truth.n_paths), running(truth.n_paths);
    SimOptions path_opt = options;
    path_opt.record_events = false;
    path_opt.record_samples = false;
    const auto body = [&](std::size_t i) {
        const PathRecord r = run_path(bundle, policy, truth, i, path_opt);
        s.final_cash[i] = r.final_state.x1;
        s.utility[i] = r.utility;
        s.terminal_posterior[i] = posterior_summary(r.final_posterior);
        issues[i] = static_cast<double>(r.issues);
        claims[i] = static_cast<double>(r.claims);
        clamped[i] = r.clamped_queries;
        running[i] = r.max_running;
    };
    const unsigned requested = options.threads == 0 ? std::max(1U, std::thread::hardware_concurrency())
                                                    : options.threads;
    const auto workers = static_cast<unsigned>(std::min<std::size_t>(requested, truth.n_paths));
    if (workers <= 1) {
        for (std::size_t i = 0; i < truth.n_paths; ++i) body(i);
    } else {
        std::vector<std::exception_ptr> errors(workers);
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                try {
                    for (std::size_t i = w; i < truth.n_paths; i += workers) body(i);
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
    std::tie(s.mean_cash, s.sd_cash) = mean_sd(s.final_cash);
    std::tie(s.mean_utility, s.sd_utility) = mean_sd(s.utility);
    s.mean_issues = pairwise_sum(issues) / static_cast<double>(truth.n_paths);
    s.mean_claims = pairwise_sum(claims) / static_cast<double>(truth.n_paths);
    s.clamped_queries = std::accumulate(clamped.begin(), clamped.end(), std::size_t{0});
    s.max_running = *std::max_element(running.begin(), running.end());
    return s;
}

std::vector<std::pair<double, double>> kernel_density(std::span<const double> sample, std::size_t points) {
    if (sample.empty()) throw DomainError("density of an empty sample");
    if (points < 2) throw DomainError("density needs at least two abscissae");
    std::vector<double> v(sample.begin(), sample.end());
    const auto [mean, sd] = mean_sd(v);
    const double iqr = empirical_quantile(v, 0.75) - empirical_quantile(v, 0.25);
    double spread = sd;
    if (iqr > 0.0) spread = std::min(sd, iqr / 1.34);
    double bw = 0.9 * spread * std::pow(static_cast<double>(v.size()), -0.2);
    if (!(bw > 0.0)) bw = 1e-3 * std::max(1.0, std::abs(mean));
    const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
    const double lo = *lo_it - 3.0 * bw;
    const double hi = *hi_it + 3.0 * bw;
    const double norm = 1.0 / (static_cast<double>(v.size()) * bw * std::sqrt(2.0 * M_PI));
    std::vector<std::pair<double, double>> out;
    std::vector<double> terms(v.size());
    for (std::size_t k = 0; k < points; ++k) {
        const double x = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(points - 1);
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double z = (x - v[i]) / bw;
            terms[i] = std::exp(-0.5 * z * z);
        }
        out.emplace_back(x, norm * pairwise_sum(terms));
    }
    return out;
}

void write_event_log_csv(const PathRecord& path, std::ostream& out) {
    out << "t,kind,loss,payoff,layer,coupon,x1,x2,post_a,post_b,post_c\n" << std::setprecision(17);
    for (const auto& e : path.events) {
        out << e.t << ',' << to_string(e.kind) << ',' << e.loss << ',' << e.payoff << ',' << e.layer << ','
            << e.coupon << ',' << e.x.x1 << ',' << e.x.x2 << ',' << e.posterior[0] << ',' << e.posterior[1] << ','
            << e.posterior[2] << '\n';
    }
}

void write_density_csv(std::span<const std::pair<double, double>> density, std::ostream& out) {
    out << "x,density\n" << std::setprecision(17);
    for (const auto& [x, d] : density) out << x << ',' << d << '\n';
}

}  // namespace catqvi
