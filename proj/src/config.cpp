#include "catqvi/config.hpp"

#include "catqvi/market_model.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>

namespace catqvi {

using nlohmann::json;

namespace {

std::string join_messages(const std::vector<Violation>& v) {
    std::string out = "invalid configuration:";
    for (const auto& e : v) out += "\n  " + e.path + ": " + e.message;
    return out;
}

// Reads typed fields out of a JSON object and accumulates violations
// instead of failing on the first problem.
class Reader {
public:
    explicit Reader(std::vector<Violation>& sink) : sink_(sink) {}

    const json* child(const json& obj, const std::string& key) const {
        if (!obj.is_object()) return nullptr;
        const auto it = obj.find(key);
        return it == obj.end() ? nullptr : &*it;
    }

    double number(const json& obj, const std::string& path, const std::string& key, double fallback) {
        const json* v = child(obj, key);
        if (!v) return fallback;
        if (!v->is_number()) {
            fail(path + "." + key, "must be a number");
            return fallback;
        }
        return v->get<double>();
    }

    std::uint64_t integer(const json& obj, const std::string& path, const std::string& key,
                          std::uint64_t fallback) {
        const json* v = child(obj, key);
        if (!v) return fallback;
        if (!v->is_number_integer() || v->get<long long>() < 0) {
            fail(path + "." + key, "must be a nonnegative integer");
            return fallback;
        }
        return v->get<std::uint64_t>();
    }

    bool boolean(const json& obj, const std::string& path, const std::string& key, bool fallback) {
        const json* v = child(obj, key);
        if (!v) return fallback;
        if (!v->is_boolean()) {
            fail(path + "." + key, "must be true or false");
            return fallback;
        }
        return v->get<bool>();
    }

    std::string text(const json& obj, const std::string& path, const std::string& key,
                     std::string fallback) {
        const json* v = child(obj, key);
        if (!v) return fallback;
        if (!v->is_string()) {
            fail(path + "." + key, "must be a string");
            return fallback;
        }
        return v->get<std::string>();
    }

    std::vector<double> numbers(const json& obj, const std::string& path, const std::string& key,
                                std::vector<double> fallback) {
        const json* v = child(obj, key);
        if (!v) return fallback;
        if (!v->is_array()) {
            fail(path + "." + key, "must be an array of numbers");
            return fallback;
        }
        std::vector<double> out;
        for (const auto& e : *v) {
            if (!e.is_number()) {
                fail(path + "." + key, "must be an array of numbers");
                return fallback;
            }
            out.push_back(e.get<double>());
        }
        return out;
    }

    void fail(std::string path, std::string message) { sink_.push_back({std::move(path), std::move(message)}); }

    void require(bool ok, const std::string& path, const std::string& message) {
        if (!ok) fail(path, message);
    }

private:
    std::vector<Violation>& sink_;
};

const json& object_or_empty(const json& parent, const char* key) {
    static const json empty = json::object();
    if (!parent.is_object()) return empty;
    const auto it = parent.find(key);
    return it == parent.end() ? empty : *it;
}

bool is_integer_ratio(double a, double b) {
    const double r = a / b;
    return std::abs(r - std::round(r)) <= 1e-9 * std::max(1.0, std::abs(r)) && std::round(r) >= 1.0;
}

void check_probability_vector(Reader& rd, const std::vector<double>& w, const std::string& path) {
    double total = 0.0;
    for (double v : w) {
        if (!(v >= 0.0)) rd.fail(path, "weights must be nonnegative");
        total += v;
    }
    rd.require(std::abs(total - 1.0) <= 1e-9, path, "weights must sum to 1");
}

AxisRange read_axis(Reader& rd, const json& parent, const std::string& path, const char* key,
                    AxisRange fallback) {
    const json& obj = object_or_empty(parent, key);
    const std::string p = path + "." + key;
    AxisRange a{rd.number(obj, p, "min", fallback.min), rd.number(obj, p, "max", fallback.max),
                rd.number(obj, p, "step", fallback.step)};
    rd.require(a.step > 0.0, p + ".step", "step must be positive");
    rd.require(a.max > a.min, p + ".max", "max must exceed min");
    if (a.step > 0.0 && a.max > a.min) {
        rd.require(is_integer_ratio(a.max - a.min, a.step), p + ".step",
                   "(max - min) / step must be an integer");
    }
    return a;
}

SeverityModel read_severity(Reader& rd, const json& obj, const std::string& p, SeverityModel s) {
    s.mu = rd.number(obj, p, "mu", s.mu);
    s.sigma = rd.number(obj, p, "sigma", s.sigma);
    s.xi = rd.number(obj, p, "xi", s.xi);
    s.exposure_cap = rd.number(obj, p, "exposure_cap", s.exposure_cap);
    s.market_share = rd.number(obj, p, "market_share", s.market_share);
    rd.require(s.sigma > 0.0, p + ".sigma", "scale must be positive");
    rd.require(s.xi > 0.0 && s.xi < 1.0, p + ".xi", "tail index must lie in (0,1) for finite mean");
    rd.require(s.mu >= 0.0, p + ".mu", "threshold must be nonnegative");
    rd.require(s.market_share > 0.0 && s.market_share <= 1.0, p + ".market_share",
               "market share must lie in (0,1]");
    rd.require(s.exposure_cap > s.mu, p + ".exposure_cap", "exposure cap must exceed the threshold");
    return s;
}

}  // namespace

ConfigError::ConfigError(std::vector<Violation> violations)
    : Error(join_messages(violations)), violations_(std::move(violations)) {}

ConfigError::ConfigError(std::string path, std::string message)
    : ConfigError(std::vector<Violation>{{std::move(path), std::move(message)}}) {}

std::size_t AxisRange::count() const {
    return static_cast<std::size_t>(std::llround((max - min) / step)) + 1;
}

ModelBundle validate_config(const json& raw) {
    std::vector<Violation> errs;
    Reader rd(errs);
    ModelBundle b;
    if (!raw.is_object()) {
        throw ConfigError("$", "configuration must be a JSON object");
    }
    b.name = rd.text(raw, "", "name", "unnamed");

    const json& model = object_or_empty(raw, "model");
    const json& js = object_or_empty(model, "seasonality");
    Seasonality season;
    season.d0 = rd.number(js, "model.seasonality", "d0", season.d0);
    season.d1 = rd.number(js, "model.seasonality", "d1", season.d1);
    season.alpha_hat = rd.number(js, "model.seasonality", "alpha_hat", season.alpha_hat);
    season.beta_hat = rd.number(js, "model.seasonality", "beta_hat", season.beta_hat);
    season.normalize_yearly = rd.boolean(js, "model.seasonality", "normalize_yearly", true);
    rd.require(season.d0 >= 0.0 && season.d0 < season.d1 && season.d1 <= 1.0, "model.seasonality.d0",
               "season dates must satisfy 0 <= d0 < d1 <= 1");
    rd.require(season.alpha_hat > 0.0, "model.seasonality.alpha_hat", "shape must be positive");
    rd.require(season.beta_hat > 0.0, "model.seasonality.beta_hat", "shape must be positive");

    // Economics first: the Bernoulli intensity needs the horizon.
    const json& je = object_or_empty(raw, "economics");
    auto& e = b.econ;
    const std::string pe = "economics";
    e.premium_rate = rd.number(je, pe, "premium_rate", e.premium_rate);
    e.interest = rd.number(je, pe, "interest", e.interest);
    e.issue_cost = rd.number(je, pe, "H0", e.issue_cost);
    e.penalty_decay = rd.number(je, pe, "rho", e.penalty_decay);
    e.penalty_bump_scale = rd.number(je, pe, "penalty_bump_scale", e.penalty_bump_scale);
    e.risk_aversion = rd.number(je, pe, "risk_aversion", e.risk_aversion);
    e.gain_floor = rd.number(je, pe, "gain_floor", e.gain_floor);
    e.maturity = rd.number(je, pe, "maturity", e.maturity);
    e.horizon = rd.number(je, pe, "horizon", e.horizon);
    e.max_bonds = rd.integer(je, pe, "max_bonds", e.max_bonds);
    e.warming_premium_slope = rd.number(je, pe, "warming_premium_slope", e.warming_premium_slope);
    e.initial_cash = rd.number(je, pe, "initial_cash", e.initial_cash);
    rd.require(e.interest >= 0.0, pe + ".interest", "interest rate must be nonnegative");
    rd.require(e.penalty_decay >= 0.0, pe + ".rho", "penalty decay must be nonnegative");
    rd.require(e.issue_cost >= 0.0, pe + ".H0", "issue cost must be nonnegative");
    rd.require(e.risk_aversion > 0.0, pe + ".risk_aversion", "risk aversion must be positive");
    rd.require(e.gain_floor < 0.0, pe + ".gain_floor", "gain floor must be negative");
    rd.require(e.maturity > 0.0, pe + ".maturity", "maturity must be positive");
    rd.require(e.horizon > 0.0, pe + ".horizon", "horizon must be positive");
    if (e.maturity > 0.0 && e.horizon > 0.0) {
        rd.require(rational_denominator(e.horizon / e.maturity) != 0, pe + ".maturity",
                   "horizon / maturity must be rational so that a common time step exists");
    }

    const json& ji = object_or_empty(model, "intensity");
    const std::string variant = rd.text(ji, "model.intensity", "variant", "gamma");
    if (variant == "gamma") {
        b.intensity = IntensityModel::gamma_form(season);
        const json& jp = object_or_empty(ji, "prior");
        GammaPosterior g{rd.number(jp, "model.intensity.prior", "alpha", 25.0),
                         rd.number(jp, "model.intensity.prior", "beta", 50.0)};
        rd.require(g.alpha > 0.0, "model.intensity.prior.alpha", "Gamma shape must be positive");
        rd.require(g.beta > 0.0, "model.intensity.prior.beta", "Gamma rate must be positive");
        b.prior.lambda = g;
    } else if (variant == "bernoulli") {
        auto levels = rd.numbers(ji, "model.intensity", "levels", {0.2, 0.3, 0.4});
        auto weights = rd.numbers(ji, "model.intensity", "prior_weights",
                                  std::vector<double>(levels.size(), 1.0 / static_cast<double>(levels.size())));
        bool ok = !levels.empty();
        for (std::size_t i = 0; i < levels.size(); ++i) {
            ok = ok && levels[i] >= 0.0 && (i == 0 || levels[i] > levels[i - 1]);
        }
        rd.require(ok, "model.intensity.levels", "levels must be nonnegative and strictly increasing");
        rd.require(weights.size() == levels.size(), "model.intensity.prior_weights",
                   "one prior weight per level is required");
        check_probability_vector(rd, weights, "model.intensity.prior_weights");
        if (ok && e.horizon > 0.0) b.intensity = IntensityModel::bernoulli_form(season, e.horizon, levels);
        b.prior.lambda = ScenarioWeights{weights};
    } else {
        rd.fail("model.intensity.variant", "must be \"gamma\" or \"bernoulli\"");
    }

    const json& jsev = object_or_empty(model, "severity");
    b.severity = read_severity(rd, jsev, "model.severity", b.severity);
    b.severity.n_atoms = rd.integer(jsev, "model.severity", "n_atoms", b.severity.n_atoms);
    rd.require(b.severity.n_atoms >= 1, "model.severity.n_atoms", "at least one atom is required");
    if (const json* alts = rd.child(jsev, "alternatives"); alts && alts->is_array() && !alts->empty()) {
        SeverityHook hook;
        for (std::size_t i = 0; i < alts->size(); ++i) {
            const std::string p = "model.severity.alternatives[" + std::to_string(i) + "]";
            SeverityModel s = read_severity(rd, (*alts)[i], p, b.severity);
            s.n_atoms = b.severity.n_atoms;
            hook.candidates.push_back(s);
            hook.prior.push_back(rd.number((*alts)[i], p, "weight", 0.0));
        }
        check_probability_vector(rd, hook.prior, "model.severity.alternatives");
        hook.truth = rd.integer(jsev, "model.severity", "truth", 0);
        rd.require(hook.truth < hook.candidates.size(), "model.severity.truth", "index out of range");
        b.severity_hook = hook;
        b.prior.severity = FiniteSupportPosterior{{}, hook.prior};
        for (std::size_t i = 0; i < hook.prior.size(); ++i) {
            b.prior.severity->support.push_back(static_cast<double>(i));
        }
    }

    const json& jm = object_or_empty(raw, "market");
    b.return_periods = rd.numbers(jm, "market", "return_periods", b.return_periods);
    b.warming_slope = rd.number(jm, "market", "warming_slope", 0.0);
    {
        bool ok = b.return_periods.size() >= 2;
        for (std::size_t i = 0; i < b.return_periods.size(); ++i) {
            ok = ok && b.return_periods[i] > 1.0 && (i == 0 || b.return_periods[i] > b.return_periods[i - 1]);
        }
        rd.require(ok, "market.return_periods",
                   "need at least two return periods, all > 1 and strictly increasing");
    }
    const json& jn = object_or_empty(jm, "coupon_noise");
    b.noise.atoms = rd.numbers(jn, "market.coupon_noise", "atoms", b.noise.atoms);
    b.noise.weights = rd.numbers(jn, "market.coupon_noise", "weights", b.noise.weights);
    rd.require(!b.noise.atoms.empty() && b.noise.atoms.size() == b.noise.weights.size(),
               "market.coupon_noise", "atoms and weights must be non-empty and aligned");
    check_probability_vector(rd, b.noise.weights, "market.coupon_noise.weights");
    if (const json* jc = rd.child(jm, "coupon_parameter"); jc && jc->is_object()) {
        CouponHook hook;
        const std::string p = "market.coupon_parameter";
        hook.support = rd.numbers(*jc, p, "support", {});
        hook.prior = rd.numbers(*jc, p, "prior", {});
        hook.truth = rd.integer(*jc, p, "truth", 0);
        check_probability_vector(rd, hook.prior, p + ".prior");
        rd.require(!hook.support.empty() && hook.support.size() == hook.prior.size(), p,
                   "support and prior must be non-empty and aligned");
        rd.require(hook.truth < hook.support.size(), p + ".truth", "index out of range");
        if (const json* aw = rd.child(*jc, "atom_weights"); aw && aw->is_array()) {
            for (std::size_t i = 0; i < aw->size(); ++i) {
                auto row = rd.numbers(*aw, p + ".atom_weights", std::to_string(i), {});
                if ((*aw)[i].is_array()) {
                    row.clear();
                    for (const auto& x : (*aw)[i]) row.push_back(x.is_number() ? x.get<double>() : -1.0);
                }
                check_probability_vector(rd, row, p + ".atom_weights[" + std::to_string(i) + "]");
                rd.require(row.size() == b.noise.atoms.size(), p + ".atom_weights",
                           "each row needs one weight per noise atom");
                hook.atom_weights.push_back(row);
            }
        }
        rd.require(hook.atom_weights.size() == hook.support.size(), p + ".atom_weights",
                   "one row per support point is required");
        b.coupon_hook = hook;
        b.prior.coupon = FiniteSupportPosterior{hook.support, hook.prior};
    }

    const json& jg = object_or_empty(raw, "grid");
    auto& g = b.grid;
    g.h_time = rd.number(jg, "grid", "h_time", g.h_time);
    g.x1 = read_axis(rd, jg, "grid", "x1", g.x1);
    g.x2 = read_axis(rd, jg, "grid", "x2", g.x2);
    g.alpha = read_axis(rd, jg, "grid", "alpha", g.alpha);
    g.simplex_divisions = rd.integer(jg, "grid", "simplex_divisions", g.simplex_divisions);
    g.r_count = rd.integer(jg, "grid", "r_count", g.r_count);
    g.store_all_values = rd.boolean(jg, "grid", "store_all_values", g.store_all_values);
    g.max_memory_gb = rd.number(jg, "grid", "max_memory_gb", g.max_memory_gb);
    rd.require(g.h_time > 0.0, "grid.h_time", "time step must be positive");
    if (g.h_time > 0.0 && e.horizon > 0.0 && e.maturity > 0.0) {
        rd.require(is_integer_ratio(e.horizon, g.h_time), "grid.h_time", "horizon / h_time must be an integer");
        rd.require(is_integer_ratio(e.maturity, g.h_time), "grid.h_time", "maturity / h_time must be an integer");
        if (e.max_bonds > 0) {
            rd.require(e.maturity / g.h_time > 1.5, "grid.h_time",
                       "maturity must span at least two time steps");
        }
    }
    rd.require(g.x2.min >= 0.0, "grid.x2.min", "the price penalty is nonnegative; x2 axis must start at >= 0");
    rd.require(g.alpha.min > 0.0, "grid.alpha.min", "Gamma shape axis must be positive");
    rd.require(g.simplex_divisions >= 1, "grid.simplex_divisions", "must be at least 1");
    rd.require(g.r_count >= 2, "grid.r_count", "coupon axis needs at least two nodes");

    const json& jsim = object_or_empty(raw, "simulation");
    auto& s = b.sim;
    s.lambda0 = rd.number(jsim, "simulation", "lambda0", s.lambda0);
    s.seed = rd.integer(jsim, "simulation", "seed", s.seed);
    s.n_paths = rd.integer(jsim, "simulation", "n_paths", s.n_paths);
    const std::string mode = rd.text(jsim, "simulation", "severity_mode", "atoms");
    if (mode == "atoms") {
        s.severity_mode = SeverityMode::Atoms;
    } else if (mode == "continuous") {
        s.severity_mode = SeverityMode::Continuous;
    } else {
        rd.fail("simulation.severity_mode", "must be \"atoms\" or \"continuous\"");
    }
    rd.require(s.lambda0 >= 0.0, "simulation.lambda0", "true intensity must be nonnegative");
    rd.require(s.n_paths >= 1, "simulation.n_paths", "at least one path is required");
    if (variant == "bernoulli" && errs.empty()) {
        try {
            (void)b.intensity.level_index(s.lambda0);
        } catch (const DomainError&) {
            rd.fail("simulation.lambda0", "must be one of the scenario levels");
        }
    }

    if (!errs.empty()) throw ConfigError(std::move(errs));

    try {
        b.layers = make_layers(b.return_periods, b.prior.lambda, b.severity, b.intensity,
                               b.warming_slope, e.horizon);
    } catch (const Error& ex) {
        throw ConfigError("market.return_periods", ex.what());
    }
    return b;
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ModelBundle load_config(const std::filesystem::path& path) {
    const std::string text = read_text_file(path);
    json raw;
    try {
        raw = json::parse(text);
    } catch (const json::parse_error& ex) {
        throw ConfigError("$", std::string("malformed JSON: ") + ex.what());
    }
    return validate_config(raw);
}

void apply_override(json& raw, std::string_view dotted_path, double value) {
    json* node = &raw;
    std::string_view rest = dotted_path;
    while (true) {
        const auto dot = rest.find('.');
        const std::string key(rest.substr(0, dot));
        if (dot == std::string_view::npos) {
            // Integral values stay integers so that count-valued keys accept them.
            if (std::nearbyint(value) == value && std::abs(value) < 9.0e15) {
                (*node)[key] = static_cast<long long>(value);
            } else {
                (*node)[key] = value;
            }
            return;
        }
        if (!node->contains(key) || !(*node)[key].is_object()) (*node)[key] = json::object();
        node = &(*node)[key];
        rest = rest.substr(dot + 1);
    }
}

json to_json(const ModelBundle& b) {
    json j;
    j["name"] = b.name;
    const auto& s = b.intensity.seasonality();
    j["model"]["seasonality"] = {{"d0", s.d0}, {"d1", s.d1}, {"alpha_hat", s.alpha_hat},
                                 {"beta_hat", s.beta_hat}, {"normalize_yearly", s.normalize_yearly}};
    if (const auto* g = std::get_if<GammaPosterior>(&b.prior.lambda)) {
        j["model"]["intensity"] = {{"variant", "gamma"}, {"prior", {{"alpha", g->alpha}, {"beta", g->beta}}}};
    } else {
        const auto levels = b.intensity.levels();
        j["model"]["intensity"] = {{"variant", "bernoulli"},
                                   {"levels", std::vector<double>(levels.begin(), levels.end())},
                                   {"prior_weights", std::get<ScenarioWeights>(b.prior.lambda).weights}};
    }
    const auto& v = b.severity;
    j["model"]["severity"] = {{"mu", v.mu}, {"sigma", v.sigma}, {"xi", v.xi},
                              {"exposure_cap", v.exposure_cap}, {"market_share", v.market_share},
                              {"n_atoms", v.n_atoms}};
    const auto& e = b.econ;
    j["economics"] = {{"premium_rate", e.premium_rate}, {"interest", e.interest}, {"H0", e.issue_cost},
                      {"rho", e.penalty_decay}, {"penalty_bump_scale", e.penalty_bump_scale},
                      {"risk_aversion", e.risk_aversion}, {"gain_floor", e.gain_floor},
                      {"maturity", e.maturity}, {"horizon", e.horizon}, {"max_bonds", e.max_bonds},
                      {"warming_premium_slope", e.warming_premium_slope}, {"initial_cash", e.initial_cash}};
    j["market"] = {{"return_periods", b.return_periods}, {"warming_slope", b.warming_slope},
                   {"coupon_noise", {{"atoms", b.noise.atoms}, {"weights", b.noise.weights}}},
                   {"oep", b.layers.base_oep}};
    const auto axis = [](const AxisRange& a) { return json{{"min", a.min}, {"max", a.max}, {"step", a.step}}; };
    j["grid"] = {{"h_time", b.grid.h_time}, {"x1", axis(b.grid.x1)}, {"x2", axis(b.grid.x2)},
                 {"alpha", axis(b.grid.alpha)}, {"simplex_divisions", b.grid.simplex_divisions},
                 {"r_count", b.grid.r_count}};
    j["simulation"] = {{"lambda0", b.sim.lambda0}, {"seed", b.sim.seed}, {"n_paths", b.sim.n_paths},
                       {"severity_mode", b.sim.severity_mode == SeverityMode::Atoms ? "atoms" : "continuous"}};
    return j;
}

std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
    std::ostringstream ss;
    for (unsigned int i = 0; i < len; ++i) {
        ss << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
    }
    return ss.str();
}

}  // namespace catqvi
