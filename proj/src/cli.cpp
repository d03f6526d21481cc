#include "catqvi/cli.hpp"

#include "catqvi/bayes_filter.hpp"
#include "catqvi/config.hpp"
#include "catqvi/error.hpp"
#include "catqvi/logging.hpp"
#include "catqvi/market_model.hpp"
#include "catqvi/pde_solver.hpp"
#include "catqvi/simulator.hpp"
#include "catqvi/value_dump.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

namespace catqvi {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

struct LoadedConfig {
    ModelBundle bundle;
    std::string file_hash;
    std::string effective_hash;
};

struct CommonArgs {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    unsigned threads = 0;
    std::map<std::string, double> grid_overrides;
    std::vector<std::string> sets;
};

void add_grid_flags(CLI::App* cmd, CommonArgs& args) {
    for (const char* axis : {"x1", "x2", "alpha"}) {
        for (const char* field : {"min", "max", "step"}) {
            const std::string key = std::string("grid.") + axis + "." + field;
            cmd->add_option_function<double>(
                "--" + key, [&args, key](double v) { args.grid_overrides[key] = v; },
                "override " + key);
        }
    }
    cmd->add_option_function<double>(
        "--grid.h_time", [&args](double v) { args.grid_overrides["grid.h_time"] = v; }, "override grid.h_time");
    cmd->add_option("--set", args.sets, "numeric override KEY=VALUE (dotted key path); repeatable");
}

LoadedConfig load(const CommonArgs& args) {
    const std::string text = read_text_file(args.config);
    json raw;
    try {
        raw = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("$", std::string("malformed JSON: ") + e.what());
    }
    for (const auto& s : args.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError(s, "override must look like KEY=VALUE");
        double v = 0.0;
        try {
            std::size_t used = 0;
            v = std::stod(s.substr(eq + 1), &used);
            if (used != s.size() - eq - 1) throw std::invalid_argument("trailing characters");
        } catch (const std::exception&) {
            throw ConfigError(s.substr(0, eq), "override value is not a number");
        }
        apply_override(raw, s.substr(0, eq), v);
    }
    for (const auto& [key, v] : args.grid_overrides) apply_override(raw, key, v);
    LoadedConfig c{validate_config(raw), sha256_hex(text), ""};
    c.effective_hash = sha256_hex(to_json(c.bundle).dump());
    return c;
}

fs::path prepare_out(const std::string& out) {
    if (out.empty()) throw IoError("--out is required for this command");
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw IoError("cannot create output directory " + out + ": " + ec.message());
    return fs::path(out);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path.string());
    f << text;
    if (!f) throw IoError("failed while writing " + path.string());
}

void write_manifest(const fs::path& dir, const std::string& command, const CommonArgs& args,
                    const LoadedConfig* cfg, std::optional<std::uint64_t> seed, const json& timings) {
    json m;
    m["command"] = command;
    m["config_path"] = args.config;
    m["config_sha256"] = cfg ? json(cfg->file_hash) : json(nullptr);
    m["effective_config_sha256"] = cfg ? json(cfg->effective_hash) : json(nullptr);
    m["seed"] = seed ? json(*seed) : json(nullptr);
    m["output_dir"] = dir.string();
    m["tool_version"] = kToolVersion;
    m["timings_seconds"] = timings;
    write_text(dir / "manifest.json", m.dump(2) + "\n");
}

int cmd_validate(const CommonArgs& args) {
    const auto start = Clock::now();
    const LoadedConfig cfg = load(args);
    std::cout << "valid: " << cfg.bundle.name << " (sha256 " << cfg.file_hash << ")\n";
    if (!args.out.empty()) {
        const fs::path dir = prepare_out(args.out);
        write_text(dir / "config.effective.json", to_json(cfg.bundle).dump(2) + "\n");
        write_manifest(dir, "validate", args, &cfg, std::nullopt, {{"total", seconds_since(start)}});
    }
    return kExitOk;
}

int cmd_solve(const CommonArgs& args) {
    const auto start = Clock::now();
    const LoadedConfig cfg = load(args);
    const fs::path dir = prepare_out(args.out);
    SolverOptions opt;
    opt.threads = args.threads;
    const auto ws = Workspace::build(cfg.bundle, opt);
    write_text(dir / "cfl.json", ws->cfl().to_json().dump(2) + "\n");
    json coverage = ws->coverage().to_json();
    coverage["node_count"] = ws->node_count();
    coverage["configurations"] = ws->tuple_count();
    coverage["classes"] = ws->classes().size();
    write_text(dir / "coverage.json", coverage.dump(2) + "\n");
    const double t_build = seconds_since(start);
    const Solution sol = backward_induction(ws);
    const double t_solve = seconds_since(start) - t_build;
    write_dump(dir / "value.cbqv", sol, cfg.effective_hash);
    std::cout << "solved " << cfg.bundle.name << ": " << ws->node_count() << " nodes, " << ws->tuple_count()
              << " configurations in " << ws->classes().size() << " classes, " << ws->steps() << " steps\n";
    write_manifest(dir, "solve", args, &cfg, std::nullopt,
                   {{"build", t_build}, {"solve", t_solve}, {"total", seconds_since(start)}});
    return kExitOk;
}

struct SimulateArgs {
    std::optional<std::size_t> n_paths;
    std::size_t paths = 0;
    bool no_bonds = false;
    std::string policy;
    bool allow_mismatch = false;
    std::optional<double> lambda0;
};

int cmd_simulate(const CommonArgs& args, const SimulateArgs& sa) {
    const auto start = Clock::now();
    const LoadedConfig cfg = load(args);
    if (sa.no_bonds == !sa.policy.empty()) throw ConfigError("--policy", "give exactly one of --policy or --no-bonds");
    const fs::path dir = prepare_out(args.out);
    ScenarioTruth truth{sa.lambda0.value_or(cfg.bundle.sim.lambda0), args.seed.value_or(cfg.bundle.sim.seed),
                        sa.n_paths.value_or(cfg.bundle.sim.n_paths)};
    if (cfg.bundle.intensity.variant() == IntensityVariant::Bernoulli) (void)cfg.bundle.intensity.level_index(truth.lambda0);

    std::optional<Solution> solution;
    std::unique_ptr<PolicySource> policy;
    if (sa.no_bonds) {
        policy = std::make_unique<NoBondPolicy>();
    } else {
        LoadedDump dump = read_dump(fs::path(sa.policy));
        const auto dumped = dump.header.value("config_sha256", std::string{});
        if (dumped != cfg.effective_hash) {
            if (!sa.allow_mismatch) {
                throw ConfigError("--policy", "policy dump was solved for a different configuration (hash " + dumped +
                                                  "); pass --allow-hash-mismatch to use it anyway");
            }
            spdlog::warn("using a policy dump solved for a different configuration");
        }
        SolverOptions opt;
        opt.threads = args.threads;
        solution.emplace(solution_from_dump(Workspace::build(cfg.bundle, opt), std::move(dump)));
        policy = std::make_unique<GridPolicy>(*solution);
    }

    SimOptions opt;
    opt.threads = args.threads;
    const MonteCarloSummary s = run_monte_carlo(cfg.bundle, *policy, truth, opt);
    json summary = s.to_json();
    summary["policy"] = sa.no_bonds ? "no-bonds" : sa.policy;
    summary["config"] = to_json(cfg.bundle);
    write_text(dir / "summary.json", summary.dump(2) + "\n");

    std::ostringstream cash;
    cash << "path,final_cash,utility\n" << std::setprecision(17);
    for (std::size_t i = 0; i < s.final_cash.size(); ++i) cash << i << ',' << s.final_cash[i] << ',' << s.utility[i] << '\n';
    write_text(dir / "final_cash.csv", cash.str());

    std::ostringstream dens;
    write_density_csv(kernel_density(s.final_cash), dens);
    write_text(dir / "density.csv", dens.str());
    write_text(dir / "density.gp",
               "set datafile separator ','\nset xlabel 'final cash'\nset ylabel 'density'\n"
               "plot 'density.csv' using 1:2 skip 1 with lines title 'final cash'\n");

    if (sa.paths > 0) {
        fs::create_directories(dir / "paths");
        SimOptions popt;
        popt.record_samples = true;
        for (std::size_t i = 0; i < std::min(sa.paths, truth.n_paths); ++i) {
            const PathRecord r = run_path(cfg.bundle, *policy, truth, i, popt);
            std::ostringstream ev;
            write_event_log_csv(r, ev);
            std::ostringstream name;
            name << "path_" << std::setw(6) << std::setfill('0') << i;
            write_text(dir / "paths" / (name.str() + "_events.csv"), ev.str());
            std::ostringstream st;
            st << "t,x1,x2,post_a,post_b,post_c,running,coupon_sum\n" << std::setprecision(17);
            for (const auto& smp : r.samples) {
                st << smp.t << ',' << smp.x.x1 << ',' << smp.x.x2 << ',' << smp.posterior[0] << ','
                   << smp.posterior[1] << ',' << smp.posterior[2] << ',' << smp.book.running() << ','
                   << smp.book.coupon_sum() << '\n';
            }
            write_text(dir / "paths" / (name.str() + "_states.csv"), st.str());
        }
    }
    std::cout << "simulated " << truth.n_paths << " paths: mean final cash " << s.mean_cash << ", sd " << s.sd_cash
              << ", 0.5% quantile " << s.cash_quantile(0.005) << "\n";
    write_manifest(dir, "simulate", args, &cfg, truth.seed, {{"total", seconds_since(start)}});
    return kExitOk;
}

int cmd_oep(const CommonArgs& args, std::vector<double> periods, std::vector<double> times) {
    const auto start = Clock::now();
    const LoadedConfig cfg = load(args);
    const auto& b = cfg.bundle;
    if (periods.empty()) periods = b.return_periods;
    if (times.empty()) times = {0.0};
    std::ostringstream csv;
    csv << "return_period,t,oep\n" << std::setprecision(17);
    for (double tau : periods) {
        const double base = oep_base(tau, b.prior.lambda, b.severity, b.intensity);
        for (double t : times) csv << tau << ',' << t << ',' << base * b.layers.warming_factor(t) << '\n';
    }
    if (args.out.empty()) {
        std::cout << csv.str();
        return kExitOk;
    }
    const fs::path dir = prepare_out(args.out);
    write_text(dir / "oep.csv", csv.str());
    write_manifest(dir, "oep", args, &cfg, std::nullopt, {{"total", seconds_since(start)}});
    return kExitOk;
}

std::vector<double> read_event_times(const std::string& path) {
    std::istringstream in(read_text_file(path));
    std::vector<double> times;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        double t = 0.0;
        if (!(ls >> t)) {
            if (line.find_first_not_of(" \t\r,") == std::string::npos) continue;
            throw ConfigError(path + ":" + std::to_string(lineno), "not a number");
        }
        if (!times.empty() && t < times.back()) {
            throw ConfigError(path + ":" + std::to_string(lineno), "event times must be sorted");
        }
        times.push_back(t);
    }
    return times;
}

int cmd_bayes_demo(const CommonArgs& args, const std::string& events_path) {
    const auto start = Clock::now();
    const LoadedConfig cfg = load(args);
    const auto& b = cfg.bundle;
    const std::vector<double> events = events_path.empty() ? std::vector<double>{} : read_event_times(events_path);
    for (double t : events) {
        if (t < 0.0 || t > b.econ.horizon) throw ConfigError(events_path, "event time outside [0, horizon]");
    }
    const bool gamma = std::holds_alternative<GammaPosterior>(b.prior.lambda);
    std::ostringstream csv;
    csv << std::setprecision(17);
    if (gamma) {
        csv << "t,event,mean,sd\n";
    } else {
        csv << "t,event";
        for (std::size_t i = 0; i < b.intensity.levels().size(); ++i) csv << ",w" << i + 1;
        csv << '\n';
    }
    const auto row = [&](double t, bool event, const LambdaPosterior& p) {
        csv << t << ',' << (event ? 1 : 0);
        if (const auto* g = std::get_if<GammaPosterior>(&p)) {
            csv << ',' << g->mean() << ',' << g->sd();
        } else {
            for (double w : std::get<ScenarioWeights>(p).weights) csv << ',' << w;
        }
        csv << '\n';
    };
    LambdaPosterior post = b.prior.lambda;
    double t = 0.0;
    std::size_t next = 0;
    const auto steps = static_cast<std::size_t>(std::llround(b.econ.horizon / b.grid.h_time));
    row(0.0, false, post);
    for (std::size_t n = 1; n <= steps; ++n) {
        const double tn = static_cast<double>(n) * b.grid.h_time;
        while (next < events.size() && events[next] <= tn) {
            post = advance(post, t, events[next], b.intensity);
            t = events[next];
            post = jump(post, t, b.intensity);
            row(t, true, post);
            ++next;
        }
        post = advance(post, t, tn, b.intensity);
        t = tn;
        row(t, false, post);
    }
    if (args.out.empty()) {
        std::cout << csv.str();
        return kExitOk;
    }
    const fs::path dir = prepare_out(args.out);
    write_text(dir / "posterior.csv", csv.str());
    write_manifest(dir, "bayes-demo", args, &cfg, std::nullopt, {{"total", seconds_since(start)}});
    return kExitOk;
}

int cmd_section(const CommonArgs& args, const std::string& dump_path, SectionSpec spec, const std::string& csv_path) {
    const LoadedConfig cfg = load(args);
    LoadedDump dump = read_dump(fs::path(dump_path));
    if (dump.header.value("config_sha256", std::string{}) != cfg.effective_hash) {
        throw ConfigError("--dump", "value dump was solved for a different configuration");
    }
    const Solution sol = solution_from_dump(Workspace::build(cfg.bundle), std::move(dump));
    std::ostringstream csv;
    export_section_csv(sol, spec, csv);
    if (csv_path.empty()) {
        std::cout << csv.str();
    } else {
        write_text(csv_path, csv.str());
    }
    return kExitOk;
}

int report(int code, const std::string& what) {
    std::cerr << "catqvi: " << what << "\n";
    return code;
}

}  // namespace

int run_cli(int argc, char** argv) {
    init_logging();
    CLI::App app{"Bayesian CAT bond issuance: solve, simulate and inspect the impulse-control model"};
    app.set_version_flag("--version", kToolVersion);
    app.require_subcommand(1);
    CommonArgs common;
    SimulateArgs sim;
    std::vector<double> periods, times;
    std::string events_path, dump_path, csv_path;
    SectionSpec section;

    const auto add_common = [&](CLI::App* cmd, bool needs_out) {
        cmd->add_option("--config", common.config, "configuration file (JSON)")->required();
        auto* out = cmd->add_option("--out", common.out, "output directory");
        if (needs_out) out->required();
        cmd->add_option("--threads", common.threads, "worker threads (0 = all cores)");
        add_grid_flags(cmd, common);
    };

    auto* validate = app.add_subcommand("validate", "check a configuration file");
    add_common(validate, false);

    auto* solve = app.add_subcommand("solve", "run the backward induction and write the value/policy dump");
    add_common(solve, true);

    auto* simulate = app.add_subcommand("simulate", "Monte Carlo under a solved policy or without bonds");
    add_common(simulate, true);
    simulate->add_option_function<std::uint64_t>("--seed", [&](std::uint64_t s) { common.seed = s; }, "RNG seed");
    simulate->add_option_function<std::size_t>("--n-paths", [&](std::size_t n) { sim.n_paths = n; }, "number of paths");
    simulate->add_option("--paths", sim.paths, "write full event logs for the first N paths");
    simulate->add_flag("--no-bonds", sim.no_bonds, "never issue bonds");
    simulate->add_option("--policy", sim.policy, "value/policy dump from `solve`");
    simulate->add_flag("--allow-hash-mismatch", sim.allow_mismatch, "accept a dump solved for another config");
    simulate->add_option_function<double>("--lambda0", [&](double l) { sim.lambda0 = l; }, "true intensity level");

    auto* oep = app.add_subcommand("oep", "tabulate the OEP thresholds");
    add_common(oep, false);
    oep->add_option("--periods", periods, "return periods (default: the configured ones)")->delimiter(',');
    oep->add_option("--times", times, "times in years (default: 0)")->delimiter(',');

    auto* bayes = app.add_subcommand("bayes-demo", "posterior trajectory for a list of event times");
    add_common(bayes, false);
    bayes->add_option("--events", events_path, "file with one event time per line");

    auto* sect = app.add_subcommand("section", "export a two-dimensional section of a value dump to CSV");
    add_common(sect, false);
    sect->add_option("--dump", dump_path, "value dump")->required();
    sect->add_option("--csv", csv_path, "output CSV (default: stdout)");
    sect->add_option("--slice", section.slice, "time slice index");
    sect->add_option("--configuration", section.tuple, "configuration (tuple) index");
    sect->add_option("--axis-a", section.axis_a, "first free axis: x1, x2 or prior");
    sect->add_option("--axis-b", section.axis_b, "second free axis: x1, x2 or prior");
    sect->add_option("--x1-index", section.x1_index, "fixed x1 node");
    sect->add_option("--x2-index", section.x2_index, "fixed x2 node");
    sect->add_option("--prior-index", section.prior_index, "fixed prior node");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitInvalid;
    }

    try {
        if (*validate) return cmd_validate(common);
        if (*solve) return cmd_solve(common);
        if (*simulate) return cmd_simulate(common, sim);
        if (*oep) return cmd_oep(common, periods, times);
        if (*bayes) return cmd_bayes_demo(common, events_path);
        if (*sect) return cmd_section(common, dump_path, section, csv_path);
    } catch (const ConfigError& e) {
        return report(kExitInvalid, e.what());
    } catch (const DomainError& e) {
        return report(kExitInvalid, e.what());
    } catch (const NumericalError& e) {
        return report(kExitNumerical, e.what());
    } catch (const IoError& e) {
        return report(kExitIo, e.what());
    } catch (const json::exception& e) {
        return report(kExitIo, std::string("malformed data: ") + e.what());
    }
    return kExitInvalid;
}

int run_cli(const std::vector<std::string>& args) {
    std::vector<std::string> storage{"catqvi"};
    storage.insert(storage.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& s : storage) argv.push_back(s.data());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace catqvi
