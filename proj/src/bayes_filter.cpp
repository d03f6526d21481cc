#include "catqvi/bayes_filter.hpp"

#include "catqvi/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace catqvi {

namespace {

// w_i * exp(-hazard_i), renormalized through max-log subtraction so that
// long survival products do not underflow.
std::vector<double> reweight_survival(std::span<const double> weights,
                                      std::span<const double> hazards, const char* what) {
    const std::size_t n = weights.size();
    std::vector<double> logw(n, -std::numeric_limits<double>::infinity());
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        if (weights[i] > 0.0) {
            logw[i] = std::log(weights[i]) - hazards[i];
            top = std::max(top, logw[i]);
        }
    }
    if (!std::isfinite(top)) {
        throw NumericalError(std::string(what) + ": all posterior weights vanished");
    }
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        if (std::isfinite(logw[i])) out[i] = std::exp(logw[i] - top);
    }
    normalize_weights(out, what);
    return out;
}

std::vector<double> reweight_likelihood(std::span<const double> weights,
                                        std::span<const double> likelihoods, const char* what) {
    std::vector<double> out(weights.size());
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (!(likelihoods[i] >= 0.0) || !std::isfinite(likelihoods[i])) {
            throw DomainError(std::string(what) + ": likelihoods must be finite and nonnegative");
        }
        out[i] = weights[i] * likelihoods[i];
    }
    double total = 0.0;
    for (double v : out) total += v;
    if (!(total > 0.0)) {
        throw NumericalError(std::string(what) + ": jump at time of zero posterior intensity");
    }
    for (double& v : out) v /= total;
    return out;
}

}  // namespace

void normalize_weights(std::vector<double>& weights, const char* what) {
    double total = 0.0;
    for (double v : weights) total += v;
    if (!(total > 0.0) || !std::isfinite(total)) {
        throw NumericalError(std::string(what) + ": weight vector has no positive finite mass");
    }
    for (double& v : weights) v /= total;
}

double GammaPosterior::sd() const { return std::sqrt(alpha) / beta; }

ScenarioWeights ScenarioWeights::uniform(std::size_t n) {
    return ScenarioWeights{std::vector<double>(n, 1.0 / static_cast<double>(n))};
}

double GridPosterior::mean() const {
    double m = 0.0;
    for (std::size_t i = 0; i < support.size(); ++i) m += weights[i] * support[i];
    return m;
}

double GridPosterior::variance() const {
    const double m = mean();
    double v = 0.0;
    for (std::size_t i = 0; i < support.size(); ++i) {
        const double d = support[i] - m;
        v += weights[i] * d * d;
    }
    return v;
}

GridPosterior GridPosterior::discretized_gamma(double alpha, double beta, double lo, double hi,
                                               std::size_t n) {
    GridPosterior g;
    g.support.resize(n);
    g.weights.resize(n);
    const double step = n > 1 ? (hi - lo) / static_cast<double>(n - 1) : 0.0;
    std::vector<double> logd(n);
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        const double x = lo + step * static_cast<double>(i);
        g.support[i] = x;
        logd[i] = x > 0.0 ? (alpha - 1.0) * std::log(x) - beta * x
                          : -std::numeric_limits<double>::infinity();
        top = std::max(top, logd[i]);
    }
    for (std::size_t i = 0; i < n; ++i) {
        g.weights[i] = std::isfinite(logd[i]) ? std::exp(logd[i] - top) : 0.0;
    }
    normalize_weights(g.weights, "discretized_gamma");
    return g;
}

GammaPosterior gamma_advance(const GammaPosterior& post, double t, double s,
                             const IntensityModel& model) {
    if (model.variant() != IntensityVariant::Gamma) {
        throw DomainError("gamma_advance requires the Gamma intensity form");
    }
    if (s < t) throw DomainError("gamma_advance: s must not precede t");
    return {post.alpha, post.beta + model.seasonality().integral(t, s)};
}

GammaPosterior gamma_jump(const GammaPosterior& post) { return {post.alpha + 1.0, post.beta}; }

ScenarioWeights scenario_advance(const ScenarioWeights& w, double t, double s,
                                 const IntensityModel& model) {
    if (s < t) throw DomainError("scenario_advance: s must not precede t");
    const auto levels = model.levels();
    if (levels.size() != w.weights.size()) {
        throw DomainError("scenario_advance: weight count does not match the scenario set");
    }
    if (s == t) return w;
    std::vector<double> hazards(levels.size());
    for (std::size_t i = 0; i < levels.size(); ++i) hazards[i] = model.integrated(t, s, levels[i]);
    return {reweight_survival(w.weights, hazards, "scenario_advance")};
}

ScenarioWeights scenario_jump(const ScenarioWeights& w, double zeta, const IntensityModel& model) {
    const auto levels = model.levels();
    if (levels.size() != w.weights.size()) {
        throw DomainError("scenario_jump: weight count does not match the scenario set");
    }
    std::vector<double> lik(levels.size());
    for (std::size_t i = 0; i < levels.size(); ++i) lik[i] = model.rate_for_level(zeta, i);
    return {reweight_likelihood(w.weights, lik, "scenario_jump")};
}

GridPosterior grid_advance(const GridPosterior& post, double t, double s,
                           const IntensityModel& model) {
    if (s < t) throw DomainError("grid_advance: s must not precede t");
    std::vector<double> hazards(post.support.size());
    for (std::size_t i = 0; i < hazards.size(); ++i) {
        hazards[i] = model.integrated(t, s, post.support[i]);
    }
    return {post.support, reweight_survival(post.weights, hazards, "grid_advance")};
}

GridPosterior grid_jump(const GridPosterior& post, double zeta, const IntensityModel& model) {
    std::vector<double> lik(post.support.size());
    for (std::size_t i = 0; i < lik.size(); ++i) lik[i] = model.rate_unchecked(zeta, post.support[i]);
    return {post.support, reweight_likelihood(post.weights, lik, "grid_jump")};
}

FiniteSupportPosterior mark_jump_update(const FiniteSupportPosterior& post,
                                        std::span<const double> likelihoods) {
    if (likelihoods.size() != post.weights.size()) {
        throw DomainError("mark_jump_update: likelihoods not aligned with the support");
    }
    return {post.support, reweight_likelihood(post.weights, likelihoods, "mark_jump_update")};
}

double mean_intensity(const GammaPosterior& post, double t, const IntensityModel& model) {
    const double v = post.mean() * model.seasonality()(t);
    if (!std::isfinite(v)) throw NumericalError("mean_intensity is not finite");
    return v;
}

double mean_intensity(const ScenarioWeights& w, double t, const IntensityModel& model) {
    double v = 0.0;
    for (std::size_t i = 0; i < w.weights.size(); ++i) v += w.weights[i] * model.rate_for_level(t, i);
    if (!std::isfinite(v)) throw NumericalError("mean_intensity is not finite");
    return v;
}

double mean_intensity(const GridPosterior& post, double t, const IntensityModel& model) {
    double v = 0.0;
    for (std::size_t i = 0; i < post.support.size(); ++i) {
        v += post.weights[i] * model.rate_unchecked(t, post.support[i]);
    }
    if (!std::isfinite(v)) throw NumericalError("mean_intensity is not finite");
    return v;
}

double mean_intensity(const LambdaPosterior& post, double t, const IntensityModel& model) {
    return std::visit([&](const auto& p) { return mean_intensity(p, t, model); }, post);
}

LambdaPosterior advance(const LambdaPosterior& post, double t, double s,
                        const IntensityModel& model) {
    if (const auto* g = std::get_if<GammaPosterior>(&post)) return gamma_advance(*g, t, s, model);
    return scenario_advance(std::get<ScenarioWeights>(post), t, s, model);
}

LambdaPosterior jump(const LambdaPosterior& post, double zeta, const IntensityModel& model) {
    if (const auto* g = std::get_if<GammaPosterior>(&post)) return gamma_jump(*g);
    return scenario_jump(std::get<ScenarioWeights>(post), zeta, model);
}

}  // namespace catqvi
