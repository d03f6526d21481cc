#pragma once

// Posterior dynamics of the unknown intensity level lambda (and of the
// finite-support severity / coupon parameters) under Bayes rule for an
// inhomogeneous Poisson observation stream.
//
// Between claims every posterior atom is reweighted by its survival factor
// exp(-int Lambda); at a claim time zeta it is reweighted by Lambda(zeta, .).
// The Gamma family is conjugate for the multiplicative form lambda * h(t);
// the scenario (Bernoulli) family is the same update on a finite support.

#include "catqvi/model_core.hpp"

#include <optional>
#include <span>
#include <variant>
#include <vector>

namespace catqvi {

struct GammaPosterior {
    double alpha = 25.0;
    double beta = 50.0;

    double mean() const { return alpha / beta; }
    double sd() const;
    double variance() const { return alpha / (beta * beta); }
};

/// Normalized weights over the scenario levels of a Bernoulli-form model.
struct ScenarioWeights {
    std::vector<double> weights;

    static ScenarioWeights uniform(std::size_t n);
};

/// Arbitrary finite grid over lambda; the brute-force oracle for both
/// closed forms.
struct GridPosterior {
    std::vector<double> support;
    std::vector<double> weights;

    double mean() const;
    double variance() const;

    /// Discretized Gamma(alpha, beta) on `n` equispaced points of [lo, hi],
    /// weights proportional to the density.
    static GridPosterior discretized_gamma(double alpha, double beta, double lo, double hi,
                                           std::size_t n);
};

/// Finite-support posterior for the severity (gamma) or coupon (upsilon) parameters.
struct FiniteSupportPosterior {
    std::vector<double> support;
    std::vector<double> weights;
};

using LambdaPosterior = std::variant<GammaPosterior, ScenarioWeights>;

struct PriorState {
    LambdaPosterior lambda;
    std::optional<FiniteSupportPosterior> severity;
    std::optional<FiniteSupportPosterior> coupon;
};

// Gamma conjugate closed form.
GammaPosterior gamma_advance(const GammaPosterior& post, double t, double s,
                             const IntensityModel& model);
GammaPosterior gamma_jump(const GammaPosterior& post);

// Scenario weights closed form (computed in log space).
ScenarioWeights scenario_advance(const ScenarioWeights& w, double t, double s,
                                 const IntensityModel& model);
ScenarioWeights scenario_jump(const ScenarioWeights& w, double zeta, const IntensityModel& model);

// Generic finite-grid update.
GridPosterior grid_advance(const GridPosterior& post, double t, double s,
                           const IntensityModel& model);
GridPosterior grid_jump(const GridPosterior& post, double zeta, const IntensityModel& model);

/// w_i <- w_i * likelihood_i, renormalized.
FiniteSupportPosterior mark_jump_update(const FiniteSupportPosterior& post,
                                        std::span<const double> likelihoods);

/// Posterior-mean intensity at t.
double mean_intensity(const GammaPosterior& post, double t, const IntensityModel& model);
double mean_intensity(const ScenarioWeights& w, double t, const IntensityModel& model);
double mean_intensity(const GridPosterior& post, double t, const IntensityModel& model);
double mean_intensity(const LambdaPosterior& post, double t, const IntensityModel& model);

/// Posterior advance / jump dispatched on the family in use.
LambdaPosterior advance(const LambdaPosterior& post, double t, double s,
                        const IntensityModel& model);
LambdaPosterior jump(const LambdaPosterior& post, double zeta, const IntensityModel& model);

/// Normalize in place; throws NumericalError if the total mass is not positive.
void normalize_weights(std::vector<double>& weights, const char* what);

}  // namespace catqvi
