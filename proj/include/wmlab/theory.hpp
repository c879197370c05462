#pragma once

// Closed-form success-probability bound functions for the rewrite attack
// and a Monte-Carlo verifier that checks them against direct simulation of
// the masking pipeline.

#include "wmlab/lm_backend.hpp"

#include <optional>

namespace wmlab {

struct BoundParams {
    double delta = 0.0;        // probability boost on a watermarked token
    double p = 0.0;            // base probability
    double p_max = 0.0;        // upper bound on p in the high-surprisal region
    double alpha_quantile = 0.0;  // I_alpha, nats
    double c_delta = 0.0;      // max self-information drop
    double eta = 0.0;          // per-token escape probability
    size_t w_count = 0;        // number of watermarked tokens

    void validate() const;  // p <= p_max < 1, delta + p <= 1
};

// Self-information drop when p rises to p + delta: -ln(1 + delta/p). Always
// <= 0, and bounded below in magnitude by the p_max version.
double self_info_shift(double p, double delta);
double self_info_shift_bound(double p_max, double delta);

// First-order entropy change -(ln p + 1) * delta, and the true difference
// of the entropy functional when only the boosted coordinate moves.
double entropy_shift_approx(double p, double delta);
double entropy_shift_exact(const Distribution& dist, size_t boosted, double delta);

// (min_alpha)^w_count and (1 - eta)^w_count; w_count = 0 gives 1.
double success_lower_bound(double min_alpha, size_t w_count);
double success_eta_approx(double eta, size_t w_count);

// Checks the shift inequality on a log-spaced (p, delta) grid up to p_max.
bool lemma_shift_holds_on_grid(double p_max = 0.1, size_t grid = 25);

// Two-sided binomial confidence limits on a success probability given k
// successes out of n trials (exact tails for small k, normal otherwise).
double binomial_upper_confidence(size_t k, size_t n, double tail);
double binomial_lower_confidence(size_t k, size_t n, double tail);

struct MonteCarloSpec {
    size_t trials = 10000;
    size_t text_length = 800;       // tokens per simulated text
    size_t watermarked_count = 12;  // planted green tokens per text
    size_t vocab_size = 64;         // support of each position's distribution
    double dirichlet_alpha = 0.5;
    double delta = 0.02;            // probability boost planted on green tokens
    double epsilon = 0.3;           // masking percentile
    double gamma = 0.5;             // green selection quantile (top surprisal mass)
    uint64_t seed = 0;
    double confidence_z = 2.5758293035489004;  // 99% two-sided, delta-method sides
    double confidence_tail = 0.005;            // per-side binomial tail mass
    size_t threads = 0;             // 0 = hardware concurrency

    // Independence mode: freeze the mask threshold from a pre-pass instead
    // of taking each text's percentile, making per-token mask events exactly
    // independent.
    bool independence_mode = false;
    std::optional<double> tau_override;
};

struct BoundsReport {
    size_t trials = 0;
    uint64_t seed = 0;
    double empirical_success = 0.0;
    double sigma_success = 0.0;
    double success_conf_lo = 0.0;    // binomial confidence interval on success
    double success_conf_hi = 0.0;
    std::vector<double> slot_alphas; // per-slot masked frequency
    double min_alpha = 0.0;          // min per-slot masked frequency
    double lower_bound = 0.0;        // min_alpha^|W|
    double sigma_lower = 0.0;
    double upper_bound = 0.0;        // empirical intersection frequency
    double eta_measured = 0.0;
    double corollary_estimate = 0.0; // (1 - eta)^|W|
    double sigma_corollary = 0.0;
    double c_delta = 0.0;            // ln(1 + delta / p_min_green)
    double min_green_probability = 0.0;
    double tau_used = 0.0;           // fixed tau, or mean per-text tau
    bool lemma_shift_ok = false;
    bool lemma_region_ok = false;    // planted I' >= I_alpha - C_delta, every token
    bool lower_ok = false;
    bool upper_ok = false;
    bool corollary_ok = false;
    bool passed = false;
    std::string failure;             // offending parameters when !passed

    std::string to_json_text() const;
};

BoundsReport verify_bounds_montecarlo(const MonteCarloSpec& spec);

}  // namespace wmlab
