#include "wmlab/theory.hpp"
#include "wmlab/attacks.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <thread>

namespace wmlab {

using nlohmann::json;

void BoundParams::validate() const {
    if (!(p > 0.0 && p < 1.0)) throw Error("bound params: p must be in (0,1)");
    if (delta < 0.0) throw Error("bound params: delta must be >= 0");
    if (!(p <= p_max && p_max < 1.0)) throw Error("bound params: need p <= p_max < 1");
    if (p + delta > 1.0) throw Error("bound params: p + delta must be <= 1");
}

double self_info_shift(double p, double delta) {
    if (!(p > 0.0 && p < 1.0)) throw Error("self_info_shift: p must be in (0,1)");
    if (delta < 0.0) throw Error("self_info_shift: delta must be >= 0");
    if (p + delta > 1.0) throw Error("self_info_shift: p + delta must be <= 1");
    return -std::log1p(delta / p);
}

double self_info_shift_bound(double p_max, double delta) {
    if (!(p_max > 0.0 && p_max < 1.0))
        throw Error("self_info_shift_bound: p_max must be in (0,1)");
    if (delta < 0.0) throw Error("self_info_shift_bound: delta must be >= 0");
    return -std::log1p(delta / p_max);
}

double entropy_shift_approx(double p, double delta) {
    if (!(p > 0.0 && p < 1.0)) throw Error("entropy_shift_approx: p must be in (0,1)");
    if (delta < 0.0) throw Error("entropy_shift_approx: delta must be >= 0");
    if (p + delta > 1.0) throw Error("entropy_shift_approx: p + delta must be <= 1");
    return -(std::log(p) + 1.0) * delta;
}

double entropy_shift_exact(const Distribution& dist, size_t boosted, double delta) {
    if (boosted >= dist.size()) throw Error("entropy_shift_exact: index out of range");
    const double p = dist.probs[boosted];
    if (!(p > 0.0)) throw Error("entropy_shift_exact: boosted token has zero probability");
    if (p + delta > 1.0) throw Error("entropy_shift_exact: p + delta must be <= 1");
    // Only the boosted coordinate moves; the difference of the entropy
    // functional over the full vector therefore isolates its contribution.
    double before = 0.0, after = 0.0;
    for (size_t i = 0; i < dist.size(); ++i) {
        const double pi = dist.probs[i];
        const double qi = i == boosted ? pi + delta : pi;
        if (pi > 0.0) before -= pi * std::log(pi);
        if (qi > 0.0) after -= qi * std::log(qi);
    }
    return after - before;
}

double success_lower_bound(double min_alpha, size_t w_count) {
    if (min_alpha < 0.0 || min_alpha > 1.0)
        throw Error("success_lower_bound: min_alpha must be in [0,1]");
    return std::pow(min_alpha, (double)w_count);
}

double success_eta_approx(double eta, size_t w_count) {
    if (eta < 0.0 || eta > 1.0) throw Error("success_eta_approx: eta must be in [0,1]");
    return std::pow(1.0 - eta, (double)w_count);
}

bool lemma_shift_holds_on_grid(double p_max, size_t grid) {
    const double p_lo = 1e-4, d_lo = 1e-5, d_hi = 0.1;
    for (size_t i = 0; i < grid; ++i) {
        const double p = p_lo * std::pow(p_max / p_lo, (double)i / (double)(grid - 1));
        for (size_t j = 0; j < grid; ++j) {
            const double d = d_lo * std::pow(d_hi / d_lo, (double)j / (double)(grid - 1));
            if (p + d > 1.0) continue;
            if (self_info_shift(p, d) > self_info_shift_bound(p_max, d) + 1e-12)
                return false;
        }
    }
    return true;
}

namespace {

// log P(X <= k) for X ~ Binomial(n, p), summed in log space
double log_binomial_cdf(size_t k, size_t n, double p) {
    if (p <= 0.0) return 0.0;
    if (p >= 1.0) return k >= n ? 0.0 : -std::numeric_limits<double>::infinity();
    double log_pmf = (double)n * std::log1p(-p);  // P(X = 0)
    double cdf = std::exp(log_pmf);
    for (size_t i = 1; i <= k; ++i) {
        log_pmf += std::log((double)(n - i + 1) / (double)i) + std::log(p) -
                   std::log1p(-p);
        cdf += std::exp(log_pmf);
    }
    return std::log(std::min(cdf, 1.0));
}

}  // namespace

double binomial_upper_confidence(size_t k, size_t n, double tail) {
    if (n == 0) throw Error("binomial_upper_confidence: n must be > 0");
    if (k >= n) return 1.0;
    // smallest p with P(X <= k | p) <= tail, by bisection (Clopper-Pearson)
    double lo = (double)k / (double)n, hi = 1.0;
    for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (log_binomial_cdf(k, n, mid) <= std::log(tail)) hi = mid;
        else lo = mid;
    }
    return hi;
}

double binomial_lower_confidence(size_t k, size_t n, double tail) {
    if (n == 0) throw Error("binomial_lower_confidence: n must be > 0");
    if (k == 0) return 0.0;
    // largest p with P(X >= k | p) <= tail  <=>  1 - P(X <= k-1 | p) <= tail
    double lo = 0.0, hi = (double)k / (double)n;
    for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double ge = 1.0 - std::exp(log_binomial_cdf(k - 1, n, mid));
        if (ge <= tail) lo = mid;
        else hi = mid;
    }
    return lo;
}

// ---------------------------------------------------------------------------
// Monte-Carlo verifier

namespace {

constexpr uint64_t TRIAL_SALT = 0x452821E638D01377ull;

struct PositionDraw {
    double observed_value = 0.0;  // self-information of the realized token
    double i_alpha = 0.0;         // I_gamma at this position (planted only)
    double base_p = 0.0;          // pre-boost probability (planted only)
};

struct TrialScratch {
    std::vector<double> probs;
    std::vector<size_t> order;
};

// One simulated position: a Dirichlet distribution; planted positions take
// a token from the top-gamma surprisal mass (probability-proportional within
// it) and receive the +delta boost, the rest sample naturally.
PositionDraw draw_position(Rng& rng, const MonteCarloSpec& spec, bool planted,
                           TrialScratch& scratch) {
    auto& probs = scratch.probs;
    probs.resize(spec.vocab_size);
    double sum = 0.0;
    for (double& p : probs) {
        p = rng.next_gamma(spec.dirichlet_alpha);
        sum += p;
    }
    for (double& p : probs) p /= sum;

    PositionDraw out;
    if (!planted) {
        const size_t pick = rng.next_index(probs);
        out.observed_value = -std::log(probs[pick]);
        return out;
    }

    // top-gamma surprisal region: ascending probability order, accumulate
    // mass until it reaches gamma
    auto& order = scratch.order;
    order.resize(probs.size());
    std::iota(order.begin(), order.end(), (size_t)0);
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return probs[a] < probs[b]; });
    double mass = 0.0;
    size_t region_end = 0;
    for (; region_end < order.size(); ++region_end) {
        mass += probs[order[region_end]];
        if (mass >= spec.gamma) {
            ++region_end;
            break;
        }
    }
    out.i_alpha = -std::log(probs[order[region_end - 1]]);

    std::vector<double> region_probs(region_end);
    for (size_t i = 0; i < region_end; ++i) region_probs[i] = probs[order[i]];
    const size_t pick = order[rng.next_index(region_probs)];
    out.base_p = probs[pick];
    const double boosted = std::min(out.base_p + spec.delta, 1.0);
    out.observed_value = -std::log(boosted);
    return out;
}

}  // namespace

BoundsReport verify_bounds_montecarlo(const MonteCarloSpec& spec) {
    if (spec.trials < 1000) throw Error("verify_bounds_montecarlo: trials must be >= 1000");
    if (spec.watermarked_count < 1 || spec.watermarked_count > spec.text_length)
        throw Error("verify_bounds_montecarlo: watermarked_count out of range");
    if (!(spec.epsilon > 0.0 && spec.epsilon < 1.0))
        throw Error("verify_bounds_montecarlo: epsilon must be (0,1)");
    if (spec.delta < 0.0) throw Error("verify_bounds_montecarlo: delta must be >= 0");

    const size_t n = spec.text_length;
    const size_t w = spec.watermarked_count;

    // Independence mode pre-pass: pool values from a smaller prior run and
    // freeze tau at their epsilon-quantile.
    std::optional<double> fixed_tau = spec.tau_override;
    if (spec.independence_mode && !fixed_tau) {
        const size_t pre_trials = 200;
        std::vector<double> pool;
        pool.reserve(pre_trials * n);
        TrialScratch scratch;
        for (size_t t = 0; t < pre_trials; ++t) {
            Rng rng(counter_rng(mix64(spec.seed) ^ TRIAL_SALT, 1000000000ull + t));
            for (size_t i = 0; i < n; ++i)
                pool.push_back(draw_position(rng, spec, i < w, scratch).observed_value);
        }
        fixed_tau = quantile_linear(pool, spec.epsilon);
    }

    // Per-trial outputs land in preallocated slots so aggregation order is
    // independent of the thread count.
    std::vector<uint8_t> success(spec.trials, 0);
    std::vector<double> unmasked_fraction(spec.trials, 0.0);
    std::vector<double> taus(spec.trials, 0.0);
    std::vector<std::vector<uint8_t>> slot_masked(spec.trials);
    std::vector<double> min_green_p(spec.trials, 1.0);
    std::vector<double> region_margin(spec.trials,
                                      -std::numeric_limits<double>::infinity());

    auto run_trial = [&](size_t t) {
        Rng rng(counter_rng(mix64(spec.seed) ^ TRIAL_SALT, t));
        TrialScratch scratch;

        // planted slots: w distinct positions
        std::vector<uint32_t> perm = rng.next_permutation((uint32_t)n);
        std::vector<size_t> planted(perm.begin(), perm.begin() + w);
        std::sort(planted.begin(), planted.end());
        std::vector<bool> is_planted(n, false);
        for (size_t pos : planted) is_planted[pos] = true;

        std::vector<double> values(n);
        std::vector<PositionDraw> draws(n);
        for (size_t i = 0; i < n; ++i) {
            draws[i] = draw_position(rng, spec, is_planted[i], scratch);
            values[i] = draws[i].observed_value;
        }

        double tau;
        std::vector<bool> flags(n);
        if (fixed_tau) {
            tau = *fixed_tau;
            for (size_t i = 0; i < n; ++i) flags[i] = values[i] > tau;
        } else {
            MaskDecision d = mask_from_values(values, spec.epsilon);
            tau = d.tau;
            flags = std::move(d.flags);
        }
        taus[t] = tau;

        slot_masked[t].resize(w);
        size_t masked_count = 0;
        for (size_t k = 0; k < w; ++k) {
            const size_t pos = planted[k];
            slot_masked[t][k] = flags[pos] ? 1 : 0;
            if (flags[pos]) ++masked_count;
            min_green_p[t] = std::min(min_green_p[t], draws[pos].base_p);
            region_margin[t] =
                std::max(region_margin[t], draws[pos].i_alpha - draws[pos].observed_value);
        }
        success[t] = masked_count == w ? 1 : 0;
        unmasked_fraction[t] = (double)(w - masked_count) / (double)w;
    };

    size_t n_threads = spec.threads ? spec.threads : std::thread::hardware_concurrency();
    n_threads = std::max<size_t>(1, std::min(n_threads, (size_t)16));
    {
        std::vector<std::thread> pool;
        std::atomic<size_t> next{0};
        for (size_t i = 0; i < n_threads; ++i)
            pool.emplace_back([&]() {
                for (size_t t = next.fetch_add(1); t < spec.trials; t = next.fetch_add(1))
                    run_trial(t);
            });
        for (auto& th : pool) th.join();
    }

    // sequential reduction for run-to-run determinism
    BoundsReport r;
    r.trials = spec.trials;
    r.seed = spec.seed;

    size_t successes = 0;
    double eta_sum = 0.0, eta_sq_sum = 0.0, tau_sum = 0.0;
    std::vector<size_t> slot_counts(w, 0);
    double p_min = 1.0, margin = -std::numeric_limits<double>::infinity();
    for (size_t t = 0; t < spec.trials; ++t) {
        successes += success[t];
        eta_sum += unmasked_fraction[t];
        eta_sq_sum += unmasked_fraction[t] * unmasked_fraction[t];
        tau_sum += taus[t];
        for (size_t k = 0; k < w; ++k) slot_counts[k] += slot_masked[t][k];
        p_min = std::min(p_min, min_green_p[t]);
        margin = std::max(margin, region_margin[t]);
    }

    const double trials_d = (double)spec.trials;
    r.empirical_success = (double)successes / trials_d;
    r.sigma_success =
        std::sqrt(std::max(r.empirical_success * (1.0 - r.empirical_success), 1e-12) / trials_d);
    r.upper_bound = r.empirical_success;  // intersection frequency, by construction
    r.tau_used = tau_sum / trials_d;

    r.min_alpha = 1.0;
    r.slot_alphas.resize(w);
    for (size_t k = 0; k < w; ++k) {
        r.slot_alphas[k] = (double)slot_counts[k] / trials_d;
        r.min_alpha = std::min(r.min_alpha, r.slot_alphas[k]);
    }
    r.lower_bound = success_lower_bound(r.min_alpha, w);
    const double sigma_min_alpha =
        std::sqrt(std::max(r.min_alpha * (1.0 - r.min_alpha), 1e-12) / trials_d);
    r.sigma_lower =
        (double)w * std::pow(r.min_alpha, (double)(w - 1)) * sigma_min_alpha;

    r.eta_measured = eta_sum / trials_d;
    const double eta_var =
        std::max(eta_sq_sum / trials_d - r.eta_measured * r.eta_measured, 0.0);
    const double sigma_eta = std::sqrt(eta_var / trials_d);
    r.corollary_estimate = success_eta_approx(r.eta_measured, w);
    r.sigma_corollary = (double)w *
                        std::pow(1.0 - r.eta_measured, (double)(w > 0 ? w - 1 : 0)) *
                        sigma_eta;

    r.min_green_probability = p_min;
    r.c_delta = spec.delta > 0.0 && p_min < 1.0 ? std::log1p(spec.delta / p_min) : 0.0;

    const double z = spec.confidence_z;
    r.success_conf_lo = binomial_lower_confidence(successes, spec.trials, spec.confidence_tail);
    r.success_conf_hi = binomial_upper_confidence(successes, spec.trials, spec.confidence_tail);
    r.lemma_shift_ok = lemma_shift_holds_on_grid();
    r.lemma_region_ok = margin <= r.c_delta + 1e-9;
    r.lower_ok = r.lower_bound - z * r.sigma_lower <= r.success_conf_hi;
    r.upper_ok = r.success_conf_lo <= r.upper_bound + 1e-12;
    // interval overlap between the corollary estimate and the success rate
    r.corollary_ok = r.corollary_estimate - z * r.sigma_corollary <= r.success_conf_hi &&
                     r.corollary_estimate + z * r.sigma_corollary >= r.success_conf_lo;
    r.passed = r.lemma_shift_ok && r.lemma_region_ok && r.lower_ok && r.upper_ok &&
               r.corollary_ok;
    if (!r.passed) {
        json fail;
        fail["delta"] = spec.delta;
        fail["epsilon"] = spec.epsilon;
        fail["gamma"] = spec.gamma;
        fail["dirichlet_alpha"] = spec.dirichlet_alpha;
        fail["text_length"] = n;
        fail["watermarked_count"] = w;
        fail["lemma_shift_ok"] = r.lemma_shift_ok;
        fail["lemma_region_ok"] = r.lemma_region_ok;
        fail["lower_ok"] = r.lower_ok;
        fail["upper_ok"] = r.upper_ok;
        fail["corollary_ok"] = r.corollary_ok;
        r.failure = fail.dump();
    }
    return r;
}

std::string BoundsReport::to_json_text() const {
    json j;
    j["trials"] = trials;
    j["seed"] = seed;
    j["empirical_success"] = empirical_success;
    j["sigma_success"] = sigma_success;
    j["success_conf"] = {success_conf_lo, success_conf_hi};
    j["min_alpha"] = min_alpha;
    j["lower_bound"] = lower_bound;
    j["sigma_lower"] = sigma_lower;
    j["upper_bound"] = upper_bound;
    j["eta_measured"] = eta_measured;
    j["corollary_estimate"] = corollary_estimate;
    j["sigma_corollary"] = sigma_corollary;
    j["c_delta"] = c_delta;
    j["min_green_probability"] = min_green_probability;
    j["tau_used"] = tau_used;
    j["lemma_shift_ok"] = lemma_shift_ok;
    j["lemma_region_ok"] = lemma_region_ok;
    j["lower_ok"] = lower_ok;
    j["upper_ok"] = upper_ok;
    j["corollary_ok"] = corollary_ok;
    j["passed"] = passed;
    if (!failure.empty()) j["failure"] = json::parse(failure);
    return j.dump(2);
}

}  // namespace wmlab
