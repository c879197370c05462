#pragma once

// Watermark detectors (z-score for KGW/Unigram, entropy-weighted EWD, EXP
// statistic), threshold calibration at a target FPR, and best-F1 search.

#include "wmlab/watermarks.hpp"

#include <optional>

namespace wmlab {

struct DetectionResult {
    double score = 0.0;     // z or EXP statistic
    bool decision = false;  // score > threshold_used
    size_t green_count = 0;
    size_t scored_tokens = 0;
    double threshold_used = 0.0;
};

// Per-token view used by annotation; mirrors exactly what the detector
// counted.
struct TokenDetail {
    bool scored = false;
    bool green = false;     // logit-bias schemes
    double exp_value = 0.0; // EXP: -ln(1 - u) at the observed token
};

struct DetectionDetail {
    DetectionResult result;
    std::vector<TokenDetail> tokens;
};

struct CalibrationResult {
    double threshold = 0.0;
    double achieved_fpr = 0.0;
    double target_fpr = 0.0;
    size_t negatives_used = 0;
};

class Detector {
public:
    // `scoring_backend` supplies per-position entropies for EWD; other
    // algorithms ignore it.
    Detector(WatermarkConfig cfg, size_t vocab_size,
             const LmBackend* scoring_backend = nullptr);

    DetectionResult detect(const TokenSeq& seq,
                           std::optional<double> threshold_override = std::nullopt) const;
    DetectionDetail detect_detailed(const TokenSeq& seq,
                                    std::optional<double> threshold_override = std::nullopt) const;

    const WatermarkConfig& config() const { return cfg_; }
    size_t vocab_size() const { return vocab_size_; }

private:
    WatermarkConfig cfg_;
    size_t vocab_size_;
    const LmBackend* scoring_backend_;
};

// z = (g - gamma*T) / sqrt(T * gamma * (1 - gamma))
double z_score(size_t green_count, size_t scored_tokens, double gamma);

// Largest-FPR-compliant threshold: the smallest value such that the fraction
// of negatives strictly above it is <= target_fpr.
CalibrationResult calibrate_threshold(std::span<const double> negative_scores,
                                      double target_fpr);

struct TprResult {
    double tpr = 0.0;
    double f1 = 0.0;
    double threshold = 0.0;
};
TprResult tpr_at_fpr(std::span<const double> pos_scores,
                     std::span<const double> neg_scores, double target_fpr);

struct BestF1Result {
    double threshold = 0.0;
    double f1 = 0.0;
};
// Exhaustive sweep over split points (midpoints of sorted unique scores plus
// a classify-everything-positive point); ties resolve to the lower threshold.
BestF1Result best_f1(std::span<const double> pos_scores,
                     std::span<const double> neg_scores);

double f1_at_threshold(std::span<const double> pos_scores,
                       std::span<const double> neg_scores, double threshold);

// scores.csv rows: sample_id,label,score
struct ScoreRow {
    std::string sample_id;
    std::string label;
    double score = 0.0;
};
void save_scores_csv(const std::string& path, std::span<const ScoreRow> rows);
std::vector<ScoreRow> load_scores_csv(const std::string& path);

}  // namespace wmlab
