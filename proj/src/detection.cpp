#include "wmlab/detection.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace wmlab {

double z_score(size_t green_count, size_t scored_tokens, double gamma) {
    if (scored_tokens == 0) throw Error("z_score: no scored tokens");
    const double t = (double)scored_tokens;
    const double g = (double)green_count;
    return (g - gamma * t) / std::sqrt(t * gamma * (1.0 - gamma));
}

Detector::Detector(WatermarkConfig cfg, size_t vocab_size, const LmBackend* scoring_backend)
    : cfg_(std::move(cfg)), vocab_size_(vocab_size), scoring_backend_(scoring_backend) {
    if (!is_supported(cfg_.algorithm))
        throw Error("detect: unsupported algorithm " + to_string(cfg_.algorithm));
    if (cfg_.algorithm == WatermarkAlgorithm::EWD && !scoring_backend_)
        throw Error("detect: EWD needs a scoring backend for entropy weights");
}

DetectionDetail Detector::detect_detailed(const TokenSeq& seq,
                                          std::optional<double> threshold_override) const {
    const size_t n = seq.n();
    DetectionDetail out;
    out.tokens.assign(n, {});
    DetectionResult& res = out.result;
    res.threshold_used = threshold_override.value_or(cfg_.default_threshold());

    switch (cfg_.algorithm) {
        case WatermarkAlgorithm::EXP: {
            if (n < 1) throw Error("detect: sequence too short");
            double sum = 0.0;
            for (size_t t = 0; t < n; ++t) {
                std::vector<TokenId> window = exp_window(cfg_, seq.ids, t);
                const double u = exp_u_value(cfg_, window, seq.ids[t]);
                const double v = -std::log(1.0 - u);
                sum += v;
                out.tokens[t].scored = true;
                out.tokens[t].exp_value = v;
            }
            res.scored_tokens = n;
            res.score = sum / (double)n;
            break;
        }
        case WatermarkAlgorithm::Unigram: {
            if (n < 1) throw Error("detect: sequence too short");
            GreenListPartition part = green_list(cfg_, vocab_size_, {});
            for (size_t t = 0; t < n; ++t) {
                out.tokens[t].scored = true;
                if (seq.ids[t] < vocab_size_ && part.is_green[seq.ids[t]]) {
                    out.tokens[t].green = true;
                    ++res.green_count;
                }
            }
            res.scored_tokens = n;
            res.score = z_score(res.green_count, res.scored_tokens, cfg_.gamma);
            break;
        }
        case WatermarkAlgorithm::KGW:
        case WatermarkAlgorithm::EWD: {
            // The first prefix_length tokens are unscorable: their green
            // lists were keyed across the prompt boundary.
            if (n <= cfg_.prefix_length) throw Error("detect: sequence too short");
            double weight_sum = 0.0, weight_sq_sum = 0.0, green_weight = 0.0;
            for (size_t t = cfg_.prefix_length; t < n; ++t) {
                std::span<const TokenId> prefix(seq.ids.data() + t - cfg_.prefix_length,
                                                cfg_.prefix_length);
                GreenListPartition part = green_list(cfg_, vocab_size_, prefix);
                double w = 1.0;
                if (cfg_.algorithm == WatermarkAlgorithm::EWD) {
                    // normalized Shannon entropy of the scorer's distribution
                    Distribution d =
                        scoring_backend_->next_distribution({seq.ids.data(), t});
                    w = d.entropy() / std::log((double)vocab_size_);
                }
                const bool green = seq.ids[t] < vocab_size_ && part.is_green[seq.ids[t]];
                out.tokens[t].scored = true;
                out.tokens[t].green = green;
                weight_sum += w;
                weight_sq_sum += w * w;
                if (green) {
                    green_weight += w;
                    ++res.green_count;
                }
            }
            res.scored_tokens = n - cfg_.prefix_length;
            if (weight_sq_sum <= 0.0) throw Error("detect: degenerate zero entropy weights");
            res.score = (green_weight - cfg_.gamma * weight_sum) /
                        std::sqrt(cfg_.gamma * (1.0 - cfg_.gamma) * weight_sq_sum);
            break;
        }
        default:
            throw Error("detect: unsupported algorithm " + to_string(cfg_.algorithm));
    }

    res.decision = res.score > res.threshold_used;
    return out;
}

DetectionResult Detector::detect(const TokenSeq& seq,
                                 std::optional<double> threshold_override) const {
    return detect_detailed(seq, threshold_override).result;
}

CalibrationResult calibrate_threshold(std::span<const double> negative_scores,
                                      double target_fpr) {
    if (negative_scores.empty()) throw Error("calibrate_threshold: no negative scores");
    if (!(target_fpr > 0.0 && target_fpr < 1.0))
        throw Error("calibrate_threshold: target_fpr must be in (0,1)");

    std::vector<double> sorted(negative_scores.begin(), negative_scores.end());
    std::sort(sorted.begin(), sorted.end());
    const size_t m = sorted.size();
    const size_t allowed_above = (size_t)std::floor(target_fpr * (double)m);

    // Smallest observed value with <= allowed_above scores strictly above it.
    // Candidates are order statistics; ties only lower the achieved FPR.
    // target_fpr < 1 guarantees allowed_above <= m-1.
    const double threshold = sorted[m - 1 - allowed_above];

    size_t above = 0;
    for (double s : negative_scores)
        if (s > threshold) ++above;

    CalibrationResult r;
    r.threshold = threshold;
    r.achieved_fpr = (double)above / (double)m;
    r.target_fpr = target_fpr;
    r.negatives_used = m;
    return r;
}

double f1_at_threshold(std::span<const double> pos_scores,
                       std::span<const double> neg_scores, double threshold) {
    size_t tp = 0, fp = 0;
    for (double s : pos_scores)
        if (s > threshold) ++tp;
    for (double s : neg_scores)
        if (s > threshold) ++fp;
    const size_t fn = pos_scores.size() - tp;
    const double denom = 2.0 * (double)tp + (double)fp + (double)fn;
    return denom > 0.0 ? 2.0 * (double)tp / denom : 0.0;
}

TprResult tpr_at_fpr(std::span<const double> pos_scores,
                     std::span<const double> neg_scores, double target_fpr) {
    if (pos_scores.empty() || neg_scores.empty())
        throw Error("tpr_at_fpr: empty score sets");
    const CalibrationResult cal = calibrate_threshold(neg_scores, target_fpr);
    size_t tp = 0;
    for (double s : pos_scores)
        if (s > cal.threshold) ++tp;
    TprResult r;
    r.threshold = cal.threshold;
    r.tpr = (double)tp / (double)pos_scores.size();
    r.f1 = f1_at_threshold(pos_scores, neg_scores, cal.threshold);
    return r;
}

BestF1Result best_f1(std::span<const double> pos_scores,
                     std::span<const double> neg_scores) {
    if (pos_scores.empty() || neg_scores.empty()) throw Error("best_f1: empty score sets");

    std::vector<double> all(pos_scores.begin(), pos_scores.end());
    all.insert(all.end(), neg_scores.begin(), neg_scores.end());
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());

    std::vector<double> candidates;
    candidates.push_back(all.front() - 1.0);  // classify everything positive
    for (size_t i = 0; i + 1 < all.size(); ++i)
        candidates.push_back(0.5 * (all[i] + all[i + 1]));

    BestF1Result best{candidates.front(), -1.0};
    for (double t : candidates) {
        const double f1 = f1_at_threshold(pos_scores, neg_scores, t);
        if (f1 > best.f1) best = {t, f1};  // ties keep the lower threshold
    }
    return best;
}

void save_scores_csv(const std::string& path, std::span<const ScoreRow> rows) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write scores file: " + path);
    out << "sample_id,label,score\n";
    out.precision(17);
    for (const auto& r : rows) out << r.sample_id << ',' << r.label << ',' << r.score << '\n';
}

std::vector<ScoreRow> load_scores_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open scores file: " + path);
    std::vector<ScoreRow> rows;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1 && line.rfind("sample_id,", 0) == 0) continue;
        if (line.empty()) continue;
        std::stringstream ss(line);
        ScoreRow r;
        std::string score_text;
        if (!std::getline(ss, r.sample_id, ',') || !std::getline(ss, r.label, ',') ||
            !std::getline(ss, score_text))
            throw Error(path + ": malformed row at line " + std::to_string(line_no));
        try {
            r.score = std::stod(score_text);
        } catch (const std::exception&) {
            throw Error(path + ": bad score at line " + std::to_string(line_no));
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace wmlab
