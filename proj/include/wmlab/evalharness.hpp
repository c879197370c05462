#pragma once

// End-to-end experiment runner: generate watermarked corpora, apply attacks,
// score with detectors, compute ASR / TPR@FPR / best-F1 / PPL / similarity,
// and persist per-sample rows plus deterministic aggregates.

#include "wmlab/attacks.hpp"
#include "wmlab/theory.hpp"

namespace wmlab {

// ---------------------------------------------------------------------------
// similarity

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual std::string id() const = 0;
    // Unit-norm embedding (sparse providers return id/value pairs).
    virtual std::vector<std::pair<uint64_t, double>> embed(const std::string& text) const = 0;
};

// Deterministic built-in provider: L2-normalized hashed bag of whitespace
// tokens.
class BagOfTokensProvider : public EmbeddingProvider {
public:
    std::string id() const override { return "bag-of-tokens"; }
    std::vector<std::pair<uint64_t, double>> embed(const std::string& text) const override;
};

// Remote /v1/embeddings provider (OpenAI-compatible).
class RemoteEmbeddingProvider : public EmbeddingProvider {
public:
    explicit RemoteEmbeddingProvider(LmBackendSpec spec);
    std::string id() const override;
    std::vector<std::pair<uint64_t, double>> embed(const std::string& text) const override;

private:
    LmBackendSpec spec_;
};

// Cosine of provider embeddings, in [-1, 1].
double similarity(const std::string& a, const std::string& b,
                  const EmbeddingProvider& provider);

// ---------------------------------------------------------------------------
// LLM judge

// Sends the judge prompt and parses the bracketed "[Rating]" integer (1-10).
int llm_judge(const std::string& original, const std::string& attacked,
              const LmBackend& chat_backend,
              const PromptTemplates& templates = PromptTemplates::embedded());

// ---------------------------------------------------------------------------
// annotation

enum class AnnotateFormat { Ansi, Html };

// Per-token green/red markup (EXP: surprisal-value shading) with a header
// carrying the detector score. HTML output is self-contained.
std::string annotate(const TokenSeq& seq, const Vocabulary& vocab, const Detector& detector,
                     AnnotateFormat format);

// ---------------------------------------------------------------------------
// experiments

struct AttackSpec {
    // none | sira | random-mask | paraphrase | paraphrase-2 | word-delete |
    // synonym
    std::string name = "none";
    double epsilon = 0.3;      // sira
    double mask_ratio = 0.7;   // random-mask
    double ratio = 0.3;        // word-delete / synonym
    std::string thesaurus_path;
};

struct ExperimentSpec {
    std::string corpus_path;
    std::optional<size_t> sample_count;
    WatermarkConfig watermark;
    AttackSpec attack;
    LmBackendSpec generation_backend;
    LmBackendSpec scoring_backend;
    LmBackendSpec rewrite_backend;
    std::optional<LmBackendSpec> judge_backend;  // chat backend; rates each sample
    std::string embedding_provider = "bag-of-tokens";
    std::optional<LmBackendSpec> embedding_backend;  // remote embeddings endpoint
    size_t generation_length = 230;
    uint64_t seed = 0;
    std::vector<double> target_fprs = {0.01, 0.10};
    bool calibrated_asr = false;  // default threshold unless calibrated
    size_t workers = 0;           // 0 = hardware concurrency
    std::string prompt_dir;       // optional template override
    double failure_tolerance = 0.10;

    static ExperimentSpec from_file(const std::string& path);
    static ExperimentSpec from_json_text(const std::string& text);
    std::string to_json_text() const;
};

struct SampleResult {
    std::string id;
    AttackRecord record;
    std::optional<PerplexityResult> ppl_original, ppl_reference, ppl_attacked;
    std::optional<int> judge_rating;  // 1..10, when a judge backend is configured
    bool failed = false;
    std::string error;
};

struct FprOperatingPoint {
    double target_fpr = 0.0;
    double threshold = 0.0;
    double achieved_fpr = 0.0;
    double tpr = 0.0;
    double f1 = 0.0;
};

struct ExperimentRecord {
    std::vector<SampleResult> samples;
    std::vector<double> negative_scores;  // human references, label hygiene applies
    size_t samples_used = 0;
    size_t samples_failed = 0;
    double asr = 0.0;             // 1 - detection rate at the decision threshold
    double detection_rate = 0.0;
    double threshold_used = 0.0;
    std::string threshold_mode;   // "default" or "calibrated@fpr"
    std::vector<FprOperatingPoint> operating_points;
    double best_f1_value = 0.0;
    double mean_z_original = 0.0, mean_z_reference = 0.0, mean_z_attacked = 0.0;
    double mean_z_negatives = 0.0;
    double mean_ppl_original = 0.0, mean_ppl_reference = 0.0, mean_ppl_attacked = 0.0;
    double mean_similarity = 0.0;
    std::optional<double> mean_judge_rating;
    std::string scoring_backend_id;
    std::string generation_backend_id;
    std::string rewrite_backend_id;
    double wall_seconds = 0.0;  // reported separately; excluded from aggregate JSON

    std::string aggregate_json() const;   // deterministic
    std::string sample_jsonl_row(const SampleResult& s) const;
};

ExperimentRecord run_experiment(const ExperimentSpec& spec);

// Persists samples.jsonl, aggregate.json, scores.csv (+ timings.json).
void write_experiment_outputs(const ExperimentRecord& record, const std::string& out_dir);

struct SweepRow {
    double epsilon = 0.0;
    double asr = 0.0;
    double mean_similarity = 0.0;
    double mean_masked_fraction = 0.0;
};

// Runs the rewrite pipeline once per epsilon and reports ASR plus mean
// similarity per epsilon.
std::vector<SweepRow> threshold_sweep(const ExperimentSpec& spec,
                                      std::span<const double> epsilons);

std::string sweep_to_csv(std::span<const SweepRow> rows);

}  // namespace wmlab
