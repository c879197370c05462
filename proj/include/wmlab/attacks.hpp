#pragma once

// The self-information rewrite pipeline (surprisal masking + paraphrase
// reference + fill-in-the-blank reconstruction) and the baseline
// perturbations: word deletion, synonym substitution, plain paraphrase,
// and the random-mask ablation.

#include "wmlab/detection.hpp"
#include "wmlab/prompts.hpp"

#include <map>

namespace wmlab {

// Token-level mask decision from a self-information profile. Strict rule:
// a token is masked iff its value is strictly above the epsilon-quantile.
struct MaskDecision {
    std::vector<bool> flags;
    double tau = 0.0;
    double masked_fraction = 0.0;
    bool degenerate = false;  // all values equal; nothing masked
};
MaskDecision mask_from_values(std::span<const double> values, double epsilon);

struct MaskedText {
    TokenSeq tokens;                      // local path only
    std::vector<std::string> token_texts;
    std::vector<bool> mask_flags;
    std::string placeholder = MASK_TEXT;
    double masked_fraction = 0.0;
    SelfInfoProfile profile;              // values with epsilon/tau resolved
    bool degenerate = false;

    size_t n() const { return token_texts.size(); }
    // One placeholder per masked token, never merged; single-space joined.
    std::string rendered() const;
};

struct StageScores {
    std::optional<DetectionResult> original;
    std::optional<DetectionResult> reference;
    std::optional<DetectionResult> attacked;
    bool complete() const { return original && reference && attacked; }
};

struct AttackRecord {
    std::string original;
    std::string reference;
    MaskedText masked;
    std::string attacked;
    double similarity = 0.0;  // filled by the harness
    StageScores stage_scores; // filled by the harness
};

// Raised when the rewrite backend fails mid-pipeline; carries whatever
// stages completed.
class AttackError : public Error {
public:
    AttackError(const std::string& what, AttackRecord partial)
        : Error(what), partial_record(std::move(partial)) {}
    AttackRecord partial_record;
};

// Deterministic surprisal masking of a token sequence (local backends).
MaskedText sira_mask(const TokenSeq& seq, const LmBackend& backend, double epsilon);

// Text-level masking via the backend's own token boundaries; works with
// remote scorers too.
MaskedText sira_mask_text(const std::string& text, const LmBackend& backend,
                          double epsilon);

// Full two-step rewrite: paraphrase reference (sampled), surprisal masking
// of the original, fill-in completion (greedy).
AttackRecord sira_attack(const std::string& watermarked_text,
                         const LmBackend& score_backend,
                         const LmBackend& rewrite_backend, double epsilon,
                         const PromptTemplates& templates = PromptTemplates::embedded());

// Ablation baseline: identical pipeline, but a seeded uniform random
// floor(mask_ratio * n) token subset is masked instead.
AttackRecord random_mask_attack(const std::string& watermarked_text,
                                double mask_ratio, const LmBackend& score_backend,
                                const LmBackend& rewrite_backend, uint64_t seed,
                                const PromptTemplates& templates = PromptTemplates::embedded());

// Deletes floor(ratio * word_count) whitespace words, order preserved.
std::string word_delete(const std::string& text, double ratio, uint64_t seed);

using Thesaurus = std::map<std::string, std::vector<std::string>>;
Thesaurus load_thesaurus(const std::string& path);

// Replaces floor(ratio * covered) thesaurus-covered words with a seeded
// random synonym. An empty thesaurus is an identity with a warning.
std::string synonym_substitute(const std::string& text, double ratio,
                               const Thesaurus& thesaurus, uint64_t seed);

// One or more rounds of the paraphrase instruction.
std::string paraphrase_attack(const std::string& text, const LmBackend& rewrite_backend,
                              size_t iterations = 1,
                              const PromptTemplates& templates = PromptTemplates::embedded());

}  // namespace wmlab
