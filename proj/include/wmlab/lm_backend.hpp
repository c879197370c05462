#pragma once

// Pluggable language-model access: next-token distributions, sequence
// scoring (self-information, perplexity), biased/greedy/sampled generation,
// and instruction-following completion. Local backends are deterministic;
// the remote backends speak an OpenAI-compatible wire protocol.

#include "wmlab/core_text.hpp"
#include "wmlab/util.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace wmlab {

// Self-information values above this are clamped (tokens the scorer assigns
// zero or unreported probability). All values are in nats.
inline constexpr double SELF_INFO_CAP = 50.0;

struct Distribution {
    std::vector<double> probs;  // >= 0, sums to 1 within 1e-9

    size_t size() const { return probs.size(); }
    bool valid(double tol = 1e-9) const;
    double entropy() const;  // Shannon entropy, nats
};

struct SelfInfoProfile {
    std::vector<double> values;  // -ln P(y_t | y_<t), nats
    std::vector<bool> capped;    // true where the cap sentinel was used
    double epsilon = -1.0;       // percentile; set by masking
    double tau = 0.0;            // resolved threshold; set by masking

    size_t n() const { return values.size(); }
    bool any_capped() const;
};

struct PerplexityResult {
    double value = 0.0;
    bool capped = false;  // some token hit the self-information cap
};

// A scored token over raw text: span offsets plus its self-information.
// Remote scorers report their own token boundaries here.
struct ScoredToken {
    std::string text;
    size_t begin = 0;
    size_t end = 0;
    double value = 0.0;
    bool capped = false;
};

enum class Decoding { Greedy, Sample };

struct GenerationRequest {
    TokenSeq context;
    size_t max_new_tokens = 1;
    Decoding decoding = Decoding::Greedy;
    double temperature = 1.0;  // sampling only, never scoring
    uint64_t seed = 0;         // RNG stream for Decoding::Sample
    bool stop_at_eos = true;

    // Applied to the pre-softmax score vector at every step.
    std::function<void(std::span<const TokenId>, std::vector<double>&)> logit_bias_hook;

    // Per-step pseudo-random source: u[i] in [0,1) per vocabulary entry.
    // When set, token selection is argmax_i u[i]^(1/p[i]) over the step
    // distribution p (exponential-minimum sampling; unbiased for iid
    // uniform u). Used by sampling watermarks.
    std::function<std::vector<double>(std::span<const TokenId>)> per_step_rng_hook;
};

struct LmBackendSpec {
    std::string kind;  // synthetic | ngram | remote-completion | remote-chat

    // local kinds
    uint64_t seed = 0;
    size_t vocab_size = 64;          // synthetic (ignored when vocab_path set)
    std::string vocab_path;          // optional explicit vocabulary
    double dirichlet_alpha = 0.5;    // synthetic entropy knob
    double uniform_mix = 0.0;        // 1.0 = uniform distribution
    size_t prefix_window = 2;        // synthetic context sensitivity
    size_t ngram_order = 2;          // ngram
    double ngram_smoothing = 0.0;    // add-k
    std::string train_corpus;        // ngram: corpus JSONL to count from
    std::string train_text;          // ngram: inline training text
    double paraphrase_keep = 0.5;    // local stub: kept-token fraction

    // remote kinds
    std::string endpoint;
    std::string model;
    std::string auth_env;            // env var holding the bearer token
    int timeout_ms = 30000;
    int retries = 2;
    int logprob_top_k = 5;

    double temperature = 1.0;

    static LmBackendSpec from_json_text(const std::string& text);
    static LmBackendSpec from_file(const std::string& path);
    std::string to_json_text() const;
    void validate() const;  // exactly one kind's fields populated
};

class LmBackend {
public:
    virtual ~LmBackend() = default;

    virtual const LmBackendSpec& spec() const = 0;
    virtual std::string id() const = 0;  // recorded in results

    // Local backends own a vocabulary; remote ones do not.
    virtual const Vocabulary* vocab() const { return nullptr; }

    // P(. | context). Empty context allowed (BOS implied).
    virtual Distribution next_distribution(std::span<const TokenId> context) const;

    // values[t] = -ln P(y_t | y_<t); zero-probability tokens get the cap.
    virtual SelfInfoProfile self_information(const TokenSeq& seq) const;

    // exp(mean self-information); the capped flag propagates.
    virtual PerplexityResult perplexity(const TokenSeq& seq) const;

    // Scores raw text and reports the scorer's own token boundaries.
    virtual std::vector<ScoredToken> score_text(const std::string& text) const;

    virtual TokenSeq generate(const GenerationRequest& req) const;

    // Instruction-following completion. Local backends run a deterministic
    // stub (fill-in replaces each "_" with the locally most-probable token)
    // so the full attack pipeline is testable offline.
    virtual std::string instruct_complete(const std::string& prompt,
                                          Decoding decoding) const;

protected:
    // Default step loop used by local backends.
    TokenSeq generate_locally(const GenerationRequest& req) const;
};

// Context-sensitive deterministic LM: distribution at a context window is a
// symmetric Dirichlet draw keyed by (seed, window), optionally mixed toward
// uniform. Reserved ids get zero probability.
class SyntheticBackend : public LmBackend {
public:
    SyntheticBackend(LmBackendSpec spec, std::shared_ptr<const Vocabulary> vocab);
    explicit SyntheticBackend(LmBackendSpec spec);

    const LmBackendSpec& spec() const override { return spec_; }
    std::string id() const override;
    const Vocabulary* vocab() const override { return vocab_.get(); }
    Distribution next_distribution(std::span<const TokenId> context) const override;

private:
    LmBackendSpec spec_;
    std::shared_ptr<const Vocabulary> vocab_;
};

// Count-based n-gram model with add-k smoothing and uniform fallback for
// unseen contexts. Scores with the longest available context.
class NgramBackend : public LmBackend {
public:
    NgramBackend(LmBackendSpec spec, std::shared_ptr<const Vocabulary> vocab,
                 const std::vector<std::string>& training_texts);
    static std::unique_ptr<NgramBackend> from_spec(LmBackendSpec spec);

    const LmBackendSpec& spec() const override { return spec_; }
    std::string id() const override;
    const Vocabulary* vocab() const override { return vocab_.get(); }
    Distribution next_distribution(std::span<const TokenId> context) const override;

private:
    void train_on(const TokenSeq& seq);

    LmBackendSpec spec_;
    std::shared_ptr<const Vocabulary> vocab_;
    // counts[len] maps a hashed context of `len` tokens to next-token counts
    std::vector<std::unordered_map<uint64_t, std::unordered_map<TokenId, double>>> counts_;
    std::vector<std::unordered_map<uint64_t, double>> context_totals_;
};

// OpenAI-compatible /v1/completions client with echoed logprobs; used for
// remote scoring. Transport and auth failures surface with the retry count.
// A fresh connection is opened per request, so calls are freely concurrent.
class RemoteCompletionBackend : public LmBackend {
public:
    explicit RemoteCompletionBackend(LmBackendSpec spec);

    const LmBackendSpec& spec() const override { return spec_; }
    std::string id() const override;
    const Vocabulary* vocab() const override { return local_vocab_.get(); }
    Distribution next_distribution(std::span<const TokenId> context) const override;
    SelfInfoProfile self_information(const TokenSeq& seq) const override;
    std::vector<ScoredToken> score_text(const std::string& text) const override;
    TokenSeq generate(const GenerationRequest& req) const override;
    std::string instruct_complete(const std::string& prompt, Decoding d) const override;

private:
    LmBackendSpec spec_;
    std::shared_ptr<const Vocabulary> local_vocab_;  // optional, for id alignment
};

// OpenAI-compatible /v1/chat/completions client for instruction completion.
class RemoteChatBackend : public LmBackend {
public:
    explicit RemoteChatBackend(LmBackendSpec spec);

    const LmBackendSpec& spec() const override { return spec_; }
    std::string id() const override;
    Distribution next_distribution(std::span<const TokenId> context) const override;
    std::string instruct_complete(const std::string& prompt, Decoding d) const override;

private:
    LmBackendSpec spec_;
};

// Canned-reply chat backend for tests and dry runs.
class FixtureChatBackend : public LmBackend {
public:
    explicit FixtureChatBackend(std::string reply);

    const LmBackendSpec& spec() const override { return spec_; }
    std::string id() const override { return "fixture-chat"; }
    std::string instruct_complete(const std::string& prompt, Decoding d) const override;

    const std::vector<std::string>& prompts_seen() const { return prompts_; }

private:
    LmBackendSpec spec_;
    std::string reply_;
    mutable std::vector<std::string> prompts_;
};

std::unique_ptr<LmBackend> make_backend(const LmBackendSpec& spec);

// Module-level convenience wrappers matching the operation surface.
inline Distribution next_distribution(const LmBackend& b, std::span<const TokenId> ctx) {
    return b.next_distribution(ctx);
}
inline SelfInfoProfile self_information(const LmBackend& b, const TokenSeq& seq) {
    return b.self_information(seq);
}
inline PerplexityResult perplexity(const LmBackend& b, const TokenSeq& seq) {
    return b.perplexity(seq);
}
inline TokenSeq generate(const LmBackend& b, const GenerationRequest& req) {
    return b.generate(req);
}
inline std::string instruct_complete(const LmBackend& b, const std::string& prompt,
                                     Decoding d) {
    return b.instruct_complete(prompt, d);
}

// Parses "{...}" JSON leniently: trailing commas before } or ] are dropped.
std::string strip_trailing_commas(const std::string& text);

}  // namespace wmlab
