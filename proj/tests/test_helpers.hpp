#pragma once

// Shared fixtures for the test suites.

#include "wmlab/core_text.hpp"
#include "wmlab/lm_backend.hpp"

#include <memory>
#include <string>
#include <vector>

namespace wmlab::testing {

inline std::string data_path(const std::string& rel) {
    return std::string(WMLAB_DATA_DIR) + "/" + rel;
}

inline LmBackendSpec synth_spec(uint64_t seed, size_t vocab_size = 64,
                                double uniform_mix = 0.0) {
    LmBackendSpec s;
    s.kind = "synthetic";
    s.seed = seed;
    s.vocab_size = vocab_size;
    s.uniform_mix = uniform_mix;
    return s;
}

inline std::vector<std::string> plain_tokens(size_t n) {
    std::vector<std::string> t;
    for (size_t i = 0; i < n; ++i) t.push_back("t" + std::to_string(i));
    return t;
}

// Synthetic corpus: numbered prompts plus unwatermarked sampled references
// produced by the given backend (the stand-in for human-written text).
inline std::vector<CorpusRecord> make_synthetic_corpus(const LmBackend& backend, size_t count,
                                                       size_t ref_length, uint64_t seed) {
    const Vocabulary& vocab = *backend.vocab();
    std::vector<CorpusRecord> records;
    Rng rng(mix64(seed) ^ 0xC0D5E5ull);
    for (size_t i = 0; i < count; ++i) {
        CorpusRecord rec;
        rec.id = "s" + std::to_string(i);
        TokenSeq prompt;
        for (int t = 0; t < 4; ++t)
            prompt.ids.push_back((TokenId)(4 + rng.next_u64() % (vocab.size() - 4)));
        rec.prompt = detokenize(prompt, vocab);
        GenerationRequest req;
        req.context = prompt;
        req.max_new_tokens = ref_length;
        req.decoding = Decoding::Sample;
        req.temperature = 1.0;
        req.seed = rng.next_u64();
        req.stop_at_eos = false;
        rec.reference = detokenize(backend.generate(req), vocab);
        records.push_back(std::move(rec));
    }
    return records;
}

// Context-independent distribution fixed at construction time.
class FixedBackend : public LmBackend {
public:
    explicit FixedBackend(std::vector<double> probs)
        : vocab_(plain_tokens(probs.size())), probs_(std::move(probs)) {
        spec_.kind = "synthetic";
    }
    const LmBackendSpec& spec() const override { return spec_; }
    std::string id() const override { return "fixed"; }
    const Vocabulary* vocab() const override { return &vocab_; }
    Distribution next_distribution(std::span<const TokenId>) const override {
        return {probs_};
    }

private:
    LmBackendSpec spec_;
    Vocabulary vocab_;
    std::vector<double> probs_;
};

}  // namespace wmlab::testing
