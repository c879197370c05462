#pragma once

// Watermark embedding: KGW and EWD (prefix-hashed green lists with a logit
// bias), Unigram (fixed keyed green list), and EXP (keyed pseudo-random
// sampling). Logit-bias schemes are realized as generation hooks; EXP
// replaces the sampler with a keyed exponential-minimum rule.

#include "wmlab/lm_backend.hpp"

#include <set>
#include <string>

namespace wmlab {

enum class WatermarkAlgorithm { KGW, Unigram, EWD, EXP, UPV, DIP, SIR };

std::string to_string(WatermarkAlgorithm a);
WatermarkAlgorithm watermark_algorithm_from_string(const std::string& name);

// True for algorithms this lab can embed and detect. The remaining configs
// parse for fidelity but raise "unsupported algorithm" when used.
bool is_supported(WatermarkAlgorithm a);

struct WatermarkConfig {
    WatermarkAlgorithm algorithm = WatermarkAlgorithm::KGW;
    double gamma = 0.5;          // green fraction (logit-bias schemes)
    double delta = 2.0;          // logit boost for green tokens
    uint64_t hash_key = 15485863;
    size_t prefix_length = 1;    // preceding tokens hashed into the key
    double z_threshold = 4.0;
    double exp_threshold = 2.0;  // EXP decision threshold
    size_t sequence_length = 230;  // EXP default generation length

    std::string extra_json;      // algorithm-specific fields kept verbatim

    // Parses the published config layout (bit-exact keys; trailing commas
    // tolerated). Validates that the field set matches the algorithm.
    static WatermarkConfig from_json_text(const std::string& text);
    static WatermarkConfig from_file(const std::string& path);
    std::string to_json_text() const;

    double default_threshold() const {
        return algorithm == WatermarkAlgorithm::EXP ? exp_threshold : z_threshold;
    }
};

struct GreenListPartition {
    std::vector<bool> is_green;  // indexed by TokenId
    size_t green_count = 0;
    double realized_gamma = 0.0;

    std::set<TokenId> green_set() const;
};

// Keyed pseudo-random partition of the vocabulary. KGW/EWD hash the last
// prefix_length token ids with the key; Unigram uses the key alone.
GreenListPartition green_list(const WatermarkConfig& cfg, size_t vocab_size,
                              std::span<const TokenId> prefix);

// Keyed per-token uniform value for the EXP scheme: the sampling/detection
// vector u at a context window, addressed by token id in O(1).
double exp_u_value(const WatermarkConfig& cfg, std::span<const TokenId> window,
                   TokenId token);

// Last `prefix_length` tokens of `generated`, BOS-padded on the left. EXP
// keys within the generated text only, so the detector can reconstruct
// every step without the prompt.
std::vector<TokenId> exp_window(const WatermarkConfig& cfg,
                                std::span<const TokenId> generated, size_t step);

// Watermarked generation of `length` tokens after `prompt`.
TokenSeq embed(const WatermarkConfig& cfg, const LmBackend& backend,
               const TokenSeq& prompt, size_t length, uint64_t seed);

}  // namespace wmlab
