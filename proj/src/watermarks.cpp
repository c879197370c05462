#include "wmlab/watermarks.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

namespace wmlab {

using nlohmann::json;

namespace {
constexpr uint64_t GREEN_SALT = 0x6A09E667F3BCC908ull;
constexpr uint64_t EXP_SALT = 0xBB67AE8584CAA73Bull;
}  // namespace

std::string to_string(WatermarkAlgorithm a) {
    switch (a) {
        case WatermarkAlgorithm::KGW: return "KGW";
        case WatermarkAlgorithm::Unigram: return "Unigram";
        case WatermarkAlgorithm::EWD: return "EWD";
        case WatermarkAlgorithm::EXP: return "EXP";
        case WatermarkAlgorithm::UPV: return "UPV";
        case WatermarkAlgorithm::DIP: return "DIP";
        case WatermarkAlgorithm::SIR: return "SIR";
    }
    return "?";
}

WatermarkAlgorithm watermark_algorithm_from_string(const std::string& name) {
    if (name == "KGW") return WatermarkAlgorithm::KGW;
    if (name == "Unigram") return WatermarkAlgorithm::Unigram;
    if (name == "EWD") return WatermarkAlgorithm::EWD;
    if (name == "EXP") return WatermarkAlgorithm::EXP;
    if (name == "UPV") return WatermarkAlgorithm::UPV;
    if (name == "DIP") return WatermarkAlgorithm::DIP;
    if (name == "SIR") return WatermarkAlgorithm::SIR;
    throw Error("unknown watermark algorithm_name: " + name);
}

bool is_supported(WatermarkAlgorithm a) {
    switch (a) {
        case WatermarkAlgorithm::KGW:
        case WatermarkAlgorithm::Unigram:
        case WatermarkAlgorithm::EWD:
        case WatermarkAlgorithm::EXP:
            return true;
        default:
            return false;
    }
}

WatermarkConfig WatermarkConfig::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(strip_trailing_commas(text));
    } catch (const json::exception& e) {
        throw Error(std::string("watermark config: invalid JSON: ") + e.what());
    }
    if (!j.contains("algorithm_name"))
        throw Error("watermark config: missing algorithm_name");

    WatermarkConfig cfg;
    cfg.algorithm = watermark_algorithm_from_string(j["algorithm_name"].get<std::string>());

    auto require = [&](const char* key) {
        if (!j.contains(key))
            throw Error("watermark config " + to_string(cfg.algorithm) +
                        ": missing field " + key);
    };
    auto forbid = [&](const char* key) {
        if (j.contains(key))
            throw Error("watermark config " + to_string(cfg.algorithm) +
                        ": unexpected field " + key);
    };

    switch (cfg.algorithm) {
        case WatermarkAlgorithm::KGW:
        case WatermarkAlgorithm::EWD:
            require("gamma"); require("delta"); require("hash_key");
            require("prefix_length"); require("z_threshold");
            forbid("threshold"); forbid("sequence_length");
            break;
        case WatermarkAlgorithm::Unigram:
            require("gamma"); require("delta"); require("hash_key");
            require("z_threshold");
            forbid("prefix_length"); forbid("threshold");
            break;
        case WatermarkAlgorithm::EXP:
            require("prefix_length"); require("hash_key"); require("threshold");
            require("sequence_length");
            forbid("gamma"); forbid("delta"); forbid("z_threshold");
            break;
        default:
            break;  // unsupported algorithms parse loosely, for fidelity
    }

    cfg.gamma = j.value("gamma", 0.5);
    cfg.delta = j.value("delta", 2.0);
    cfg.hash_key = j.value("hash_key", (uint64_t)15485863);
    cfg.prefix_length = j.value("prefix_length", (size_t)1);
    cfg.z_threshold = j.value("z_threshold", 4.0);
    cfg.exp_threshold = j.value("threshold", 2.0);
    cfg.sequence_length = j.value("sequence_length", (size_t)230);

    if (is_supported(cfg.algorithm)) {
        if (cfg.algorithm != WatermarkAlgorithm::EXP) {
            if (!(cfg.gamma > 0.0 && cfg.gamma < 1.0))
                throw Error("watermark config: gamma must be in (0,1)");
            if (cfg.delta < 0.0) throw Error("watermark config: delta must be >= 0");
        }
        if (cfg.prefix_length < 1)
            throw Error("watermark config: prefix_length must be >= 1");
    }

    // keep unparsed fields verbatim for round-tripping
    json extras = json::object();
    static const std::set<std::string> known = {
        "algorithm_name", "gamma", "delta", "hash_key", "prefix_length",
        "z_threshold", "threshold", "sequence_length"};
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key())) extras[it.key()] = it.value();
    if (!extras.empty()) cfg.extra_json = extras.dump();
    return cfg;
}

WatermarkConfig WatermarkConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open watermark config: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return from_json_text(ss.str());
    } catch (const Error& e) {
        throw Error(path + ": " + e.what());
    }
}

std::string WatermarkConfig::to_json_text() const {
    json j;
    j["algorithm_name"] = to_string(algorithm);
    if (algorithm == WatermarkAlgorithm::EXP) {
        j["prefix_length"] = prefix_length;
        j["hash_key"] = hash_key;
        j["threshold"] = exp_threshold;
        j["sequence_length"] = sequence_length;
    } else {
        j["gamma"] = gamma;
        j["delta"] = delta;
        j["hash_key"] = hash_key;
        if (algorithm != WatermarkAlgorithm::Unigram) j["prefix_length"] = prefix_length;
        j["z_threshold"] = z_threshold;
    }
    if (!extra_json.empty()) {
        const json extras = json::parse(extra_json);
        for (const auto& [k, v] : extras.items()) j[k] = v;
    }
    return j.dump(2);
}

std::set<TokenId> GreenListPartition::green_set() const {
    std::set<TokenId> s;
    for (size_t i = 0; i < is_green.size(); ++i)
        if (is_green[i]) s.insert((TokenId)i);
    return s;
}

GreenListPartition green_list(const WatermarkConfig& cfg, size_t vocab_size,
                              std::span<const TokenId> prefix) {
    if (!is_supported(cfg.algorithm) || cfg.algorithm == WatermarkAlgorithm::EXP)
        throw Error("green_list: unsupported algorithm " + to_string(cfg.algorithm));
    if (vocab_size < 2) throw Error("green_list: vocabulary too small");

    uint64_t key;
    if (cfg.algorithm == WatermarkAlgorithm::Unigram) {
        key = hash_words(cfg.hash_key ^ GREEN_SALT, {});
    } else {
        if (prefix.size() != cfg.prefix_length)
            throw Error("green_list: prefix length must equal cfg.prefix_length");
        std::vector<uint64_t> words(prefix.begin(), prefix.end());
        key = hash_words(cfg.hash_key ^ GREEN_SALT, words);
    }

    Rng rng(key);
    std::vector<uint32_t> perm = rng.next_permutation((uint32_t)vocab_size);
    const size_t n_green = (size_t)std::floor(cfg.gamma * (double)vocab_size);

    GreenListPartition part;
    part.is_green.assign(vocab_size, false);
    for (size_t i = 0; i < n_green; ++i) part.is_green[perm[i]] = true;
    part.green_count = n_green;
    part.realized_gamma = (double)n_green / (double)vocab_size;
    return part;
}

double exp_u_value(const WatermarkConfig& cfg, std::span<const TokenId> window,
                   TokenId token) {
    std::vector<uint64_t> words(window.begin(), window.end());
    const uint64_t key = hash_words(cfg.hash_key ^ EXP_SALT, words);
    return u64_to_unit(counter_rng(key, token));
}

std::vector<TokenId> exp_window(const WatermarkConfig& cfg,
                                std::span<const TokenId> generated, size_t step) {
    std::vector<TokenId> window(cfg.prefix_length, (TokenId)TOKEN_BOS);
    const size_t take = std::min(cfg.prefix_length, step);
    for (size_t i = 0; i < take; ++i)
        window[cfg.prefix_length - take + i] = generated[step - take + i];
    return window;
}

TokenSeq embed(const WatermarkConfig& cfg, const LmBackend& backend,
               const TokenSeq& prompt, size_t length, uint64_t seed) {
    if (!is_supported(cfg.algorithm))
        throw Error("embed: unsupported algorithm " + to_string(cfg.algorithm));
    if (length < 1) throw Error("embed: length must be >= 1");
    const Vocabulary* vocab = backend.vocab();
    if (!vocab) throw Error("embed: backend has no local vocabulary");
    const size_t V = vocab->size();

    GenerationRequest req;
    req.context = prompt;
    req.max_new_tokens = length;
    req.seed = seed;
    req.stop_at_eos = false;  // watermarked corpora are fixed-length

    if (cfg.algorithm == WatermarkAlgorithm::EXP) {
        // Keyed exponential-minimum sampling; deterministic in
        // (hash_key, generated prefix window).
        const size_t prompt_len = prompt.n();
        req.decoding = Decoding::Sample;
        req.temperature = 1.0;
        req.per_step_rng_hook = [cfg, prompt_len, V](std::span<const TokenId> ctx) {
            std::span<const TokenId> generated = ctx.subspan(prompt_len);
            std::vector<TokenId> window = exp_window(cfg, generated, generated.size());
            std::vector<double> u(V);
            for (size_t i = 0; i < V; ++i)
                u[i] = exp_u_value(cfg, window, (TokenId)i);
            return u;
        };
    } else {
        req.decoding = Decoding::Sample;
        req.temperature = 1.0;
        req.logit_bias_hook = [cfg, V](std::span<const TokenId> ctx,
                                       std::vector<double>& scores) {
            std::span<const TokenId> prefix;
            std::vector<TokenId> padded;
            if (cfg.algorithm != WatermarkAlgorithm::Unigram) {
                if (ctx.size() >= cfg.prefix_length) {
                    prefix = ctx.subspan(ctx.size() - cfg.prefix_length);
                } else {
                    padded.assign(cfg.prefix_length, (TokenId)TOKEN_BOS);
                    for (size_t i = 0; i < ctx.size(); ++i)
                        padded[cfg.prefix_length - ctx.size() + i] = ctx[i];
                    prefix = padded;
                }
            }
            GreenListPartition part = green_list(cfg, V, prefix);
            for (size_t i = 0; i < scores.size(); ++i)
                if (part.is_green[i]) scores[i] += cfg.delta;
        };
    }
    return backend.generate(req);
}

}  // namespace wmlab
