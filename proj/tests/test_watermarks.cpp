#include <doctest.h>

#include "wmlab/watermarks.hpp"

#include "test_helpers.hpp"

#include <cmath>
#include <set>

using namespace wmlab;
using namespace wmlab::testing;

namespace {

WatermarkConfig kgw_config(double gamma = 0.5, double delta = 2.0, size_t prefix_length = 1) {
    WatermarkConfig cfg;
    cfg.algorithm = WatermarkAlgorithm::KGW;
    cfg.gamma = gamma;
    cfg.delta = delta;
    cfg.hash_key = 15485863;
    cfg.prefix_length = prefix_length;
    cfg.z_threshold = 4.0;
    return cfg;
}

WatermarkConfig unigram_config(double gamma = 0.5, double delta = 2.0) {
    WatermarkConfig cfg = kgw_config(gamma, delta);
    cfg.algorithm = WatermarkAlgorithm::Unigram;
    return cfg;
}

WatermarkConfig exp_config() {
    WatermarkConfig cfg;
    cfg.algorithm = WatermarkAlgorithm::EXP;
    cfg.hash_key = 15485863;
    cfg.prefix_length = 4;
    cfg.exp_threshold = 2.0;
    cfg.sequence_length = 230;
    return cfg;
}

double green_fraction(const WatermarkConfig& cfg, const TokenSeq& out, size_t vocab_size,
                      const TokenSeq& prompt) {
    // recount greens by walking the sequence with the embedding-side keying
    std::vector<TokenId> full = prompt.ids;
    size_t green = 0;
    for (TokenId id : out.ids) {
        std::vector<TokenId> prefix(cfg.prefix_length, (TokenId)TOKEN_BOS);
        const size_t take = std::min(cfg.prefix_length, full.size());
        for (size_t i = 0; i < take; ++i)
            prefix[cfg.prefix_length - take + i] = full[full.size() - take + i];
        GreenListPartition part =
            green_list(cfg, vocab_size,
                       cfg.algorithm == WatermarkAlgorithm::Unigram
                           ? std::span<const TokenId>{}
                           : std::span<const TokenId>(prefix));
        if (part.is_green[id]) ++green;
        full.push_back(id);
    }
    return (double)green / (double)out.n();
}

}  // namespace

TEST_CASE("green_list: deterministic, floor-sized, and a true partition") {
    WatermarkConfig cfg = kgw_config();
    std::vector<TokenId> prefix = {7};
    GreenListPartition a = green_list(cfg, 10, prefix);
    GreenListPartition b = green_list(cfg, 10, prefix);
    CHECK(a.is_green == b.is_green);
    CHECK(a.green_count == 5);  // floor(0.5 * 10)
    CHECK(a.realized_gamma == doctest::Approx(0.5));
    size_t green = 0;
    for (bool g : a.is_green)
        if (g) ++green;
    CHECK(green == a.green_count);  // complement is implicit: every id is one or the other
    CHECK(std::abs(a.realized_gamma - cfg.gamma) <= 1.0 / 10.0);
}

TEST_CASE("green_list: gamma floor arithmetic across sizes") {
    WatermarkConfig cfg = kgw_config(0.25);
    std::vector<TokenId> prefix = {0};
    CHECK(green_list(cfg, 10, prefix).green_count == 2);
    CHECK(green_list(cfg, 64, prefix).green_count == 16);
    CHECK(green_list(cfg, 7, prefix).green_count == 1);
}

TEST_CASE("green_list: Unigram ignores the prefix, KGW-1 depends on it") {
    WatermarkConfig uni = unigram_config();
    GreenListPartition u1 = green_list(uni, 64, {});
    GreenListPartition u2 = green_list(uni, 64, {});
    CHECK(u1.is_green == u2.is_green);

    // brute-force enumeration over 100 random single-token prefixes: KGW
    // partitions should essentially all differ
    WatermarkConfig kgw = kgw_config();
    std::set<std::vector<bool>> partitions;
    Rng rng(99);
    for (int i = 0; i < 100; ++i) {
        std::vector<TokenId> prefix = {(TokenId)(rng.next_u64() % 64)};
        partitions.insert(green_list(kgw, 64, prefix).is_green);
    }
    CHECK(partitions.size() >= 50);  // 100 draws over 64 distinct prefixes
}

TEST_CASE("green_list: different keys give different partitions") {
    WatermarkConfig a = unigram_config();
    WatermarkConfig b = unigram_config();
    b.hash_key = 42;
    CHECK(green_list(a, 64, {}).is_green != green_list(b, 64, {}).is_green);
}

TEST_CASE("embed: zero delta reproduces unwatermarked sampling exactly") {
    SyntheticBackend backend(synth_spec(7));
    WatermarkConfig cfg = kgw_config(0.5, 0.0);
    TokenSeq prompt = tokenize("w1 w2", *backend.vocab());

    TokenSeq watermarked = embed(cfg, backend, prompt, 50, 3);
    GenerationRequest req;
    req.context = prompt;
    req.max_new_tokens = 50;
    req.decoding = Decoding::Sample;
    req.temperature = 1.0;
    req.seed = 3;
    req.stop_at_eos = false;
    TokenSeq plain = backend.generate(req);
    CHECK(watermarked.ids == plain.ids);
}

TEST_CASE("embed: KGW delta=2 green fraction matches the softmax closed form") {
    // uniform backend: boosted mass is exactly e^2/(e^2+1) = 0.8808 per step
    SyntheticBackend backend(synth_spec(7, 64, 1.0));
    WatermarkConfig cfg = kgw_config();
    TokenSeq prompt = tokenize("w1 w2", *backend.vocab());
    TokenSeq out = embed(cfg, backend, prompt, 200, 3);
    REQUIRE(out.n() == 200);
    const double frac = green_fraction(cfg, out, backend.vocab()->size(), prompt);
    const double target = std::exp(2.0) / (std::exp(2.0) + 1.0);
    CHECK(std::abs(frac - target) <= 0.03);

    // the context-sensitive default backend lands in the same band
    SyntheticBackend dirichlet(synth_spec(7));
    TokenSeq out2 = embed(cfg, dirichlet, prompt, 200, 3);
    const double frac2 = green_fraction(cfg, out2, dirichlet.vocab()->size(), prompt);
    CHECK(std::abs(frac2 - target) <= 0.035);
}

TEST_CASE("embed: green fraction is monotone in delta") {
    SyntheticBackend backend(synth_spec(13));
    TokenSeq prompt = tokenize("w3", *backend.vocab());
    double last = -1.0;
    for (double delta : {0.0, 1.0, 2.0, 4.0}) {
        WatermarkConfig cfg = unigram_config(0.5, delta);
        TokenSeq out = embed(cfg, backend, prompt, 10000, 17);
        const double frac = green_fraction(cfg, out, backend.vocab()->size(), prompt);
        CHECK(frac >= last);
        last = frac;
    }
    CHECK(last > 0.95);  // delta=4 boosts hard
}

TEST_CASE("embed: EXP is fully deterministic in (key, prompt)") {
    SyntheticBackend backend(synth_spec(5));
    WatermarkConfig cfg = exp_config();
    TokenSeq prompt = tokenize("w1 w2 w3", *backend.vocab());
    TokenSeq a = embed(cfg, backend, prompt, 64, 1);
    TokenSeq b = embed(cfg, backend, prompt, 64, 999);  // seed is irrelevant for EXP
    CHECK(a.ids == b.ids);
    CHECK(a.n() == 64);

    WatermarkConfig other = exp_config();
    other.hash_key = 77;
    CHECK(embed(other, backend, prompt, 64, 1).ids != a.ids);
}

TEST_CASE("embed: EXP selection is unbiased across keys (chi-squared, V=8, 50k draws)") {
    // production path: one-step embeds under 50,000 distinct keys; token
    // frequencies must match the backend distribution
    const std::vector<double> probs = {0.30, 0.20, 0.15, 0.12, 0.08, 0.07, 0.05, 0.03};
    FixedBackend backend(probs);
    TokenSeq prompt;  // empty; BOS-padded window
    const size_t draws = 50000;
    std::vector<size_t> counts(8, 0);
    for (size_t k = 0; k < draws; ++k) {
        WatermarkConfig cfg = exp_config();
        cfg.hash_key = 1000 + k;
        TokenSeq out = embed(cfg, backend, prompt, 1, 0);
        ++counts[out.ids[0]];
    }
    double chi2 = 0.0;
    for (size_t i = 0; i < 8; ++i) {
        const double expected = probs[i] * (double)draws;
        const double diff = (double)counts[i] - expected;
        chi2 += diff * diff / expected;
    }
    CHECK(chi2 < 24.32);  // df=7 critical value at 99.9%
}

TEST_CASE("embed: unsupported algorithms are rejected") {
    SyntheticBackend backend(synth_spec(1));
    WatermarkConfig cfg;
    cfg.algorithm = WatermarkAlgorithm::UPV;
    TokenSeq prompt = tokenize("w0", *backend.vocab());
    CHECK_THROWS_WITH_AS(embed(cfg, backend, prompt, 8, 0),
                         doctest::Contains("unsupported algorithm"), Error);
}

TEST_CASE("watermark config: field sets are validated per algorithm") {
    // EXP uses "threshold", never gamma/delta/z_threshold
    CHECK_THROWS_AS(WatermarkConfig::from_json_text(
                        R"({"algorithm_name": "EXP", "prefix_length": 4, "hash_key": 1,
                            "threshold": 2.0, "sequence_length": 230, "gamma": 0.5})"),
                    Error);
    CHECK_THROWS_AS(WatermarkConfig::from_json_text(
                        R"({"algorithm_name": "KGW", "gamma": 0.5, "delta": 2.0,
                            "hash_key": 1, "prefix_length": 1})"),
                    Error);  // missing z_threshold
    CHECK_THROWS_AS(WatermarkConfig::from_json_text(
                        R"({"algorithm_name": "Unigram", "gamma": 0.5, "delta": 2.0,
                            "hash_key": 1, "z_threshold": 4.0, "prefix_length": 1})"),
                    Error);  // Unigram carries no prefix_length
    CHECK_THROWS_AS(WatermarkConfig::from_json_text(
                        R"({"algorithm_name": "KGW", "gamma": 1.5, "delta": 2.0,
                            "hash_key": 1, "prefix_length": 1, "z_threshold": 4.0})"),
                    Error);  // gamma out of range

    WatermarkConfig exp = WatermarkConfig::from_json_text(
        R"({"algorithm_name": "EXP", "prefix_length": 4, "hash_key": 15485863,
            "threshold": 2.0, "sequence_length": 230})");
    CHECK(exp.exp_threshold == 2.0);
    CHECK(exp.sequence_length == 230);
    CHECK(exp.default_threshold() == 2.0);
}

TEST_CASE("watermark config: extra fields round trip verbatim") {
    WatermarkConfig dip = WatermarkConfig::from_json_text(
        R"({"algorithm_name": "DIP", "gamma": 0.5, "alpha": 0.45, "hash_key": 42,
            "prefix_length": 5, "z_threshold": 1.513, "ignore_history": 1})");
    CHECK_FALSE(is_supported(dip.algorithm));
    CHECK(dip.to_json_text().find("ignore_history") != std::string::npos);
    CHECK(dip.z_threshold == doctest::Approx(1.513));
}

TEST_CASE("exp_window: BOS padding at the start of the sequence") {
    WatermarkConfig cfg = exp_config();
    std::vector<TokenId> generated = {10, 11, 12, 13, 14, 15};
    CHECK(exp_window(cfg, generated, 0) ==
          std::vector<TokenId>{TOKEN_BOS, TOKEN_BOS, TOKEN_BOS, TOKEN_BOS});
    CHECK(exp_window(cfg, generated, 2) ==
          std::vector<TokenId>{TOKEN_BOS, TOKEN_BOS, 10, 11});
    CHECK(exp_window(cfg, generated, 6) == std::vector<TokenId>{12, 13, 14, 15});
}
