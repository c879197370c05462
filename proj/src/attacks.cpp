#include "wmlab/attacks.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace wmlab {

using nlohmann::json;

namespace {
constexpr uint64_t WORD_DELETE_SALT = 0x243F6A8885A308D3ull;
constexpr uint64_t SYNONYM_SALT = 0x13198A2E03707344ull;
constexpr uint64_t RANDOM_MASK_SALT = 0x082EFA98EC4E6C89ull;

std::vector<std::string> whitespace_words(const std::string& text) {
    std::vector<std::string> words;
    std::istringstream ss(text);
    std::string w;
    while (ss >> w) words.push_back(std::move(w));
    return words;
}

std::string join_words(const std::vector<std::string>& words) {
    std::string out;
    for (size_t i = 0; i < words.size(); ++i) {
        if (i) out += ' ';
        out += words[i];
    }
    return out;
}

}  // namespace

MaskDecision mask_from_values(std::span<const double> values, double epsilon) {
    if (!(epsilon > 0.0 && epsilon < 1.0))
        throw Error("mask_from_values: epsilon must be in (0,1)");
    if (values.size() < 2) throw Error("mask_from_values: need at least 2 values");

    MaskDecision d;
    d.tau = quantile_linear({values.begin(), values.end()}, epsilon);
    d.flags.resize(values.size());
    size_t masked = 0;
    for (size_t i = 0; i < values.size(); ++i) {
        d.flags[i] = values[i] > d.tau;  // strictly above
        if (d.flags[i]) ++masked;
    }
    d.masked_fraction = (double)masked / (double)values.size();
    d.degenerate = masked == 0;
    return d;
}

std::string MaskedText::rendered() const {
    std::string out;
    for (size_t i = 0; i < token_texts.size(); ++i) {
        if (i) out += ' ';
        out += mask_flags[i] ? placeholder : token_texts[i];
    }
    return out;
}

namespace {

MaskedText masked_from_profile(SelfInfoProfile profile, std::vector<std::string> texts,
                               double epsilon) {
    MaskDecision decision = mask_from_values(profile.values, epsilon);
    MaskedText m;
    m.token_texts = std::move(texts);
    m.mask_flags = std::move(decision.flags);
    m.masked_fraction = decision.masked_fraction;
    m.degenerate = decision.degenerate;
    profile.epsilon = epsilon;
    profile.tau = decision.tau;
    m.profile = std::move(profile);
    return m;
}

}  // namespace

MaskedText sira_mask(const TokenSeq& seq, const LmBackend& backend, double epsilon) {
    if (seq.n() < 2) throw Error("sira_mask: need at least 2 tokens");
    const Vocabulary* vocab = backend.vocab();
    if (!vocab) throw Error("sira_mask: backend has no vocabulary; use sira_mask_text");
    std::vector<std::string> texts;
    texts.reserve(seq.n());
    for (TokenId id : seq.ids) texts.push_back(vocab->token(id));
    MaskedText m = masked_from_profile(backend.self_information(seq), std::move(texts),
                                       epsilon);
    m.tokens = seq;
    return m;
}

MaskedText sira_mask_text(const std::string& text, const LmBackend& backend,
                          double epsilon) {
    std::vector<ScoredToken> scored = backend.score_text(text);
    if (scored.size() < 2) throw Error("sira_mask_text: need at least 2 tokens");
    SelfInfoProfile profile;
    std::vector<std::string> texts;
    profile.values.reserve(scored.size());
    profile.capped.reserve(scored.size());
    texts.reserve(scored.size());
    for (auto& t : scored) {
        profile.values.push_back(t.value);
        profile.capped.push_back(t.capped);
        texts.push_back(std::move(t.text));
    }
    return masked_from_profile(std::move(profile), std::move(texts), epsilon);
}

namespace {

AttackRecord run_mask_rewrite_pipeline(const std::string& watermarked_text,
                                       MaskedText masked,
                                       const LmBackend& rewrite_backend,
                                       const PromptTemplates& templates) {
    AttackRecord rec;
    rec.original = watermarked_text;
    rec.masked = std::move(masked);

    try {
        rec.reference = rewrite_backend.instruct_complete(
            templates.render_paraphrase(watermarked_text), Decoding::Sample);
    } catch (const Error& e) {
        throw AttackError(std::string("paraphrase stage failed: ") + e.what(), rec);
    }
    if (rec.reference.empty())
        throw AttackError("paraphrase stage returned empty text", rec);

    try {
        rec.attacked = rewrite_backend.instruct_complete(
            templates.render_fill_in(rec.reference, rec.masked.rendered()),
            Decoding::Greedy);
    } catch (const Error& e) {
        throw AttackError(std::string("fill-in stage failed: ") + e.what(), rec);
    }
    if (rec.attacked.empty()) throw AttackError("fill-in stage returned empty text", rec);
    return rec;
}

}  // namespace

AttackRecord sira_attack(const std::string& watermarked_text,
                         const LmBackend& score_backend, const LmBackend& rewrite_backend,
                         double epsilon, const PromptTemplates& templates) {
    if (watermarked_text.empty()) throw Error("sira_attack: empty input");
    MaskedText masked = sira_mask_text(watermarked_text, score_backend, epsilon);
    return run_mask_rewrite_pipeline(watermarked_text, std::move(masked), rewrite_backend,
                                     templates);
}

AttackRecord random_mask_attack(const std::string& watermarked_text, double mask_ratio,
                                const LmBackend& score_backend,
                                const LmBackend& rewrite_backend, uint64_t seed,
                                const PromptTemplates& templates) {
    if (watermarked_text.empty()) throw Error("random_mask_attack: empty input");
    if (!(mask_ratio > 0.0 && mask_ratio < 1.0))
        throw Error("random_mask_attack: mask_ratio must be in (0,1)");

    std::vector<ScoredToken> scored = score_backend.score_text(watermarked_text);
    if (scored.size() < 2) throw Error("random_mask_attack: need at least 2 tokens");

    MaskedText m;
    m.token_texts.reserve(scored.size());
    for (auto& t : scored) {
        m.profile.values.push_back(t.value);
        m.profile.capped.push_back(t.capped);
        m.token_texts.push_back(std::move(t.text));
    }
    const size_t n = m.token_texts.size();
    const size_t k = (size_t)std::floor(mask_ratio * (double)n);
    Rng rng(mix64(seed) ^ RANDOM_MASK_SALT);
    std::vector<uint32_t> perm = rng.next_permutation((uint32_t)n);
    m.mask_flags.assign(n, false);
    for (size_t i = 0; i < k; ++i) m.mask_flags[perm[i]] = true;
    m.masked_fraction = (double)k / (double)n;
    m.profile.epsilon = -1.0;  // no percentile rule involved
    m.profile.tau = 0.0;

    return run_mask_rewrite_pipeline(watermarked_text, std::move(m), rewrite_backend,
                                     templates);
}

std::string word_delete(const std::string& text, double ratio, uint64_t seed) {
    if (ratio < 0.0 || ratio >= 1.0) throw Error("word_delete: ratio must be in [0,1)");
    std::vector<std::string> words = whitespace_words(text);
    const size_t k = (size_t)std::floor(ratio * (double)words.size());
    if (k == 0) return join_words(words);

    Rng rng(mix64(seed) ^ WORD_DELETE_SALT);
    std::vector<uint32_t> perm = rng.next_permutation((uint32_t)words.size());
    std::vector<bool> deleted(words.size(), false);
    for (size_t i = 0; i < k; ++i) deleted[perm[i]] = true;

    std::vector<std::string> kept;
    kept.reserve(words.size() - k);
    for (size_t i = 0; i < words.size(); ++i)
        if (!deleted[i]) kept.push_back(std::move(words[i]));
    return join_words(kept);
}

Thesaurus load_thesaurus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open thesaurus: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw Error("thesaurus " + path + ": invalid JSON: " + e.what());
    }
    Thesaurus t;
    for (auto& [word, syns] : j.items()) {
        std::vector<std::string> list;
        for (const auto& s : syns)
            if (s.is_string()) list.push_back(s.get<std::string>());
        if (!list.empty()) t[word] = std::move(list);
    }
    return t;
}

std::string synonym_substitute(const std::string& text, double ratio,
                               const Thesaurus& thesaurus, uint64_t seed) {
    if (ratio < 0.0 || ratio > 1.0) throw Error("synonym_substitute: ratio must be in [0,1]");
    std::vector<std::string> words = whitespace_words(text);
    if (thesaurus.empty()) {
        std::fprintf(stderr, "warning: synonym_substitute called with empty thesaurus\n");
        return join_words(words);
    }

    std::vector<size_t> covered;
    for (size_t i = 0; i < words.size(); ++i)
        if (thesaurus.count(words[i])) covered.push_back(i);
    const size_t k = (size_t)std::floor(ratio * (double)covered.size());
    if (k == 0) return join_words(words);

    Rng rng(mix64(seed) ^ SYNONYM_SALT);
    std::vector<uint32_t> perm = rng.next_permutation((uint32_t)covered.size());
    for (size_t i = 0; i < k; ++i) {
        const size_t idx = covered[perm[i]];
        const auto& syns = thesaurus.at(words[idx]);
        words[idx] = syns[rng.next_u64() % syns.size()];
    }
    return join_words(words);
}

std::string paraphrase_attack(const std::string& text, const LmBackend& rewrite_backend,
                              size_t iterations, const PromptTemplates& templates) {
    if (text.empty()) throw Error("paraphrase_attack: empty input");
    if (iterations < 1) throw Error("paraphrase_attack: iterations must be >= 1");
    std::string current = text;
    for (size_t i = 0; i < iterations; ++i)
        current = rewrite_backend.instruct_complete(templates.render_paraphrase(current),
                                                    Decoding::Sample);
    return current;
}

}  // namespace wmlab
