#include <doctest.h>

#include "wmlab/attacks.hpp"
#include "wmlab/watermarks.hpp"

#include "test_helpers.hpp"

#include <fstream>
#include <set>
#include <sstream>

using namespace wmlab;
using namespace wmlab::testing;

namespace {

// Chat backend that always fails; for partial-record propagation.
class FailingChatBackend : public LmBackend {
public:
    FailingChatBackend() { spec_.kind = "remote-chat"; }
    const LmBackendSpec& spec() const override { return spec_; }
    std::string id() const override { return "failing-chat"; }
    std::string instruct_complete(const std::string&, Decoding) const override {
        throw Error("synthetic transport failure");
    }

private:
    LmBackendSpec spec_;
};

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::istringstream ss(text);
    std::string w;
    while (ss >> w) words.push_back(w);
    return words;
}

bool is_subsequence(const std::vector<std::string>& sub,
                    const std::vector<std::string>& full) {
    size_t i = 0;
    for (const auto& w : full)
        if (i < sub.size() && sub[i] == w) ++i;
    return i == sub.size();
}

}  // namespace

TEST_CASE("mask_from_values: linear-interpolation quantile worked examples") {
    // 1..10 at epsilon 0.3: tau = 3.7, masks values 4..10 -> fraction 0.7
    std::vector<double> values = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    MaskDecision d = mask_from_values(values, 0.3);
    CHECK(d.tau == doctest::Approx(3.7));
    CHECK(d.masked_fraction == doctest::Approx(0.7));
    for (size_t i = 0; i < values.size(); ++i) CHECK(d.flags[i] == (values[i] > 3.7));

    // epsilon 0.5 over [1,2,3,4]: tau = 2.5, masks 3 and 4
    MaskDecision h = mask_from_values(std::vector<double>{1, 2, 3, 4}, 0.5);
    CHECK(h.tau == doctest::Approx(2.5));
    CHECK(h.flags == std::vector<bool>{false, false, true, true});
}

TEST_CASE("mask_from_values: quantile matches a brute-force interpolation oracle") {
    Rng rng(23);
    for (int trial = 0; trial < 200; ++trial) {
        const size_t n = 2 + rng.next_u64() % 40;
        std::vector<double> values(n);
        for (auto& v : values) v = rng.next_normal() * 3.0;
        const double eps = 0.05 + 0.9 * rng.next_unit();
        MaskDecision d = mask_from_values(values, eps);

        std::vector<double> sorted = values;
        std::sort(sorted.begin(), sorted.end());
        const double h = (double)(n - 1) * eps;
        const size_t lo = (size_t)h;
        const double expected =
            lo + 1 < n ? sorted[lo] + (h - lo) * (sorted[lo + 1] - sorted[lo])
                       : sorted.back();
        CHECK(d.tau == doctest::Approx(expected).epsilon(1e-12));

        size_t masked = 0;
        for (size_t i = 0; i < n; ++i) {
            CHECK(d.flags[i] == (values[i] > d.tau));  // strict rule
            if (d.flags[i]) ++masked;
        }
        CHECK(d.masked_fraction == doctest::Approx((double)masked / (double)n));
    }
}

TEST_CASE("mask_from_values: all-equal values mask nothing and flag degenerate") {
    MaskDecision d = mask_from_values(std::vector<double>{2.5, 2.5, 2.5, 2.5}, 0.3);
    CHECK(d.degenerate);
    CHECK(d.masked_fraction == 0.0);
    CHECK(d.tau == doctest::Approx(2.5));
}

TEST_CASE("mask_from_values: masked fraction is non-increasing in epsilon") {
    Rng rng(3);
    std::vector<double> values(60);
    for (auto& v : values) v = rng.next_unit() * 10.0;
    double last = 1.0;
    for (double eps : {0.1, 0.25, 0.3, 0.4, 0.55, 0.7, 0.9}) {
        MaskDecision d = mask_from_values(values, eps);
        CHECK(d.masked_fraction <= last);
        last = d.masked_fraction;
    }
}

TEST_CASE("sira_mask: deterministic and byte-identical across repeats") {
    SyntheticBackend backend(synth_spec(7));
    TokenSeq seq = embed(WatermarkConfig::from_file(data_path("configs/unigram.json")), backend,
                         tokenize("w1 w2", *backend.vocab()), 60, 4);
    MaskedText first = sira_mask(seq, backend, 0.3);
    const std::string rendered = first.rendered();
    for (int i = 0; i < 10; ++i) {
        MaskedText again = sira_mask(seq, backend, 0.3);
        CHECK(again.rendered() == rendered);
        CHECK(again.mask_flags == first.mask_flags);
        CHECK(again.profile.values == first.profile.values);
    }
    CHECK(first.profile.epsilon == 0.3);
    CHECK(first.profile.tau == doctest::Approx(quantile_linear(first.profile.values, 0.3)));
}

TEST_CASE("sira_mask: placeholders are one underscore per token, never merged") {
    FixedBackend backend({0.7, 0.2, 0.06, 0.04});
    TokenSeq seq{{0, 2, 3, 0, 1}, {}};  // values: low, high, high, low, mid
    MaskedText m = sira_mask(seq, backend, 0.4);
    CHECK(m.mask_flags == std::vector<bool>{false, true, true, false, true});
    CHECK(m.rendered() == "t0 _ _ t0 _");
    CHECK(m.masked_fraction == doctest::Approx(0.6));
}

TEST_CASE("sira_mask_text agrees with sira_mask on local backends") {
    SyntheticBackend backend(synth_spec(19));
    const std::string text = "w5 w9 w13 w2 w2 w7 w1 w30 w12 w4";
    MaskedText via_text = sira_mask_text(text, backend, 0.3);
    MaskedText via_seq = sira_mask(tokenize(text, *backend.vocab()), backend, 0.3);
    CHECK(via_text.rendered() == via_seq.rendered());
    CHECK(via_text.profile.values == via_seq.profile.values);
}

TEST_CASE("sira_attack: full pipeline on the offline stub") {
    SyntheticBackend score(synth_spec(1));
    LmBackendSpec rw_spec = synth_spec(1);
    rw_spec.uniform_mix = 0.25;
    rw_spec.temperature = 0.7;
    SyntheticBackend rewrite(rw_spec);

    WatermarkConfig cfg = WatermarkConfig::from_file(data_path("configs/unigram.json"));
    TokenSeq wm = embed(cfg, score, tokenize("w1 w2", *score.vocab()), 80, 21);
    const std::string original = detokenize(wm, *score.vocab());

    AttackRecord rec = sira_attack(original, score, rewrite, 0.3);
    CHECK(rec.original == original);
    CHECK_FALSE(rec.reference.empty());
    CHECK_FALSE(rec.attacked.empty());
    CHECK(rec.masked.masked_fraction > 0.4);

    // token-diff oracle: at least masked_fraction * n - slack tokens changed
    std::vector<std::string> orig_words = split_words(original);
    std::vector<std::string> att_words = split_words(rec.attacked);
    REQUIRE(orig_words.size() == att_words.size());  // stub preserves layout
    size_t diff = 0;
    for (size_t i = 0; i < orig_words.size(); ++i)
        if (orig_words[i] != att_words[i]) ++diff;
    const double slack = 0.25 * (double)orig_words.size();
    CHECK((double)diff >=
          rec.masked.masked_fraction * (double)orig_words.size() - slack);

    // repeated runs are identical end to end (mask + stub rewrites)
    AttackRecord again = sira_attack(original, score, rewrite, 0.3);
    CHECK(again.attacked == rec.attacked);
    CHECK(again.reference == rec.reference);
}

TEST_CASE("sira_attack: epsilon -> 0 masks nearly everything") {
    SyntheticBackend backend(synth_spec(2));
    WatermarkConfig cfg = WatermarkConfig::from_file(data_path("configs/unigram.json"));
    TokenSeq wm = embed(cfg, backend, tokenize("w3", *backend.vocab()), 100, 5);
    const std::string original = detokenize(wm, *backend.vocab());
    MaskedText m = sira_mask_text(original, backend, 0.01);
    CHECK(m.masked_fraction >= 0.9);

    // fully masked text reconstructs as the unconditional greedy chain
    std::string all_masked;
    for (size_t i = 0; i < 40; ++i) all_masked += i ? " _" : "_";
    PromptTemplates t;
    const std::string filled =
        backend.instruct_complete(t.render_fill_in("ref", all_masked), Decoding::Greedy);
    GenerationRequest req;
    req.max_new_tokens = 40;
    req.decoding = Decoding::Greedy;
    req.stop_at_eos = false;
    CHECK(filled == detokenize(backend.generate(req), *backend.vocab()));
}

TEST_CASE("sira_attack: rewrite failure carries the partial record") {
    SyntheticBackend score(synth_spec(1));
    FailingChatBackend rewrite;
    const std::string original = "w1 w2 w3 w4 w5 w6 w7 w8";
    try {
        sira_attack(original, score, rewrite, 0.3);
        FAIL("expected AttackError");
    } catch (const AttackError& e) {
        CHECK(e.partial_record.original == original);
        CHECK(e.partial_record.masked.n() == 8);
        CHECK(e.partial_record.reference.empty());
    }
}

TEST_CASE("word_delete: ratio and order") {
    CHECK(word_delete("a b c", 0.0, 1) == "a b c");
    const std::string text = "w1 w2 w3 w4 w5 w6 w7 w8 w9 w10";
    const std::string out = word_delete(text, 0.3, 7);
    std::vector<std::string> kept = split_words(out);
    CHECK(kept.size() == 7);
    CHECK(is_subsequence(kept, split_words(text)));
    CHECK(word_delete(text, 0.3, 7) == out);   // reproducible
    CHECK(word_delete(text, 0.3, 8) != out);   // seed-sensitive
    CHECK_THROWS_AS(word_delete(text, 1.0, 1), Error);
}

TEST_CASE("synonym_substitute: coverage rules") {
    Thesaurus t = load_thesaurus(data_path("thesaurus/tiny.json"));
    REQUIRE(t.count("quick"));

    const std::string text = "the quick fox took the old road home";
    CHECK(synonym_substitute(text, 0.0, t, 1) == text);

    // ratio 1: every covered word replaced ("quick", "old", "road"),
    // uncovered words untouched
    const std::string out = synonym_substitute(text, 1.0, t, 5);
    std::vector<std::string> words = split_words(out);
    REQUIRE(words.size() == 8);
    CHECK(words[0] == "the");
    CHECK(words[2] == "fox");
    CHECK(words[1] != "quick");
    CHECK(words[5] != "old");
    CHECK(words[6] != "road");
    std::set<std::string> quick_syns(t["quick"].begin(), t["quick"].end());
    CHECK(quick_syns.count(words[1]) == 1);

    Thesaurus empty;
    CHECK(synonym_substitute(text, 0.5, empty, 1) == text);  // identity + warning
}

TEST_CASE("random_mask_attack: seeded mask sets differ across seeds") {
    SyntheticBackend score(synth_spec(1));
    LmBackendSpec rw_spec = synth_spec(1);
    rw_spec.uniform_mix = 0.25;
    SyntheticBackend rewrite(rw_spec);
    WatermarkConfig cfg = WatermarkConfig::from_file(data_path("configs/unigram.json"));
    TokenSeq wm = embed(cfg, score, tokenize("w1", *score.vocab()), 60, 9);
    const std::string original = detokenize(wm, *score.vocab());

    std::set<std::vector<bool>> masks;
    for (uint64_t seed = 0; seed < 5; ++seed) {
        AttackRecord rec = random_mask_attack(original, 0.5, score, rewrite, seed);
        CHECK(rec.masked.masked_fraction == doctest::Approx(0.5));
        CHECK_FALSE(rec.attacked.empty());
        masks.insert(rec.masked.mask_flags);
    }
    CHECK(masks.size() >= 4);  // five seeds, generally different subsets
}

TEST_CASE("paraphrase_attack: deterministic; two rounds compose") {
    LmBackendSpec spec = synth_spec(6);
    spec.temperature = 0.7;
    SyntheticBackend backend(spec);
    const std::string text = "w1 w2 w3 w4 w5 w6 w7 w8 w9 w10 w11 w12";
    const std::string once = paraphrase_attack(text, backend, 1);
    CHECK(once == paraphrase_attack(text, backend, 1));
    CHECK(paraphrase_attack(text, backend, 2) == paraphrase_attack(once, backend, 1));
}

TEST_CASE("prompt template files match the embedded texts byte for byte") {
    PromptTemplates embedded;
    PromptTemplates files = PromptTemplates::from_dir(data_path("prompts"));
    CHECK(files.fill_in == embedded.fill_in);
    CHECK(files.paraphrase == embedded.paraphrase);
    CHECK(files.judge == embedded.judge);
}

TEST_CASE("prompt rendering: markers and slots") {
    PromptTemplates t;
    const std::string fill = t.render_fill_in("REF TEXT", "MASKED TEXT");
    CHECK(fill.find("incomplete paragraph:") != std::string::npos);
    CHECK(fill.find("You will be shown one reference paragraph") != std::string::npos);
    CHECK(fill.find("REF TEXT") != std::string::npos);
    CHECK(fill.find("MASKED TEXT") != std::string::npos);
    CHECK(fill.find("{reference}") == std::string::npos);

    const std::string para = t.render_paraphrase("INPUT PASSAGE");
    CHECK(para.find("You are a paraphraser") != std::string::npos);
    CHECK(para.find("INPUT PASSAGE") != std::string::npos);

    auto sections = parse_fill_in_prompt(fill);
    REQUIRE(sections.has_value());
    CHECK(sections->reference == "REF TEXT");
    CHECK(sections->masked == "MASKED TEXT");
    CHECK(parse_paraphrase_prompt(para) == "INPUT PASSAGE");
    CHECK_FALSE(parse_fill_in_prompt(para).has_value());
}
