#include <doctest.h>

#include "wmlab/core_text.hpp"
#include "wmlab/util.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace wmlab;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
    const std::string path =
        (std::filesystem::temp_directory_path() / ("wmlab_" + name)).string();
    std::ofstream out(path);
    out << content;
    return path;
}

}  // namespace

TEST_CASE("tokenize: direct lookup") {
    Vocabulary vocab({"the", "cat"});
    TokenSeq seq = tokenize("the cat", vocab);
    CHECK(seq.ids == std::vector<TokenId>{0, 1});
    CHECK(seq.n() == 2);
}

TEST_CASE("tokenize: empty input") {
    Vocabulary vocab({"the", "cat"});
    TokenSeq seq = tokenize("", vocab);
    CHECK(seq.n() == 0);
    CHECK(seq.empty());
}

TEST_CASE("tokenize: unknown word maps to unk") {
    Vocabulary vocab({"the", "cat", "<unk>"});
    REQUIRE(vocab.unk_id().has_value());
    CHECK(*vocab.unk_id() == 2);
    TokenSeq seq = tokenize("the zyx", vocab);
    CHECK(seq.ids == std::vector<TokenId>{0, 2});
}

TEST_CASE("tokenize: no unk and OOV input raises") {
    Vocabulary vocab({"the", "cat"});
    CHECK_THROWS_AS(tokenize("the dog", vocab), Error);
}

TEST_CASE("tokenize: punctuation peels off word edges") {
    Vocabulary vocab = Vocabulary::with_reserved({"hello", "world", ",", "."});
    TokenSeq seq = tokenize("hello, world.", vocab);
    std::vector<std::string> texts;
    for (TokenId id : seq.ids) texts.push_back(vocab.token(id));
    CHECK(texts == std::vector<std::string>{"hello", ",", "world", "."});
    // provenance spans slice the source exactly
    CHECK(seq.provenance.size() == seq.n());
    CHECK(seq.provenance[0].begin == 0);
    CHECK(seq.provenance[0].end == 5);
    CHECK(seq.provenance[1].begin == 5);
}

TEST_CASE("tokenize: mask placeholder survives as a token") {
    Vocabulary vocab = Vocabulary::with_reserved({"a", "b"});
    TokenSeq seq = tokenize("a _ b _", vocab);
    CHECK(seq.ids == std::vector<TokenId>{4, TOKEN_MASK, 5, TOKEN_MASK});
}

TEST_CASE("round trip: detokenize(tokenize(t)) is identity modulo spacing") {
    Vocabulary vocab = Vocabulary::with_reserved({"a", "quick", "fox", "jumps"});
    const std::string text = "a  quick   fox\tjumps";
    CHECK(detokenize(tokenize(text, vocab), vocab) == "a quick fox jumps");
    // already-normalized text is a fixed point
    const std::string norm = "a quick fox jumps";
    CHECK(detokenize(tokenize(norm, vocab), vocab) == norm);
}

TEST_CASE("round trip: random in-vocabulary sequences survive detokenize/tokenize") {
    Vocabulary vocab = Vocabulary::synthetic(48);
    Rng rng(123);
    for (int trial = 0; trial < 50; ++trial) {
        TokenSeq seq;
        const size_t n = 1 + rng.next_u64() % 60;
        for (size_t i = 0; i < n; ++i)
            seq.ids.push_back((TokenId)(4 + rng.next_u64() % (vocab.size() - 4)));
        const std::string text = detokenize(seq, vocab);
        CHECK(tokenize(text, vocab).ids == seq.ids);
    }
}

TEST_CASE("tokenize: deterministic over repeated calls") {
    Vocabulary vocab = Vocabulary::synthetic(32);
    const std::string text = "w0 w1 w2 w9 w9 w0";
    TokenSeq a = tokenize(text, vocab);
    TokenSeq b = tokenize(text, vocab);
    CHECK(a.ids == b.ids);
}

TEST_CASE("vocabulary: invariants") {
    Vocabulary vocab = Vocabulary::synthetic(16);
    CHECK(vocab.size() == 16);
    for (size_t i = 0; i < vocab.size(); ++i)
        CHECK(*vocab.find(vocab.token((TokenId)i)) == (TokenId)i);
    CHECK_THROWS_AS(Vocabulary({"only"}), Error);
    CHECK_THROWS_AS(Vocabulary({"dup", "dup"}), Error);
}

TEST_CASE("vocabulary: file round trip, line number = id") {
    Vocabulary vocab = Vocabulary::with_reserved({"alpha", "beta"});
    const std::string path = write_temp("vocab.txt", "");
    vocab.save(path);
    Vocabulary loaded = Vocabulary::from_file(path);
    CHECK(loaded.size() == vocab.size());
    CHECK(loaded.token(4) == "alpha");
    CHECK(loaded.fingerprint() == vocab.fingerprint());
    std::remove(path.c_str());
}

TEST_CASE("load_corpus: order and truncation") {
    const std::string path = write_temp(
        "corpus_ok.jsonl",
        R"({"id": "a", "prompt": "p1", "reference": "r1"})" "\n"
        R"({"id": "b", "prompt": "p2", "reference": null})" "\n"
        R"({"id": "c", "prompt": "p3"})" "\n");
    auto all = load_corpus(path);
    REQUIRE(all.size() == 3);
    CHECK(all[0].id == "a");
    CHECK(all[0].reference == "r1");
    CHECK_FALSE(all[1].reference.has_value());
    auto two = load_corpus(path, 2);
    REQUIRE(two.size() == 2);
    CHECK(two[1].id == "b");
    std::remove(path.c_str());
}

TEST_CASE("load_corpus: blank line errors with its line number") {
    const std::string path = write_temp(
        "corpus_blank.jsonl",
        R"({"id": "a", "prompt": "p1"})" "\n\n" R"({"id": "b", "prompt": "p2"})" "\n");
    CHECK_THROWS_WITH_AS(load_corpus(path), doctest::Contains("line 2"), Error);
    std::remove(path.c_str());
}

TEST_CASE("load_corpus: missing prompt errors") {
    const std::string path =
        write_temp("corpus_noprompt.jsonl", R"({"id": "a", "reference": "r"})" "\n");
    CHECK_THROWS_WITH_AS(load_corpus(path), doctest::Contains("prompt"), Error);
    std::remove(path.c_str());
}

TEST_CASE("load_corpus: malformed JSON errors with its line number") {
    const std::string path = write_temp(
        "corpus_bad.jsonl",
        R"({"id": "a", "prompt": "p1"})" "\n" "{not json}\n");
    CHECK_THROWS_WITH_AS(load_corpus(path), doctest::Contains("line 2"), Error);
    std::remove(path.c_str());
}

TEST_CASE("load_corpus: 500-line file loads fully without a limit") {
    std::string content;
    for (int i = 0; i < 500; ++i)
        content += R"({"id": ")" + std::to_string(i) + R"(", "prompt": "p"})" "\n";
    const std::string path = write_temp("corpus_500.jsonl", content);
    CHECK(load_corpus(path).size() == 500);
    std::remove(path.c_str());
}

TEST_CASE("save_corpus round trips") {
    std::vector<CorpusRecord> recs = {{"x", "prompt text", std::string("ref")},
                                      {"y", "another", std::nullopt}};
    const std::string path = write_temp("corpus_rt.jsonl", "");
    save_corpus(path, recs);
    auto loaded = load_corpus(path);
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].reference == "ref");
    CHECK_FALSE(loaded[1].reference.has_value());
    std::remove(path.c_str());
}
