#pragma once

// Tokenization, vocabulary, and corpus ingestion shared by every other
// module. The tokenizer is a deterministic word-level scheme over a fixed
// vocabulary file; model-specific subword tokenizers are out of scope.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace wmlab {

using TokenId = uint32_t;

// Reserved slots in the standard vocabulary layout.
enum ReservedToken : TokenId {
    TOKEN_UNK  = 0,
    TOKEN_BOS  = 1,
    TOKEN_EOS  = 2,
    TOKEN_MASK = 3,  // rendered as "_" in masked text
};

inline constexpr const char* UNK_TEXT  = "<unk>";
inline constexpr const char* BOS_TEXT  = "<bos>";
inline constexpr const char* EOS_TEXT  = "<eos>";
inline constexpr const char* MASK_TEXT = "_";

// Immutable after construction; safe to share across workers.
class Vocabulary {
public:
    // Tokens as given; ids are dense 0..V-1 in order. Duplicates are an error.
    explicit Vocabulary(std::vector<std::string> tokens);

    // Standard layout: <unk> <bos> <eos> _ followed by `words`.
    static Vocabulary with_reserved(std::vector<std::string> words);

    // Standard layout with (size - 4) generated word tokens w0, w1, ...
    static Vocabulary synthetic(size_t size);

    // UTF-8, one token per line; line number = TokenId.
    static Vocabulary from_file(const std::string& path);
    void save(const std::string& path) const;

    size_t size() const { return tokens_.size(); }
    const std::string& token(TokenId id) const;
    std::optional<TokenId> find(std::string_view token) const;

    // Id OOV words map to. Position of "<unk>" if present.
    std::optional<TokenId> unk_id() const { return unk_; }

    const std::vector<std::string>& tokens() const { return tokens_; }

    // Stable content fingerprint, recorded in run manifests.
    uint64_t fingerprint() const;

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> lookup_;
    std::optional<TokenId> unk_;
};

struct TokenSpan {
    size_t begin = 0;
    size_t end = 0;  // byte offsets into the source text
};

struct TokenSeq {
    std::vector<TokenId> ids;
    std::vector<TokenSpan> provenance;  // optional; empty or ids.size()

    size_t n() const { return ids.size(); }
    bool empty() const { return ids.empty(); }
};

struct CorpusRecord {
    std::string id;
    std::string prompt;
    std::optional<std::string> reference;  // human-written completion
};

// Deterministic word-level tokenization: split on ASCII whitespace, peel
// leading/trailing punctuation into single-char tokens, map OOV to UNK.
TokenSeq tokenize(std::string_view text, const Vocabulary& vocab);

// The token boundaries tokenize() would produce, without a vocabulary.
std::vector<TokenSpan> scan_token_spans(std::string_view text);
std::vector<std::string> tokenize_words(std::string_view text);

// Single-space join of token strings.
std::string detokenize(const TokenSeq& seq, const Vocabulary& vocab);

// JSON-lines corpus: {"id": str, "prompt": str, "reference": str|null}.
// Malformed or blank lines raise an Error naming the line number.
std::vector<CorpusRecord> load_corpus(const std::string& path,
                                      std::optional<size_t> limit = std::nullopt);
void save_corpus(const std::string& path, const std::vector<CorpusRecord>& records);

}  // namespace wmlab
