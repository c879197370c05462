#include "wmlab/core_text.hpp"
#include "wmlab/util.hpp"

#include <json.hpp>

#include <cctype>
#include <fstream>
#include <sstream>

namespace wmlab {

using nlohmann::json;

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    if (tokens_.size() < 2) throw Error("vocabulary needs at least 2 tokens");
    lookup_.reserve(tokens_.size());
    for (size_t i = 0; i < tokens_.size(); ++i) {
        auto [it, inserted] = lookup_.emplace(tokens_[i], (TokenId)i);
        if (!inserted) throw Error("duplicate vocabulary token: " + tokens_[i]);
    }
    if (auto it = lookup_.find(UNK_TEXT); it != lookup_.end()) unk_ = it->second;
}

Vocabulary Vocabulary::with_reserved(std::vector<std::string> words) {
    std::vector<std::string> tokens = {UNK_TEXT, BOS_TEXT, EOS_TEXT, MASK_TEXT};
    tokens.insert(tokens.end(), std::make_move_iterator(words.begin()),
                  std::make_move_iterator(words.end()));
    return Vocabulary(std::move(tokens));
}

Vocabulary Vocabulary::synthetic(size_t size) {
    if (size < 5) throw Error("synthetic vocabulary needs size >= 5");
    std::vector<std::string> words;
    words.reserve(size - 4);
    for (size_t i = 0; i + 4 < size; ++i) words.push_back("w" + std::to_string(i));
    return with_reserved(std::move(words));
}

Vocabulary Vocabulary::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open vocabulary file: " + path);
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        tokens.push_back(line);
    }
    return Vocabulary(std::move(tokens));
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write vocabulary file: " + path);
    for (const auto& t : tokens_) out << t << '\n';
}

const std::string& Vocabulary::token(TokenId id) const {
    if (id >= tokens_.size()) throw Error("token id out of range: " + std::to_string(id));
    return tokens_[id];
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
    auto it = lookup_.find(std::string(token));
    if (it == lookup_.end()) return std::nullopt;
    return it->second;
}

uint64_t Vocabulary::fingerprint() const {
    uint64_t h = mix64(tokens_.size());
    for (const auto& t : tokens_) h = mix64(h ^ hash_str(t));
    return h;
}

namespace {

// Punctuation peeled off word edges into standalone tokens. Underscore is
// excluded: "_" is the mask placeholder and must survive as a whole token.
bool is_edge_punct(char c) {
    switch (c) {
        case '.': case ',': case '!': case '?': case ';': case ':':
        case '"': case '\'': case '(': case ')': case '[': case ']':
        case '{': case '}':
            return true;
        default:
            return false;
    }
}

TokenId lookup_or_unk(const Vocabulary& vocab, std::string_view word) {
    if (auto id = vocab.find(word)) return *id;
    if (auto unk = vocab.unk_id()) return *unk;
    throw Error("out-of-vocabulary token '" + std::string(word) +
                "' and vocabulary has no " + UNK_TEXT);
}

}  // namespace

std::vector<TokenSpan> scan_token_spans(std::string_view text) {
    std::vector<TokenSpan> spans;
    size_t i = 0;
    const size_t n = text.size();
    while (i < n) {
        while (i < n && std::isspace((unsigned char)text[i])) ++i;
        if (i >= n) break;
        size_t j = i;
        while (j < n && !std::isspace((unsigned char)text[j])) ++j;
        // chunk [i, j): peel edge punctuation
        size_t lo = i, hi = j;
        while (lo < hi && is_edge_punct(text[lo]) && hi - lo > 1) {
            spans.push_back({lo, lo + 1});
            ++lo;
        }
        size_t tail = hi;
        while (tail > lo + 1 && is_edge_punct(text[tail - 1])) --tail;
        if (tail > lo) spans.push_back({lo, tail});
        for (size_t k = tail; k < hi; ++k) spans.push_back({k, k + 1});
        i = j;
    }
    return spans;
}

std::vector<std::string> tokenize_words(std::string_view text) {
    std::vector<std::string> words;
    for (const TokenSpan& s : scan_token_spans(text))
        words.emplace_back(text.substr(s.begin, s.end - s.begin));
    return words;
}

TokenSeq tokenize(std::string_view text, const Vocabulary& vocab) {
    TokenSeq seq;
    for (const TokenSpan& s : scan_token_spans(text)) {
        seq.ids.push_back(lookup_or_unk(vocab, text.substr(s.begin, s.end - s.begin)));
        seq.provenance.push_back(s);
    }
    return seq;
}

std::string detokenize(const TokenSeq& seq, const Vocabulary& vocab) {
    std::string out;
    for (size_t i = 0; i < seq.ids.size(); ++i) {
        if (i) out += ' ';
        out += vocab.token(seq.ids[i]);
    }
    return out;
}

std::vector<CorpusRecord> load_corpus(const std::string& path, std::optional<size_t> limit) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open corpus file: " + path);
    std::vector<CorpusRecord> records;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (limit && records.size() >= *limit) break;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty())
            throw Error("corpus " + path + ": blank line at line " + std::to_string(line_no));
        json row;
        try {
            row = json::parse(line);
        } catch (const json::exception& e) {
            throw Error("corpus " + path + ": malformed JSON at line " +
                        std::to_string(line_no) + ": " + e.what());
        }
        if (!row.is_object() || !row.contains("prompt") || !row["prompt"].is_string())
            throw Error("corpus " + path + ": missing prompt field at line " +
                        std::to_string(line_no));
        CorpusRecord rec;
        rec.prompt = row["prompt"].get<std::string>();
        if (rec.prompt.empty())
            throw Error("corpus " + path + ": empty prompt at line " + std::to_string(line_no));
        if (!row.contains("id") || !row["id"].is_string())
            throw Error("corpus " + path + ": missing id field at line " +
                        std::to_string(line_no));
        rec.id = row["id"].get<std::string>();
        if (row.contains("reference") && row["reference"].is_string())
            rec.reference = row["reference"].get<std::string>();
        records.push_back(std::move(rec));
    }
    return records;
}

void save_corpus(const std::string& path, const std::vector<CorpusRecord>& records) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write corpus file: " + path);
    for (const auto& rec : records) {
        json row;
        row["id"] = rec.id;
        row["prompt"] = rec.prompt;
        row["reference"] = rec.reference ? json(*rec.reference) : json(nullptr);
        out << row.dump() << '\n';
    }
}

}  // namespace wmlab
