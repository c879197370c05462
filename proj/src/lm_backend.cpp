#include "wmlab/lm_backend.hpp"
#include "wmlab/prompts.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace wmlab {

using nlohmann::json;

namespace {
constexpr double NEG_INF_SCORE = -1e30;
constexpr uint64_t SYNTH_SALT = 0xA27B5E1C9D3F6480ull;
constexpr uint64_t GEN_SALT = 0x51CA6B8E2F7D9A03ull;
constexpr uint64_t STUB_SALT = 0xC3D94A817E5B20F6ull;
}  // namespace

// ---------------------------------------------------------------------------
// Distribution

bool Distribution::valid(double tol) const {
    double sum = 0.0;
    for (double p : probs) {
        if (!(p >= 0.0) || !std::isfinite(p)) return false;
        sum += p;
    }
    return std::abs(sum - 1.0) <= tol;
}

double Distribution::entropy() const {
    double h = 0.0;
    for (double p : probs)
        if (p > 0.0) h -= p * std::log(p);
    return h;
}

// ---------------------------------------------------------------------------
// spec parsing

std::string strip_trailing_commas(const std::string& text) {
    std::string out;
    out.reserve(text.size());
    bool in_string = false, escaped = false;
    for (size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (in_string) {
            out += c;
            if (escaped) escaped = false;
            else if (c == '\\') escaped = true;
            else if (c == '"') in_string = false;
            continue;
        }
        if (c == '"') {
            in_string = true;
            out += c;
            continue;
        }
        if (c == ',') {
            size_t j = i + 1;
            while (j < text.size() && std::isspace((unsigned char)text[j])) ++j;
            if (j < text.size() && (text[j] == '}' || text[j] == ']')) continue;
        }
        out += c;
    }
    return out;
}

LmBackendSpec LmBackendSpec::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(strip_trailing_commas(text));
    } catch (const json::exception& e) {
        throw Error(std::string("backend spec: invalid JSON: ") + e.what());
    }
    LmBackendSpec s;
    s.kind = j.value("kind", "");
    s.seed = j.value("seed", (uint64_t)0);
    s.vocab_size = j.value("vocab_size", (size_t)64);
    s.vocab_path = j.value("vocab", "");
    s.dirichlet_alpha = j.value("dirichlet_alpha", 0.5);
    s.uniform_mix = j.value("uniform_mix", 0.0);
    s.prefix_window = j.value("prefix_window", (size_t)2);
    s.ngram_order = j.value("order", (size_t)2);
    s.ngram_smoothing = j.value("smoothing", 0.0);
    s.train_corpus = j.value("train_corpus", "");
    s.train_text = j.value("train_text", "");
    s.paraphrase_keep = j.value("paraphrase_keep", 0.5);
    s.endpoint = j.value("endpoint", "");
    s.model = j.value("model", "");
    s.auth_env = j.value("auth_env", "");
    s.timeout_ms = j.value("timeout_ms", 30000);
    s.retries = j.value("retries", 2);
    s.logprob_top_k = j.value("logprobs", 5);
    s.temperature = j.value("temperature", 1.0);
    s.validate();
    return s;
}

LmBackendSpec LmBackendSpec::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open backend spec: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return from_json_text(ss.str());
    } catch (const Error& e) {
        throw Error(path + ": " + e.what());
    }
}

std::string LmBackendSpec::to_json_text() const {
    json j;
    j["kind"] = kind;
    j["temperature"] = temperature;
    if (kind == "synthetic" || kind == "ngram") {
        j["seed"] = seed;
        if (!vocab_path.empty()) j["vocab"] = vocab_path;
        j["paraphrase_keep"] = paraphrase_keep;
    }
    if (kind == "synthetic") {
        j["vocab_size"] = vocab_size;
        j["dirichlet_alpha"] = dirichlet_alpha;
        j["uniform_mix"] = uniform_mix;
        j["prefix_window"] = prefix_window;
    } else if (kind == "ngram") {
        j["order"] = ngram_order;
        j["smoothing"] = ngram_smoothing;
        if (!train_corpus.empty()) j["train_corpus"] = train_corpus;
        if (!train_text.empty()) j["train_text"] = train_text;
    } else {
        j["endpoint"] = endpoint;
        j["model"] = model;
        j["auth_env"] = auth_env;
        j["timeout_ms"] = timeout_ms;
        j["retries"] = retries;
        j["logprobs"] = logprob_top_k;
    }
    return j.dump(2);
}

void LmBackendSpec::validate() const {
    const bool local = kind == "synthetic" || kind == "ngram";
    const bool remote = kind == "remote-completion" || kind == "remote-chat";
    if (!local && !remote)
        throw Error("backend spec: unknown kind '" + kind + "'");
    if (local && (!endpoint.empty() || !model.empty()))
        throw Error("backend spec: local kind '" + kind + "' must not set endpoint/model");
    if (remote) {
        if (endpoint.empty() || model.empty())
            throw Error("backend spec: remote kind '" + kind + "' needs endpoint and model");
        if (!train_corpus.empty() || !train_text.empty())
            throw Error("backend spec: remote kind '" + kind + "' must not set training fields");
    }
    if (temperature < 0.0) throw Error("backend spec: temperature must be >= 0");
    if (kind == "ngram" && ngram_order < 1)
        throw Error("backend spec: ngram order must be >= 1");
}

// ---------------------------------------------------------------------------
// base defaults

Distribution LmBackend::next_distribution(std::span<const TokenId>) const {
    throw Error(id() + ": next-token distributions are not available");
}

SelfInfoProfile LmBackend::self_information(const TokenSeq& seq) const {
    if (seq.empty()) throw Error("self_information: empty sequence");
    SelfInfoProfile profile;
    profile.values.reserve(seq.n());
    profile.capped.reserve(seq.n());
    for (size_t t = 0; t < seq.n(); ++t) {
        Distribution d = next_distribution({seq.ids.data(), t});
        const double p = seq.ids[t] < d.size() ? d.probs[seq.ids[t]] : 0.0;
        double v = p > 0.0 ? -std::log(p) : SELF_INFO_CAP;
        bool cap = false;
        if (v >= SELF_INFO_CAP) {
            v = SELF_INFO_CAP;
            cap = true;
        }
        if (v < 0.0) v = 0.0;  // guards p slightly above 1 from rounding
        profile.values.push_back(v);
        profile.capped.push_back(cap);
    }
    return profile;
}

bool SelfInfoProfile::any_capped() const {
    return std::find(capped.begin(), capped.end(), true) != capped.end();
}

PerplexityResult LmBackend::perplexity(const TokenSeq& seq) const {
    SelfInfoProfile profile = self_information(seq);
    PerplexityResult r;
    r.value = std::exp(mean(profile.values));
    r.capped = profile.any_capped();
    return r;
}

std::vector<ScoredToken> LmBackend::score_text(const std::string& text) const {
    const Vocabulary* v = vocab();
    if (!v) throw Error(id() + ": score_text needs a local vocabulary");
    TokenSeq seq = tokenize(text, *v);
    if (seq.empty()) return {};
    SelfInfoProfile profile = self_information(seq);
    std::vector<ScoredToken> out(seq.n());
    for (size_t t = 0; t < seq.n(); ++t) {
        out[t].text = text.substr(seq.provenance[t].begin,
                                  seq.provenance[t].end - seq.provenance[t].begin);
        out[t].begin = seq.provenance[t].begin;
        out[t].end = seq.provenance[t].end;
        out[t].value = profile.values[t];
        out[t].capped = profile.capped[t];
    }
    return out;
}

TokenSeq LmBackend::generate(const GenerationRequest& req) const {
    return generate_locally(req);
}

TokenSeq LmBackend::generate_locally(const GenerationRequest& req) const {
    if (req.max_new_tokens < 1) throw Error("generate: max_new_tokens must be >= 1");
    const Vocabulary* v = vocab();
    if (!v) throw Error(id() + ": local generation needs a vocabulary");
    const std::optional<TokenId> eos = v->find(EOS_TEXT);

    std::vector<TokenId> ctx = req.context.ids;
    Rng rng(mix64(req.seed) ^ GEN_SALT);
    TokenSeq out;
    out.ids.reserve(req.max_new_tokens);

    for (size_t step = 0; step < req.max_new_tokens; ++step) {
        Distribution d = next_distribution(ctx);
        std::vector<double> scores(d.size());
        for (size_t i = 0; i < d.size(); ++i)
            scores[i] = d.probs[i] > 0.0 ? std::log(d.probs[i]) : NEG_INF_SCORE;
        if (req.logit_bias_hook) req.logit_bias_hook(ctx, scores);

        TokenId chosen = 0;
        if (req.per_step_rng_hook) {
            std::vector<double> u = req.per_step_rng_hook(ctx);
            if (u.size() != scores.size())
                throw Error("per_step_rng_hook returned wrong-size vector");
            std::vector<double> probs = scores;
            softmax_inplace(probs);
            // argmax u^(1/p) == argmin (-ln u)/p over tokens with p > 0
            double best = std::numeric_limits<double>::infinity();
            for (size_t i = 0; i < probs.size(); ++i) {
                if (probs[i] <= 0.0) continue;
                const double ui = std::min(std::max(u[i], 1e-300), 1.0 - 1e-16);
                const double cost = -std::log(ui) / probs[i];
                if (cost < best) {
                    best = cost;
                    chosen = (TokenId)i;
                }
            }
        } else if (req.decoding == Decoding::Greedy) {
            size_t arg = 0;
            for (size_t i = 1; i < scores.size(); ++i)
                if (scores[i] > scores[arg]) arg = i;  // ties keep the lowest id
            chosen = (TokenId)arg;
        } else {
            std::vector<double> probs = scores;
            if (req.temperature > 0.0 && req.temperature != 1.0)
                for (double& s : probs) s /= req.temperature;
            softmax_inplace(probs);
            chosen = (TokenId)rng.next_index(probs);
        }

        out.ids.push_back(chosen);
        ctx.push_back(chosen);
        if (req.stop_at_eos && eos && chosen == *eos) break;
    }
    return out;
}

namespace {

// Greedy argmax restricted to non-reserved ids when the vocabulary carries
// the reserved layout (fill-ins should never be control tokens).
TokenId stub_argmax(const LmBackend& backend, std::span<const TokenId> ctx) {
    Distribution d = backend.next_distribution(ctx);
    const Vocabulary* v = backend.vocab();
    const bool reserved = v->size() > 4 && v->token(TOKEN_UNK) == UNK_TEXT &&
                          v->token(TOKEN_MASK) == MASK_TEXT;
    size_t start = reserved ? 4 : 0;
    size_t arg = start;
    for (size_t i = start; i < d.size(); ++i)
        if (d.probs[i] > d.probs[arg]) arg = i;
    return (TokenId)arg;
}

std::string stub_fill_in(const LmBackend& backend, const FillInSections& sections,
                         Decoding decoding, uint64_t seed) {
    const Vocabulary* v = backend.vocab();
    TokenSeq masked = tokenize(sections.masked, *v);
    const std::optional<TokenId> mask_id = v->find(MASK_TEXT);
    Rng rng(mix64(seed) ^ STUB_SALT);
    std::vector<TokenId> out;
    out.reserve(masked.n());
    for (TokenId id : masked.ids) {
        if (mask_id && id == *mask_id) {
            if (decoding == Decoding::Greedy) {
                out.push_back(stub_argmax(backend, out));
            } else {
                Distribution d = backend.next_distribution(out);
                out.push_back((TokenId)Rng(rng.next_u64()).next_index(d.probs));
            }
        } else {
            out.push_back(id);
        }
    }
    TokenSeq filled;
    filled.ids = std::move(out);
    return detokenize(filled, *v);
}

std::string stub_paraphrase(const LmBackend& backend, const std::string& input,
                            uint64_t seed, double keep, double temperature) {
    const Vocabulary* v = backend.vocab();
    TokenSeq seq = tokenize(input, *v);
    Rng rng(mix64(seed ^ hash_str(input)) ^ STUB_SALT);
    std::vector<TokenId> out;
    out.reserve(seq.n());
    for (TokenId id : seq.ids) {
        if (rng.next_unit() < keep) {
            out.push_back(id);
            continue;
        }
        Distribution d = backend.next_distribution(out);
        std::vector<double> probs = d.probs;
        if (temperature > 0.0 && temperature != 1.0) {
            for (double& p : probs) p = p > 0.0 ? std::pow(p, 1.0 / temperature) : 0.0;
        }
        out.push_back((TokenId)Rng(rng.next_u64()).next_index(probs));
    }
    TokenSeq para;
    para.ids = std::move(out);
    return detokenize(para, *v);
}

}  // namespace

std::string LmBackend::instruct_complete(const std::string& prompt, Decoding decoding) const {
    if (!vocab())
        throw Error(id() + ": instruct_complete needs a local vocabulary or a remote chat backend");
    const uint64_t seed = spec().seed;
    if (auto sections = parse_fill_in_prompt(prompt))
        return stub_fill_in(*this, *sections, decoding, seed);
    if (auto input = parse_paraphrase_prompt(prompt))
        return stub_paraphrase(*this, *input, seed, spec().paraphrase_keep,
                               spec().temperature);
    // Unrecognized instruction: continue the prompt as plain text.
    GenerationRequest req;
    req.context = tokenize(prompt, *vocab());
    req.max_new_tokens = 64;
    req.decoding = decoding;
    req.temperature = spec().temperature;
    req.seed = seed ^ hash_str(prompt);
    TokenSeq cont = generate_locally(req);
    std::string text = detokenize(cont, *vocab());
    if (text.empty()) throw Error(id() + ": empty completion");
    return text;
}

// ---------------------------------------------------------------------------
// SyntheticBackend

SyntheticBackend::SyntheticBackend(LmBackendSpec spec, std::shared_ptr<const Vocabulary> vocab)
    : spec_(std::move(spec)), vocab_(std::move(vocab)) {
    if (spec_.kind != "synthetic") throw Error("SyntheticBackend needs kind=synthetic");
    if (spec_.dirichlet_alpha <= 0.0) throw Error("synthetic: dirichlet_alpha must be > 0");
    if (spec_.uniform_mix < 0.0 || spec_.uniform_mix > 1.0)
        throw Error("synthetic: uniform_mix must be in [0,1]");
}

SyntheticBackend::SyntheticBackend(LmBackendSpec spec)
    : SyntheticBackend(
          spec, spec.vocab_path.empty()
                    ? std::make_shared<Vocabulary>(Vocabulary::synthetic(spec.vocab_size))
                    : std::make_shared<Vocabulary>(Vocabulary::from_file(spec.vocab_path))) {}

std::string SyntheticBackend::id() const {
    return "synthetic(seed=" + std::to_string(spec_.seed) +
           ",V=" + std::to_string(vocab_->size()) + ")";
}

Distribution SyntheticBackend::next_distribution(std::span<const TokenId> context) const {
    const size_t V = vocab_->size();
    // Reserved control tokens never get probability mass under the standard
    // layout; custom vocabularies are sampled over all ids.
    const bool reserved_layout = V > 4 && vocab_->token(TOKEN_UNK) == UNK_TEXT &&
                                 vocab_->token(TOKEN_BOS) == BOS_TEXT &&
                                 vocab_->token(TOKEN_EOS) == EOS_TEXT &&
                                 vocab_->token(TOKEN_MASK) == MASK_TEXT;
    const size_t start = reserved_layout ? 4 : 0;
    const size_t active = V - start;

    std::vector<uint64_t> window(spec_.prefix_window, (uint64_t)TOKEN_BOS);
    const size_t take = std::min(spec_.prefix_window, context.size());
    for (size_t i = 0; i < take; ++i)
        window[spec_.prefix_window - take + i] = context[context.size() - take + i];

    Distribution d;
    d.probs.assign(V, 0.0);
    if (spec_.uniform_mix >= 1.0) {
        for (size_t i = start; i < V; ++i) d.probs[i] = 1.0 / (double)active;
        return d;
    }

    const uint64_t key = hash_words(spec_.seed ^ SYNTH_SALT, window);
    Rng rng(key);
    double sum = 0.0;
    for (size_t i = start; i < V; ++i) {
        d.probs[i] = rng.next_gamma(spec_.dirichlet_alpha);
        sum += d.probs[i];
    }
    const double lambda = spec_.uniform_mix;
    for (size_t i = start; i < V; ++i)
        d.probs[i] = (1.0 - lambda) * d.probs[i] / sum + lambda / (double)active;
    return d;
}

// ---------------------------------------------------------------------------
// NgramBackend

NgramBackend::NgramBackend(LmBackendSpec spec, std::shared_ptr<const Vocabulary> vocab,
                           const std::vector<std::string>& training_texts)
    : spec_(std::move(spec)), vocab_(std::move(vocab)) {
    if (spec_.kind != "ngram") throw Error("NgramBackend needs kind=ngram");
    counts_.resize(spec_.ngram_order);
    context_totals_.resize(spec_.ngram_order);
    for (const auto& text : training_texts) train_on(tokenize(text, *vocab_));
}

std::unique_ptr<NgramBackend> NgramBackend::from_spec(LmBackendSpec spec) {
    std::vector<std::string> texts;
    if (!spec.train_text.empty()) texts.push_back(spec.train_text);
    if (!spec.train_corpus.empty()) {
        for (const auto& rec : load_corpus(spec.train_corpus)) {
            texts.push_back(rec.prompt);
            if (rec.reference) texts.push_back(*rec.reference);
        }
    }
    if (texts.empty()) throw Error("ngram backend: no training text configured");

    std::shared_ptr<const Vocabulary> vocab;
    if (!spec.vocab_path.empty()) {
        vocab = std::make_shared<Vocabulary>(Vocabulary::from_file(spec.vocab_path));
    } else {
        // vocabulary = reserved tokens + tokenizer chunks in first-appearance
        // order, so training and scoring agree on boundaries
        std::vector<std::string> words;
        std::unordered_map<std::string, bool> seen;
        seen[UNK_TEXT] = seen[BOS_TEXT] = seen[EOS_TEXT] = seen[MASK_TEXT] = true;
        for (const auto& text : texts) {
            for (auto& w : tokenize_words(text)) {
                if (!seen.count(w)) {
                    seen[w] = true;
                    words.push_back(std::move(w));
                }
            }
        }
        vocab = std::make_shared<Vocabulary>(Vocabulary::with_reserved(std::move(words)));
    }
    return std::make_unique<NgramBackend>(std::move(spec), std::move(vocab), texts);
}

std::string NgramBackend::id() const {
    return "ngram(order=" + std::to_string(spec_.ngram_order) +
           ",V=" + std::to_string(vocab_->size()) + ")";
}

void NgramBackend::train_on(const TokenSeq& seq) {
    for (size_t len = 0; len < spec_.ngram_order; ++len) {
        for (size_t t = len; t < seq.n(); ++t) {
            std::vector<uint64_t> ctx(seq.ids.begin() + (t - len), seq.ids.begin() + t);
            const uint64_t h = hash_words(0, ctx);
            counts_[len][h][seq.ids[t]] += 1.0;
            context_totals_[len][h] += 1.0;
        }
    }
}

Distribution NgramBackend::next_distribution(std::span<const TokenId> context) const {
    const size_t V = vocab_->size();
    Distribution d;
    d.probs.assign(V, 0.0);
    const double k = spec_.ngram_smoothing;

    size_t max_len = std::min(context.size(), spec_.ngram_order - 1);
    for (size_t len = max_len + 1; len-- > 0;) {
        std::vector<uint64_t> ctx(context.end() - len, context.end());
        const uint64_t h = hash_words(0, ctx);
        auto totals_it = context_totals_[len].find(h);
        if (totals_it == context_totals_[len].end() || totals_it->second <= 0.0) continue;
        const auto& row = counts_[len].at(h);
        const double denom = totals_it->second + k * (double)V;
        for (size_t i = 0; i < V; ++i) {
            auto it = row.find((TokenId)i);
            const double c = it == row.end() ? 0.0 : it->second;
            d.probs[i] = (c + k) / denom;
        }
        return d;
    }
    for (double& p : d.probs) p = 1.0 / (double)V;  // untrained context
    return d;
}

// ---------------------------------------------------------------------------
// fixture backend

FixtureChatBackend::FixtureChatBackend(std::string reply) : reply_(std::move(reply)) {
    spec_.kind = "remote-chat";
    spec_.endpoint = "fixture://local";
    spec_.model = "fixture";
}

std::string FixtureChatBackend::instruct_complete(const std::string& prompt, Decoding) const {
    prompts_.push_back(prompt);
    if (reply_.empty()) throw Error("fixture-chat: empty completion");
    return reply_;
}

// ---------------------------------------------------------------------------
// factory

std::unique_ptr<LmBackend> make_backend(const LmBackendSpec& spec) {
    spec.validate();
    if (spec.kind == "synthetic") return std::make_unique<SyntheticBackend>(spec);
    if (spec.kind == "ngram") return NgramBackend::from_spec(spec);
    if (spec.kind == "remote-completion") return std::make_unique<RemoteCompletionBackend>(spec);
    if (spec.kind == "remote-chat") return std::make_unique<RemoteChatBackend>(spec);
    throw Error("unknown backend kind: " + spec.kind);
}

// ---------------------------------------------------------------------------
// prompt templates

namespace {

std::string replace_slot(std::string text, std::string_view slot, std::string_view value) {
    const size_t pos = text.find(slot);
    if (pos == std::string::npos)
        throw Error("prompt template missing slot " + std::string(slot));
    text.replace(pos, slot.size(), value);
    return text;
}

std::string read_file_or(const std::string& path, std::string fallback) {
    std::ifstream in(path);
    if (!in) return fallback;
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

PromptTemplates PromptTemplates::from_dir(const std::string& dir) {
    PromptTemplates t;
    t.fill_in = read_file_or(dir + "/fill_in.txt", t.fill_in);
    t.paraphrase = read_file_or(dir + "/paraphrase.txt", t.paraphrase);
    t.judge = read_file_or(dir + "/judge.txt", t.judge);
    return t;
}

std::string PromptTemplates::render_fill_in(std::string_view reference,
                                            std::string_view masked) const {
    return replace_slot(replace_slot(fill_in, "{reference}", reference), "{masked}", masked);
}

std::string PromptTemplates::render_paraphrase(std::string_view input) const {
    return replace_slot(paraphrase, "{input}", input);
}

std::string PromptTemplates::render_judge(std::string_view original,
                                          std::string_view attacked) const {
    return replace_slot(replace_slot(judge, "{original}", original), "{attacked}", attacked);
}

std::optional<FillInSections> parse_fill_in_prompt(std::string_view prompt) {
    const std::string_view ref_marker = "\nreference:\n";
    const std::string_view masked_marker = "\nincomplete paragraph:\n";
    const size_t m = prompt.rfind(masked_marker);
    if (m == std::string_view::npos) return std::nullopt;
    const size_t r = prompt.rfind(ref_marker, m);
    if (r == std::string_view::npos) return std::nullopt;
    FillInSections s;
    const size_t ref_begin = r + ref_marker.size();
    s.reference = std::string(prompt.substr(ref_begin, m - ref_begin));
    s.masked = std::string(prompt.substr(m + masked_marker.size()));
    return s;
}

std::optional<std::string> parse_paraphrase_prompt(std::string_view prompt) {
    if (prompt.find("You are a paraphraser") == std::string_view::npos) return std::nullopt;
    const std::string_view anchor = "parse.: \n";
    const size_t a = prompt.rfind(anchor);
    if (a == std::string_view::npos) return std::nullopt;
    return std::string(prompt.substr(a + anchor.size()));
}

}  // namespace wmlab
