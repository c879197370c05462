// OpenAI-compatible HTTP clients: /v1/completions with echoed logprobs for
// scoring, /v1/chat/completions for instruction following. Kept in one
// translation unit so httplib stays out of the public headers.

#include "wmlab/lm_backend.hpp"

#include <httplib.h>
#include <json.hpp>

#include <cmath>
#include <cstdlib>

namespace wmlab {

using nlohmann::json;

namespace {

struct HttpReply {
    int status = 0;
    std::string body;
};

HttpReply post_json_with_retries(const LmBackendSpec& spec, const std::string& path,
                                 const json& body) {
    std::string last_error;
    for (int attempt = 0; attempt <= spec.retries; ++attempt) {
        httplib::Client cli(spec.endpoint);
        cli.set_connection_timeout(0, spec.timeout_ms * 1000);
        cli.set_read_timeout(spec.timeout_ms / 1000, (spec.timeout_ms % 1000) * 1000);
        cli.set_write_timeout(spec.timeout_ms / 1000, (spec.timeout_ms % 1000) * 1000);

        httplib::Headers headers;
        if (!spec.auth_env.empty()) {
            const char* token = std::getenv(spec.auth_env.c_str());
            if (!token || !*token)
                throw Error("remote backend: auth env var " + spec.auth_env + " is not set");
            headers.emplace("Authorization", std::string("Bearer ") + token);
        }

        auto res = cli.Post(path, headers, body.dump(), "application/json");
        if (!res) {
            last_error = "transport error (" + httplib::to_string(res.error()) + ")";
            continue;
        }
        if (res->status == 429 || res->status >= 500) {
            last_error = "status " + std::to_string(res->status) + ": " + res->body;
            continue;
        }
        return {res->status, res->body};
    }
    throw Error("remote backend: " + spec.endpoint + path + " failed after " +
                std::to_string(spec.retries + 1) + " attempts; last: " + last_error);
}

json parse_reply(const HttpReply& reply, const std::string& what) {
    if (reply.status != 200)
        throw Error(what + ": HTTP " + std::to_string(reply.status) + ": " + reply.body);
    try {
        return json::parse(reply.body);
    } catch (const json::exception& e) {
        throw Error(what + ": bad JSON reply: " + e.what());
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// completions

RemoteCompletionBackend::RemoteCompletionBackend(LmBackendSpec spec) : spec_(std::move(spec)) {
    if (spec_.kind != "remote-completion")
        throw Error("RemoteCompletionBackend needs kind=remote-completion");
    if (!spec_.vocab_path.empty())
        local_vocab_ = std::make_shared<Vocabulary>(Vocabulary::from_file(spec_.vocab_path));
}

std::string RemoteCompletionBackend::id() const {
    return "remote-completion(" + spec_.model + "@" + spec_.endpoint + ")";
}

Distribution RemoteCompletionBackend::next_distribution(std::span<const TokenId>) const {
    throw Error(id() + ": full next-token distributions are not exposed over the wire; "
                       "use score_text");
}

std::vector<ScoredToken> RemoteCompletionBackend::score_text(const std::string& text) const {
    json body;
    body["model"] = spec_.model;
    body["prompt"] = text;
    body["max_tokens"] = 0;
    body["echo"] = true;
    body["logprobs"] = spec_.logprob_top_k;
    const json reply = parse_reply(post_json_with_retries(spec_, "/v1/completions", body),
                                   "completions scoring");

    if (!reply.contains("choices") || reply["choices"].empty())
        throw Error("completions scoring: reply has no choices");
    const json& lp = reply["choices"][0]["logprobs"];
    const auto& tokens = lp.at("tokens");
    const auto& values = lp.at("token_logprobs");
    const auto& offsets = lp.at("text_offset");
    if (tokens.size() != values.size() || tokens.size() != offsets.size())
        throw Error("completions scoring: misaligned logprob arrays");

    std::vector<ScoredToken> out;
    out.reserve(tokens.size());
    for (size_t i = 0; i < tokens.size(); ++i) {
        ScoredToken t;
        t.text = tokens[i].get<std::string>();
        t.begin = offsets[i].get<size_t>();
        t.end = t.begin + t.text.size();
        if (values[i].is_null()) {
            // the first echoed token has no conditional probability; tokens
            // outside the reported top-k come back null as well
            t.value = SELF_INFO_CAP;
            t.capped = true;
        } else {
            t.value = std::min(-values[i].get<double>(), SELF_INFO_CAP);
            t.capped = t.value >= SELF_INFO_CAP;
            if (t.value < 0.0) t.value = 0.0;
        }
        out.push_back(std::move(t));
    }
    return out;
}

SelfInfoProfile RemoteCompletionBackend::self_information(const TokenSeq& seq) const {
    if (!local_vocab_)
        throw Error(id() + ": self_information over local token ids needs a vocabulary "
                           "(set \"vocab\" in the backend spec), or use score_text");
    const Vocabulary& v = *local_vocab_;

    const std::string text = detokenize(seq, v);
    TokenSeq local = tokenize(text, v);
    std::vector<ScoredToken> remote = score_text(text);

    // Self-information is additive over subtokens, so remote values are
    // summed into the local word whose span contains each remote token's
    // first non-space byte.
    SelfInfoProfile profile;
    profile.values.assign(local.n(), 0.0);
    profile.capped.assign(local.n(), false);
    std::vector<bool> covered(local.n(), false);
    size_t cursor = 0;
    for (const auto& rt : remote) {
        size_t q = rt.begin;
        while (q < rt.end && q < text.size() && std::isspace((unsigned char)text[q])) ++q;
        if (q >= rt.end) continue;  // pure-whitespace token
        while (cursor < local.n() && local.provenance[cursor].end <= q) ++cursor;
        if (cursor >= local.n()) break;
        profile.values[cursor] += rt.value;
        if (rt.capped) profile.capped[cursor] = true;
        covered[cursor] = true;
    }
    for (size_t i = 0; i < local.n(); ++i) {
        if (!covered[i]) {
            profile.values[i] = SELF_INFO_CAP;
            profile.capped[i] = true;
        } else if (profile.values[i] > SELF_INFO_CAP) {
            profile.values[i] = SELF_INFO_CAP;
            profile.capped[i] = true;
        }
    }
    if (profile.n() != seq.n())
        throw Error(id() + ": scored token count diverged from input sequence");
    return profile;
}

TokenSeq RemoteCompletionBackend::generate(const GenerationRequest&) const {
    throw Error(id() + ": remote backends complete text, not local token ids; "
                       "use instruct_complete");
}

std::string RemoteCompletionBackend::instruct_complete(const std::string& prompt,
                                                       Decoding decoding) const {
    json body;
    body["model"] = spec_.model;
    body["prompt"] = prompt;
    body["max_tokens"] = 512;
    body["temperature"] = decoding == Decoding::Greedy ? 0.0 : spec_.temperature;
    const json reply = parse_reply(post_json_with_retries(spec_, "/v1/completions", body),
                                   "completions");
    if (!reply.contains("choices") || reply["choices"].empty())
        throw Error("completions: reply has no choices");
    std::string text = reply["choices"][0].value("text", "");
    if (text.empty()) throw Error("completions: empty completion");
    return text;
}

// ---------------------------------------------------------------------------
// chat

RemoteChatBackend::RemoteChatBackend(LmBackendSpec spec) : spec_(std::move(spec)) {
    if (spec_.kind != "remote-chat") throw Error("RemoteChatBackend needs kind=remote-chat");
}

std::string RemoteChatBackend::id() const {
    return "remote-chat(" + spec_.model + "@" + spec_.endpoint + ")";
}

Distribution RemoteChatBackend::next_distribution(std::span<const TokenId>) const {
    throw Error(id() + ": chat backends do not expose token distributions");
}

std::string RemoteChatBackend::instruct_complete(const std::string& prompt,
                                                 Decoding decoding) const {
    json body;
    body["model"] = spec_.model;
    body["messages"] = json::array({json{{"role", "user"}, {"content", prompt}}});
    body["temperature"] = decoding == Decoding::Greedy ? 0.0 : spec_.temperature;
    const json reply = parse_reply(
        post_json_with_retries(spec_, "/v1/chat/completions", body), "chat completions");
    if (!reply.contains("choices") || reply["choices"].empty())
        throw Error("chat completions: reply has no choices");
    std::string text = reply["choices"][0]["message"].value("content", "");
    if (text.empty()) throw Error("chat completions: empty completion");
    return text;
}

}  // namespace wmlab
