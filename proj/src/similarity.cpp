#include "wmlab/evalharness.hpp"

#include <httplib.h>
#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <sstream>

namespace wmlab {

using nlohmann::json;

std::vector<std::pair<uint64_t, double>> BagOfTokensProvider::embed(
    const std::string& text) const {
    std::unordered_map<uint64_t, double> counts;
    std::istringstream ss(text);
    std::string w;
    while (ss >> w) counts[hash_str(w)] += 1.0;

    double norm = 0.0;
    for (const auto& [k, v] : counts) norm += v * v;
    norm = std::sqrt(norm);

    std::vector<std::pair<uint64_t, double>> out(counts.begin(), counts.end());
    std::sort(out.begin(), out.end());
    if (norm > 0.0)
        for (auto& [k, v] : out) v /= norm;
    return out;
}

RemoteEmbeddingProvider::RemoteEmbeddingProvider(LmBackendSpec spec) : spec_(std::move(spec)) {
    if (spec_.endpoint.empty() || spec_.model.empty())
        throw Error("embedding provider: needs endpoint and model");
}

std::string RemoteEmbeddingProvider::id() const {
    return "remote-embeddings(" + spec_.model + "@" + spec_.endpoint + ")";
}

std::vector<std::pair<uint64_t, double>> RemoteEmbeddingProvider::embed(
    const std::string& text) const {
    httplib::Client cli(spec_.endpoint);
    cli.set_read_timeout(spec_.timeout_ms / 1000, (spec_.timeout_ms % 1000) * 1000);
    httplib::Headers headers;
    if (!spec_.auth_env.empty()) {
        const char* token = std::getenv(spec_.auth_env.c_str());
        if (!token || !*token)
            throw Error("embedding provider: auth env var " + spec_.auth_env + " is not set");
        headers.emplace("Authorization", std::string("Bearer ") + token);
    }
    json body;
    body["model"] = spec_.model;
    body["input"] = text;
    auto res = cli.Post("/v1/embeddings", headers, body.dump(), "application/json");
    if (!res || res->status != 200)
        throw Error("embedding provider: request failed" +
                    (res ? " with status " + std::to_string(res->status) : ""));
    json reply = json::parse(res->body);
    const auto& vec = reply.at("data").at(0).at("embedding");

    std::vector<std::pair<uint64_t, double>> out;
    out.reserve(vec.size());
    double norm = 0.0;
    for (size_t i = 0; i < vec.size(); ++i) {
        const double v = vec[i].get<double>();
        out.emplace_back((uint64_t)i, v);
        norm += v * v;
    }
    norm = std::sqrt(norm);
    if (norm > 0.0)
        for (auto& [k, v] : out) v /= norm;
    return out;
}

double similarity(const std::string& a, const std::string& b,
                  const EmbeddingProvider& provider) {
    if (a.empty() || b.empty()) throw Error("similarity: empty text");
    const auto ea = provider.embed(a);
    const auto eb = provider.embed(b);
    // both sorted by key; sparse dot product
    double dot = 0.0;
    size_t i = 0, j = 0;
    while (i < ea.size() && j < eb.size()) {
        if (ea[i].first < eb[j].first) ++i;
        else if (eb[j].first < ea[i].first) ++j;
        else dot += ea[i++].second * eb[j++].second;
    }
    return std::clamp(dot, -1.0, 1.0);
}

int llm_judge(const std::string& original, const std::string& attacked,
              const LmBackend& chat_backend, const PromptTemplates& templates) {
    if (original.empty() || attacked.empty()) throw Error("llm_judge: empty text");
    const std::string reply =
        chat_backend.instruct_complete(templates.render_judge(original, attacked),
                                       Decoding::Greedy);

    // first bracketed integer in the reply
    for (size_t i = 0; i < reply.size(); ++i) {
        if (reply[i] != '[') continue;
        size_t j = i + 1;
        while (j < reply.size() && std::isdigit((unsigned char)reply[j])) ++j;
        if (j > i + 1 && j < reply.size() && reply[j] == ']') {
            const int rating = std::stoi(reply.substr(i + 1, j - i - 1));
            if (rating < 1 || rating > 10)
                throw Error("llm_judge: rating out of range 1..10 in reply: " + reply);
            return rating;
        }
    }
    throw Error("llm_judge: no [Rating] found in reply: " + reply);
}

}  // namespace wmlab
