#include <doctest.h>

#include "wmlab/evalharness.hpp"
#include "wmlab/lm_backend.hpp"

#include "test_helpers.hpp"

#include <httplib.h>
#include <json.hpp>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <thread>

using namespace wmlab;
using namespace wmlab::testing;
using nlohmann::json;

namespace {

// Word-level mock of an OpenAI-compatible server: whitespace tokens, fixed
// logprob ladder, canned completions.
class MockServer {
public:
    MockServer() {
        server_.Post("/v1/completions", [this](const httplib::Request& req,
                                               httplib::Response& res) {
            if (fail_first_ > 0) {
                --fail_first_;
                res.status = 500;
                res.set_content("synthetic overload", "text/plain");
                return;
            }
            const json body = json::parse(req.body);
            const std::string prompt = body.at("prompt").get<std::string>();
            if (body.value("echo", false)) {
                res.set_content(scoring_reply(prompt), "application/json");
            } else {
                json reply;
                reply["choices"] = json::array(
                    {json{{"text", "a completed paragraph from the mock model"}}});
                res.set_content(reply.dump(), "application/json");
            }
        });
        server_.Post("/v1/chat/completions",
                     [this](const httplib::Request& req, httplib::Response& res) {
                         last_chat_body = json::parse(req.body);
                         json reply;
                         reply["choices"] = json::array(
                             {json{{"message", json{{"role", "assistant"},
                                                    {"content", chat_reply}}}}});
                         res.set_content(reply.dump(), "application/json");
                     });
        server_.Post("/v1/embeddings", [](const httplib::Request&, httplib::Response& res) {
            json reply;
            reply["data"] = json::array({json{{"embedding", {0.6, 0.8, 0.0}}}});
            res.set_content(reply.dump(), "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this]() { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }

    ~MockServer() {
        server_.stop();
        thread_.join();
    }

    std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_); }
    void fail_next(int n) { fail_first_ = n; }

    std::string chat_reply = "OUTPUT text from the mock";
    json last_chat_body;

private:
    static std::string scoring_reply(const std::string& prompt) {
        // tokens = " "-separated words, each prefixed with the joining space
        // beyond the first; logprob ladder -1, -2, ... with a null first
        json tokens = json::array(), logprobs = json::array(), offsets = json::array();
        size_t i = 0, index = 0;
        while (i < prompt.size()) {
            size_t j = prompt.find(' ', i);
            if (j == std::string::npos) j = prompt.size();
            const size_t begin = index == 0 ? i : i - 1;  // include the joining space
            tokens.push_back(prompt.substr(begin, j - begin));
            offsets.push_back(begin);
            if (index == 0) logprobs.push_back(nullptr);
            else logprobs.push_back(-(double)index);
            ++index;
            i = j + 1;
        }
        json reply;
        reply["choices"] = json::array({json{
            {"text", prompt},
            {"logprobs", json{{"tokens", tokens},
                              {"token_logprobs", logprobs},
                              {"text_offset", offsets}}}}});
        return reply.dump();
    }

    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
    std::atomic<int> fail_first_{0};
};

LmBackendSpec remote_spec(const std::string& kind, const std::string& endpoint) {
    LmBackendSpec spec;
    spec.kind = kind;
    spec.endpoint = endpoint;
    spec.model = "mock-model";
    spec.timeout_ms = 5000;
    spec.retries = 2;
    return spec;
}

}  // namespace

TEST_CASE("remote completions: scoring returns the server's token boundaries") {
    MockServer server;
    RemoteCompletionBackend backend(remote_spec("remote-completion", server.endpoint()));
    auto scored = backend.score_text("alpha beta gamma");
    REQUIRE(scored.size() == 3);
    CHECK(scored[0].text == "alpha");
    CHECK(scored[0].capped);  // first echoed token has no conditional logprob
    CHECK(scored[1].value == doctest::Approx(1.0));
    CHECK(scored[2].value == doctest::Approx(2.0));
    CHECK(scored[1].begin == 5);  // " beta" starts at the joining space
}

TEST_CASE("remote completions: self-information aligns to local tokens") {
    MockServer server;
    Vocabulary vocab = Vocabulary::with_reserved({"alpha", "beta", "gamma"});
    const std::string vocab_path =
        (std::filesystem::temp_directory_path() / "wmlab_remote_vocab.txt").string();
    vocab.save(vocab_path);

    LmBackendSpec spec = remote_spec("remote-completion", server.endpoint());
    spec.vocab_path = vocab_path;
    RemoteCompletionBackend backend(spec);

    TokenSeq seq = tokenize("alpha beta gamma", vocab);
    SelfInfoProfile profile = backend.self_information(seq);
    REQUIRE(profile.n() == 3);
    CHECK(profile.values[1] == doctest::Approx(1.0));
    CHECK(profile.values[2] == doctest::Approx(2.0));
    CHECK(profile.capped[0]);

    PerplexityResult ppl = backend.perplexity(seq);
    CHECK(ppl.capped);
    std::remove(vocab_path.c_str());
}

TEST_CASE("remote completions: transient 500s are retried") {
    MockServer server;
    LmBackendSpec spec = remote_spec("remote-completion", server.endpoint());
    spec.retries = 3;
    RemoteCompletionBackend backend(spec);
    server.fail_next(2);
    auto scored = backend.score_text("alpha beta");
    CHECK(scored.size() == 2);

    server.fail_next(10);  // exhausts the retry budget
    CHECK_THROWS_WITH_AS(backend.score_text("alpha beta"),
                         doctest::Contains("failed after 4 attempts"), Error);
}

TEST_CASE("remote chat: instruct_complete round trips; greedy pins temperature 0") {
    MockServer server;
    RemoteChatBackend backend(remote_spec("remote-chat", server.endpoint()));
    const std::string reply = backend.instruct_complete("rewrite this", Decoding::Greedy);
    CHECK(reply == "OUTPUT text from the mock");
    CHECK(server.last_chat_body["temperature"].get<double>() == 0.0);
    CHECK(server.last_chat_body["messages"][0]["content"] == "rewrite this");

    server.chat_reply = "";
    CHECK_THROWS_WITH_AS(backend.instruct_complete("x", Decoding::Greedy),
                         doctest::Contains("empty completion"), Error);
}

TEST_CASE("remote chat: llm_judge over the wire") {
    MockServer server;
    server.chat_reply = "[9]";
    RemoteChatBackend backend(remote_spec("remote-chat", server.endpoint()));
    CHECK(llm_judge("orig", "attacked", backend) == 9);
}

TEST_CASE("remote embeddings provider normalizes and scores cosine") {
    MockServer server;
    LmBackendSpec spec = remote_spec("remote-completion", server.endpoint());
    RemoteEmbeddingProvider provider(spec);
    auto e = provider.embed("anything");
    REQUIRE(e.size() == 3);
    CHECK(e[0].second == doctest::Approx(0.6));
    CHECK(similarity("a", "b", provider) == doctest::Approx(1.0));  // same mock vector
}

TEST_CASE("remote backends refuse local-only operations") {
    MockServer server;
    RemoteCompletionBackend completion(remote_spec("remote-completion", server.endpoint()));
    GenerationRequest req;
    req.max_new_tokens = 4;
    CHECK_THROWS_AS(completion.generate(req), Error);
    CHECK_THROWS_AS(completion.next_distribution({}), Error);

    RemoteChatBackend chat(remote_spec("remote-chat", server.endpoint()));
    TokenSeq seq{{1, 2}, {}};
    CHECK_THROWS_AS(chat.self_information(seq), Error);
}

TEST_CASE("remote auth: missing env var is a hard error") {
    MockServer server;
    LmBackendSpec spec = remote_spec("remote-chat", server.endpoint());
    spec.auth_env = "WMLAB_TEST_TOKEN_UNSET";
    unsetenv("WMLAB_TEST_TOKEN_UNSET");
    RemoteChatBackend backend(spec);
    CHECK_THROWS_WITH_AS(backend.instruct_complete("x", Decoding::Greedy),
                         doctest::Contains("WMLAB_TEST_TOKEN_UNSET"), Error);

    setenv("WMLAB_TEST_TOKEN_UNSET", "token-value", 1);
    CHECK(backend.instruct_complete("x", Decoding::Greedy) == "OUTPUT text from the mock");
    unsetenv("WMLAB_TEST_TOKEN_UNSET");
}

TEST_CASE("experiment harness: optional judge backend rates every sample") {
    MockServer server;
    server.chat_reply = "[7]";

    SyntheticBackend gen(synth_spec(1));
    auto records = make_synthetic_corpus(gen, 6, 60, 5);
    const std::string corpus =
        (std::filesystem::temp_directory_path() / "wmlab_judge_corpus.jsonl").string();
    save_corpus(corpus, records);

    ExperimentSpec spec;
    spec.corpus_path = corpus;
    spec.watermark = WatermarkConfig::from_json_text(
        R"({"algorithm_name": "Unigram", "gamma": 0.5, "delta": 2.0,
            "hash_key": 15485863, "z_threshold": 4.0})");
    spec.attack.name = "word-delete";
    spec.attack.ratio = 0.3;
    spec.generation_backend = synth_spec(1);
    spec.scoring_backend = synth_spec(1);
    spec.rewrite_backend = synth_spec(1);
    spec.judge_backend = remote_spec("remote-chat", server.endpoint());
    spec.generation_length = 60;
    spec.workers = 2;

    ExperimentRecord rec = run_experiment(spec);
    REQUIRE(rec.mean_judge_rating.has_value());
    CHECK(*rec.mean_judge_rating == doctest::Approx(7.0));
    for (const auto& s : rec.samples) {
        REQUIRE(s.judge_rating.has_value());
        CHECK(*s.judge_rating == 7);
    }
    CHECK(rec.aggregate_json().find("mean_judge_rating") != std::string::npos);

    // a remote embedding provider slots into the same run; the mock returns
    // one constant vector, so every similarity collapses to 1.0
    LmBackendSpec emb = remote_spec("remote-completion", server.endpoint());
    spec.embedding_provider = "remote";
    spec.embedding_backend = emb;
    ExperimentRecord rec2 = run_experiment(spec);
    CHECK(rec2.mean_similarity == doctest::Approx(1.0));
    std::remove(corpus.c_str());
}

TEST_CASE("sira attack runs end to end against remote backends") {
    MockServer server;
    server.chat_reply = "a rewritten version of the passage";
    RemoteCompletionBackend score(remote_spec("remote-completion", server.endpoint()));
    RemoteChatBackend rewrite(remote_spec("remote-chat", server.endpoint()));
    AttackRecord rec = sira_attack("alpha beta gamma delta epsilon zeta", score, rewrite, 0.3);
    CHECK(rec.reference == "a rewritten version of the passage");
    CHECK(rec.attacked == "a rewritten version of the passage");
    CHECK(rec.masked.masked_fraction > 0.0);
    // the mock's logprob ladder makes later tokens higher-surprisal
    CHECK(rec.masked.mask_flags.back());
}
