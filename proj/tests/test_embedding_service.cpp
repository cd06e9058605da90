#include <doctest.h>

#include <atomic>
#include <thread>

#include "httplib.h"
#include "json.hpp"

#include "gradnormir/embedding_service.hpp"
#include "gradnormir/error.hpp"

using namespace gradnormir;
using nlohmann::json;

namespace {

// Toy embedding service: text t -> pooled [len(t), 1, ...], optional token
// rows, one row per character.
class FakeService {
public:
    std::atomic<int> requests{0};
    std::atomic<int> failures_left{0};
    std::size_t dimension = 3;
    std::size_t drift_after = 0;  // switch dimension after this many requests (0 = never)
    bool fail_with_error = false;

    FakeService() {
        server_.Post("/v1/embed", [this](const httplib::Request& req, httplib::Response& res) {
            const int n = ++requests;
            if (failures_left > 0) {
                --failures_left;
                res.status = 503;
                res.set_content(R"({"error": "warming up"})", "application/json");
                return;
            }
            if (fail_with_error) {
                res.set_content(R"({"error": "model not loaded"})", "application/json");
                return;
            }
            const auto body = json::parse(req.body);
            const std::size_t dim = drift_after && static_cast<std::size_t>(n) > drift_after ? dimension + 1 : dimension;
            json embs = json::array();
            for (const auto& t : body["texts"]) {
                const auto text = t.get<std::string>();
                std::vector<float> pooled(dim, 1.0f);
                pooled[0] = static_cast<float>(text.size());
                json e = {{"pooled", pooled}, {"token_states", nullptr}};
                if (body["token_states"].get<bool>()) {
                    json rows = json::array();
                    for (std::size_t c = 0; c < text.size(); ++c) rows.push_back(std::vector<float>(dim, 0.5f));
                    e["token_states"] = rows;
                }
                embs.push_back(e);
            }
            res.set_content(json{{"dimension", dim}, {"embeddings", embs}}.dump(), "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~FakeService() {
        server_.stop();
        thread_.join();
    }
    std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }

private:
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
};

EmbeddingServiceOptions fast(std::size_t batch = 64) {
    EmbeddingServiceOptions o;
    o.max_batch = batch;
    o.retry_backoff = std::chrono::milliseconds(1);
    o.timeout = std::chrono::seconds(2);
    return o;
}

}  // namespace

TEST_SUITE("embedding-service") {

TEST_CASE("batches are split and reassembled in order") {
    FakeService svc;
    std::vector<std::string> texts;
    for (int i = 0; i < 10; ++i) texts.push_back(std::string(static_cast<std::size_t>(i + 1), 'x'));
    const auto out = EmbeddingServiceClient(svc.endpoint(), fast(3)).fetch(texts, false);
    CHECK(svc.requests == 4);
    REQUIRE(out.size() == 10);
    for (std::size_t i = 0; i < 10; ++i) {
        CHECK(out[i].doc_id == std::to_string(i));
        CHECK(out[i].pooled[0] == static_cast<float>(i + 1));
        CHECK_FALSE(out[i].token_states.has_value());
    }
}

TEST_CASE("token states come back as matrices") {
    FakeService svc;
    const auto out = EmbeddingServiceClient(svc.endpoint(), fast()).fetch({"abcd"}, true);
    REQUIRE(out[0].token_states.has_value());
    CHECK(out[0].token_states->rows == 4);
    CHECK(out[0].token_states->cols == 3);
}

TEST_CASE("empty input makes no request") {
    FakeService svc;
    CHECK(EmbeddingServiceClient(svc.endpoint(), fast()).fetch({}, false).empty());
    CHECK(svc.requests == 0);
}

TEST_CASE("service errors are passed through") {
    FakeService svc;
    svc.fail_with_error = true;
    CHECK_THROWS_WITH_AS(EmbeddingServiceClient(svc.endpoint(), fast()).fetch({"a"}, false),
                         doctest::Contains("model not loaded"), Error);
    FakeService busy;
    busy.failures_left = 1;
    CHECK_THROWS_WITH_AS(EmbeddingServiceClient(busy.endpoint(), fast()).fetch({"a"}, false),
                         doctest::Contains("warming up"), Error);
}

TEST_CASE("dimension drift across batches is fatal") {
    FakeService svc;
    svc.drift_after = 1;
    CHECK_THROWS_WITH_AS(EmbeddingServiceClient(svc.endpoint(), fast(1)).fetch({"a", "b"}, false),
                         doctest::Contains("dimension drift"), Error);
}

TEST_CASE("unreachable service is a transient error after retries") {
    int port = 0;
    {
        httplib::Server probe;
        port = probe.bind_to_any_port("127.0.0.1");
    }
    auto opts = fast();
    opts.max_attempts = 2;
    CHECK_THROWS_AS(EmbeddingServiceClient("http://127.0.0.1:" + std::to_string(port), opts).fetch({"a"}, false),
                    TransientError);
}

TEST_CASE("client option validation") {
    EmbeddingServiceOptions o;
    o.max_batch = 0;
    CHECK_THROWS_AS(EmbeddingServiceClient("http://localhost", o), Error);
}

}  // TEST_SUITE
