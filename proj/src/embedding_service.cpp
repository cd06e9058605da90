#include "gradnormir/embedding_service.hpp"

#include <thread>

#include "httplib.h"
#include "json.hpp"

#include "gradnormir/error.hpp"

namespace gradnormir {

namespace {

struct Endpoint {
    std::string base;    // scheme://host:port
    std::string prefix;  // path prefix without trailing slash
};

Endpoint split_endpoint(const std::string& url) {
    const auto scheme = url.find("://");
    const auto path_start = url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
    Endpoint e;
    if (path_start == std::string::npos) {
        e.base = url;
    } else {
        e.base = url.substr(0, path_start);
        e.prefix = url.substr(path_start);
        while (!e.prefix.empty() && e.prefix.back() == '/') e.prefix.pop_back();
    }
    return e;
}

std::vector<float> to_floats(const nlohmann::json& arr, const char* what) {
    if (!arr.is_array()) throw Error(std::string("embedding service: ") + what + " is not an array");
    std::vector<float> out;
    out.reserve(arr.size());
    for (const auto& x : arr) {
        if (!x.is_number()) throw Error(std::string("embedding service: non-numeric ") + what);
        out.push_back(x.get<float>());
    }
    return out;
}

}  // namespace

EmbeddingServiceClient::EmbeddingServiceClient(std::string endpoint, EmbeddingServiceOptions options)
    : endpoint_(std::move(endpoint)), options_(options) {
    if (options_.max_batch == 0) throw Error("max_batch must be positive");
    if (options_.max_attempts < 1) throw Error("max_attempts must be positive");
}

std::vector<DocumentEmbedding> EmbeddingServiceClient::fetch(const std::vector<std::string>& texts,
                                                             bool want_token_states) const {
    std::vector<DocumentEmbedding> out;
    if (texts.empty()) return out;
    out.reserve(texts.size());

    const Endpoint ep = split_endpoint(endpoint_);
    httplib::Client client(ep.base);
    client.set_connection_timeout(options_.timeout);
    client.set_read_timeout(options_.timeout);

    std::optional<std::size_t> dimension;
    for (std::size_t begin = 0; begin < texts.size(); begin += options_.max_batch) {
        const std::size_t end = std::min(texts.size(), begin + options_.max_batch);
        nlohmann::json request = {
            {"texts", std::vector<std::string>(texts.begin() + begin, texts.begin() + end)},
            {"token_states", want_token_states}};
        const std::string body = request.dump();

        httplib::Result res;
        for (int attempt = 1; attempt <= options_.max_attempts; ++attempt) {
            res = client.Post(ep.prefix + "/embed", body, "application/json");
            if (res) break;
            if (attempt < options_.max_attempts) std::this_thread::sleep_for(options_.retry_backoff * attempt);
        }
        if (!res)
            throw TransientError("embedding service unreachable at " + endpoint_ + ": " +
                                 httplib::to_string(res.error()));

        nlohmann::json response;
        try {
            response = nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::exception&) {
            if (res->status < 200 || res->status >= 300)
                throw Error("embedding service error (HTTP " + std::to_string(res->status) + "): " + res->body);
            throw Error("embedding service returned malformed JSON");
        }
        if (response.is_object() && response.contains("error"))
            throw Error("embedding service error: " + response["error"].dump());
        if (res->status < 200 || res->status >= 300)
            throw Error("embedding service error (HTTP " + std::to_string(res->status) + ")");
        if (!response.contains("dimension") || !response.contains("embeddings"))
            throw Error("embedding service response missing dimension/embeddings");

        const auto dim = response["dimension"].get<std::size_t>();
        if (dimension && *dimension != dim)
            throw Error("embedding dimension drift across batches: " + std::to_string(*dimension) + " then " +
                        std::to_string(dim));
        dimension = dim;

        const auto& embs = response["embeddings"];
        if (!embs.is_array() || embs.size() != end - begin)
            throw Error("embedding service returned " + std::to_string(embs.size()) + " embeddings for " +
                        std::to_string(end - begin) + " texts");
        for (std::size_t i = 0; i < embs.size(); ++i) {
            DocumentEmbedding doc;
            doc.doc_id = std::to_string(begin + i);
            doc.pooled = to_floats(embs[i].at("pooled"), "pooled");
            if (doc.pooled.size() != dim) throw Error("embedding service: pooled size differs from dimension");
            if (want_token_states && embs[i].contains("token_states") && !embs[i]["token_states"].is_null()) {
                std::vector<std::vector<float>> rows;
                for (const auto& r : embs[i]["token_states"]) rows.push_back(to_floats(r, "token_states"));
                doc.token_states = TokenMatrix::from_rows(rows);
                if (doc.token_states->empty() || doc.token_states->cols != dim)
                    throw Error("embedding service: token_states shape differs from dimension");
            }
            out.push_back(std::move(doc));
        }
    }
    return out;
}

}  // namespace gradnormir
