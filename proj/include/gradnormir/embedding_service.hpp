#pragma once

#include <chrono>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "gradnormir/embedding_io.hpp"

namespace gradnormir {

struct EmbeddingServiceOptions {
    std::size_t max_batch = 64;
    int max_attempts = 3;
    std::chrono::milliseconds retry_backoff{100};
    std::chrono::seconds timeout{30};
};

/// HTTP client for an embedding service exposing POST /embed.
///
/// Request:  {"texts": [...], "token_states": bool}
/// Response: {"dimension": int, "embeddings": [{"pooled": [...], "token_states": [[...]] | null}]}
///
/// Inputs longer than max_batch are split into consecutive batches. Transport
/// failures are retried up to max_attempts and then raised as TransientError.
/// A dimension that differs between batches is fatal. A service-side error
/// ({"error": "..."} or a non-2xx status) is passed through as Error.
/// Safe to call from several threads: each call opens its own connection.
class EmbeddingServiceClient {
public:
    explicit EmbeddingServiceClient(std::string endpoint, EmbeddingServiceOptions options = {});

    /// Returned doc_ids are the decimal input positions ("0", "1", ...).
    std::vector<DocumentEmbedding> fetch(const std::vector<std::string>& texts,
                                         bool want_token_states) const;

    const std::string& endpoint() const { return endpoint_; }

private:
    std::string endpoint_;
    EmbeddingServiceOptions options_;
};

inline std::vector<DocumentEmbedding> fetch_embeddings(const std::string& endpoint,
                                                       const std::vector<std::string>& texts,
                                                       bool want_token_states) {
    return EmbeddingServiceClient(endpoint).fetch(texts, want_token_states);
}

}  // namespace gradnormir
