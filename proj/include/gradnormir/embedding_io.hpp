#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "gradnormir/vector_math.hpp"

namespace gradnormir {

enum class Pooling : std::uint16_t { Mean = 0, Cls = 1, PrePooled = 2 };

std::string to_string(Pooling p);
Pooling parse_pooling(const std::string& s);

/// Row-major T x D matrix of token hidden states, stored as on disk (f32).
struct TokenMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> values;

    TokenMatrix() = default;
    TokenMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0f) {}
    static TokenMatrix from_rows(const std::vector<std::vector<float>>& rows);

    std::span<const float> row(std::size_t i) const { return {values.data() + i * cols, cols}; }
    std::span<float> row(std::size_t i) { return {values.data() + i * cols, cols}; }
    bool empty() const { return rows == 0 || cols == 0; }

    friend bool operator==(const TokenMatrix&, const TokenMatrix&) = default;
};

struct EmbeddingSetHeader {
    static constexpr std::uint16_t kFormatVersion = 1;

    std::uint16_t format_version = kFormatVersion;
    std::string retriever_id;
    std::uint32_t dimension = 0;
    std::uint64_t record_count = 0;
    Pooling pooling = Pooling::PrePooled;
    bool has_token_states = false;

    void validate() const;
    friend bool operator==(const EmbeddingSetHeader&, const EmbeddingSetHeader&) = default;
};

struct DocumentEmbedding {
    std::string doc_id;
    std::vector<float> pooled;
    std::optional<TokenMatrix> token_states;

    Vector pooled_f64() const { return to_double(pooled); }
    friend bool operator==(const DocumentEmbedding&, const DocumentEmbedding&) = default;
};

struct EmbeddingSet {
    EmbeddingSetHeader header;
    std::vector<DocumentEmbedding> records;
};

/// Pools token states into one vector: column mean, or the first row for CLS.
Vector pool(const TokenMatrix& token_states, Pooling method);

/// Checks a record against its header: dimension, finiteness, token shape,
/// and mean-pooling consistency (relative tolerance 1e-5).
void validate_record(const EmbeddingSetHeader& header, const DocumentEmbedding& doc);

/// Streaming reader for the binary "GNE1" embedding format.
///
/// The header is parsed on construction. Records are yielded one at a time
/// by next(); every record is validated and doc_ids are checked for
/// uniqueness. After the last declared record the file must be exhausted.
class EmbeddingSetReader {
public:
    explicit EmbeddingSetReader(const std::filesystem::path& path);

    const EmbeddingSetHeader& header() const { return header_; }
    std::optional<DocumentEmbedding> next();

private:
    std::filesystem::path path_;
    std::ifstream in_;
    EmbeddingSetHeader header_;
    std::uint64_t index_ = 0;
    std::unordered_set<std::string> seen_;
};

EmbeddingSet read_embedding_set(const std::filesystem::path& path);

/// Writes the binary format. Output is byte-deterministic and written
/// atomically (temp file + rename).
void write_embedding_set(const EmbeddingSetHeader& header,
                         std::span<const DocumentEmbedding> records,
                         const std::filesystem::path& path);

/// JSONL fallback: one {"_id": ..., "embedding": [...]} object per line.
/// Produces a pre-pooled set with the given retriever id.
EmbeddingSet read_jsonl_embeddings(const std::filesystem::path& path,
                                   const std::string& retriever_id = "");

/// Dispatches on the file's leading bytes: binary magic, else JSONL.
EmbeddingSet load_embeddings(const std::filesystem::path& path);

}  // namespace gradnormir
