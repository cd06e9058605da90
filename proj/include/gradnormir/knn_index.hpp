#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "gradnormir/embedding_io.hpp"
#include "gradnormir/vector_math.hpp"

namespace gradnormir {

struct Neighbor {
    std::string doc_id;
    double similarity = 0.0;

    friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

/// Row position plus similarity; the internal currency of search.
struct RowHit {
    std::size_t row = 0;
    double similarity = 0.0;
};

/// Exact cosine top-k index over unit-normalized pooled vectors.
///
/// Results are ordered by similarity descending with ties broken by doc_id
/// ascending. Immutable after construction and safe to query concurrently.
class CosineIndex {
public:
    CosineIndex(std::vector<std::string> doc_ids, std::span<const Vector> vectors,
                std::string retriever_id);

    std::size_t size() const { return doc_ids_.size(); }
    std::size_t dimension() const { return dim_; }
    const std::string& retriever_id() const { return retriever_id_; }
    const std::vector<std::string>& doc_ids() const { return doc_ids_; }
    const std::string& doc_id(std::size_t row) const { return doc_ids_[row]; }

    std::span<const double> row(std::size_t i) const { return {unit_.data() + i * dim_, dim_}; }

    /// Row position of a doc_id, or npos.
    std::size_t find(const std::string& doc_id) const;
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

    /// Ordering key for tie-breaking: rank of doc_id in ascending order.
    std::size_t id_rank(std::size_t row) const { return id_rank_[row]; }

    std::vector<Neighbor> search(std::span<const double> query, std::size_t k,
                                 const std::unordered_set<std::string>& exclude = {}) const;

    /// Row-level search. `excluded_rows` may be unsorted.
    std::vector<RowHit> search_rows(std::span<const double> query, std::size_t k,
                                    std::span<const std::size_t> excluded_rows = {}) const;

    /// Ranks the given candidate rows against `query` (k = all candidates).
    std::vector<RowHit> rank_rows(std::span<const double> query,
                                  std::span<const std::size_t> candidates, std::size_t k) const;

    /// True when `a` precedes `b` in result order.
    bool precedes(const RowHit& a, const RowHit& b) const {
        if (a.similarity != b.similarity) return a.similarity > b.similarity;
        return id_rank_[a.row] < id_rank_[b.row];
    }

private:
    Vector unit_query(std::span<const double> query) const;

    std::vector<std::string> doc_ids_;
    std::vector<double> unit_;
    std::size_t dim_ = 0;
    std::string retriever_id_;
    std::unordered_map<std::string, std::size_t> position_;
    std::vector<std::size_t> id_rank_;
};

CosineIndex build_index(const EmbeddingSet& set);
CosineIndex build_index(std::span<const DocumentEmbedding> records, const std::string& retriever_id);

/// Cosine similarity of one unit row with a query normalized to unit length,
/// clamped to [-1, 1]. Shared by the index and any caller that must agree
/// with its arithmetic exactly.
inline double clamp_similarity(double s) { return s > 1.0 ? 1.0 : (s < -1.0 ? -1.0 : s); }

}  // namespace gradnormir
