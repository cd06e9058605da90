#include "gradnormir/knn_index.hpp"

#include <algorithm>
#include <numeric>

#include "gradnormir/error.hpp"

namespace gradnormir {

CosineIndex::CosineIndex(std::vector<std::string> doc_ids, std::span<const Vector> vectors,
                         std::string retriever_id)
    : doc_ids_(std::move(doc_ids)), retriever_id_(std::move(retriever_id)) {
    if (doc_ids_.size() != vectors.size()) throw Error("doc_ids and vectors differ in length");
    if (doc_ids_.empty()) throw Error("cannot build an index over an empty set");
    dim_ = vectors.front().size();
    if (dim_ == 0) throw Error("zero-dimensional embeddings");
    unit_.resize(doc_ids_.size() * dim_);
    position_.reserve(doc_ids_.size());
    for (std::size_t i = 0; i < doc_ids_.size(); ++i) {
        const auto& v = vectors[i];
        if (v.size() != dim_) throw Error("dimension mismatch at doc_id '" + doc_ids_[i] + "'");
        if (!all_finite(v)) throw Error("non-finite embedding at doc_id '" + doc_ids_[i] + "'");
        const double n = l2_norm(v);
        if (!(n > 0.0)) throw Error("zero-norm embedding at doc_id '" + doc_ids_[i] + "'");
        double* row = unit_.data() + i * dim_;
        for (std::size_t j = 0; j < dim_; ++j) row[j] = v[j] / n;
        if (!position_.emplace(doc_ids_[i], i).second)
            throw Error("duplicate doc_id '" + doc_ids_[i] + "'");
    }
    std::vector<std::size_t> order(doc_ids_.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return doc_ids_[a] < doc_ids_[b]; });
    id_rank_.resize(order.size());
    for (std::size_t r = 0; r < order.size(); ++r) id_rank_[order[r]] = r;
}

std::size_t CosineIndex::find(const std::string& doc_id) const {
    auto it = position_.find(doc_id);
    return it == position_.end() ? npos : it->second;
}

Vector CosineIndex::unit_query(std::span<const double> query) const {
    if (query.size() != dim_)
        throw Error("query dimension " + std::to_string(query.size()) + " does not match index dimension " +
                    std::to_string(dim_));
    if (!all_finite(query)) throw Error("non-finite query");
    const double n = l2_norm(query);
    if (!(n > 0.0)) throw Error("zero-norm query");
    Vector q(query.begin(), query.end());
    for (double& x : q) x /= n;
    return q;
}

std::vector<RowHit> CosineIndex::rank_rows(std::span<const double> query,
                                           std::span<const std::size_t> candidates, std::size_t k) const {
    const Vector q = unit_query(query);
    std::vector<RowHit> hits;
    hits.reserve(candidates.size());
    for (std::size_t r : candidates) hits.push_back({r, clamp_similarity(dot(row(r), q))});
    const auto cmp = [this](const RowHit& a, const RowHit& b) { return precedes(a, b); };
    k = std::min(k, hits.size());
    std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(k), hits.end(), cmp);
    hits.resize(k);
    return hits;
}

std::vector<RowHit> CosineIndex::search_rows(std::span<const double> query, std::size_t k,
                                             std::span<const std::size_t> excluded_rows) const {
    if (k == 0) throw Error("k must be >= 1");
    std::vector<char> excluded(size(), 0);
    for (std::size_t r : excluded_rows)
        if (r < size()) excluded[r] = 1;
    std::vector<std::size_t> candidates;
    candidates.reserve(size());
    for (std::size_t r = 0; r < size(); ++r)
        if (!excluded[r]) candidates.push_back(r);
    return rank_rows(query, candidates, k);
}

std::vector<Neighbor> CosineIndex::search(std::span<const double> query, std::size_t k,
                                          const std::unordered_set<std::string>& exclude) const {
    std::vector<std::size_t> excluded_rows;
    for (const auto& id : exclude)
        if (auto r = find(id); r != npos) excluded_rows.push_back(r);
    std::vector<Neighbor> out;
    for (const auto& hit : search_rows(query, k, excluded_rows))
        out.push_back({doc_ids_[hit.row], hit.similarity});
    return out;
}

CosineIndex build_index(std::span<const DocumentEmbedding> records, const std::string& retriever_id) {
    std::vector<std::string> ids;
    std::vector<Vector> vectors;
    ids.reserve(records.size());
    vectors.reserve(records.size());
    for (const auto& r : records) {
        ids.push_back(r.doc_id);
        vectors.push_back(r.pooled_f64());
    }
    return CosineIndex(std::move(ids), vectors, retriever_id);
}

CosineIndex build_index(const EmbeddingSet& set) { return build_index(set.records, set.header.retriever_id); }

}  // namespace gradnormir
