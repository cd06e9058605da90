#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gradnormir/knn_index.hpp"

namespace gradnormir {

/// Relevance judgements with both directions materialized.
/// Any grade >= 1 counts as relevant; lower grades are dropped on insert.
class Qrels {
public:
    void add(const std::string& query_id, const std::string& doc_id, int grade);

    const std::map<std::string, std::map<std::string, int>>& by_query() const { return forward_; }
    const std::map<std::string, std::set<std::string>>& by_doc() const { return inverse_; }

    /// BEIR TSV with header: query-id, corpus-id, score.
    static Qrels read_tsv(const std::filesystem::path& path);

private:
    std::map<std::string, std::map<std::string, int>> forward_;
    std::map<std::string, std::set<std::string>> inverse_;
};

struct RetrievalRun {
    std::size_t cutoff = 100;
    std::map<std::string, std::vector<Neighbor>> results;
};

struct QueryEmbedding {
    std::string query_id;
    Vector vector;
};

RetrievalRun retrieval_run(const CosineIndex& index, std::span<const QueryEmbedding> queries,
                           std::size_t cutoff);

/// Fraction of (document, relevant query) pairs over `doc_subset` in which
/// the document appears in the query's retrieved list.
double drr(const RetrievalRun& run, const Qrels& qrels, const std::vector<std::string>& doc_subset);

struct RecallResult {
    double recall = 0.0;
    std::size_t evaluated_queries = 0;
    std::size_t skipped_queries = 0;  // no relevant documents
};

/// Macro-averaged recall over queries present in qrels, using the first
/// `cutoff` entries of each retrieved list.
RecallResult recall_at_k(const RetrievalRun& run, const Qrels& qrels, std::size_t cutoff);

std::map<std::string, double> d2q_recall(const RetrievalRun& run, const Qrels& qrels);

/// Sorts documents by score ascending, splits them into four groups
/// (remainders go to earlier groups) and returns each group's mean d2q
/// recall. Only documents present in both maps participate.
std::array<double, 4> quartile_report(const std::map<std::string, double>& scores,
                                      const std::map<std::string, double>& d2q);

double robustness_gap(double recall_in, double recall_ood);

}  // namespace gradnormir
