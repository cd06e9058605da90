#include "gradnormir/eval_harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "gradnormir/error.hpp"

namespace gradnormir {

namespace {

std::unordered_set<std::string> retrieved_set(const std::vector<Neighbor>& list, std::size_t cutoff) {
    std::unordered_set<std::string> s;
    for (std::size_t i = 0; i < std::min(cutoff, list.size()); ++i) s.insert(list[i].doc_id);
    return s;
}

}  // namespace

void Qrels::add(const std::string& query_id, const std::string& doc_id, int grade) {
    auto& relevant = forward_[query_id];  // registers the query even when nothing is relevant
    if (grade < 1) return;
    relevant[doc_id] = grade;
    inverse_[doc_id].insert(query_id);
}

Qrels Qrels::read_tsv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open qrels " + path.string());
    Qrels q;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        for (std::string c; std::getline(ss, c, '\t');) cols.push_back(c);
        if (line_no == 1 && !cols.empty() && cols[0] == "query-id") continue;
        if (cols.size() < 3) throw Error(path.string() + ":" + std::to_string(line_no) + ": expected 3 columns");
        int grade = 0;
        try {
            std::size_t used = 0;
            grade = std::stoi(cols[2], &used);
            if (used != cols[2].size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw Error(path.string() + ":" + std::to_string(line_no) + ": bad relevance '" + cols[2] + "'");
        }
        q.add(cols[0], cols[1], grade);
    }
    return q;
}

RetrievalRun retrieval_run(const CosineIndex& index, std::span<const QueryEmbedding> queries, std::size_t cutoff) {
    RetrievalRun run;
    run.cutoff = cutoff;
    for (const auto& q : queries) {
        if (q.vector.size() != index.dimension())
            throw Error("query '" + q.query_id + "' dimension mismatch: " + std::to_string(q.vector.size()) +
                        " vs index " + std::to_string(index.dimension()));
        if (run.results.contains(q.query_id)) throw Error("duplicate query_id '" + q.query_id + "'");
        run.results[q.query_id] = index.search(q.vector, cutoff);
    }
    return run;
}

double drr(const RetrievalRun& run, const Qrels& qrels, const std::vector<std::string>& doc_subset) {
    std::size_t hits = 0, total = 0;
    std::map<std::string, std::unordered_set<std::string>> cache;
    std::unordered_set<std::string> seen;
    for (const auto& doc : doc_subset) {
        if (!seen.insert(doc).second) continue;
        auto it = qrels.by_doc().find(doc);
        if (it == qrels.by_doc().end()) throw Error("doc_id '" + doc + "' has no relevant queries");
        for (const auto& qid : it->second) {
            ++total;
            auto run_it = run.results.find(qid);
            if (run_it == run.results.end()) continue;
            auto [c, fresh] = cache.try_emplace(qid);
            if (fresh) c->second = retrieved_set(run_it->second, run.cutoff);
            hits += c->second.contains(doc) ? 1 : 0;
        }
    }
    if (total == 0) throw Error("empty denominator: no relevant queries for the document subset");
    return static_cast<double>(hits) / static_cast<double>(total);
}

RecallResult recall_at_k(const RetrievalRun& run, const Qrels& qrels, std::size_t cutoff) {
    RecallResult r;
    double sum = 0.0;
    for (const auto& [qid, rel] : qrels.by_query()) {
        if (rel.empty()) {
            ++r.skipped_queries;
            continue;
        }
        std::size_t found = 0;
        if (auto it = run.results.find(qid); it != run.results.end()) {
            const auto got = retrieved_set(it->second, cutoff);
            for (const auto& [doc, grade] : rel) found += got.contains(doc) ? 1 : 0;
        }
        sum += static_cast<double>(found) / static_cast<double>(rel.size());
        ++r.evaluated_queries;
    }
    if (r.evaluated_queries == 0) throw Error("no queries with relevant documents");
    r.recall = sum / static_cast<double>(r.evaluated_queries);
    return r;
}

std::map<std::string, double> d2q_recall(const RetrievalRun& run, const Qrels& qrels) {
    if (qrels.by_doc().empty()) throw Error("empty qrels");
    std::map<std::string, std::unordered_set<std::string>> retrieved;
    for (const auto& [qid, list] : run.results) retrieved[qid] = retrieved_set(list, run.cutoff);
    std::map<std::string, double> out;
    for (const auto& [doc, queries] : qrels.by_doc()) {
        std::size_t hits = 0;
        for (const auto& qid : queries)
            if (auto it = retrieved.find(qid); it != retrieved.end() && it->second.contains(doc)) ++hits;
        out[doc] = static_cast<double>(hits) / static_cast<double>(queries.size());
    }
    return out;
}

std::array<double, 4> quartile_report(const std::map<std::string, double>& scores,
                                      const std::map<std::string, double>& d2q) {
    std::vector<std::pair<double, std::string>> docs;
    for (const auto& [doc, s] : scores)
        if (d2q.contains(doc)) docs.emplace_back(s, doc);
    if (docs.empty()) throw Error("no documents with both a score and a d2q recall");
    std::sort(docs.begin(), docs.end());

    std::array<double, 4> means{};
    const std::size_t base = docs.size() / 4, extra = docs.size() % 4;
    std::size_t begin = 0;
    for (std::size_t q = 0; q < 4; ++q) {
        const std::size_t len = base + (q < extra ? 1 : 0);
        if (len == 0) {
            means[q] = std::numeric_limits<double>::quiet_NaN();
            continue;
        }
        double sum = 0.0;
        for (std::size_t i = begin; i < begin + len; ++i) sum += d2q.at(docs[i].second);
        means[q] = sum / static_cast<double>(len);
        begin += len;
    }
    return means;
}

double robustness_gap(double recall_in, double recall_ood) {
    if (!(recall_in >= 0.0 && recall_in <= 1.0) || !(recall_ood >= 0.0 && recall_ood <= 1.0))
        throw Error("recall values must be in [0, 1]");
    return std::abs(recall_in - recall_ood);
}

}  // namespace gradnormir
