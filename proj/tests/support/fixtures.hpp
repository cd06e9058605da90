#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "gradnormir/embedding_io.hpp"
#include "gradnormir/eval_harness.hpp"

namespace fixture {

inline std::vector<double> gaussian(std::mt19937_64& rng, std::size_t dim, double sigma = 1.0) {
    std::normal_distribution<double> n(0.0, sigma);
    std::vector<double> v(dim);
    for (double& x : v) x = n(rng);
    return v;
}

inline std::vector<double> normalized(std::vector<double> v) {
    double s = 0;
    for (double x : v) s += x * x;
    s = std::sqrt(s);
    for (double& x : v) x /= s;
    return v;
}

inline std::vector<float> to_f32(const std::vector<double>& v) { return {v.begin(), v.end()}; }

inline gradnormir::DocumentEmbedding doc(std::string id, const std::vector<double>& v) {
    return {std::move(id), to_f32(v), std::nullopt};
}

inline gradnormir::EmbeddingSet pre_pooled_set(std::vector<gradnormir::DocumentEmbedding> records,
                                               std::string retriever = "synthetic") {
    gradnormir::EmbeddingSet set;
    set.header.retriever_id = std::move(retriever);
    set.header.dimension = static_cast<std::uint32_t>(records.empty() ? 1 : records.front().pooled.size());
    set.header.pooling = gradnormir::Pooling::PrePooled;
    set.header.record_count = records.size();
    set.records = std::move(records);
    return set;
}

inline std::vector<gradnormir::DocumentEmbedding> random_docs(std::mt19937_64& rng, std::size_t n, std::size_t dim,
                                                              const std::string& prefix = "d") {
    std::vector<gradnormir::DocumentEmbedding> out;
    for (std::size_t i = 0; i < n; ++i) {
        char id[32];
        std::snprintf(id, sizeof id, "%s%05zu", prefix.c_str(), i);
        out.push_back(doc(id, gaussian(rng, dim)));
    }
    return out;
}

/// Planted two-population corpus used by the end-to-end separation checks.
///
/// Reference: 500 docs near a fixed unit direction mu (mu + N(0, 0.05^2)
/// per coordinate, then normalized), D = 64. Evaluation corpus: 250 more docs
/// from the same cluster ("in-*") and 250 uniform random unit vectors
/// ("ood-*").
///
/// Queries model a retriever that encodes in-domain text faithfully and
/// collapses unfamiliar text onto its training region: each in-cluster doc
/// gets two queries close to its own embedding; each OOD doc gets two queries
/// drawn from the cluster itself. Every query is relevant to exactly its doc.
struct SeparationFixture {
    static constexpr std::size_t kDim = 64;
    static constexpr std::size_t kReference = 500;
    static constexpr std::size_t kInCluster = 250;
    static constexpr std::size_t kOod = 250;
    static constexpr double kClusterSigma = 0.05;

    gradnormir::EmbeddingSet reference;
    gradnormir::EmbeddingSet corpus;
    std::vector<gradnormir::QueryEmbedding> queries;
    gradnormir::Qrels qrels;
    std::vector<std::string> in_ids, ood_ids;

    explicit SeparationFixture(std::uint64_t seed = 20240917) {
        std::mt19937_64 rng(seed);
        const auto mu = normalized(gaussian(rng, kDim));
        auto cluster_point = [&] {
            auto v = gaussian(rng, kDim, kClusterSigma);
            for (std::size_t j = 0; j < kDim; ++j) v[j] += mu[j];
            return normalized(v);
        };

        std::vector<gradnormir::DocumentEmbedding> ref;
        for (std::size_t i = 0; i < kReference; ++i) ref.push_back(doc("ref-" + pad(i), cluster_point()));
        reference = pre_pooled_set(std::move(ref), "synthetic-retriever");

        std::vector<gradnormir::DocumentEmbedding> docs;
        std::vector<std::vector<double>> in_vectors;
        for (std::size_t i = 0; i < kInCluster; ++i) {
            in_vectors.push_back(cluster_point());
            in_ids.push_back("in-" + pad(i));
            docs.push_back(doc(in_ids.back(), in_vectors.back()));
        }
        for (std::size_t i = 0; i < kOod; ++i) {
            ood_ids.push_back("ood-" + pad(i));
            docs.push_back(doc(ood_ids.back(), normalized(gaussian(rng, kDim))));
        }
        corpus = pre_pooled_set(std::move(docs), "synthetic-retriever");

        for (std::size_t i = 0; i < kInCluster; ++i)
            for (int j = 0; j < 2; ++j) {
                auto q = gaussian(rng, kDim, 0.02);
                for (std::size_t c = 0; c < kDim; ++c) q[c] += in_vectors[i][c];
                add_query(in_ids[i], j, normalized(q));
            }
        for (std::size_t i = 0; i < kOod; ++i)
            for (int j = 0; j < 2; ++j) add_query(ood_ids[i], j, cluster_point());
    }

    bool is_ood(const std::string& id) const { return id.rfind("ood-", 0) == 0; }

private:
    static std::string pad(std::size_t i) {
        char b[16];
        std::snprintf(b, sizeof b, "%04zu", i);
        return b;
    }
    void add_query(const std::string& doc_id, int j, std::vector<double> v) {
        const std::string qid = "q-" + doc_id + "-" + std::to_string(j);
        queries.push_back({qid, std::move(v)});
        qrels.add(qid, doc_id, 1);
    }
};

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("gradnormir-test-" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes ref.gne, corpus.gne, queries.gne and qrels.tsv for the fixture.
inline void write_separation_fixture(const SeparationFixture& data, const std::filesystem::path& dir) {
    gradnormir::write_embedding_set(data.reference.header, data.reference.records, dir / "ref.gne");
    gradnormir::write_embedding_set(data.corpus.header, data.corpus.records, dir / "corpus.gne");
    gradnormir::EmbeddingSet q;
    q.header.retriever_id = data.corpus.header.retriever_id;
    q.header.dimension = SeparationFixture::kDim;
    for (const auto& e : data.queries) q.records.push_back(doc(e.query_id, e.vector));
    q.header.record_count = q.records.size();
    gradnormir::write_embedding_set(q.header, q.records, dir / "queries.gne");
    std::ofstream tsv(dir / "qrels.tsv");
    tsv << "query-id\tcorpus-id\tscore\n";
    for (const auto& [qid, rel] : data.qrels.by_query())
        for (const auto& [d, grade] : rel) tsv << qid << '\t' << d << '\t' << grade << '\n';
}

}  // namespace fixture
