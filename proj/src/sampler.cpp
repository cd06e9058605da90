#include "gradnormir/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "gradnormir/error.hpp"

namespace gradnormir {

namespace {

constexpr int kMaxResamples = 8;
constexpr double kMinPerturbedNorm = 1e-9;

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return h;
}

// mt19937_64 is fully specified by the standard; the distributions are not,
// so draws are mapped to numbers by hand to stay portable across toolchains.
double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return x % bound;
}

Vector draw_mask(const DocumentEmbedding& doc, Pooling pooling, const SamplerConfig& config,
                 std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    if (config.perturb_mode == PerturbMode::ElementMask) {
        Vector v = doc.pooled_f64();
        for (double& x : v)
            if (uniform01(rng) < config.dropout_rate) x = 0.0;
        return v;
    }
    TokenMatrix masked = *doc.token_states;
    for (std::size_t t = 0; t < masked.rows; ++t)
        if (uniform01(rng) < config.dropout_rate) std::fill(masked.row(t).begin(), masked.row(t).end(), 0.0f);
    return pool(masked, pooling);
}

}  // namespace

std::string to_string(PerturbMode m) {
    switch (m) {
        case PerturbMode::TokenMask: return "token-mask";
        case PerturbMode::ElementMask: return "element-mask";
        case PerturbMode::None: return "none";
    }
    throw Error("unknown perturb mode");
}

PerturbMode parse_perturb_mode(const std::string& s) {
    if (s == "token-mask") return PerturbMode::TokenMask;
    if (s == "element-mask") return PerturbMode::ElementMask;
    if (s == "none") return PerturbMode::None;
    throw Error("unknown perturb mode '" + s + "'");
}

std::string to_string(NegativePool m) {
    return m == NegativePool::CandidatePool ? "candidate-pool" : "rest-of-corpus";
}

NegativePool parse_negative_pool(const std::string& s) {
    if (s == "candidate-pool") return NegativePool::CandidatePool;
    if (s == "rest-of-corpus") return NegativePool::RestOfCorpus;
    throw Error("unknown negatives mode '" + s + "'");
}

void SamplerConfig::validate() const {
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw Error("dropout_rate must be in [0, 1)");
    if (num_positives < 1) throw Error("num_positives must be >= 1");
    if (num_negatives < 1) throw Error("num_negatives must be >= 1");
    if (candidate_pool_size < 1) throw Error("candidate_pool_size must be >= 1");
    if (num_positives >= candidate_pool_size) throw Error("num_positives must be < candidate_pool_size");
    if (masks_per_doc < 1) throw Error("masks_per_doc must be >= 1");
    if (!(subsample_fraction > 0.0 && subsample_fraction <= 1.0))
        throw Error("subsample_fraction must be in (0, 1]");
}

std::uint64_t derive_seed(std::uint64_t global_seed, const std::string& doc_id, std::uint64_t mask_index) {
    return splitmix64(splitmix64(splitmix64(global_seed) ^ fnv1a(doc_id)) ^ mask_index);
}

PerturbedQuery perturb_query(const DocumentEmbedding& doc, Pooling pooling, const SamplerConfig& config,
                             std::uint64_t rng_seed) {
    if (config.perturb_mode == PerturbMode::TokenMask) {
        if (!doc.token_states) throw Error("token-mask perturbation requires token states");
        if (pooling != Pooling::Mean && pooling != Pooling::Cls)
            throw Error("token-mask perturbation requires mean or cls pooling");
    }
    PerturbedQuery out;
    if (config.perturb_mode == PerturbMode::None || config.dropout_rate == 0.0) {
        out.vector = doc.pooled_f64();
        return out;
    }
    std::uint64_t seed = rng_seed;
    for (int attempt = 0; attempt <= kMaxResamples; ++attempt) {
        Vector v = draw_mask(doc, pooling, config, seed);
        if (l2_norm(v) >= kMinPerturbedNorm) {
            out.vector = std::move(v);
            out.resamples = attempt;
            return out;
        }
        seed = splitmix64(rng_seed ^ static_cast<std::uint64_t>(attempt + 1));
    }
    out.vector = doc.pooled_f64();
    out.resamples = kMaxResamples;
    out.fell_back = true;
    return out;
}

CandidatePools build_candidate_pools(const CosineIndex& index, const DocumentEmbedding& doc, Pooling pooling,
                                     const SamplerConfig& config, std::uint64_t rng_seed) {
    config.validate();
    const std::size_t self = index.find(doc.doc_id);
    if (self == CosineIndex::npos) throw Error("doc_id '" + doc.doc_id + "' is not in the index");
    if (index.size() < 2) throw Error("corpus of size 1 has no candidates");

    CandidatePools pools;
    pools.query_doc_id = doc.doc_id;
    PerturbedQuery pq = perturb_query(doc, pooling, config, rng_seed);
    pools.perturbed_query = std::move(pq.vector);
    pools.perturbation_fell_back = pq.fell_back;

    const std::size_t self_rows[] = {self};
    const auto candidates = index.search_rows(pools.perturbed_query, config.candidate_pool_size, self_rows);
    const std::size_t p = std::min(config.num_positives, candidates.size());
    for (std::size_t i = 0; i < p; ++i) pools.positive_rows.push_back(candidates[i].row);

    if (config.negatives == NegativePool::CandidatePool) {
        for (std::size_t i = p; i < candidates.size(); ++i) pools.negative_pool_rows.push_back(candidates[i].row);
    } else {
        std::vector<std::size_t> excluded = pools.positive_rows;
        excluded.push_back(self);
        if (index.size() > excluded.size())
            for (const auto& hit : index.search_rows(pools.perturbed_query, index.size(), excluded))
                pools.negative_pool_rows.push_back(hit.row);
    }

    for (std::size_t row : pools.positive_rows) {
        std::vector<std::size_t> hard;
        if (!pools.negative_pool_rows.empty())
            for (const auto& hit : index.rank_rows(index.row(row), pools.negative_pool_rows, config.num_negatives))
                hard.push_back(hit.row);
        pools.hard_negative_rows.push_back(std::move(hard));
    }

    for (std::size_t r : pools.positive_rows) pools.positives.push_back(index.doc_id(r));
    for (std::size_t r : pools.negative_pool_rows) pools.negative_pool.push_back(index.doc_id(r));
    for (std::size_t i = 0; i < pools.positive_rows.size(); ++i) {
        auto& list = pools.hard_negatives[pools.positives[i]];
        for (std::size_t r : pools.hard_negative_rows[i]) list.push_back(index.doc_id(r));
    }
    return pools;
}

std::vector<std::size_t> sample_positions(std::size_t n, std::size_t count, std::uint64_t rng_seed) {
    count = std::min(count, n);
    std::vector<std::size_t> pos(n);
    std::iota(pos.begin(), pos.end(), 0);
    if (count == n) return pos;
    std::mt19937_64 rng(rng_seed);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(uniform_below(rng, n - i));
        std::swap(pos[i], pos[j]);
    }
    pos.resize(count);
    std::sort(pos.begin(), pos.end());
    return pos;
}

std::vector<std::string> subsample_corpus(const std::vector<std::string>& doc_ids, double fraction,
                                          std::uint64_t rng_seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw Error("subsample fraction must be in (0, 1]");
    if (fraction == 1.0) return doc_ids;
    const double exact = fraction * static_cast<double>(doc_ids.size());
    const auto count = static_cast<std::size_t>(std::ceil(exact - 1e-9));
    std::vector<std::string> out;
    for (std::size_t i : sample_positions(doc_ids.size(), count, rng_seed)) out.push_back(doc_ids[i]);
    return out;
}

}  // namespace gradnormir
