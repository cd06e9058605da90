#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gradnormir/embedding_io.hpp"
#include "gradnormir/knn_index.hpp"

namespace gradnormir {

enum class PerturbMode { TokenMask, ElementMask, None };
enum class NegativePool { CandidatePool, RestOfCorpus };

std::string to_string(PerturbMode m);
PerturbMode parse_perturb_mode(const std::string& s);
std::string to_string(NegativePool m);
NegativePool parse_negative_pool(const std::string& s);

struct SamplerConfig {
    double dropout_rate = 0.02;
    std::size_t num_positives = 8;
    std::size_t num_negatives = 4;
    std::size_t candidate_pool_size = 100;
    PerturbMode perturb_mode = PerturbMode::TokenMask;
    std::size_t masks_per_doc = 1;
    double subsample_fraction = 1.0;
    NegativePool negatives = NegativePool::CandidatePool;

    void validate() const;
};

/// Stable per-document seed: mixes the global seed, an FNV-1a hash of the
/// doc_id and the mask index through splitmix64. Independent of scoring
/// order and thread count.
std::uint64_t derive_seed(std::uint64_t global_seed, const std::string& doc_id,
                          std::uint64_t mask_index);

struct PerturbedQuery {
    Vector vector;
    int resamples = 0;       // extra draws caused by a near-zero result
    bool fell_back = false;  // all draws degenerate; unperturbed vector used
};

/// Bernoulli(dropout_rate) masking of the document representation.
///
/// token-mask zeroes whole token rows of the hidden states and re-pools;
/// element-mask zeroes coordinates of the pooled vector; none is the
/// identity. Masked values are zeroed without rescaling. A result with
/// norm < 1e-9 is redrawn (up to 8 times) before falling back.
PerturbedQuery perturb_query(const DocumentEmbedding& doc, Pooling pooling,
                             const SamplerConfig& config, std::uint64_t rng_seed);

struct CandidatePools {
    std::string query_doc_id;
    Vector perturbed_query;
    bool perturbation_fell_back = false;
    std::vector<std::string> positives;
    std::vector<std::string> negative_pool;
    std::map<std::string, std::vector<std::string>> hard_negatives;

    // Row positions in the index, parallel to the id lists above.
    std::vector<std::size_t> positive_rows;
    std::vector<std::size_t> negative_pool_rows;
    std::vector<std::vector<std::size_t>> hard_negative_rows;  // one list per positive
};

CandidatePools build_candidate_pools(const CosineIndex& index, const DocumentEmbedding& doc,
                                     Pooling pooling, const SamplerConfig& config,
                                     std::uint64_t rng_seed);

/// Uniform sample without replacement of ceil(fraction * N) ids, returned in
/// their original relative order.
std::vector<std::string> subsample_corpus(const std::vector<std::string>& doc_ids,
                                          double fraction, std::uint64_t rng_seed);

/// Same, but sampling a fixed count (clamped to N).
std::vector<std::size_t> sample_positions(std::size_t n, std::size_t count, std::uint64_t rng_seed);

}  // namespace gradnormir
