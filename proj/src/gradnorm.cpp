#include "gradnormir/gradnorm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include <openssl/evp.h>

#include "json.hpp"

#include "gradnormir/error.hpp"

namespace gradnormir {

namespace {

// Softmax state shared by the loss and gradient kernels. Index 0 is the
// positive, 1..n the negatives.
struct Instance {
    std::vector<VectorView> candidates;
    std::vector<double> norms;       // ||e_k||
    std::vector<double> similarity;  // s_k
    double query_norm = 0.0;
    double tau = 0.0;
    double max_logit = 0.0;
    double sum_exp = 0.0;       // sum_k exp(s_k/tau - max_logit)
    double negative_mass = 0.0;  // same sum over k >= 1

    double probability(std::size_t k) const { return std::exp(similarity[k] / tau - max_logit) / sum_exp; }
    // dL/ds_k. For the positive, 1 - p_0 is taken as the negatives' mass so
    // a saturated softmax keeps its relative precision.
    double coefficient(std::size_t k) const {
        return k == 0 ? -(negative_mass / sum_exp) / tau : probability(k) / tau;
    }
};

void check_vector(VectorView v, std::size_t dim, const char* what) {
    if (v.size() != dim) throw Error(std::string(what) + " dimension mismatch");
    if (!all_finite(v)) throw Error(std::string("non-finite ") + what);
    if (!(l2_norm(v) > 0.0)) throw Error(std::string("zero-norm ") + what);
}

Instance make_instance(VectorView query, VectorView positive, std::span<const VectorView> negatives,
                       double tau) {
    if (!(tau > 0.0) || !std::isfinite(tau)) throw Error("temperature must be positive");
    const std::size_t dim = query.size();
    if (dim == 0) throw Error("empty query vector");
    check_vector(query, dim, "query");
    check_vector(positive, dim, "positive");
    for (const auto& n : negatives) check_vector(n, dim, "negative");

    Instance inst;
    inst.tau = tau;
    inst.query_norm = l2_norm(query);
    inst.candidates.reserve(negatives.size() + 1);
    inst.candidates.push_back(positive);
    inst.candidates.insert(inst.candidates.end(), negatives.begin(), negatives.end());
    inst.max_logit = -std::numeric_limits<double>::infinity();
    for (const auto& e : inst.candidates) {
        const double n = l2_norm(e);
        const double s = dot(query, e) / (inst.query_norm * n);
        inst.norms.push_back(n);
        inst.similarity.push_back(s);
        inst.max_logit = std::max(inst.max_logit, s / tau);
    }
    for (std::size_t k = 0; k < inst.similarity.size(); ++k) {
        const double e = std::exp(inst.similarity[k] / tau - inst.max_logit);
        inst.sum_exp += e;
        if (k > 0) inst.negative_mass += e;
    }
    return inst;
}

// dL/dq
Vector query_gradient(const Instance& inst, VectorView query) {
    const std::size_t dim = query.size();
    Vector g(dim, 0.0);
    const double qn = inst.query_norm;
    for (std::size_t k = 0; k < inst.candidates.size(); ++k) {
        const double c = inst.coefficient(k);
        if (c == 0.0) continue;
        const double a = c / (qn * inst.norms[k]);
        const double b = c * inst.similarity[k] / (qn * qn);
        const auto& e = inst.candidates[k];
        for (std::size_t j = 0; j < dim; ++j) g[j] += a * e[j] - b * query[j];
    }
    return g;
}

// dL/de_k
Vector candidate_gradient(const Instance& inst, VectorView query, std::size_t k) {
    const auto& e = inst.candidates[k];
    const double c = inst.coefficient(k);
    const double a = c / (inst.query_norm * inst.norms[k]);
    const double b = c * inst.similarity[k] / (inst.norms[k] * inst.norms[k]);
    Vector g(e.size());
    for (std::size_t j = 0; j < e.size(); ++j) g[j] = a * query[j] - b * e[j];
    return g;
}

std::string sha256_hex(const std::string& data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw Error("sha256 failed");
    std::string hex;
    char buf[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(buf, sizeof buf, "%02x", md[i]);
        hex += buf;
    }
    return hex;
}

}  // namespace

std::string to_string(GradSurface s) {
    return s == GradSurface::VirtualProjection ? "virtual-projection" : "query-embedding";
}

GradSurface parse_grad_surface(const std::string& s) {
    if (s == "virtual-projection") return GradSurface::VirtualProjection;
    if (s == "query-embedding") return GradSurface::QueryEmbedding;
    throw Error("unknown grad surface '" + s + "'");
}

std::string to_string(LossQuery q) { return q == LossQuery::Unperturbed ? "unperturbed" : "perturbed"; }

LossQuery parse_loss_query(const std::string& s) {
    if (s == "unperturbed") return LossQuery::Unperturbed;
    if (s == "perturbed") return LossQuery::Perturbed;
    throw Error("unknown loss query '" + s + "'");
}

void LossConfig::validate() const {
    if (!(temperature > 0.0) || !std::isfinite(temperature)) throw Error("temperature must be positive");
}

double infonce_loss(VectorView query, VectorView positive, std::span<const VectorView> negatives,
                    double temperature) {
    const Instance inst = make_instance(query, positive, negatives, temperature);
    // L = logsumexp(z) - z_0 = log1p(sum_{k>0} exp(z_k - z_0)), shifted by the
    // max logit; equal logits cancel exactly and small losses keep precision.
    const double z0 = inst.similarity[0] / temperature;
    const double shift = inst.max_logit - z0;
    const double positive_mass = inst.sum_exp - inst.negative_mass;
    const double loss = shift == 0.0 ? std::log1p(inst.negative_mass / positive_mass)
                                     : shift + std::log(inst.sum_exp);
    return std::max(0.0, loss);
}

Vector infonce_query_gradient(VectorView query, VectorView positive, std::span<const VectorView> negatives,
                              double temperature) {
    return query_gradient(make_instance(query, positive, negatives, temperature), query);
}

std::vector<double> virtual_projection_gradient(VectorView query, VectorView positive,
                                                std::span<const VectorView> negatives, double temperature) {
    const Instance inst = make_instance(query, positive, negatives, temperature);
    const std::size_t dim = query.size();
    std::vector<double> G(dim * dim, 0.0);
    const auto add_outer = [&](const Vector& u, VectorView v) {
        for (std::size_t i = 0; i < dim; ++i)
            for (std::size_t j = 0; j < dim; ++j) G[i * dim + j] += u[i] * v[j];
    };
    add_outer(query_gradient(inst, query), query);
    for (std::size_t k = 0; k < inst.candidates.size(); ++k)
        add_outer(candidate_gradient(inst, query, k), inst.candidates[k]);
    return G;
}

double grad_norm(VectorView query, VectorView positive, std::span<const VectorView> negatives,
                 const LossConfig& config) {
    config.validate();
    const Instance inst = make_instance(query, positive, negatives, config.temperature);
    if (negatives.empty()) return 0.0;  // c_0 = (1 - 1)/tau

    if (config.grad_surface == GradSurface::QueryEmbedding) return l2_norm(query_gradient(inst, query));

    // ||sum_x u_x v_x^T||_F^2 = sum_{x,y} (u_x . u_y)(v_x . v_y)
    std::vector<Vector> u;
    std::vector<VectorView> v;
    u.reserve(inst.candidates.size() + 1);
    v.reserve(inst.candidates.size() + 1);
    u.push_back(query_gradient(inst, query));
    v.push_back(query);
    for (std::size_t k = 0; k < inst.candidates.size(); ++k) {
        u.push_back(candidate_gradient(inst, query, k));
        v.push_back(inst.candidates[k]);
    }
    double sq = 0.0;
    for (std::size_t x = 0; x < u.size(); ++x) {
        sq += dot(u[x], u[x]) * dot(v[x], v[x]);
        for (std::size_t y = x + 1; y < u.size(); ++y) sq += 2.0 * dot(u[x], u[y]) * dot(v[x], v[y]);
    }
    return std::sqrt(std::max(0.0, sq));
}

std::string scoring_config_digest(const SamplerConfig& sampler, const LossConfig& loss) {
    const nlohmann::json canonical = {
        {"format", "gradnormir-scoring-v1"},
        {"dropout_rate", sampler.dropout_rate},
        {"num_positives", sampler.num_positives},
        {"num_negatives", sampler.num_negatives},
        {"candidate_pool_size", sampler.candidate_pool_size},
        {"perturb_mode", to_string(sampler.perturb_mode)},
        {"masks_per_doc", sampler.masks_per_doc},
        {"negatives", to_string(sampler.negatives)},
        {"temperature", loss.temperature},
        {"grad_surface", to_string(loss.grad_surface)},
        {"loss_query", to_string(loss.loss_query)},
    };
    return sha256_hex(canonical.dump()).substr(0, 16);
}

GradNormScore gradnormir_score(const DocumentEmbedding& doc, const CosineIndex& index, Pooling pooling,
                               const SamplerConfig& sampler, const LossConfig& loss, std::uint64_t global_seed) {
    sampler.validate();
    loss.validate();
    GradNormScore out;
    out.doc_id = doc.doc_id;
    out.config_digest = scoring_config_digest(sampler, loss);
    out.rng_seed = derive_seed(global_seed, doc.doc_id, 0);

    const Vector unperturbed = doc.pooled_f64();
    for (std::size_t mask = 0; mask < sampler.masks_per_doc; ++mask) {
        const CandidatePools pools =
            build_candidate_pools(index, doc, pooling, sampler, derive_seed(global_seed, doc.doc_id, mask));
        if (pools.positive_rows.empty()) throw Error("no positives for doc_id '" + doc.doc_id + "'");
        out.perturbation_fell_back = out.perturbation_fell_back || pools.perturbation_fell_back;
        const VectorView query =
            loss.loss_query == LossQuery::Unperturbed ? VectorView(unperturbed) : VectorView(pools.perturbed_query);
        for (std::size_t i = 0; i < pools.positive_rows.size(); ++i) {
            std::vector<VectorView> negatives;
            for (std::size_t r : pools.hard_negative_rows[i]) negatives.push_back(index.row(r));
            out.per_positive_norms.push_back(grad_norm(query, index.row(pools.positive_rows[i]), negatives, loss));
        }
    }
    double sum = 0.0;
    for (double n : out.per_positive_norms) sum += n;
    out.score = sum / static_cast<double>(out.per_positive_norms.size());
    return out;
}

}  // namespace gradnormir
