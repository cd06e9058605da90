#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gradnormir/embedding_io.hpp"
#include "gradnormir/knn_index.hpp"
#include "gradnormir/sampler.hpp"
#include "gradnormir/vector_math.hpp"

namespace gradnormir {

enum class GradSurface { VirtualProjection, QueryEmbedding };
enum class LossQuery { Unperturbed, Perturbed };

std::string to_string(GradSurface s);
GradSurface parse_grad_surface(const std::string& s);
std::string to_string(LossQuery q);
LossQuery parse_loss_query(const std::string& s);

struct LossConfig {
    double temperature = 0.05;
    GradSurface grad_surface = GradSurface::VirtualProjection;
    LossQuery loss_query = LossQuery::Unperturbed;

    void validate() const;
};

using VectorView = std::span<const double>;

/// InfoNCE with cosine similarity: -log softmax of the positive among
/// {positive} U negatives at temperature tau. Log-sum-exp is max-shifted.
double infonce_loss(VectorView query, VectorView positive, std::span<const VectorView> negatives,
                    double temperature);

/// dL/dq, the gradient of infonce_loss with respect to the query vector.
Vector infonce_query_gradient(VectorView query, VectorView positive,
                              std::span<const VectorView> negatives, double temperature);

/// Norm of the InfoNCE gradient on the configured surface.
///
/// query-embedding: ||dL/dq||_2.
/// virtual-projection: Frobenius norm of dL/dW for a linear map W applied to
/// every embedding before the cosine, evaluated at W = I. The D x D matrix
/// G = g_q q^T + sum_k g_k e_k^T is never formed; its norm comes from the
/// Gram identity ||sum_x u_x v_x^T||_F^2 = sum_{x,y} (u_x.u_y)(v_x.v_y).
double grad_norm(VectorView query, VectorView positive, std::span<const VectorView> negatives,
                 const LossConfig& config);

/// Explicit D x D row-major dL/dW at W = I. Test and diagnostic use only.
std::vector<double> virtual_projection_gradient(VectorView query, VectorView positive,
                                                std::span<const VectorView> negatives,
                                                double temperature);

struct GradNormScore {
    std::string doc_id;
    double score = 0.0;
    std::vector<double> per_positive_norms;
    std::string config_digest;
    std::uint64_t rng_seed = 0;
    bool perturbation_fell_back = false;
};

/// Digest over the fields that change a score: sampler and loss settings.
/// Subsampling and the global seed are excluded (they are recorded separately).
std::string scoring_config_digest(const SamplerConfig& sampler, const LossConfig& loss);

/// GradNormIR for one document: mean gradient norm over its self-retrieved
/// positives, each paired with its hard negatives; averaged over
/// masks_per_doc independent masks when that is greater than one.
GradNormScore gradnormir_score(const DocumentEmbedding& doc, const CosineIndex& index,
                               Pooling pooling, const SamplerConfig& sampler,
                               const LossConfig& loss, std::uint64_t global_seed);

}  // namespace gradnormir
