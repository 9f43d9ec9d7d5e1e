#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "tigm/em.hpp"
#include "tigm/image.hpp"
#include "tigm/tmg.hpp"
#include "tigm/transform.hpp"

namespace tigm {

/// A loading column that is not learned: it is the central-difference tangent
/// of the mean along `direction` (see tangent_columns).
struct FrozenColumn {
    std::size_t column = 0;
    TransformParams direction{};
    friend bool operator==(const FrozenColumn&, const FrozenColumn&) = default;
};

/// Transformed component analysis: a factor analyzer on the latent image,
///   y ~ N(0, I_K), z ~ N(mu + Lambda y, diag(phi)), l ~ rho, x ~ N(G_l z, diag(psi)).
///
/// With fast_likelihood set and every op a full permutation, sensor noise is
/// treated as absorbed into phi (psi = 0): densities are evaluated on G_l^T x
/// in latent coordinates and psi is neither used nor updated. Sets containing
/// ops with VOID rows always take the exact path.
struct TcaModel {
    ImageShape shape{};
    TransformationSet transforms;
    Image mu;
    Eigen::MatrixXd lambda;  // n x K
    Image phi;
    std::vector<double> rho;
    Image psi;
    bool fast_likelihood = false;
    double variance_floor = 1e-9;
    std::vector<FrozenColumn> frozen;

    std::size_t factors() const noexcept { return static_cast<std::size_t>(lambda.cols()); }
    /// Whether the latent-coordinate (psi = 0) path is in effect.
    bool uses_fast_path() const { return fast_likelihood && transforms.all_permutations(); }
    void validate() const;

    friend bool operator==(const TcaModel& a, const TcaModel& b) {
        return a.shape == b.shape && a.transforms == b.transforms && a.mu == b.mu && a.lambda == b.lambda &&
               a.phi == b.phi && a.rho == b.rho && a.psi == b.psi && a.fast_likelihood == b.fast_likelihood &&
               a.variance_floor == b.variance_floor && a.frozen == b.frozen;
    }
};

/// Mixture of transformed component analyzers: a TMG whose clusters are
/// factor analyzers (mu_c, Lambda_c, phi_c) sharing one sensor noise psi.
struct MtcaModel {
    ImageShape shape{};
    TransformationSet transforms;
    std::size_t clusters = 1;
    std::vector<double> pi;
    std::vector<Image> mu;
    std::vector<Eigen::MatrixXd> lambda;
    std::vector<Image> phi;
    std::vector<double> rho;  // [c * L + l]
    Image psi;
    bool fast_likelihood = false;
    double variance_floor = 1e-9;
    std::vector<FrozenColumn> frozen;  // applied to every cluster

    std::size_t factors() const noexcept { return lambda.empty() ? 0 : static_cast<std::size_t>(lambda[0].cols()); }
    bool uses_fast_path() const { return fast_likelihood && transforms.all_permutations(); }
    void validate() const;

    friend bool operator==(const MtcaModel& a, const MtcaModel& b) {
        return a.shape == b.shape && a.transforms == b.transforms && a.clusters == b.clusters && a.pi == b.pi &&
               a.mu == b.mu && a.lambda == b.lambda && a.phi == b.phi && a.rho == b.rho && a.psi == b.psi &&
               a.fast_likelihood == b.fast_likelihood && a.variance_floor == b.variance_floor &&
               a.frozen == b.frozen;
    }
};

/// log p(x | l) for TCA. Exact path uses the Woodbury identity and the matrix
/// determinant lemma on the rank-K update of a diagonal covariance.
double tca_cond_loglik(const TcaModel& model, const Image& x, std::size_t l);
PosteriorSummary tca_posterior(const TcaModel& model, const Image& x);
double tca_loglik(const TcaModel& model, const Image& x);
double tca_loglik(const TcaModel& model, std::span<const Image> data, const ParallelConfig& parallel = {});
StepResult<TcaModel> tca_em_step(const TcaModel& model, std::span<const Image> data, const EmOptions& options = {});

/// Mean from a random datum, Lambda from orthonormalized random columns scaled
/// to the data variance (frozen columns set to tangents of the mean).
TcaModel tca_init(const TransformationSet& transforms, std::size_t factors, std::span<const Image> data,
                  std::uint64_t seed, std::vector<FrozenColumn> frozen = {});

double mtca_cond_loglik(const MtcaModel& model, const Image& x, std::size_t l, std::size_t c);
PosteriorSummary mtca_posterior(const MtcaModel& model, const Image& x);
double mtca_loglik(const MtcaModel& model, std::span<const Image> data, const ParallelConfig& parallel = {});
StepResult<MtcaModel> mtca_em_step(const MtcaModel& model, std::span<const Image> data,
                                   const EmOptions& options = {});
MtcaModel mtca_init(const TransformationSet& transforms, std::size_t clusters, std::size_t factors,
                    std::span<const Image> data, std::uint64_t seed, std::vector<FrozenColumn> frozen = {});

Image sample(const TcaModel& model, std::uint64_t seed);
Image sample(const MtcaModel& model, std::uint64_t seed);

/// (apply(+direction, mu) - apply(-direction, mu)) / 2 for each direction; the
/// ops with geometry +direction and -direction must both be in the set.
Eigen::MatrixXd tangent_columns(const Image& mu, const TransformationSet& transforms,
                                std::span<const TransformParams> directions);

/// argmax_k log p(x | k) + log prior_k, ties toward the lowest class index.
std::size_t bayes_classify(std::span<const TcaModel> models, std::span<const double> priors, const Image& x);
std::size_t bayes_classify_loglik(std::span<const double> class_loglik, std::span<const double> priors);

}  // namespace tigm
