#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tigm/em.hpp"
#include "tigm/image.hpp"
#include "tigm/transform.hpp"

namespace tigm {

/// Transformed mixture of Gaussians.
///
/// Cluster c draws a latent image z ~ N(mu[c], diag(phi[c])); a transformation l
/// is drawn with probability rho(l, c); the observation is x ~ N(G_l z, diag(psi)).
/// Probabilities over (l, c) pairs are stored with state index c * L + l.
struct TmgModel {
    ImageShape shape{};
    TransformationSet transforms;
    std::size_t clusters = 1;
    std::vector<double> pi;
    std::vector<Image> mu;
    std::vector<Image> phi;
    std::vector<double> rho;  // [c * L + l]
    Image psi;
    double variance_floor = 1e-9;

    std::size_t transform_count() const noexcept { return transforms.size(); }
    double rho_at(std::size_t l, std::size_t c) const { return rho[c * transforms.size() + l]; }

    /// Throws ContractViolation when sizes or normalizations are inconsistent.
    void validate() const;

    friend bool operator==(const TmgModel&, const TmgModel&) = default;
};

/// Posterior over the lumped discrete state and the latent image (and factors,
/// for TCA/MTCA) given one observation. Per-state entries use index c * L + l.
struct PosteriorSummary {
    std::size_t transforms = 0;
    std::size_t clusters = 0;
    std::vector<double> resp;
    std::vector<double> log_joint;  // log p(x, l, c)
    std::vector<Image> z_mean;
    std::vector<Image> z_var;
    std::vector<std::vector<double>> y_mean;
    std::vector<std::vector<double>> y_cov;  // row-major K x K
    double loglik = 0.0;

    double responsibility(std::size_t l, std::size_t c) const { return resp[c * transforms + l]; }
    /// (l, c) of the most responsible state, ties toward the smallest state index.
    std::pair<std::size_t, std::size_t> map_state() const;
};

/// log N(x; G_l mu_c, G_l Phi_c G_l^T + Psi), O(n).
double tmg_cond_loglik(const TmgModel& model, const Image& x, std::size_t l, std::size_t c);

PosteriorSummary tmg_posterior(const TmgModel& model, const Image& x);

/// log p(x) summed over a batch.
double tmg_loglik(const TmgModel& model, std::span<const Image> data, const ParallelConfig& parallel = {});

StepResult<TmgModel> tmg_em_step(const TmgModel& model, std::span<const Image> data, const EmOptions& options = {});

/// Means from distinct random data items plus small noise, variances from the
/// pooled pixel variance, uniform pi and rho.
TmgModel tmg_init(const TransformationSet& transforms, std::size_t clusters, std::span<const Image> data,
                  std::uint64_t seed);

/// Ancestral sample.
Image sample(const TmgModel& model, std::uint64_t seed);

}  // namespace tigm
