#pragma once

#include <span>
#include <vector>

#include "tigm/image.hpp"
#include "tigm/kernels.hpp"
#include "tigm/transform.hpp"

namespace tigm::detail {

/// Precomputed tables for a bank of diagonal-Gaussian latent templates seen
/// through every op of a transformation set. Shared by TMG and THMM.
///
/// The log-determinant of each (l, c) covariance does not depend on the data,
/// so it is computed once here and the per-datum work reduces to one gathered
/// Mahalanobis sum per state.
class DiagCore {
public:
    DiagCore(const TransformationSet& transforms, std::span<const Image> mu, std::span<const Image> phi,
             const Image& psi);

    std::size_t clusters() const noexcept { return clusters_; }
    std::size_t transforms() const noexcept { return transforms_->size(); }
    std::size_t states() const noexcept { return clusters_ * transforms_->size(); }
    std::size_t n() const noexcept { return n_; }

    double cond_loglik(std::span<const double> x, std::size_t l, std::size_t c) const;
    /// out[c * L + l] = log N(x; G_l mu_c, G_l Phi_c G_l^T + Psi)
    void emission_table(std::span<const double> x, std::span<double> out) const;

    /// Diagonal posterior of the latent image for state (l, c).
    void latent_posterior(std::span<const double> x, std::size_t l, std::size_t c, std::span<double> mean,
                          std::span<double> var) const;
    /// G_l E[z | x, l, c]: posterior mean mapped back to observed coordinates.
    void observed_posterior_mean(std::span<const double> x, std::size_t l, std::size_t c,
                                 std::span<double> out) const;

    /// Expected sufficient statistics for the latent templates and sensor noise.
    struct Stats {
        std::size_t clusters = 0, transforms = 0, n = 0;
        std::vector<double> z;     // [c * n + s]  sum w E[z_s]
        std::vector<double> zz;    // [c * n + s]  sum w E[z_s^2]
        std::vector<double> resid; // [p]          sum w E[(x_p - z_src(p))^2]
        std::vector<double> mass;  // [c * L + l]  sum w

        Stats() = default;
        Stats(std::size_t clusters, std::size_t transforms, std::size_t n);
        void merge(const Stats& other);
        double cluster_mass(std::size_t c) const;
    };

    /// Adds weight[c * L + l] times the posterior statistics of x under each state.
    /// Zero weights are skipped.
    void accumulate(std::span<const double> x, std::span<const double> weights, Stats& stats) const;

private:
    const TransformationSet* transforms_;
    const kernels::KernelTable* kernels_;
    std::size_t clusters_;
    std::size_t n_;
    std::vector<double> mean_ext_;        // [c * (n+1) + s], slot n = 0
    std::vector<double> var_ext_;         // slot n = 0
    std::vector<double> inv_phi_ext_;     // slot n = +inf
    std::vector<double> mu_inv_phi_ext_;  // slot n = 0
    std::vector<double> psi_;
    std::vector<double> inv_psi_ext_;     // slot n = 0
    std::vector<double> log_norm_;        // [c * L + l] sum_p log(2 pi v_p)

    const double* cl(const std::vector<double>& v, std::size_t c) const { return v.data() + c * (n_ + 1); }
};

}  // namespace tigm::detail
