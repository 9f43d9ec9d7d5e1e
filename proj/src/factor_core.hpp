#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "tigm/factor_models.hpp"

namespace tigm::detail {

/// Likelihood, posterior and sufficient-statistics machinery for a bank of C
/// factor-analyzer latent models seen through L generalized permutations.
///
/// Everything that does not depend on the observation (per-state diagonal
/// covariance, capacitance matrix I + A^T D^-1 A and its factor, posterior
/// factor covariance) is cached at construction, so each (datum, state) pair
/// costs O(nK).
class FactorCore {
public:
    FactorCore(const MtcaModel& model);

    std::size_t clusters() const noexcept { return clusters_; }
    std::size_t transforms() const noexcept { return L_; }
    std::size_t factors() const noexcept { return K_; }
    bool fast() const noexcept { return fast_; }

    double cond_loglik(std::span<const double> x, std::size_t l, std::size_t c) const;

    /// Log-likelihood plus posterior factor mean for state (l, c).
    double cond_loglik(std::span<const double> x, std::size_t l, std::size_t c, Eigen::VectorXd& y_mean) const;

    const Eigen::MatrixXd& y_cov(std::size_t l, std::size_t c) const { return cache(l, c).s_y; }

    void latent_moments(std::span<const double> x, std::size_t l, std::size_t c, const Eigen::VectorXd& y_mean,
                        Image& z_mean, Image& z_var) const;

    struct Stats {
        std::size_t clusters = 0, transforms = 0, n = 0, factors = 0;
        std::vector<Eigen::MatrixXd> szy;  // n x (K+1): sum w E[z y~^T], y~ = (1, y)
        std::vector<Eigen::VectorXd> szz;  // n:         sum w E[z_s^2]
        std::vector<Eigen::MatrixXd> syy;  // (K+1)^2:   sum w E[y~ y~^T]
        Eigen::VectorXd resid;             // n:         sum w E[(x_p - z_src(p))^2]
        std::vector<double> mass;          // [c * L + l]

        Stats() = default;
        Stats(std::size_t clusters, std::size_t transforms, std::size_t n, std::size_t factors);
        void merge(const Stats& other);
        double cluster_mass(std::size_t c) const;
    };

    /// log_joint[c * L + l] = log p(x | l, c) (no priors); y means are kept for accumulate().
    void state_logliks(std::span<const double> x, std::span<double> log_lik, std::vector<Eigen::VectorXd>& y_means) const;
    void accumulate(std::span<const double> x, std::span<const double> weights,
                    const std::vector<Eigen::VectorXd>& y_means, Stats& stats) const;

private:
    struct StateCache {
        Eigen::VectorXd d_inv;        // observed coords: 1 / (G Phi G^T + Psi)_pp   (exact only)
        Eigen::VectorXd latent_prec;  // latent coords: d_inv of the row observing s, 0 if none
        Eigen::MatrixXd s_y;          // posterior factor covariance (I + A^T D^-1 A)^-1
        double log_norm = 0.0;        // n log 2 pi + log|D| + log|I + A^T D^-1 A|
        Eigen::VectorXd v;            // latent posterior variance given y
        Eigen::VectorXd beta;         // v / phi
        Eigen::VectorXd z_var;        // v + beta^2 (Lambda S_y Lambda^T)_ss
        Eigen::MatrixXd beta_lambda_s; // diag(beta) Lambda S_y
    };

    const StateCache& cache(std::size_t l, std::size_t c) const { return fast_ ? caches_[c] : caches_[c * L_ + l]; }
    void residual_and_project(std::span<const double> x, std::size_t l, std::size_t c, Eigen::VectorXd& resid,
                              Eigen::VectorXd& proj, double& quad) const;

    const MtcaModel* model_;
    std::size_t clusters_, L_, K_, n_;
    bool fast_;
    std::vector<StateCache> caches_;
};

}  // namespace tigm::detail
