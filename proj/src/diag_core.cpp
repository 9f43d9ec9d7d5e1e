#include "diag_core.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace tigm::detail {

DiagCore::DiagCore(const TransformationSet& transforms, std::span<const Image> mu, std::span<const Image> phi,
                   const Image& psi)
    : transforms_(&transforms), kernels_(&kernels::active()), clusters_(mu.size()), n_(transforms.shape().n()) {
    require(mu.size() == phi.size() && !mu.empty(), "DiagCore: need matching nonempty mu/phi banks");
    require(psi.size() == n_, "DiagCore: psi length mismatch");
    const std::size_t stride = n_ + 1;
    const double inf = std::numeric_limits<double>::infinity();
    mean_ext_.assign(clusters_ * stride, 0.0);
    var_ext_.assign(clusters_ * stride, 0.0);
    inv_phi_ext_.assign(clusters_ * stride, inf);
    mu_inv_phi_ext_.assign(clusters_ * stride, 0.0);
    for (std::size_t c = 0; c < clusters_; ++c) {
        require(mu[c].size() == n_ && phi[c].size() == n_, "DiagCore: template length mismatch");
        for (std::size_t s = 0; s < n_; ++s) {
            require(phi[c][s] > 0.0, "DiagCore: latent variances must be positive");
            mean_ext_[c * stride + s] = mu[c][s];
            var_ext_[c * stride + s] = phi[c][s];
            inv_phi_ext_[c * stride + s] = 1.0 / phi[c][s];
            mu_inv_phi_ext_[c * stride + s] = mu[c][s] / phi[c][s];
        }
    }
    psi_ = psi;
    inv_psi_ext_.assign(stride, 0.0);
    for (std::size_t p = 0; p < n_; ++p) {
        require(psi[p] > 0.0, "DiagCore: sensor variances must be positive");
        inv_psi_ext_[p] = 1.0 / psi[p];
    }

    const std::size_t L = transforms.size();
    const double log_2pi = std::log(2.0 * std::numbers::pi);
    log_norm_.assign(clusters_ * L, 0.0);
    for (std::size_t c = 0; c < clusters_; ++c) {
        const double* var = cl(var_ext_, c);
        for (std::size_t l = 0; l < L; ++l) {
            const auto idx = transforms[l].gather_index();
            double sum = 0.0;
            for (std::size_t p = 0; p < n_; ++p) sum += log_2pi + std::log(var[idx[p]] + psi_[p]);
            log_norm_[c * L + l] = sum;
        }
    }
}

double DiagCore::cond_loglik(std::span<const double> x, std::size_t l, std::size_t c) const {
    const auto idx = (*transforms_)[l].gather_index();
    const double maha = kernels_->mahalanobis(idx.data(), x.data(), cl(mean_ext_, c), cl(var_ext_, c),
                                              psi_.data(), n_);
    return -0.5 * (log_norm_[c * transforms() + l] + maha);
}

void DiagCore::emission_table(std::span<const double> x, std::span<double> out) const {
    const std::size_t L = transforms();
    for (std::size_t c = 0; c < clusters_; ++c)
        for (std::size_t l = 0; l < L; ++l) out[c * L + l] = cond_loglik(x, l, c);
}

void DiagCore::latent_posterior(std::span<const double> x, std::size_t l, std::size_t c, std::span<double> mean,
                                std::span<double> var) const {
    const auto inv = (*transforms_)[l].inverse_index();
    const double* ip = inv_psi_ext_.data();
    const double* iphi = cl(inv_phi_ext_, c);
    const double* mip = cl(mu_inv_phi_ext_, c);
    for (std::size_t s = 0; s < n_; ++s) {
        const std::size_t o = static_cast<std::size_t>(inv[s]);
        const double xo = o < n_ ? x[o] : 0.0;
        const double v = 1.0 / (iphi[s] + ip[o]);
        var[s] = v;
        mean[s] = v * (mip[s] + xo * ip[o]);
    }
}

void DiagCore::observed_posterior_mean(std::span<const double> x, std::size_t l, std::size_t c,
                                       std::span<double> out) const {
    const auto idx = (*transforms_)[l].gather_index();
    const double* iphi = cl(inv_phi_ext_, c);
    const double* mip = cl(mu_inv_phi_ext_, c);
    for (std::size_t p = 0; p < n_; ++p) {
        const std::size_t g = static_cast<std::size_t>(idx[p]);
        const double v = 1.0 / (iphi[g] + inv_psi_ext_[p]);
        out[p] = v * (mip[g] + x[p] * inv_psi_ext_[p]);
    }
}

DiagCore::Stats::Stats(std::size_t clusters_in, std::size_t transforms_in, std::size_t n_in)
    : clusters(clusters_in), transforms(transforms_in), n(n_in), z(clusters_in * n_in, 0.0),
      zz(clusters_in * n_in, 0.0), resid(n_in, 0.0), mass(clusters_in * transforms_in, 0.0) {}

void DiagCore::Stats::merge(const Stats& other) {
    for (std::size_t i = 0; i < z.size(); ++i) z[i] += other.z[i];
    for (std::size_t i = 0; i < zz.size(); ++i) zz[i] += other.zz[i];
    for (std::size_t i = 0; i < resid.size(); ++i) resid[i] += other.resid[i];
    for (std::size_t i = 0; i < mass.size(); ++i) mass[i] += other.mass[i];
}

double DiagCore::Stats::cluster_mass(std::size_t c) const {
    double m = 0.0;
    for (std::size_t l = 0; l < transforms; ++l) m += mass[c * transforms + l];
    return m;
}

void DiagCore::accumulate(std::span<const double> x, std::span<const double> weights, Stats& stats) const {
    const std::size_t L = transforms();
    std::vector<double> x_ext(x.begin(), x.end());
    x_ext.push_back(0.0);
    for (std::size_t c = 0; c < clusters_; ++c) {
        for (std::size_t l = 0; l < L; ++l) {
            const double w = weights[c * L + l];
            if (w == 0.0) continue;
            const auto& op = (*transforms_)[l];
            stats.mass[c * L + l] += w;
            kernels_->accumulate_latent(op.inverse_index().data(), x_ext.data(), inv_psi_ext_.data(),
                                        cl(inv_phi_ext_, c), cl(mu_inv_phi_ext_, c), w, stats.z.data() + c * n_,
                                        stats.zz.data() + c * n_, n_);
            kernels_->accumulate_residual(op.gather_index().data(), x.data(), inv_psi_ext_.data(),
                                          cl(inv_phi_ext_, c), cl(mu_inv_phi_ext_, c), w, stats.resid.data(), n_);
        }
    }
}

}  // namespace tigm::detail
