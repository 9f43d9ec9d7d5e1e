#include "tigm/kernels.hpp"

namespace tigm::kernels {
namespace {

double mahalanobis_scalar(const std::int32_t* idx, const double* x, const double* mean_ext,
                          const double* var_ext, const double* psi, std::size_t n) {
    double sum = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
        const double d = x[p] - mean_ext[idx[p]];
        sum += d * d / (var_ext[idx[p]] + psi[p]);
    }
    return sum;
}

void accumulate_latent_scalar(const std::int32_t* inv, const double* x_ext, const double* inv_psi_ext,
                              const double* inv_phi, const double* mu_inv_phi, double w, double* acc_z,
                              double* acc_zz, std::size_t n) {
    for (std::size_t s = 0; s < n; ++s) {
        const std::int32_t o = inv[s];
        const double ip = inv_psi_ext[o];
        const double var = 1.0 / (inv_phi[s] + ip);
        const double m = var * (mu_inv_phi[s] + x_ext[o] * ip);
        acc_z[s] += w * m;
        acc_zz[s] += w * (m * m + var);
    }
}

void accumulate_residual_scalar(const std::int32_t* idx, const double* x, const double* inv_psi,
                                const double* inv_phi_ext, const double* mu_inv_phi_ext, double w,
                                double* acc, std::size_t n) {
    for (std::size_t p = 0; p < n; ++p) {
        const std::int32_t g = idx[p];
        const double var = 1.0 / (inv_phi_ext[g] + inv_psi[p]);
        const double m = var * (mu_inv_phi_ext[g] + x[p] * inv_psi[p]);
        const double d = x[p] - m;
        acc[p] += w * (d * d + var);
    }
}

}  // namespace

const KernelTable& scalar_kernels() {
    static const KernelTable table{"scalar", &mahalanobis_scalar, &accumulate_latent_scalar,
                                   &accumulate_residual_scalar};
    return table;
}

}  // namespace tigm::kernels
