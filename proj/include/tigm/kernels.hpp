#pragma once

#include <cstddef>
#include <cstdint>

// Inner loops of the diagonal-Gaussian models. Every kernel walks the pixels
// of one op through its gather tables, so a VOID row (index n) reads the
// sentinel slot that callers place at position n of each *_ext array.
//
// Two implementations exist: a scalar reference and an AVX2/FMA variant that
// processes four pixels per step with hardware gathers. The variant is picked
// once at startup (TIGM_KERNELS=scalar forces the reference).

namespace tigm::kernels {

/// sum_p (x[p] - mean_ext[idx[p]])^2 / (var_ext[idx[p]] + psi[p])
using MahalanobisFn = double (*)(const std::int32_t* idx, const double* x, const double* mean_ext,
                                 const double* var_ext, const double* psi, std::size_t n);

/// Latent-coordinate posterior moments of z under one op, accumulated with
/// weight w. For latent pixel s with observing row o = inv[s]:
///   prec = inv_phi[s] + inv_psi_ext[o],  m = (mu_inv_phi[s] + x_ext[o] * inv_psi_ext[o]) / prec
///   acc_z[s] += w * m,  acc_zz[s] += w * (m * m + 1 / prec)
/// inv_psi_ext[n] must be 0 and x_ext[n] must be 0.
using LatentAccumFn = void (*)(const std::int32_t* inv, const double* x_ext, const double* inv_psi_ext,
                               const double* inv_phi, const double* mu_inv_phi, double w, double* acc_z,
                               double* acc_zz, std::size_t n);

/// Observed-coordinate residual E[(x_p - z_src(p))^2], accumulated with weight w.
/// inv_phi_ext[n] must be +inf and mu_inv_phi_ext[n] must be 0 (VOID rows give x_p^2).
using ResidualAccumFn = void (*)(const std::int32_t* idx, const double* x, const double* inv_psi,
                                 const double* inv_phi_ext, const double* mu_inv_phi_ext, double w,
                                 double* acc, std::size_t n);

struct KernelTable {
    const char* name;
    MahalanobisFn mahalanobis;
    LatentAccumFn accumulate_latent;
    ResidualAccumFn accumulate_residual;
};

const KernelTable& scalar_kernels();

/// nullptr when the AVX2 variant was not compiled in.
const KernelTable* avx2_kernels();

/// Compiled in and supported by the running CPU.
bool avx2_available();

/// Table chosen at first use.
const KernelTable& active();

}  // namespace tigm::kernels
