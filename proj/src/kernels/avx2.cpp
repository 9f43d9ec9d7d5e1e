#include "tigm/kernels.hpp"

#include <immintrin.h>

namespace tigm::kernels {
namespace {

inline __m128i load_idx4(const std::int32_t* p) {
    return _mm_loadu_si128(reinterpret_cast<const __m128i*>(p));
}

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d sh = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

double mahalanobis_avx2(const std::int32_t* idx, const double* x, const double* mean_ext,
                        const double* var_ext, const double* psi, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t p = 0;
    for (; p + 8 <= n; p += 8) {
        const __m128i i0 = load_idx4(idx + p);
        const __m128i i1 = load_idx4(idx + p + 4);
        const __m256d d0 = _mm256_sub_pd(_mm256_loadu_pd(x + p), _mm256_i32gather_pd(mean_ext, i0, 8));
        const __m256d d1 = _mm256_sub_pd(_mm256_loadu_pd(x + p + 4), _mm256_i32gather_pd(mean_ext, i1, 8));
        const __m256d v0 = _mm256_add_pd(_mm256_i32gather_pd(var_ext, i0, 8), _mm256_loadu_pd(psi + p));
        const __m256d v1 = _mm256_add_pd(_mm256_i32gather_pd(var_ext, i1, 8), _mm256_loadu_pd(psi + p + 4));
        acc0 = _mm256_add_pd(acc0, _mm256_div_pd(_mm256_mul_pd(d0, d0), v0));
        acc1 = _mm256_add_pd(acc1, _mm256_div_pd(_mm256_mul_pd(d1, d1), v1));
    }
    for (; p + 4 <= n; p += 4) {
        const __m128i i0 = load_idx4(idx + p);
        const __m256d d0 = _mm256_sub_pd(_mm256_loadu_pd(x + p), _mm256_i32gather_pd(mean_ext, i0, 8));
        const __m256d v0 = _mm256_add_pd(_mm256_i32gather_pd(var_ext, i0, 8), _mm256_loadu_pd(psi + p));
        acc0 = _mm256_add_pd(acc0, _mm256_div_pd(_mm256_mul_pd(d0, d0), v0));
    }
    double sum = hsum(_mm256_add_pd(acc0, acc1));
    for (; p < n; ++p) {
        const double d = x[p] - mean_ext[idx[p]];
        sum += d * d / (var_ext[idx[p]] + psi[p]);
    }
    return sum;
}

void accumulate_latent_avx2(const std::int32_t* inv, const double* x_ext, const double* inv_psi_ext,
                            const double* inv_phi, const double* mu_inv_phi, double w, double* acc_z,
                            double* acc_zz, std::size_t n) {
    const __m256d one = _mm256_set1_pd(1.0);
    const __m256d wv = _mm256_set1_pd(w);
    std::size_t s = 0;
    for (; s + 4 <= n; s += 4) {
        const __m128i o = load_idx4(inv + s);
        const __m256d ip = _mm256_i32gather_pd(inv_psi_ext, o, 8);
        const __m256d xo = _mm256_i32gather_pd(x_ext, o, 8);
        const __m256d var = _mm256_div_pd(one, _mm256_add_pd(_mm256_loadu_pd(inv_phi + s), ip));
        const __m256d m = _mm256_mul_pd(var, _mm256_fmadd_pd(xo, ip, _mm256_loadu_pd(mu_inv_phi + s)));
        _mm256_storeu_pd(acc_z + s, _mm256_fmadd_pd(wv, m, _mm256_loadu_pd(acc_z + s)));
        const __m256d second = _mm256_fmadd_pd(m, m, var);
        _mm256_storeu_pd(acc_zz + s, _mm256_fmadd_pd(wv, second, _mm256_loadu_pd(acc_zz + s)));
    }
    for (; s < n; ++s) {
        const std::int32_t o = inv[s];
        const double ip = inv_psi_ext[o];
        const double var = 1.0 / (inv_phi[s] + ip);
        const double m = var * (mu_inv_phi[s] + x_ext[o] * ip);
        acc_z[s] += w * m;
        acc_zz[s] += w * (m * m + var);
    }
}

void accumulate_residual_avx2(const std::int32_t* idx, const double* x, const double* inv_psi,
                              const double* inv_phi_ext, const double* mu_inv_phi_ext, double w, double* acc,
                              std::size_t n) {
    const __m256d one = _mm256_set1_pd(1.0);
    const __m256d wv = _mm256_set1_pd(w);
    std::size_t p = 0;
    for (; p + 4 <= n; p += 4) {
        const __m128i g = load_idx4(idx + p);
        const __m256d ip = _mm256_loadu_pd(inv_psi + p);
        const __m256d xp = _mm256_loadu_pd(x + p);
        const __m256d var = _mm256_div_pd(one, _mm256_add_pd(_mm256_i32gather_pd(inv_phi_ext, g, 8), ip));
        const __m256d m = _mm256_mul_pd(var, _mm256_fmadd_pd(xp, ip, _mm256_i32gather_pd(mu_inv_phi_ext, g, 8)));
        const __m256d d = _mm256_sub_pd(xp, m);
        const __m256d term = _mm256_fmadd_pd(d, d, var);
        _mm256_storeu_pd(acc + p, _mm256_fmadd_pd(wv, term, _mm256_loadu_pd(acc + p)));
    }
    for (; p < n; ++p) {
        const std::int32_t gi = idx[p];
        const double var = 1.0 / (inv_phi_ext[gi] + inv_psi[p]);
        const double m = var * (mu_inv_phi_ext[gi] + x[p] * inv_psi[p]);
        const double d = x[p] - m;
        acc[p] += w * (d * d + var);
    }
}

}  // namespace

const KernelTable* avx2_kernels() {
    static const KernelTable table{"avx2", &mahalanobis_avx2, &accumulate_latent_avx2, &accumulate_residual_avx2};
    return &table;
}

}  // namespace tigm::kernels
