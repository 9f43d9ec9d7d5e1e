#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "oracles.hpp"
#include "tigm/kernels.hpp"
#include "tigm/transform.hpp"

using namespace tigm;

namespace {

struct Fixture {
    std::size_t n;
    TransformOp op;
    Image x, x_ext, mean_ext, var_ext, psi, inv_psi, inv_psi_ext, inv_phi, inv_phi_ext, mu_inv_phi, mu_inv_phi_ext;
};

Fixture make_fixture(std::mt19937_64& rng, std::size_t h, std::size_t w, Boundary b) {
    std::uniform_int_distribution<int> sh(-2, 2);
    std::uniform_real_distribution<double> shear(-0.75, 0.75);
    Fixture f;
    f.n = h * w;
    f.op = make_shear_translate_op({h, w}, {shear(rng), sh(rng), sh(rng)}, b);
    f.x = oracle::random_image(f.n, rng, -1.0, 2.0);
    const Image mu = oracle::random_image(f.n, rng);
    const Image phi = oracle::random_image(f.n, rng, 0.1, 1.0);
    f.psi = oracle::random_image(f.n, rng, 0.1, 1.0);
    f.x_ext = f.x;
    f.x_ext.push_back(0.0);
    f.mean_ext = mu;
    f.mean_ext.push_back(0.0);
    f.var_ext = phi;
    f.var_ext.push_back(0.0);
    for (std::size_t s = 0; s < f.n; ++s) {
        f.inv_phi.push_back(1.0 / phi[s]);
        f.mu_inv_phi.push_back(mu[s] / phi[s]);
        f.inv_psi.push_back(1.0 / f.psi[s]);
    }
    f.inv_psi_ext = f.inv_psi;
    f.inv_psi_ext.push_back(0.0);
    f.inv_phi_ext = f.inv_phi;
    f.inv_phi_ext.push_back(std::numeric_limits<double>::infinity());
    f.mu_inv_phi_ext = f.mu_inv_phi;
    f.mu_inv_phi_ext.push_back(0.0);
    return f;
}

void expect_close(const Image& a, const Image& b) {
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12 * (1.0 + std::abs(a[i])));
}

}  // namespace

TEST(Kernels, ActiveTableIsKnown) {
    const auto& k = kernels::active();
    const std::string name = k.name;
    EXPECT_TRUE(name == "scalar" || name == "avx2") << name;
    if (!kernels::avx2_available()) EXPECT_EQ(name, "scalar");
}

TEST(Kernels, Avx2MatchesScalarReference) {
    if (!kernels::avx2_available()) GTEST_SKIP() << "AVX2 not available on this CPU";
    const auto& ref = kernels::scalar_kernels();
    const auto& fast = *kernels::avx2_kernels();
    std::mt19937_64 rng(21);
    std::uniform_int_distribution<int> dim(1, 13);
    for (std::size_t t = 0; t < 200; ++t) {
        const Boundary b = t % 2 ? Boundary::Wrap : Boundary::ZeroPad;
        auto f = make_fixture(rng, dim(rng), dim(rng), b);
        const auto idx = f.op.gather_index().data();
        const auto inv = f.op.inverse_index().data();

        const double m_ref = ref.mahalanobis(idx, f.x.data(), f.mean_ext.data(), f.var_ext.data(), f.psi.data(), f.n);
        const double m_fast =
            fast.mahalanobis(idx, f.x.data(), f.mean_ext.data(), f.var_ext.data(), f.psi.data(), f.n);
        EXPECT_NEAR(m_ref, m_fast, 1e-12 * (1.0 + std::abs(m_ref)));

        Image z_ref(f.n, 0.5), zz_ref(f.n, 0.25), z_fast = z_ref, zz_fast = zz_ref;
        ref.accumulate_latent(inv, f.x_ext.data(), f.inv_psi_ext.data(), f.inv_phi.data(), f.mu_inv_phi.data(), 0.7,
                              z_ref.data(), zz_ref.data(), f.n);
        fast.accumulate_latent(inv, f.x_ext.data(), f.inv_psi_ext.data(), f.inv_phi.data(), f.mu_inv_phi.data(), 0.7,
                               z_fast.data(), zz_fast.data(), f.n);
        expect_close(z_ref, z_fast);
        expect_close(zz_ref, zz_fast);

        Image r_ref(f.n, 1.0), r_fast = r_ref;
        ref.accumulate_residual(idx, f.x.data(), f.inv_psi.data(), f.inv_phi_ext.data(), f.mu_inv_phi_ext.data(), 0.3,
                                r_ref.data(), f.n);
        fast.accumulate_residual(idx, f.x.data(), f.inv_psi.data(), f.inv_phi_ext.data(), f.mu_inv_phi_ext.data(),
                                 0.3, r_fast.data(), f.n);
        expect_close(r_ref, r_fast);
    }
}

TEST(Kernels, ScalarMahalanobisMatchesDirectSum) {
    std::mt19937_64 rng(22);
    for (std::size_t t = 0; t < 100; ++t) {
        auto f = make_fixture(rng, 1 + t % 6, 1 + t % 5, t % 3 ? Boundary::ZeroPad : Boundary::Wrap);
        const auto src = f.op.source();
        double want = 0.0;
        for (std::size_t p = 0; p < f.n; ++p) {
            const bool hit = src[p] != TransformOp::kVoid;
            const double r = f.x[p] - (hit ? f.mean_ext[src[p]] : 0.0);
            want += r * r / ((hit ? f.var_ext[src[p]] : 0.0) + f.psi[p]);
        }
        const double got = kernels::scalar_kernels().mahalanobis(f.op.gather_index().data(), f.x.data(),
                                                                 f.mean_ext.data(), f.var_ext.data(), f.psi.data(), f.n);
        EXPECT_NEAR(got, want, 1e-12 * (1.0 + want));
    }
}
