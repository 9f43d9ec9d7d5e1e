#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "properties.hpp"
#include "tigm/tmg.hpp"

using namespace tigm;

namespace {

constexpr std::size_t kCases = 100;

std::span<const Image> one(const Image& x) { return {&x, 1}; }

/// 5x5 asymmetric template with values in [0, 1].
Image five_by_five_template() {
    Image t(25, 0.1);
    for (std::size_t r = 0; r < 5; ++r) t[r * 5 + 1] = 0.9;
    t[0 * 5 + 2] = t[0 * 5 + 3] = 0.8;
    t[2 * 5 + 2] = 0.6;
    t[4 * 5 + 4] = 0.4;
    return t;
}

}  // namespace

TEST(TmgCondLoglik, ModeEqualsLogNormalizer) {
    const ImageShape shape{2, 3};
    TmgModel m;
    m.shape = shape;
    m.transforms = identity_set(shape);
    m.pi = {1.0};
    m.rho = {1.0};
    m.mu = {Image{0.1, 0.2, 0.3, 0.4, 0.5, 0.6}};
    m.variance_floor = 1e-6;
    m.phi = {Image(6, m.variance_floor)};
    m.psi = Image{0.1, 0.2, 0.1, 0.3, 0.1, 0.2};
    double want = 0.0;
    for (double p : m.psi) want -= 0.5 * std::log(2.0 * std::numbers::pi * (m.variance_floor + p));
    EXPECT_NEAR(tmg_cond_loglik(m, m.mu[0], 0, 0), want, 1e-12);
    Image off = m.mu[0];
    off[3] += 0.01;
    EXPECT_LT(tmg_cond_loglik(m, off, 0, 0), want);
}

TEST(TmgCondLoglik, MatchesDenseMarginal) {
    std::mt19937_64 rng(31);
    const auto ts = build_translation_set({2, 2}, 2, 1, Boundary::Wrap);
    for (int t = 0; t < 20; ++t) {
        const auto m = oracle::random_tmg(ts, 2, rng);
        const Image x = oracle::random_image(4, rng);
        for (std::size_t c = 0; c < 2; ++c)
            for (std::size_t l = 0; l < ts.size(); ++l)
                EXPECT_NEAR(tmg_cond_loglik(m, x, l, c), oracle::tmg_cond_loglik(m, x, l, c), 1e-10);
    }
}

TEST(TmgCondLoglik, RejectsNonfiniteAndWrongLength) {
    std::mt19937_64 rng(32);
    const auto m = oracle::random_tmg(identity_set({2, 2}), 1, rng);
    EXPECT_THROW(tmg_cond_loglik(m, Image{0, NAN, 0, 0}, 0, 0), ContractViolation);
    EXPECT_THROW(tmg_cond_loglik(m, Image(3), 0, 0), ContractViolation);
}

TEST(TmgPosterior, SingleStateHasUnitResponsibility) {
    std::mt19937_64 rng(33);
    const auto m = oracle::random_tmg(identity_set({2, 2}), 1, rng);
    const auto post = tmg_posterior(m, oracle::random_image(4, rng));
    ASSERT_EQ(post.resp.size(), 1u);
    EXPECT_DOUBLE_EQ(post.resp[0], 1.0);
}

TEST(TmgPosterior, NoiselessTransformedTemplateIsArgmax) {
    std::mt19937_64 rng(34);
    const ImageShape shape{4, 4};
    const auto ts = build_translation_set(shape, 3, 3, Boundary::Wrap);
    auto m = oracle::random_tmg(ts, 3, rng);
    for (std::size_t c = 0; c < 3; ++c) {
        m.mu[c] = oracle::random_image(16, rng);
        m.phi[c].assign(16, 1e-4);
    }
    m.psi.assign(16, 1e-4);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t l = 0; l < ts.size(); ++l) {
            const auto post = tmg_posterior(m, tigm::apply(ts[l], m.mu[c]));
            EXPECT_EQ(post.map_state(), std::make_pair(l, c));
        }
}

TEST(TmgPosterior, ResponsibilitiesMatchGaussHermiteQuadrature) {
    // 4-pixel latent image integrated on a tensor grid: P(l, c | x) from the
    // numerically integrated joint against the closed form.
    std::mt19937_64 rng(35);
    const ImageShape shape{2, 2};
    const auto ts = TransformationSet(
        shape, {make_shear_translate_op(shape, {}, Boundary::Wrap), make_shear_translate_op(shape, {0.0, 1, 1}, Boundary::Wrap)},
        Boundary::Wrap);
    auto m = oracle::random_tmg(ts, 2, rng);
    for (auto& phi : m.phi) phi = oracle::random_image(4, rng, 0.05, 0.2);
    m.psi = oracle::random_image(4, rng, 0.3, 0.6);
    const Image x = oracle::random_image(4, rng);
    const auto [nodes, weights] = oracle::gauss_hermite(24);
    const std::size_t q = nodes.size();

    std::vector<double> joint;
    for (std::size_t c = 0; c < 2; ++c) {
        for (std::size_t l = 0; l < 2; ++l) {
            const auto src = ts[l].source();
            double integral = 0.0;
            std::size_t idx[4];
            for (std::size_t flat = 0; flat < q * q * q * q; ++flat) {
                std::size_t rest = flat;
                double w = 1.0;
                Image z(4);
                for (std::size_t s = 0; s < 4; ++s) {
                    idx[s] = rest % q;
                    rest /= q;
                    w *= weights[idx[s]] / std::sqrt(std::numbers::pi);
                    z[s] = m.mu[c][s] + std::sqrt(2.0 * m.phi[c][s]) * nodes[idx[s]];
                }
                double lik = 1.0;
                for (std::size_t p = 0; p < 4; ++p) {
                    const double r = x[p] - z[src[p]];
                    lik *= std::exp(-0.5 * r * r / m.psi[p]) / std::sqrt(2.0 * std::numbers::pi * m.psi[p]);
                }
                integral += w * lik;
            }
            joint.push_back(integral * m.rho_at(l, c) * m.pi[c]);
        }
    }
    const double total = std::accumulate(joint.begin(), joint.end(), 0.0);
    const auto post = tmg_posterior(m, x);
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t l = 0; l < 2; ++l) EXPECT_NEAR(post.responsibility(l, c), joint[c * 2 + l] / total, 1e-6);
    EXPECT_NEAR(post.loglik, std::log(total), 1e-6);
}

TEST(TmgPosterior, LatentMomentsMatchDenseConditioning) {
    std::mt19937_64 rng(36);
    const ImageShape shape{2, 3};
    const auto ts = TransformationSet(
        shape, {make_shear_translate_op(shape, {}, Boundary::ZeroPad), make_shear_translate_op(shape, {0.0, 1, 0}, Boundary::ZeroPad)},
        Boundary::ZeroPad);
    const auto m = oracle::random_tmg(ts, 2, rng);
    const Image x = oracle::random_image(6, rng);
    const auto post = tmg_posterior(m, x);
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t l = 0; l < 2; ++l) {
            const auto want = oracle::factor_conditional(m.mu[c], Eigen::MatrixXd::Zero(6, 0), m.phi[c], m.psi, ts[l], x);
            for (std::size_t s = 0; s < 6; ++s) {
                EXPECT_NEAR(post.z_mean[c * 2 + l][s], want.z_mean[s], 1e-12);
                EXPECT_NEAR(post.z_var[c * 2 + l][s], want.z_var[s], 1e-12);
                EXPECT_GT(post.z_var[c * 2 + l][s], 0.0);
            }
        }
}

TEST(TmgPosterior, UnderflowIsReported) {
    std::mt19937_64 rng(37);
    auto m = oracle::random_tmg(identity_set({1, 2}), 1, rng);
    m.psi.assign(2, 1e-300);
    m.phi[0].assign(2, 1e-300);
    EXPECT_THROW(tmg_posterior(m, Image{1e200, -1e200}), NumericalUnderflow);
}

TEST(TmgEm, LoglikNeverDecreases) {
    std::mt19937_64 rng(38);
    const auto ts = build_translation_set({4, 4}, 3, 3, Boundary::Wrap);
    const auto truth = oracle::random_tmg(ts, 2, rng);
    std::vector<Image> data;
    for (std::uint64_t s = 0; s < 60; ++s) data.push_back(sample(truth, s));
    auto m = tmg_init(ts, 2, data, 7);
    double last = -INFINITY;
    for (int it = 0; it < 30; ++it) {
        const auto step = tmg_em_step(m, data);
        EXPECT_GE(step.loglik, last - 1e-9 * std::abs(last)) << "iteration " << it;
        last = step.loglik;
        m = step.model;
    }
}

TEST(TmgEm, SingleDatumMeanConvergesToDatum) {
    const Image x{0.3, -0.2, 1.5, 0.7};
    auto m = tmg_init(identity_set({2, 2}), 1, one(x), 3);
    m.mu[0] = Image{0, 0, 0, 0};
    for (int it = 0; it < 200; ++it) m = tmg_em_step(m, one(x)).model;
    for (std::size_t p = 0; p < 4; ++p) EXPECT_NEAR(m.mu[0][p], x[p], 1e-3);
}

TEST(TmgEm, ShiftedTemplateRecovery) {
    const ImageShape shape{5, 5};
    const Image truth = five_by_five_template();
    const auto ts = build_translation_set(shape, 3, 3, Boundary::Wrap);
    const double sigma = 0.05;
    std::mt19937_64 rng(39);
    std::uniform_int_distribution<std::size_t> pick(0, ts.size() - 1);
    std::normal_distribution<double> noise(0.0, sigma);
    std::vector<Image> data;
    for (int d = 0; d < 30; ++d) {
        Image x = tigm::apply(ts[pick(rng)], truth);
        for (double& v : x) v += noise(rng);
        data.push_back(std::move(x));
    }
    auto m = tmg_init(ts, 1, data, 11);
    for (int it = 0; it < 30; ++it) m = tmg_em_step(m, data).model;
    // The template is identifiable only up to a shift in the set.
    double best = INFINITY;
    for (const auto& op : ts.ops()) {
        const Image shifted = tigm::apply(op, truth);
        double mae = 0.0;
        for (std::size_t p = 0; p < 25; ++p) mae += std::abs(m.mu[0][p] - shifted[p]) / 25.0;
        best = std::min(best, mae);
    }
    EXPECT_LE(best, 2.0 * sigma / std::sqrt(30.0));
}

TEST(TmgEm, FreezeRhoAndTiePsi) {
    std::mt19937_64 rng(40);
    const auto ts = build_translation_set({3, 3}, 3, 1, Boundary::Wrap);
    auto m = oracle::random_tmg(ts, 2, rng);
    std::vector<Image> data;
    for (int d = 0; d < 10; ++d) data.push_back(oracle::random_image(9, rng));
    EmOptions opts;
    opts.freeze_rho = true;
    opts.tie_psi = true;
    const auto next = tmg_em_step(m, data, opts).model;
    EXPECT_EQ(next.rho, m.rho);
    for (double p : next.psi) EXPECT_DOUBLE_EQ(p, next.psi[0]);
}

TEST(TmgEm, EmptyClusterIsRescuedAndReported) {
    std::mt19937_64 rng(41);
    const auto ts = identity_set({2, 2});
    auto m = oracle::random_tmg(ts, 2, rng);
    m.mu[1] = Image(4, 1e3);  // unreachable cluster
    m.phi[1].assign(4, 1e-3);
    std::vector<Image> data;
    for (int d = 0; d < 8; ++d) data.push_back(oracle::random_image(4, rng));
    const auto step = tmg_em_step(m, data);
    ASSERT_EQ(step.report.rescued, std::vector<std::size_t>{1});
    EXPECT_NO_THROW(step.model.validate());
    EXPECT_NE(step.report.to_line().find("rescued=1"), std::string::npos);
}

TEST(TmgEm, DeterministicAcrossThreadCounts) {
    std::mt19937_64 rng(42);
    const auto ts = build_translation_set({4, 4}, 3, 3, Boundary::Wrap);
    const auto m = oracle::random_tmg(ts, 3, rng);
    std::vector<Image> data;
    for (int d = 0; d < 70; ++d) data.push_back(oracle::random_image(16, rng));
    EmOptions a, b;
    a.parallel.threads = 1;
    b.parallel.threads = 5;
    const auto ra = tmg_em_step(m, data, a);
    const auto rb = tmg_em_step(m, data, b);
    EXPECT_EQ(ra.loglik, rb.loglik);
    EXPECT_EQ(ra.model, rb.model);
}

TEST(TmgEm, ReportedLoglikIsInputModelLoglik) {
    std::mt19937_64 rng(43);
    const auto ts = build_translation_set({3, 3}, 3, 3, Boundary::ZeroPad);
    const auto m = oracle::random_tmg(ts, 2, rng);
    std::vector<Image> data;
    for (int d = 0; d < 5; ++d) data.push_back(oracle::random_image(9, rng));
    double want = 0.0;
    for (const auto& x : data) want += oracle::tmg_loglik(m, x);
    EXPECT_NEAR(tmg_em_step(m, data).loglik, want, 1e-9);
}

TEST(TmgSample, NearDeterministicLimit) {
    TmgModel m;
    m.shape = {2, 2};
    m.transforms = identity_set(m.shape);
    m.pi = {1.0};
    m.rho = {1.0};
    m.mu = {Image{0.2, 0.4, 0.6, 0.8}};
    const double floor = 1e-8;
    m.phi = {Image(4, floor)};
    m.psi = Image(4, floor);
    const Image x = sample(m, 5);
    for (std::size_t p = 0; p < 4; ++p) EXPECT_LE(std::abs(x[p] - m.mu[0][p]), 5.0 * std::sqrt(floor));
    EXPECT_EQ(sample(m, 5), x);
    EXPECT_NE(sample(m, 6), x);
}

TEST(TmgSample, EmpiricalMeanMatchesAnalyticMean) {
    std::mt19937_64 rng(44);
    const auto ts = build_translation_set({3, 3}, 3, 3, Boundary::ZeroPad);
    const auto m = oracle::random_tmg(ts, 1, rng);
    const std::size_t N = 10000;
    Image mean(9, 0.0), sq(9, 0.0);
    for (std::size_t s = 0; s < N; ++s) {
        const Image x = sample(m, s);
        for (std::size_t p = 0; p < 9; ++p) mean[p] += x[p] / N, sq[p] += x[p] * x[p] / N;
    }
    Image want(9, 0.0);
    for (std::size_t l = 0; l < ts.size(); ++l) {
        const Image g = tigm::apply(ts[l], m.mu[0]);
        for (std::size_t p = 0; p < 9; ++p) want[p] += m.rho[l] * g[p];
    }
    for (std::size_t p = 0; p < 9; ++p) {
        const double se = std::sqrt((sq[p] - mean[p] * mean[p]) / N);
        EXPECT_LE(std::abs(mean[p] - want[p]), 3.0 * se) << "pixel " << p;
    }
}

TEST(TmgProperties, OracleEquivalence) {
    const auto r = props::static_oracle(kCases, 45);
    EXPECT_TRUE(r.tmg.ok(kCases)) << r.tmg.summary();
}

TEST(TmgProperties, ResponsibilitiesNormalized) {
    const auto r = props::responsibility_normalization(kCases, 46);
    EXPECT_TRUE(r.ok(kCases)) << r.summary();
}

TEST(TmgProperties, FitIsTransformationInvariant) {
    const auto r = props::fit_invariance(kCases, 47);
    EXPECT_TRUE(r.ok(kCases)) << r.summary();
}

TEST(TmgProperties, SingleIdentityReducesToMixtureOfGaussians) {
    const auto r = props::reduction_lattice(kCases, 48);
    EXPECT_TRUE(r.tmg_l1_vs_mog.ok(kCases)) << r.tmg_l1_vs_mog.summary();
    EXPECT_TRUE(r.mtca_k0_vs_tmg.ok(kCases)) << r.mtca_k0_vs_tmg.summary();
}
