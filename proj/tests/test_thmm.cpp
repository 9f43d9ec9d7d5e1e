#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "properties_thmm.hpp"
#include "tigm/thmm.hpp"
#include "tigm/tmg.hpp"

using namespace tigm;

namespace {

constexpr std::size_t kCases = 100;

ThmmModel cyclic_model(std::size_t side, std::size_t classes, std::uint64_t seed, int threshold = 1) {
    std::mt19937_64 rng(seed);
    props::ThmmSpec spec;
    spec.shape = {side, side};
    spec.grid_v = spec.grid_h = side;
    spec.classes = classes;
    spec.threshold = threshold;
    return props::random_thmm(spec, rng);
}

double log_sum(const std::vector<double>& v) { return oracle::log_sum_exp(v); }

}  // namespace

// ---------------------------------------------------------------- motion bins

TEST(MotionBins, VectorModeOnCyclicGrid) {
    const auto ts = build_translation_set({5, 5}, 5, 5, Boundary::Wrap);
    const MotionBins b(ts, MotionMode::Vector, 1);
    ASSERT_TRUE(b.cyclic());
    EXPECT_EQ(b.bins(), 5u);
    for (std::size_t l = 0; l < ts.size(); ++l) EXPECT_EQ(b.moves(l).size(), 5u);
    EXPECT_EQ(b.bin_of(0, 0), 2u);  // lexicographic (di, dj)
    EXPECT_EQ(b.bin_of(1, 1), b.bins());
    // corner wraps to the opposite edge
    EXPECT_EQ(b.displacement(0, 4), (std::pair{0, -1}));
    EXPECT_EQ(b.displacement(0, 20), (std::pair{-1, 0}));
}

TEST(MotionBins, MagnitudeBinsShareMass) {
    const auto ts = build_translation_set({5, 5}, 5, 5, Boundary::Wrap);
    const MotionBins b(ts, MotionMode::Magnitude, 2);
    ASSERT_EQ(b.bins(), 3u);
    EXPECT_EQ(b.bin_size(0), 1u);
    EXPECT_EQ(b.bin_size(1), 8u);  // unit steps and diagonals round to 1
    EXPECT_EQ(b.bin_size(2), 4u);
    const auto table = uniform_motion_table(b, 1);
    EXPECT_NEAR(table[1], 8.0 / 13.0, 1e-15);
}

TEST(MotionBins, NonCyclicGridDropsMovesOffTheEdge) {
    const auto ts = build_translation_set({3, 3}, 1, 3, Boundary::ZeroPad);
    const MotionBins b(ts, MotionMode::Vector, 1);
    EXPECT_FALSE(b.cyclic());
    EXPECT_EQ(b.bins(), 3u);
    EXPECT_EQ(b.moves(0).size(), 2u);
    EXPECT_EQ(b.moves(1).size(), 3u);
    EXPECT_EQ(b.moves(2).size(), 2u);
}

TEST(MotionBins, RequiresGrid) {
    const auto ts = build_shear_translation_set({4, 4}, std::vector<double>{0.0, 0.25}, 1);
    EXPECT_THROW(MotionBins(ts, MotionMode::Vector, 1), ContractViolation);
    EXPECT_THROW(motion_mode_from_string("diagonal"), ContractViolation);
    EXPECT_EQ(motion_mode_from_string(to_string(MotionMode::Magnitude)), MotionMode::Magnitude);
}

TEST(MotionBins, BoundaryStatesRenormalize) {
    std::mt19937_64 rng(5);
    props::ThmmSpec spec;
    spec.shape = {3, 5};
    spec.grid_v = 1;
    spec.grid_h = 5;
    spec.boundary = Boundary::ZeroPad;
    spec.classes = 1;
    spec.threshold = 2;
    const auto m = props::random_thmm(spec, rng);
    for (std::size_t a = 0; a < m.states(); ++a) {
        double row = 0.0;
        for (std::size_t b = 0; b < m.states(); ++b) row += transition_probability(m, a, b);
        EXPECT_NEAR(row, 1.0, 1e-14);
    }
}

// ---------------------------------------------------------------- model

TEST(ThmmModel, ValidateCatchesInconsistentParameters) {
    auto m = cyclic_model(3, 2, 1);
    EXPECT_NO_THROW(m.validate());
    auto bad = m;
    bad.motion.table.pop_back();
    EXPECT_THROW(bad.validate(), ContractViolation);
    bad = m;
    bad.class_trans[0] += 0.1;
    EXPECT_THROW(bad.validate(), ContractViolation);
    bad = m;
    bad.initial.push_back(0.0);
    EXPECT_THROW(bad.validate(), ContractViolation);
    bad = m;
    bad.transforms = build_shear_translation_set(m.shape, std::vector<double>{0.0}, 1, Boundary::Wrap);
    EXPECT_THROW(bad.validate(), ContractViolation);
}

// ---------------------------------------------------------------- emissions

TEST(ThmmEmission, SingleStateEqualsOneClusterTmg) {
    std::mt19937_64 rng(2);
    const ImageShape shape{2, 3};
    const auto ts = identity_set(shape);
    TmgModel tmg = oracle::random_tmg(ts, 1, rng);
    const auto m = thmm_init_from_tmg(tmg);
    const Image x = oracle::random_image(shape.n(), rng);
    const auto e = emission_loglik(m, x);
    ASSERT_EQ(e.size(), 1u);
    EXPECT_NEAR(e[0], oracle::tmg_loglik(tmg, x), 1e-10);
}

TEST(ThmmEmission, MatchesDenseOracle) {
    const auto m = cyclic_model(2, 2, 3);
    std::mt19937_64 rng(4);
    const Image x = oracle::random_image(4, rng);
    const auto e = emission_loglik(m, x);
    const auto view = props::emission_view(m);
    for (std::size_t s = 0; s < m.states(); ++s)
        EXPECT_NEAR(e[s], oracle::tmg_cond_loglik(view, x, s % 4, s / 4), 1e-8);
}

TEST(ThmmEmission, ConstructedFrameIsArgmax) {
    auto m = cyclic_model(4, 2, 5);
    for (double& v : m.psi) v = 1e-4;
    for (auto& p : m.phi)
        for (double& v : p) v = 1e-4;
    const Image x = tigm::apply(m.transforms[7], m.mu[1]);
    EXPECT_EQ(argmax(emission_loglik(m, x)), 16u + 7u);
}

// ---------------------------------------------------------------- forward-backward

TEST(ForwardBackward, SingleFrameIsStaticPosterior) {
    const auto m = cyclic_model(3, 2, 6);
    std::mt19937_64 rng(7);
    const std::vector<Image> frames{oracle::random_image(9, rng)};
    const auto post = forward_backward(m, frames);
    const auto e = emission_loglik(m, frames[0]);
    std::vector<double> joint(e.size());
    for (std::size_t s = 0; s < e.size(); ++s) joint[s] = std::log(m.initial[s]) + e[s];
    const double z = log_sum(joint);
    EXPECT_NEAR(post.loglik, z, 1e-10);
    EXPECT_NEAR(score_sequence(m, frames), z, 1e-10);
    for (std::size_t s = 0; s < e.size(); ++s) EXPECT_NEAR(post.gamma[0][s], std::exp(joint[s] - z), 1e-12);
    EXPECT_EQ(viterbi(m, frames)[0], argmax(joint));
}

TEST(ForwardBackward, UniformEmissionsGivePriorChainMarginals) {
    auto m = cyclic_model(3, 2, 8);
    for (auto& mu : m.mu) std::fill(mu.begin(), mu.end(), 0.5);
    for (auto& phi : m.phi) std::fill(phi.begin(), phi.end(), 0.2);
    std::fill(m.psi.begin(), m.psi.end(), 0.1);
    std::mt19937_64 rng(9);
    std::vector<Image> frames;
    for (int t = 0; t < 5; ++t) frames.push_back(oracle::random_image(9, rng));
    const auto post = forward_backward(m, frames);
    std::vector<double> prior = m.initial;
    const std::size_t S = m.states();
    for (std::size_t t = 0; t < frames.size(); ++t) {
        for (std::size_t s = 0; s < S; ++s) EXPECT_NEAR(post.gamma[t][s], prior[s], 1e-12);
        std::vector<double> next(S, 0.0);
        for (std::size_t a = 0; a < S; ++a)
            for (std::size_t b = 0; b < S; ++b) next[b] += prior[a] * transition_probability(m, a, b);
        prior = next;
    }
}

TEST(ForwardBackward, MatchesPathEnumeration) {
    const auto r = props::dynamic_oracle(24, 11);
    EXPECT_TRUE(r.gamma.ok(24)) << r.gamma.summary();
    EXPECT_TRUE(r.xi.ok(24)) << r.xi.summary();
    EXPECT_TRUE(r.loglik.ok(24)) << r.loglik.summary();
    EXPECT_TRUE(r.score.ok(24)) << r.score.summary();
    EXPECT_TRUE(r.viterbi.ok(24)) << r.viterbi.summary();
}

TEST(ForwardBackward, SurprisingMovesDoNotOverflowTheBackwardPass) {
    // Every observed move has prior probability 1e-150, so each forward step
    // is renormalized by a tiny constant; statistics must still match the
    // log-domain enumeration.
    auto m = cyclic_model(3, 1, 40);
    const auto b = m.bins();
    for (std::size_t k = 0; k < b.bins(); ++k) m.motion.table[k] = 1e-150;
    m.motion.table[b.bin_of(0, 0)] = 1.0 - 4e-150;
    for (double& v : m.psi) v = 1e-3;
    std::vector<Image> frames;
    for (std::size_t t = 0; t < 5; ++t) frames.push_back(tigm::apply(m.transforms[3 + t % 3], m.mu[0]));
    const auto got = forward_backward(m, frames);
    const auto want = props::enumerate_paths(m, frames);
    EXPECT_NEAR(got.loglik, want.loglik, 1e-8 * std::abs(want.loglik));
    for (std::size_t t = 0; t < 5; ++t)
        for (std::size_t s = 0; s < 9; ++s) EXPECT_NEAR(got.gamma[t][s], want.gamma[t][s], 1e-9);
    for (std::size_t i = 0; i < want.motion_counts.size(); ++i)
        EXPECT_NEAR(got.motion_counts[i], want.motion_counts[i], 1e-9);
    EXPECT_NEAR(got.class_pairs[0], 4.0, 1e-9);
}

TEST(ForwardBackward, ZeroPathProbabilityThrows) {
    auto m = cyclic_model(3, 1, 10, 0);  // threshold 0: the object never moves
    std::fill(m.initial.begin(), m.initial.end(), 0.0);
    m.initial[4] = 1.0;  // centre of the grid: zero shift
    for (double& v : m.psi) v = 1e-6;
    for (double& v : m.phi[0]) v = 1e-6;
    std::fill(m.mu[0].begin(), m.mu[0].end(), 0.0);
    m.mu[0][0] = 1.0;
    Image lit(9, 0.0);
    lit[0] = 1e3;
    const std::vector<Image> start{lit};
    EXPECT_NO_THROW(forward_backward(m, start));
    // Frame 1 is only explained by a different shift, which the dynamics forbid.
    const std::vector<Image> frames{lit, tigm::apply(m.transforms[0], lit)};
    EXPECT_THROW(forward_backward(m, frames), NumericalUnderflow);
    // The log-domain decoder still finds the only feasible path.
    EXPECT_EQ(viterbi(m, frames), (std::vector<std::size_t>{4, 4}));
    EXPECT_THROW(forward_backward(m, std::vector<Image>{}), ContractViolation);
}

TEST(ForwardBackward, ThreadCountDoesNotChangeResults) {
    const auto m = cyclic_model(4, 2, 12, 2);
    const auto seq = sample_sequence(m, 20, 3);
    const auto a = forward_backward(m, seq.frames, true, ParallelConfig{true, 1});
    const auto b = forward_backward(m, seq.frames, true, ParallelConfig{true, 6});
    EXPECT_EQ(a.loglik, b.loglik);
    EXPECT_EQ(a.gamma, b.gamma);
    EXPECT_EQ(a.map_path, b.map_path);
}

// ---------------------------------------------------------------- viterbi

TEST(Viterbi, DeterministicDynamicsFollowTheChain) {
    auto m = cyclic_model(3, 2, 13, 1);
    m.class_trans = {0.0, 1.0, 1.0, 0.0};
    const auto bins = m.bins();
    std::fill(m.motion.table.begin(), m.motion.table.end(), 0.0);
    m.motion.table[bins.bin_of(0, 1)] = 1.0;  // always one column right
    std::mt19937_64 rng(14);
    std::vector<Image> frames;
    for (int t = 0; t < 6; ++t) frames.push_back(oracle::random_image(9, rng));
    const auto path = viterbi(m, frames);
    for (std::size_t t = 1; t < path.size(); ++t) {
        EXPECT_NEAR(transition_probability(m, path[t - 1], path[t]), 1.0, 1e-15);
        EXPECT_NE(path[t] / 9, path[t - 1] / 9);
    }
}

TEST(Viterbi, TiesResolveToSmallestIndex) {
    auto m = cyclic_model(3, 2, 15);
    for (auto& mu : m.mu) std::fill(mu.begin(), mu.end(), 0.5);
    for (auto& phi : m.phi) std::fill(phi.begin(), phi.end(), 0.2);
    std::fill(m.psi.begin(), m.psi.end(), 0.1);
    std::fill(m.initial.begin(), m.initial.end(), 1.0 / 18.0);
    std::fill(m.class_trans.begin(), m.class_trans.end(), 0.5);
    m.motion.table = uniform_motion_table(m.bins(), 1);
    const std::vector<Image> frames(4, Image(9, 0.3));
    EXPECT_EQ(viterbi(m, frames), (std::vector<std::size_t>{0, 0, 0, 0}));
}

// ---------------------------------------------------------------- EM

TEST(ThmmEm, SingleStateMatchesOneClusterTmg) {
    std::mt19937_64 rng(16);
    const ImageShape shape{3, 3};
    const auto ts = identity_set(shape);
    const TmgModel tmg = oracle::random_tmg(ts, 1, rng);
    const auto m = thmm_init_from_tmg(tmg);
    std::vector<Image> frames;
    for (int t = 0; t < 7; ++t) frames.push_back(oracle::random_image(9, rng));
    const auto a = tmg_em_step(tmg, frames);
    const auto b = thmm_em_step(m, std::vector<Sequence>{frames});
    EXPECT_NEAR(a.loglik, b.loglik, 1e-10);
    for (std::size_t p = 0; p < 9; ++p) {
        EXPECT_NEAR(a.model.mu[0][p], b.model.mu[0][p], 1e-12);
        EXPECT_NEAR(a.model.phi[0][p], b.model.phi[0][p], 1e-12);
        EXPECT_NEAR(a.model.psi[p], b.model.psi[p], 1e-12);
    }
}

TEST(ThmmEm, MonotoneOnDataFromKnownModel) {
    const auto truth = cyclic_model(4, 2, 17, 1);
    std::vector<Sequence> data;
    for (int r = 0; r < 3; ++r) data.push_back(sample_sequence(truth, 15, 100 + r).frames);
    auto m = cyclic_model(4, 2, 18, 1);
    double prev = -INFINITY;
    for (int it = 0; it < 30; ++it) {
        auto step = thmm_em_step(m, data);
        if (std::isfinite(prev)) EXPECT_GE(step.loglik, prev - 1e-9 * std::abs(prev)) << "step " << it;
        prev = step.loglik;
        m = std::move(step.model);
        EXPECT_NO_THROW(m.validate());
    }
}

TEST(ThmmEm, PerClassMotionIsLearnedPerRow) {
    auto m = cyclic_model(5, 2, 19, 1);
    m.motion.per_class = true;
    m.motion.table = uniform_motion_table(m.bins(), 2);
    const auto s = m.bins();
    // Class 0 drifts right, class 1 drifts down; classes persist.
    auto truth = m;
    truth.class_trans = {0.95, 0.05, 0.05, 0.95};
    std::fill(truth.motion.table.begin(), truth.motion.table.end(), 0.0);
    truth.motion.table[s.bin_of(0, 1)] = 1.0;
    truth.motion.table[s.bins() + s.bin_of(1, 0)] = 1.0;
    for (double& v : truth.psi) v = 1e-3;
    std::mt19937_64 rng(20);
    for (auto& mu : truth.mu) mu = oracle::random_image(25, rng);
    for (auto& phi : truth.phi) std::fill(phi.begin(), phi.end(), 1e-3);
    std::vector<Sequence> data{sample_sequence(truth, 60, 21).frames};
    m.mu = truth.mu;
    for (int it = 0; it < 10; ++it) m = thmm_em_step(m, data).model;
    EXPECT_GT(m.motion.table[s.bin_of(0, 1)], 0.9);
    EXPECT_GT(m.motion.table[s.bins() + s.bin_of(1, 0)], 0.9);
}

TEST(ThmmEm, ClampedMotionStaysFixed) {
    const auto m = cyclic_model(3, 1, 22);
    const auto seq = sample_sequence(m, 10, 1);
    ThmmEmOptions opt;
    opt.clamp_motion = true;
    const auto next = thmm_em_step(m, std::vector<Sequence>{seq.frames}, opt).model;
    EXPECT_EQ(next.motion.table, m.motion.table);
    opt.clamp_motion = false;
    EXPECT_NE(thmm_em_step(m, std::vector<Sequence>{seq.frames}, opt).model.motion.table, m.motion.table);
}

TEST(ThmmEm, NonCyclicMotionUpdateIsMonotone) {
    std::mt19937_64 rng(23);
    props::ThmmSpec spec;
    spec.shape = {4, 4};
    spec.grid_v = spec.grid_h = 3;
    spec.boundary = Boundary::ZeroPad;
    spec.classes = 1;
    spec.threshold = 2;
    const auto truth = props::random_thmm(spec, rng);
    std::vector<Sequence> data{sample_sequence(truth, 40, 2).frames};
    auto m = truth;
    m.motion.table = uniform_motion_table(m.bins(), 1);
    ThmmEmOptions opt;
    double prev = -INFINITY;
    for (int it = 0; it < 20; ++it) {
        auto step = thmm_em_step(m, data, opt);
        EXPECT_GE(step.loglik, prev - 1e-9 * std::abs(step.loglik));
        prev = step.loglik;
        m = std::move(step.model);
    }
}

TEST(ThmmEm, StarvedClassIsReseeded) {
    const auto m = cyclic_model(3, 2, 24);
    const auto seq = sample_sequence(m, 10, 4);
    ThmmEmOptions opt;
    opt.em.rescue_fraction = 0.6;  // at most one class can hold 60% of the frames
    const auto step = thmm_em_step(m, std::vector<Sequence>{seq.frames}, opt);
    ASSERT_FALSE(step.report.rescued.empty());
    const std::size_t c = step.report.rescued[0];
    EXPECT_DOUBLE_EQ(step.model.class_trans[c * 2], 0.5);
    EXPECT_NO_THROW(step.model.validate());
}

TEST(ThmmEm, FactorizedInitialIsUniformOverPositions) {
    auto m = cyclic_model(3, 2, 25);
    m.joint_initial = false;
    const auto seq = sample_sequence(m, 8, 5);
    const auto next = thmm_em_step(m, std::vector<Sequence>{seq.frames}).model;
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t l = 1; l < 9; ++l) EXPECT_DOUBLE_EQ(next.initial[c * 9 + l], next.initial[c * 9]);
}

TEST(ThmmEm, RejectsEmptyInput) {
    const auto m = cyclic_model(3, 1, 26);
    EXPECT_THROW(thmm_em_step(m, std::vector<Sequence>{}), ContractViolation);
    EXPECT_THROW(thmm_em_step(m, std::vector<Sequence>{Sequence{}}), ContractViolation);
}

TEST(ThmmInit, FromTmgIsStickyAndUniform) {
    std::mt19937_64 rng(27);
    const auto ts = build_translation_set({4, 4}, 4, 4, Boundary::Wrap);
    const TmgModel tmg = oracle::random_tmg(ts, 3, rng);
    ThmmConfig cfg;
    cfg.self_transition = 0.8;
    cfg.align_templates = false;
    const auto m = thmm_init_from_tmg(tmg, cfg);
    EXPECT_EQ(m.mu, tmg.mu);
    EXPECT_DOUBLE_EQ(m.class_trans[0], 0.8);
    EXPECT_DOUBLE_EQ(m.class_trans[1], 0.1);
    EXPECT_DOUBLE_EQ(m.initial[16 + 5], tmg.pi[1] / 16.0);
    const auto b = m.bins();
    for (std::size_t k = 0; k < b.bins(); ++k) EXPECT_NEAR(m.motion.table[k], 1.0 / b.bins(), 1e-15);
    cfg.self_transition = 0.0;
    EXPECT_THROW(thmm_init_from_tmg(tmg, cfg), ContractViolation);
}

TEST(ThmmInit, AlignsShiftedTemplatesToTheMostProbableClass) {
    std::mt19937_64 rng(127);
    const auto ts = build_translation_set({4, 5}, 4, 5, Boundary::Wrap);
    TmgModel tmg = oracle::random_tmg(ts, 3, rng);
    tmg.pi = {0.2, 0.5, 0.3};
    tmg.mu[0] = tigm::apply(ts[3], tmg.mu[1]);
    tmg.phi[0] = tigm::apply(ts[3], tmg.phi[1]);
    std::fill(tmg.rho.begin(), tmg.rho.end(), 1.0 / 20.0);
    const auto m = thmm_init_from_tmg(tmg);
    for (std::size_t p = 0; p < 20; ++p) {
        EXPECT_NEAR(m.mu[0][p], tmg.mu[1][p], 1e-15);
        EXPECT_NEAR(m.phi[0][p], tmg.phi[1][p], 1e-15);
    }
    EXPECT_EQ(m.mu[1], tmg.mu[1]);
    // A cyclic shift of a template is invisible to a single frame.
    const Image x = oracle::random_image(20, rng);
    EXPECT_NEAR(score_sequence(m, std::vector<Image>{x}), tmg_loglik(tmg, std::vector<Image>{x}), 1e-9);
}

// ---------------------------------------------------------------- tasks

TEST(ThmmTasks, SoftDenoiseLimits) {
    auto m = cyclic_model(3, 1, 28);
    const auto seq = sample_sequence(m, 5, 6);
    for (double& v : m.psi) v = 1e-10;
    const auto sharp = denoise(m, seq.frames, DenoiseMode::Soft);
    for (std::size_t t = 0; t < 5; ++t)
        for (std::size_t p = 0; p < 9; ++p) EXPECT_NEAR(sharp[t][p], seq.frames[t][p], 1e-6);

    std::mt19937_64 rng(29);
    const auto ts = identity_set({3, 3});
    TmgModel tmg = oracle::random_tmg(ts, 1, rng);
    for (double& v : tmg.psi) v = 1e10;
    const auto flat = thmm_init_from_tmg(tmg);
    const auto out = denoise(flat, seq.frames, DenoiseMode::Soft);
    for (const auto& f : out)
        for (std::size_t p = 0; p < 9; ++p) EXPECT_NEAR(f[p], tmg.mu[0][p], 1e-6);
}

TEST(ThmmTasks, HardDenoiseEmitsTransformedMeans) {
    const auto m = cyclic_model(3, 2, 30);
    const auto seq = sample_sequence(m, 6, 7);
    const auto path = viterbi(m, seq.frames);
    const auto out = denoise(m, seq.frames, DenoiseMode::Hard);
    for (std::size_t t = 0; t < 6; ++t) EXPECT_EQ(out[t], tigm::apply(m.transforms[path[t] % 9], m.mu[path[t] / 9]));
}

TEST(ThmmTasks, StabilizeWithIdentityOnlyIsSoftDenoise) {
    std::mt19937_64 rng(31);
    const TmgModel tmg = oracle::random_tmg(identity_set({3, 3}), 2, rng);
    const auto m = thmm_init_from_tmg(tmg);
    const auto seq = sample_sequence(m, 5, 8);
    const auto a = stabilize(m, seq.frames), b = denoise(m, seq.frames, DenoiseMode::Soft);
    for (std::size_t t = 0; t < 5; ++t)
        for (std::size_t p = 0; p < 9; ++p) EXPECT_NEAR(a[t][p], b[t][p], 1e-12);
}

TEST(ThmmTasks, StabilizeSingleFrameMatchesStaticPosterior) {
    std::mt19937_64 rng(32);
    const auto ts = build_translation_set({3, 3}, 3, 3, Boundary::Wrap);
    TmgModel tmg = oracle::random_tmg(ts, 2, rng);
    std::fill(tmg.rho.begin(), tmg.rho.end(), 1.0 / 9.0);
    ThmmConfig cfg;
    cfg.align_templates = false;  // keep the latent frame of the TMG
    const auto m = thmm_init_from_tmg(tmg, cfg);
    const Image x = oracle::random_image(9, rng);
    const auto post = tmg_posterior(tmg, x);
    Image expect(9, 0.0);
    for (std::size_t s = 0; s < post.resp.size(); ++s)
        for (std::size_t p = 0; p < 9; ++p) expect[p] += post.resp[s] * post.z_mean[s][p];
    const auto got = stabilize(m, std::vector<Image>{x})[0];
    for (std::size_t p = 0; p < 9; ++p) EXPECT_NEAR(got[p], expect[p], 1e-10);
}

TEST(ThmmTasks, StabilizeRegistersShiftedScene) {
    std::mt19937_64 rng(33);
    const ImageShape shape{6, 6};
    const auto ts = build_translation_set(shape, 6, 6, Boundary::Wrap);
    TmgModel tmg = oracle::random_tmg(ts, 1, rng);
    std::fill(tmg.phi[0].begin(), tmg.phi[0].end(), 1e-3);
    std::fill(tmg.psi.begin(), tmg.psi.end(), 1e-3);
    std::fill(tmg.rho.begin(), tmg.rho.end(), 1.0 / 36.0);
    ThmmConfig cfg;
    cfg.motion.threshold = 2;
    auto m = thmm_init_from_tmg(tmg, cfg);
    const auto seq = sample_sequence(m, 12, 9);
    const auto out = stabilize(m, seq.frames);
    auto pairwise = [](const std::vector<Image>& f) {
        double acc = 0.0;
        for (std::size_t a = 0; a < f.size(); ++a)
            for (std::size_t b = a + 1; b < f.size(); ++b)
                for (std::size_t p = 0; p < f[a].size(); ++p) acc += (f[a][p] - f[b][p]) * (f[a][p] - f[b][p]);
        return acc;
    };
    EXPECT_LE(pairwise(out), 0.1 * pairwise(seq.frames));
}

TEST(ThmmTasks, StaticObjectTracksAtZeroShift) {
    std::mt19937_64 rng(34);
    const ImageShape shape{5, 5};
    const auto ts = build_translation_set(shape, 5, 5, Boundary::Wrap);
    TmgModel tmg = oracle::random_tmg(ts, 1, rng);
    std::fill(tmg.psi.begin(), tmg.psi.end(), 1e-3);
    std::fill(tmg.phi[0].begin(), tmg.phi[0].end(), 1e-3);
    const auto m = thmm_init_from_tmg(tmg);
    const std::vector<Image> frames(8, tmg.mu[0]);
    for (bool vit : {false, true})
        for (const auto& tp : track(m, frames, vit)) {
            EXPECT_EQ(tp.dv, 0);
            EXPECT_EQ(tp.dh, 0);
            EXPECT_GT(tp.log_margin, 0.0);
        }
}

TEST(ThmmTasks, SingleFrameTrackIsStaticArgmax) {
    std::mt19937_64 rng(35);
    const auto ts = build_translation_set({4, 4}, 4, 4, Boundary::Wrap);
    TmgModel tmg = oracle::random_tmg(ts, 2, rng);
    std::fill(tmg.rho.begin(), tmg.rho.end(), 1.0 / 16.0);
    const auto m = thmm_init_from_tmg(tmg);
    const Image x = oracle::random_image(16, rng);
    const auto [l, c] = tmg_posterior(tmg, x).map_state();
    const auto tp = track(m, std::vector<Image>{x})[0];
    EXPECT_EQ(tp.l, l);
    EXPECT_EQ(tp.c, c);
    EXPECT_EQ((std::pair{tp.dv, tp.dh}), ts.grid_shift(l));
}

TEST(ThmmTasks, MatchedModelScoresHigher) {
    int wins = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const auto a = cyclic_model(4, 2, 1000 + trial, 1);
        const auto b = cyclic_model(4, 2, 2000 + trial, 1);
        const auto seq = sample_sequence(a, 10, 3000 + trial);
        wins += score_sequence(a, seq.frames) > score_sequence(b, seq.frames);
    }
    EXPECT_GE(wins, 48);
}

TEST(ThmmTasks, SamplingIsSeeded) {
    const auto m = cyclic_model(3, 2, 36);
    const auto a = sample_sequence(m, 7, 11), b = sample_sequence(m, 7, 11), c = sample_sequence(m, 7, 12);
    EXPECT_EQ(a.frames, b.frames);
    EXPECT_EQ(a.states, b.states);
    EXPECT_NE(a.frames, c.frames);
    for (std::size_t t = 1; t < a.states.size(); ++t)
        EXPECT_GT(transition_probability(m, a.states[t - 1], a.states[t]), 0.0);
}

// ---------------------------------------------------------------- properties

TEST(ThmmProperties, PosteriorNormalization) {
    const auto r = props::posterior_normalization(kCases, 40);
    EXPECT_TRUE(r.ok(kCases)) << r.summary();
}

TEST(ThmmProperties, TransitionSupportWithinThreshold) {
    const auto r = props::transition_support(kCases, 41);
    EXPECT_TRUE(r.ok(kCases)) << r.summary();
}

TEST(ThmmProperties, ViterbiDominatesPointwiseDecoding) {
    const auto r = props::viterbi_dominates_pointwise(kCases, 42);
    EXPECT_TRUE(r.ok(kCases)) << r.summary();
}

TEST(ThmmProperties, EmMonotone) {
    const auto r = props::thmm_em_monotone(kCases, 43);
    EXPECT_TRUE(r.ok(kCases)) << r.summary();
}

TEST(ThmmProperties, WrapShiftEquivariance) {
    const auto r = props::wrap_shift_equivariance(kCases, 44);
    EXPECT_TRUE(r.ok(kCases)) << r.summary();
}
