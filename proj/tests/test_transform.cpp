#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "properties.hpp"
#include "tigm/transform.hpp"

using namespace tigm;

namespace {

constexpr std::size_t kCases = 100;

Image lit(ImageShape shape, std::size_t r, std::size_t c) {
    Image x(shape.n(), 0.0);
    x[shape.index(r, c)] = 1.0;
    return x;
}

const TransformOp& shift_op(const TransformationSet& ts, int dv, int dh) {
    const auto l = ts.find({0.0, dv, dh});
    EXPECT_TRUE(l.has_value());
    return ts[*l];
}

}  // namespace

TEST(TranslationSet, ElevenByElevenHas121Ops) {
    const auto ts = build_translation_set({11, 11}, 11, 11, Boundary::Wrap);
    EXPECT_EQ(ts.size(), 121u);
    ASSERT_TRUE(ts.grid().has_value());
    EXPECT_TRUE(ts.cyclic_grid());
}

TEST(TranslationSet, SingleShiftIsIdentity) {
    const auto ts = build_translation_set({5, 5}, 1, 1);
    ASSERT_EQ(ts.size(), 1u);
    std::mt19937_64 rng(1);
    const Image x = oracle::random_image(25, rng);
    EXPECT_EQ(tigm::apply(ts[0], x), x);
}

TEST(TranslationSet, WrapShiftMovesLitPixelAndInverts) {
    const ImageShape shape{3, 3};
    const auto ts = build_translation_set(shape, 3, 3, Boundary::Wrap);
    const auto& down = shift_op(ts, 1, 0);
    const auto& up = shift_op(ts, -1, 0);
    for (std::size_t r = 0; r < 3; ++r) {
        for (std::size_t c = 0; c < 3; ++c) {
            const Image x = lit(shape, r, c);
            const Image moved = tigm::apply(down, x);
            EXPECT_EQ(moved, lit(shape, (r + 1) % 3, c));
            EXPECT_EQ(tigm::apply(up, moved), x);
        }
    }
}

TEST(TranslationSet, RejectsEvenPartialAndDegenerateRanges) {
    EXPECT_THROW(build_translation_set({5, 5}, 2, 1), ContractViolation);
    EXPECT_THROW(build_translation_set({3, 3}, 7, 1, Boundary::ZeroPad), ContractViolation);
    EXPECT_THROW(build_translation_set({3, 3}, 5, 1, Boundary::Wrap), ContractViolation);
    EXPECT_NO_THROW(build_translation_set({2, 2}, 2, 2, Boundary::Wrap));  // full cyclic cover
}

TEST(Apply, HandEnumeratedTwoByTwo) {
    const ImageShape shape{2, 2};
    const Image x{1, 2, 3, 4};  // a b c d
    const auto wrap = build_translation_set(shape, 1, 2, Boundary::Wrap);
    EXPECT_EQ(tigm::apply(shift_op(wrap, 0, -1), x), (Image{2, 1, 4, 3}));
    const auto right = make_shear_translate_op(shape, {0.0, 0, 1}, Boundary::Wrap);
    EXPECT_EQ(tigm::apply(right, x), (Image{2, 1, 4, 3}));
    const auto pad = make_shear_translate_op(shape, {0.0, 1, 0}, Boundary::ZeroPad);
    EXPECT_EQ(tigm::apply(pad, x), (Image{0, 0, 1, 2}));
    EXPECT_EQ(apply_adjoint(pad, Image{0, 0, 1, 2}), (Image{1, 2, 0, 0}));
}

TEST(Apply, LengthMismatchIsContractViolation) {
    const auto op = make_shear_translate_op({2, 2}, {}, Boundary::Wrap);
    EXPECT_THROW(tigm::apply(op, Image(3)), ContractViolation);
    EXPECT_THROW(apply_adjoint(op, Image(5)), ContractViolation);
}

TEST(Apply, AdjointMatchesDenseTranspose) {
    std::mt19937_64 rng(3);
    const ImageShape shape{4, 5};
    for (const auto& params : default_shear_family()) {
        for (Boundary b : {Boundary::Wrap, Boundary::ZeroPad}) {
            const auto op = make_shear_translate_op(shape, params, b);
            const Image y = oracle::random_image(shape.n(), rng);
            const Eigen::VectorXd expect = oracle::dense(op).transpose() * oracle::vec(y);
            const Image got = apply_adjoint(op, y);
            for (std::size_t p = 0; p < shape.n(); ++p) EXPECT_DOUBLE_EQ(got[p], expect[p]);
        }
    }
}

TEST(DiagCov, HandExamples) {
    const ImageShape shape{2, 2};
    const auto id = make_shear_translate_op(shape, {}, Boundary::Wrap);
    EXPECT_EQ(transform_diag_cov(id, {1, 2, 3, 4}, {0.5, 0.5, 0.5, 0.5}), (Image{1.5, 2.5, 3.5, 4.5}));
    const auto right = make_shear_translate_op(shape, {0.0, 0, 1}, Boundary::Wrap);
    EXPECT_EQ(transform_diag_cov(right, {1, 2, 3, 4}, {0, 0, 0, 0}), (Image{2, 1, 4, 3}));
    const auto pad = make_shear_translate_op(shape, {0.0, 1, 0}, Boundary::ZeroPad);
    const Image got = transform_diag_cov(pad, {1, 2, 3, 4}, {.1, .1, .1, .1});
    const Image want{.1, .1, 1.1, 2.1};
    for (std::size_t p = 0; p < 4; ++p) EXPECT_NEAR(got[p], want[p], 1e-15);
    EXPECT_THROW(transform_diag_cov(id, {1, 0, 1, 1}, {0, 0, 0, 0}), ContractViolation);
}

TEST(ShearSet, DefaultFamilyHas29OpsIncludingIdentity) {
    const ImageShape shape{8, 8};
    const auto ts = build_shear_translation_set(shape, default_shear_family());
    EXPECT_EQ(ts.size(), 29u);
    const auto id = ts.find({});
    ASSERT_TRUE(id.has_value());
    std::mt19937_64 rng(5);
    const Image x = oracle::random_image(64, rng);
    EXPECT_EQ(tigm::apply(ts[*id], x), x);
}

TEST(ShearSet, CrossProductBuilder) {
    const auto ts = build_shear_translation_set({8, 8}, std::vector<double>{-0.25, 0.0, 0.25}, 3);
    EXPECT_EQ(ts.size(), 9u);
    EXPECT_THROW(build_shear_translation_set({8, 8}, std::vector<double>{0.25}, 3), ContractViolation);
}

TEST(ShearSet, VerticalLineBecomesDiagonalAndProjectionIsIdempotent) {
    const ImageShape shape{8, 8};
    Image line(64, 0.0);
    for (std::size_t r = 0; r < 8; ++r) line[shape.index(r, 4)] = 1.0;
    const auto op = make_shear_translate_op(shape, {0.5, 0, 0}, Boundary::ZeroPad);
    const Image y = tigm::apply(op, line);
    // One lit pixel per row, column moving monotonically with the row.
    int last = -1;
    for (std::size_t r = 0; r < 8; ++r) {
        int lit_col = -1, count = 0;
        for (std::size_t c = 0; c < 8; ++c)
            if (y[shape.index(r, c)] == 1.0) lit_col = static_cast<int>(c), ++count;
        ASSERT_EQ(count, 1) << "row " << r;
        EXPECT_GE(lit_col, last);
        last = lit_col;
    }
    EXPECT_GT(last, 4);
    EXPECT_EQ(tigm::apply(op, apply_adjoint(op, y)), y);
}

TEST(TransformProperties, WrapOpsAreBijections) {
    const auto r = props::wrap_bijection(kCases, 11);
    EXPECT_TRUE(r.ok(kCases)) << r.summary();
}

TEST(TransformProperties, DiagCovMatchesDenseProduct) {
    const auto r = props::diag_cov_dense(kCases, 12);
    EXPECT_TRUE(r.ok(kCases)) << r.summary();
}

TEST(TransformProperties, GridIndexingMatchesShift) {
    const auto r = props::grid_indexing(kCases, 13);
    EXPECT_TRUE(r.ok(kCases)) << r.summary();
}

TEST(TransformProperties, ApplyIsOneLookupPerPixelAndLinear) {
    const auto r = props::apply_linear_structure(kCases, 14);
    EXPECT_TRUE(r.ok(kCases)) << r.summary();
}

TEST(TransformOp, RejectsSharedSources) {
    EXPECT_THROW(TransformOp({1, 2}, {0, 0}), ContractViolation);
    EXPECT_THROW(TransformOp({1, 2}, {0, 5}), ContractViolation);
}
