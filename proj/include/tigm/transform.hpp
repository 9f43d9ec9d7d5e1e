#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "tigm/image.hpp"

namespace tigm {

enum class Boundary { Wrap, ZeroPad };

const char* to_string(Boundary boundary);
Boundary boundary_from_string(const std::string& text);

/// Geometric description of a shear+translation op. Shear is the horizontal
/// displacement per row away from the vertical center; rows are sheared first,
/// then the whole image is translated by (dv, dh).
struct TransformParams {
    double shear = 0.0;
    int dv = 0;
    int dh = 0;

    friend bool operator==(const TransformParams&, const TransformParams&) = default;
};

/// A sparse generalized permutation G acting on row-major pixel vectors.
///
/// Row p of G has a single unit entry at column source[p], or no entry when
/// source[p] == kVoid. Sources are distinct, so G * diag(phi) * G^T is diagonal.
/// Two derived index tables are kept for branchless gathers: gather_index maps
/// VOID to n, and inverse_index maps each latent pixel to the output row that
/// copies it (or n when no row does).
class TransformOp {
public:
    static constexpr std::int32_t kVoid = -1;

    TransformOp() = default;
    TransformOp(ImageShape shape, std::vector<std::int32_t> source, TransformParams params = {});

    const ImageShape& shape() const noexcept { return shape_; }
    std::size_t n() const noexcept { return shape_.n(); }
    std::span<const std::int32_t> source() const noexcept { return source_; }
    std::span<const std::int32_t> gather_index() const noexcept { return gather_; }
    std::span<const std::int32_t> inverse_index() const noexcept { return inverse_; }
    const TransformParams& params() const noexcept { return params_; }

    /// True when every row has a source (G is a full permutation matrix).
    bool is_permutation() const noexcept { return void_rows_ == 0; }
    std::size_t void_rows() const noexcept { return void_rows_; }

    friend bool operator==(const TransformOp& a, const TransformOp& b) {
        return a.shape_ == b.shape_ && a.source_ == b.source_ && a.params_ == b.params_;
    }

private:
    ImageShape shape_{};
    std::vector<std::int32_t> source_;
    std::vector<std::int32_t> gather_;
    std::vector<std::int32_t> inverse_;
    TransformParams params_{};
    std::size_t void_rows_ = 0;
};

/// Vertical x horizontal shift grid; op l is shift (i - center_v, j - center_h)
/// with l = i * horizontal + j.
struct ShiftGrid {
    std::size_t vertical = 1;
    std::size_t horizontal = 1;

    std::size_t size() const noexcept { return vertical * horizontal; }
    int center_v() const noexcept { return static_cast<int>(vertical / 2); }
    int center_h() const noexcept { return static_cast<int>(horizontal / 2); }
    friend bool operator==(const ShiftGrid&, const ShiftGrid&) = default;
};

class TransformationSet {
public:
    TransformationSet() = default;
    TransformationSet(ImageShape shape, std::vector<TransformOp> ops, Boundary boundary,
                      std::optional<ShiftGrid> grid = std::nullopt);

    std::size_t size() const noexcept { return ops_.size(); }
    const TransformOp& operator[](std::size_t l) const { return ops_[l]; }
    const std::vector<TransformOp>& ops() const noexcept { return ops_; }
    const ImageShape& shape() const noexcept { return shape_; }
    Boundary boundary() const noexcept { return boundary_; }
    const std::optional<ShiftGrid>& grid() const noexcept { return grid_; }

    /// Grid coordinates (i, j) of op l; requires a grid.
    std::pair<int, int> grid_coords(std::size_t l) const;
    /// Shift (dv, dh) realized by op l; requires a grid.
    std::pair<int, int> grid_shift(std::size_t l) const;
    std::size_t grid_index(int i, int j) const;

    /// True when the grid covers every wrap shift of the image, so grid
    /// displacements are naturally cyclic.
    bool cyclic_grid() const noexcept;
    bool all_permutations() const noexcept;
    /// Index of the first op with the given geometry, if any.
    std::optional<std::size_t> find(const TransformParams& params) const;

    friend bool operator==(const TransformationSet& a, const TransformationSet& b) {
        return a.shape_ == b.shape_ && a.boundary_ == b.boundary_ && a.grid_ == b.grid_ &&
               a.ops_ == b.ops_;
    }

private:
    ImageShape shape_{};
    std::vector<TransformOp> ops_;
    Boundary boundary_ = Boundary::Wrap;
    std::optional<ShiftGrid> grid_;
};

/// Single shear+translate op with nearest-neighbour resampling.
TransformOp make_shear_translate_op(ImageShape shape, TransformParams params, Boundary boundary);

/// All integer shifts on a centered grid of shifts_v x shifts_h positions.
TransformationSet build_translation_set(ImageShape shape, std::size_t shifts_v, std::size_t shifts_h,
                                        Boundary boundary = Boundary::Wrap);

/// Shear levels crossed with centered horizontal shifts.
TransformationSet build_shear_translation_set(ImageShape shape, const std::vector<double>& shear_levels,
                                              std::size_t shifts_h, Boundary boundary = Boundary::ZeroPad);

/// Explicit family of ops; the identity must be present.
TransformationSet build_shear_translation_set(ImageShape shape, const std::vector<TransformParams>& family,
                                              Boundary boundary = Boundary::ZeroPad);

/// The 29-member shear+translation family used for glyph experiments:
/// slopes {-3..3}/4 x horizontal shifts {-2, 0, 2}, plus shifts of +-1 pixel
/// horizontally at slopes {-1/4, 0, 1/4} and +-1 pixel vertically unsheared.
std::vector<TransformParams> default_shear_family();

TransformationSet identity_set(ImageShape shape);

/// out[p] = image[source[p]], or 0 for VOID rows.
Image apply(const TransformOp& op, const Image& image);
void apply_into(const TransformOp& op, std::span<const double> image, std::span<double> out);

/// out = G^T image (scatter).
Image apply_adjoint(const TransformOp& op, const Image& image);

/// diag(G diag(phi) G^T) + psi.
Image transform_diag_cov(const TransformOp& op, const Image& phi, const Image& psi);

}  // namespace tigm
