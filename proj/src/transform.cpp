#include "tigm/transform.hpp"

#include <cmath>
#include <string>

namespace tigm {

const char* to_string(Boundary boundary) {
    return boundary == Boundary::Wrap ? "wrap" : "zero-pad";
}

Boundary boundary_from_string(const std::string& text) {
    if (text == "wrap") return Boundary::Wrap;
    if (text == "zero-pad" || text == "zeropad" || text == "zero") return Boundary::ZeroPad;
    throw ContractViolation("unknown boundary mode '" + text + "'");
}

TransformOp::TransformOp(ImageShape shape, std::vector<std::int32_t> source, TransformParams params)
    : shape_(shape), source_(std::move(source)), params_(params) {
    const std::size_t n = shape_.n();
    require(shape_.height >= 1 && shape_.width >= 1, "TransformOp: empty shape");
    require(source_.size() == n, "TransformOp: source table length must equal pixel count");
    gather_.assign(n, static_cast<std::int32_t>(n));
    inverse_.assign(n, static_cast<std::int32_t>(n));
    for (std::size_t p = 0; p < n; ++p) {
        const std::int32_t s = source_[p];
        if (s == kVoid) {
            ++void_rows_;
            continue;
        }
        require(s >= 0 && static_cast<std::size_t>(s) < n, "TransformOp: source index out of range");
        require(inverse_[s] == static_cast<std::int32_t>(n),
                "TransformOp: two rows share a source pixel; G*Phi*G^T would not be diagonal");
        gather_[p] = s;
        inverse_[s] = static_cast<std::int32_t>(p);
    }
}

TransformationSet::TransformationSet(ImageShape shape, std::vector<TransformOp> ops, Boundary boundary,
                                     std::optional<ShiftGrid> grid)
    : shape_(shape), ops_(std::move(ops)), boundary_(boundary), grid_(grid) {
    require(!ops_.empty(), "TransformationSet: at least one op required");
    for (const auto& op : ops_) require(op.shape() == shape_, "TransformationSet: op shape mismatch");
    if (grid_) require(grid_->size() == ops_.size(), "TransformationSet: grid size must equal op count");
}

std::pair<int, int> TransformationSet::grid_coords(std::size_t l) const {
    require(grid_.has_value(), "TransformationSet: no shift grid");
    require(l < ops_.size(), "TransformationSet: op index out of range");
    return {static_cast<int>(l / grid_->horizontal), static_cast<int>(l % grid_->horizontal)};
}

std::pair<int, int> TransformationSet::grid_shift(std::size_t l) const {
    auto [i, j] = grid_coords(l);
    return {i - grid_->center_v(), j - grid_->center_h()};
}

std::size_t TransformationSet::grid_index(int i, int j) const {
    require(grid_.has_value(), "TransformationSet: no shift grid");
    require(i >= 0 && j >= 0 && static_cast<std::size_t>(i) < grid_->vertical &&
                static_cast<std::size_t>(j) < grid_->horizontal,
            "TransformationSet: grid coordinates out of range");
    return static_cast<std::size_t>(i) * grid_->horizontal + static_cast<std::size_t>(j);
}

bool TransformationSet::cyclic_grid() const noexcept {
    return grid_ && boundary_ == Boundary::Wrap && grid_->vertical == shape_.height &&
           grid_->horizontal == shape_.width;
}

bool TransformationSet::all_permutations() const noexcept {
    for (const auto& op : ops_)
        if (!op.is_permutation()) return false;
    return true;
}

std::optional<std::size_t> TransformationSet::find(const TransformParams& params) const {
    for (std::size_t l = 0; l < ops_.size(); ++l) {
        const auto& p = ops_[l].params();
        if (p.dv == params.dv && p.dh == params.dh && std::abs(p.shear - params.shear) < 1e-12) return l;
    }
    return std::nullopt;
}

namespace {

long wrap_index(long v, long extent) {
    long r = v % extent;
    return r < 0 ? r + extent : r;
}

}  // namespace

TransformOp make_shear_translate_op(ImageShape shape, TransformParams params, Boundary boundary) {
    require(std::isfinite(params.shear), "shear factor must be finite");
    const long h = static_cast<long>(shape.height);
    const long w = static_cast<long>(shape.width);
    const double center = 0.5 * static_cast<double>(h - 1);
    std::vector<std::int32_t> source(shape.n(), TransformOp::kVoid);
    for (long r = 0; r < h; ++r) {
        long src_row = r - params.dv;
        if (boundary == Boundary::Wrap) {
            src_row = wrap_index(src_row, h);
        } else if (src_row < 0 || src_row >= h) {
            continue;
        }
        const long row_shift = std::lround(params.shear * (static_cast<double>(src_row) - center));
        for (long c = 0; c < w; ++c) {
            long src_col = c - params.dh - row_shift;
            if (boundary == Boundary::Wrap) {
                src_col = wrap_index(src_col, w);
            } else if (src_col < 0 || src_col >= w) {
                continue;
            }
            source[r * w + c] = static_cast<std::int32_t>(src_row * w + src_col);
        }
    }
    return TransformOp(shape, std::move(source), params);
}

namespace {

void check_shift_count(std::size_t count, std::size_t extent, Boundary boundary, const char* axis) {
    const std::string name(axis);
    require(count >= 1, name + " shift count must be at least 1");
    const bool full_cover = boundary == Boundary::Wrap && count == extent;
    require(count % 2 == 1 || full_cover,
            name + " shift count must be odd (centered on zero) unless it covers every wrap shift");
    if (boundary == Boundary::Wrap) {
        require(count <= extent, name + " shift count exceeds image extent under wrap (duplicate shifts)");
    } else {
        require((count - 1) / 2 < extent, name + " shift range exceeds image extent (all-VOID ops)");
    }
}

}  // namespace

TransformationSet build_translation_set(ImageShape shape, std::size_t shifts_v, std::size_t shifts_h,
                                        Boundary boundary) {
    require(shape.height >= 1 && shape.width >= 1, "empty image shape");
    check_shift_count(shifts_v, shape.height, boundary, "vertical");
    check_shift_count(shifts_h, shape.width, boundary, "horizontal");
    ShiftGrid grid{shifts_v, shifts_h};
    std::vector<TransformOp> ops;
    ops.reserve(grid.size());
    for (std::size_t i = 0; i < shifts_v; ++i) {
        for (std::size_t j = 0; j < shifts_h; ++j) {
            TransformParams p{0.0, static_cast<int>(i) - grid.center_v(), static_cast<int>(j) - grid.center_h()};
            ops.push_back(make_shear_translate_op(shape, p, boundary));
        }
    }
    return TransformationSet(shape, std::move(ops), boundary, grid);
}

TransformationSet build_shear_translation_set(ImageShape shape, const std::vector<double>& shear_levels,
                                              std::size_t shifts_h, Boundary boundary) {
    require(!shear_levels.empty(), "at least one shear level required");
    check_shift_count(shifts_h, shape.width, boundary, "horizontal");
    std::vector<TransformParams> family;
    const int center = static_cast<int>(shifts_h / 2);
    for (double s : shear_levels) {
        for (std::size_t j = 0; j < shifts_h; ++j) family.push_back({s, 0, static_cast<int>(j) - center});
    }
    return build_shear_translation_set(shape, family, boundary);
}

TransformationSet build_shear_translation_set(ImageShape shape, const std::vector<TransformParams>& family,
                                              Boundary boundary) {
    require(!family.empty(), "empty transformation family");
    bool has_identity = false;
    std::vector<TransformOp> ops;
    ops.reserve(family.size());
    for (const auto& p : family) {
        if (p.shear == 0.0 && p.dv == 0 && p.dh == 0) has_identity = true;
        ops.push_back(make_shear_translate_op(shape, p, boundary));
        require(ops.back().void_rows() < shape.n(), "transformation maps every pixel outside the image");
    }
    require(has_identity, "shear+translation family must include the identity");
    return TransformationSet(shape, std::move(ops), boundary);
}

std::vector<TransformParams> default_shear_family() {
    std::vector<TransformParams> family;
    for (int level = -3; level <= 3; ++level) {
        for (int dh : {-2, 0, 2}) family.push_back({0.25 * level, 0, dh});
    }
    for (int level = -1; level <= 1; ++level) {
        for (int dh : {-1, 1}) family.push_back({0.25 * level, 0, dh});
    }
    family.push_back({0.0, -1, 0});
    family.push_back({0.0, 1, 0});
    return family;
}

TransformationSet identity_set(ImageShape shape) {
    return build_translation_set(shape, 1, 1, Boundary::Wrap);
}

void apply_into(const TransformOp& op, std::span<const double> image, std::span<double> out) {
    const std::size_t n = op.n();
    require(image.size() == n && out.size() == n, "apply: image length does not match op shape");
    const auto src = op.source();
    for (std::size_t p = 0; p < n; ++p) out[p] = src[p] == TransformOp::kVoid ? 0.0 : image[src[p]];
}

Image apply(const TransformOp& op, const Image& image) {
    require_length(image, op.shape(), "apply");
    Image out(op.n());
    apply_into(op, image, out);
    return out;
}

Image apply_adjoint(const TransformOp& op, const Image& image) {
    require_length(image, op.shape(), "apply_adjoint");
    Image out(op.n(), 0.0);
    const auto src = op.source();
    for (std::size_t p = 0; p < op.n(); ++p) {
        if (src[p] != TransformOp::kVoid) out[src[p]] += image[p];
    }
    return out;
}

Image transform_diag_cov(const TransformOp& op, const Image& phi, const Image& psi) {
    require_length(phi, op.shape(), "transform_diag_cov(phi)");
    require_length(psi, op.shape(), "transform_diag_cov(psi)");
    for (double v : phi) require(v > 0.0, "transform_diag_cov: latent variances must be positive");
    for (double v : psi) require(v >= 0.0, "transform_diag_cov: sensor variances must be nonnegative");
    Image out(op.n());
    const auto src = op.source();
    for (std::size_t p = 0; p < op.n(); ++p) {
        out[p] = src[p] == TransformOp::kVoid ? psi[p] : phi[src[p]] + psi[p];
    }
    return out;
}

}  // namespace tigm
