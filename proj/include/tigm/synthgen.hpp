#pragma once

// Seeded generators for synthetic benchmark data. Every generator is a pure
// function of its seed and parameters and returns the noise-free renders and
// latent labels alongside the emitted frames.

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tigm/image.hpp"
#include "tigm/transform.hpp"

namespace tigm {

struct GroundTruth {
    std::vector<Image> clean;                   // pre-noise frames
    std::vector<std::size_t> classes;           // class per frame
    std::vector<std::pair<int, int>> shifts;    // (dv, dh) per frame
    std::vector<std::size_t> ops;               // transformation index per frame, when drawn from a set
    std::vector<Image> latent;                  // untransformed class instance, when it varies per frame
    Image background;                           // static clutter, when present
    std::vector<std::pair<std::string, std::string>> params;
};

struct Dataset {
    ImageShape shape{};
    std::vector<Image> frames;
    GroundTruth truth;
};

// ---------------------------------------------------------------- pac-man

/// Sprite order is the mouth direction: up, right, down, left. A left turn
/// maps class c to (c + 3) % 4.
enum PacmanDirection : std::size_t { kUp = 0, kRight = 1, kDown = 2, kLeft = 3 };

/// 3x3 sprites, all on except the edge-centre pixel facing the mouth direction.
const std::array<Image, 4>& pacman_sprites();

std::pair<int, int> direction_step(std::size_t direction);
std::size_t left_turn(std::size_t direction);

struct PacmanParams {
    std::size_t frames = 200;
    std::size_t grid = 11;
    double p_stay = 0.2;
    double p_turn = 0.75;
    double bg_noise = 0.1;
    double sensor_noise = 0.05;
};

/// Each step first moves one pixel in the previous mouth direction (unless it
/// stays, probability p_stay), then turns left with probability p_turn.
/// Motion wraps at the frame edges. Shifts are relative to the sprite centred
/// in the frame.
Dataset gen_pacman(std::uint64_t seed, const PacmanParams& params = {});

/// Background with sprite `direction` centred at shift (dv, dh), wrapping.
Image render_pacman(const Image& background, std::size_t grid, std::size_t direction, int dv, int dh);

// ---------------------------------------------------------------- shifted template

struct ShiftedTemplateParams {
    std::size_t frames = 100;
    int shift_range = 2;
    double sensor_noise = 0.05;
    bool random_walk = false;
    Boundary boundary = Boundary::Wrap;
};

/// Shifts uniform in [-range, range]^2, or a lazy random walk confined to that
/// box (steps of at most one pixel per axis).
Dataset gen_shifted_template(std::uint64_t seed, const Image& templ, ImageShape shape,
                             const ShiftedTemplateParams& params = {});

// ---------------------------------------------------------------- glyphs

/// Ten 8x8 digit-like prototypes, intensities in {0, 1}.
const std::vector<Image>& default_glyphs();
constexpr ImageShape kGlyphShape{8, 8};

struct GlyphParams {
    std::size_t per_class = 200;
    /// Scale of each within-class deformation factor: horizontal stroke
    /// thickening, vertical thickening, then class-specific smooth fields.
    std::vector<double> factors{0.3, 0.2, 0.15};
    double noise = 0.05;
};

/// Each sample applies an op drawn uniformly from `transforms` to its
/// prototype plus factor perturbations, then adds pixel noise. Samples are
/// interleaved by class.
Dataset gen_sheared_glyphs(std::uint64_t seed, const std::vector<Image>& glyphs, const TransformationSet& transforms,
                           const GlyphParams& params = {});

/// Per-class deformation directions used by gen_sheared_glyphs.
std::vector<Image> glyph_factor_directions(const Image& glyph, ImageShape shape, std::size_t class_index,
                                           std::size_t count);

// ---------------------------------------------------------------- occlusion

struct Bar {
    std::size_t top = 0, left = 0, height = 0, width = 0;
    double intensity = 0.0;

    bool contains(std::size_t row, std::size_t col) const {
        return row >= top && row < top + height && col >= left && col < left + width;
    }
};

/// Overwrites the bar region of every frame; the ground truth of `base`,
/// including its unoccluded clean renders, is carried over.
Dataset gen_occluded(const Dataset& base, const Bar& bar);

/// For every latent pixel, the number of frames in which its wrap-shifted
/// image position lies outside the bar.
std::vector<std::size_t> occlusion_coverage(ImageShape shape, const std::vector<std::pair<int, int>>& shifts,
                                            const Bar& bar);

}  // namespace tigm
