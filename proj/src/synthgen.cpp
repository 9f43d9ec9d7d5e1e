#include "tigm/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "model_util.hpp"

namespace tigm {

namespace {

// Bitmaps are '#' for 1 and '.' for 0, row-major. tests/ pins them against
// fixtures/ so a silent edit here fails loudly.
Image from_rows(const std::vector<const char*>& rows) {
    Image img;
    for (const char* r : rows)
        for (const char* p = r; *p; ++p) img.push_back(*p == '#' ? 1.0 : 0.0);
    return img;
}

template <class T>
std::string str(const T& v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

void add_noise(Image& x, double sigma, std::mt19937_64& rng) {
    if (sigma == 0.0) return;
    std::normal_distribution<double> n(0.0, sigma);
    for (double& v : x) v += n(rng);
}

int wrap_index(int v, std::size_t m) {
    const int M = static_cast<int>(m);
    return ((v % M) + M) % M;
}

}  // namespace

// ---------------------------------------------------------------- pac-man

const std::array<Image, 4>& pacman_sprites() {
    static const std::array<Image, 4> sprites{
        from_rows({"#.#", "###", "###"}),
        from_rows({"###", "##.", "###"}),
        from_rows({"###", "###", "#.#"}),
        from_rows({"###", ".##", "###"}),
    };
    return sprites;
}

std::pair<int, int> direction_step(std::size_t direction) {
    switch (direction) {
        case kUp: return {-1, 0};
        case kRight: return {0, 1};
        case kDown: return {1, 0};
        case kLeft: return {0, -1};
        default: throw ContractViolation("pac-man direction must be 0..3");
    }
}

std::size_t left_turn(std::size_t direction) { return (direction + 3) % 4; }

Image render_pacman(const Image& background, std::size_t grid, std::size_t direction, int dv, int dh) {
    require(background.size() == grid * grid, "render_pacman: background size");
    const auto& sprite = pacman_sprites().at(direction);
    Image out = background;
    const int c = static_cast<int>(grid / 2);
    for (int r = 0; r < 3; ++r)
        for (int k = 0; k < 3; ++k) {
            const int i = wrap_index(c + dv + r - 1, grid), j = wrap_index(c + dh + k - 1, grid);
            out[static_cast<std::size_t>(i) * grid + static_cast<std::size_t>(j)] = sprite[static_cast<std::size_t>(r * 3 + k)];
        }
    return out;
}

Dataset gen_pacman(std::uint64_t seed, const PacmanParams& p) {
    require(p.grid >= 3, "gen_pacman: grid must hold the 3x3 sprite");
    require(p.p_stay >= 0.0 && p.p_stay <= 1.0 && p.p_turn >= 0.0 && p.p_turn <= 1.0,
            "gen_pacman: probabilities must lie in [0, 1]");
    require(p.bg_noise >= 0.0 && p.sensor_noise >= 0.0, "gen_pacman: noise levels must be nonnegative");
    std::mt19937_64 rng(seed);
    std::mt19937_64 bg_rng(detail::mix_seed(seed, 0xb9));
    std::mt19937_64 noise_rng(detail::mix_seed(seed, 0x5e));
    std::uniform_real_distribution<double> u(0.0, 1.0);

    const std::size_t n = p.grid * p.grid;
    Dataset d;
    d.shape = {p.grid, p.grid};
    d.truth.background.assign(n, 0.0);
    add_noise(d.truth.background, p.bg_noise, bg_rng);

    const int G = static_cast<int>(p.grid), h = G / 2;
    auto canonical = [&](int v) { return wrap_index(v + h, p.grid) - h; };
    std::uniform_int_distribution<int> pos(-h, G - 1 - h);
    int dv = pos(rng), dh = pos(rng);
    std::size_t dir = std::uniform_int_distribution<std::size_t>(0, 3)(rng);
    for (std::size_t t = 0; t < p.frames; ++t) {
        if (t > 0) {
            if (u(rng) >= p.p_stay) {
                const auto [sv, sh] = direction_step(dir);
                dv = canonical(dv + sv);
                dh = canonical(dh + sh);
            }
            if (u(rng) < p.p_turn) dir = left_turn(dir);
        }
        Image clean = render_pacman(d.truth.background, p.grid, dir, dv, dh);
        Image x = clean;
        add_noise(x, p.sensor_noise, noise_rng);
        d.frames.push_back(std::move(x));
        d.truth.clean.push_back(std::move(clean));
        d.truth.classes.push_back(dir);
        d.truth.shifts.push_back({dv, dh});
    }
    d.truth.params = {{"generator", "pacman"},         {"seed", str(seed)},           {"frames", str(p.frames)},
                      {"grid", str(p.grid)},           {"p_stay", str(p.p_stay)},     {"p_turn", str(p.p_turn)},
                      {"bg_noise", str(p.bg_noise)},   {"sensor_noise", str(p.sensor_noise)}};
    return d;
}

// ---------------------------------------------------------------- shifted template

Dataset gen_shifted_template(std::uint64_t seed, const Image& templ, ImageShape shape, const ShiftedTemplateParams& p) {
    require_length(templ, shape, "gen_shifted_template template");
    require(p.shift_range >= 0, "gen_shifted_template: shift range must be nonnegative");
    require(p.sensor_noise >= 0.0, "gen_shifted_template: noise must be nonnegative");
    std::mt19937_64 rng(seed);
    std::mt19937_64 noise_rng(detail::mix_seed(seed, 0x5e));
    std::uniform_int_distribution<int> box(-p.shift_range, p.shift_range);
    std::uniform_int_distribution<int> step(-1, 1);
    Dataset d;
    d.shape = shape;
    int dv = box(rng), dh = box(rng);
    for (std::size_t t = 0; t < p.frames; ++t) {
        if (t > 0) {
            if (p.random_walk) {
                dv = std::clamp(dv + step(rng), -p.shift_range, p.shift_range);
                dh = std::clamp(dh + step(rng), -p.shift_range, p.shift_range);
            } else {
                dv = box(rng);
                dh = box(rng);
            }
        }
        Image clean = tigm::apply(make_shear_translate_op(shape, {0.0, dv, dh}, p.boundary), templ);
        Image x = clean;
        add_noise(x, p.sensor_noise, noise_rng);
        d.frames.push_back(std::move(x));
        d.truth.clean.push_back(std::move(clean));
        d.truth.classes.push_back(0);
        d.truth.shifts.push_back({dv, dh});
    }
    d.truth.params = {{"generator", "shifted_template"},
                      {"seed", str(seed)},
                      {"frames", str(p.frames)},
                      {"shift_range", str(p.shift_range)},
                      {"sensor_noise", str(p.sensor_noise)},
                      {"random_walk", p.random_walk ? "1" : "0"},
                      {"boundary", p.boundary == Boundary::Wrap ? "wrap" : "zero"}};
    return d;
}

// ---------------------------------------------------------------- glyphs

const std::vector<Image>& default_glyphs() {
    static const std::vector<Image> glyphs{
        from_rows({"..####..", ".#....#.", ".#....#.", ".#....#.", ".#....#.", ".#....#.", ".#....#.", "..####.."}),
        from_rows({"...##...", "..###...", "...##...", "...##...", "...##...", "...##...", "...##...", "..####.."}),
        from_rows({"..####..", ".#....#.", "......#.", ".....#..", "....#...", "...#....", "..#.....", ".######."}),
        from_rows({"..####..", ".#....#.", "......#.", "...###..", "......#.", "......#.", ".#....#.", "..####.."}),
        from_rows({".....#..", "....##..", "...#.#..", "..#..#..", ".#...#..", ".######.", ".....#..", ".....#.."}),
        from_rows({".######.", ".#......", ".#......", ".#####..", "......#.", "......#.", ".#....#.", "..####.."}),
        from_rows({"..####..", ".#......", ".#......", ".#####..", ".#....#.", ".#....#.", ".#....#.", "..####.."}),
        from_rows({".######.", "......#.", ".....#..", ".....#..", "....#...", "....#...", "...#....", "...#...."}),
        from_rows({"..####..", ".#....#.", ".#....#.", "..####..", ".#....#.", ".#....#.", ".#....#.", "..####.."}),
        from_rows({"..####..", ".#....#.", ".#....#.", ".#....#.", "..#####.", "......#.", "......#.", "..####.."}),
    };
    return glyphs;
}

std::vector<Image> glyph_factor_directions(const Image& glyph, ImageShape shape, std::size_t class_index,
                                           std::size_t count) {
    require_length(glyph, shape, "glyph");
    const std::size_t H = shape.height, W = shape.width, n = shape.n();
    std::vector<Image> dirs;
    auto thicken = [&](int di, int dj) {
        Image d(n, 0.0);
        for (std::size_t i = 0; i < H; ++i)
            for (std::size_t j = 0; j < W; ++j) {
                const int si = static_cast<int>(i) - di, sj = static_cast<int>(j) - dj;
                if (si < 0 || sj < 0 || si >= static_cast<int>(H) || sj >= static_cast<int>(W)) continue;
                const double nb = glyph[static_cast<std::size_t>(si) * W + static_cast<std::size_t>(sj)];
                d[i * W + j] = std::max(0.0, nb - glyph[i * W + j]);
            }
        return d;
    };
    if (count > 0) dirs.push_back(thicken(0, 1));
    if (count > 1) dirs.push_back(thicken(1, 0));
    std::mt19937_64 rng(detail::mix_seed(0xf1e1d, class_index));
    std::normal_distribution<double> nd;
    while (dirs.size() < count) {
        Image raw(n), smooth(n, 0.0);
        for (double& v : raw) v = nd(rng);
        double top = 0.0;
        for (std::size_t i = 0; i < H; ++i)
            for (std::size_t j = 0; j < W; ++j) {
                double acc = 0.0;
                for (int a = -1; a <= 1; ++a)
                    for (int b = -1; b <= 1; ++b) {
                        const int si = static_cast<int>(i) + a, sj = static_cast<int>(j) + b;
                        if (si >= 0 && sj >= 0 && si < static_cast<int>(H) && sj < static_cast<int>(W))
                            acc += raw[static_cast<std::size_t>(si) * W + static_cast<std::size_t>(sj)];
                    }
                smooth[i * W + j] = acc;
                top = std::max(top, std::abs(acc));
            }
        for (double& v : smooth) v /= top;
        dirs.push_back(std::move(smooth));
    }
    return dirs;
}

Dataset gen_sheared_glyphs(std::uint64_t seed, const std::vector<Image>& glyphs, const TransformationSet& transforms,
                           const GlyphParams& p) {
    require(!glyphs.empty(), "gen_sheared_glyphs: need at least one glyph");
    require(transforms.size() > 0, "gen_sheared_glyphs: empty transformation set");
    require(p.noise >= 0.0, "gen_sheared_glyphs: noise must be nonnegative");
    const ImageShape shape = transforms.shape();
    std::vector<std::vector<Image>> dirs;
    for (std::size_t c = 0; c < glyphs.size(); ++c) {
        require_length(glyphs[c], shape, "gen_sheared_glyphs prototype");
        dirs.push_back(glyph_factor_directions(glyphs[c], shape, c, p.factors.size()));
    }
    std::mt19937_64 rng(seed);
    std::mt19937_64 noise_rng(detail::mix_seed(seed, 0x5e));
    std::normal_distribution<double> nd;
    std::uniform_int_distribution<std::size_t> pick(0, transforms.size() - 1);
    Dataset d;
    d.shape = shape;
    for (std::size_t k = 0; k < p.per_class; ++k)
        for (std::size_t c = 0; c < glyphs.size(); ++c) {
            Image z = glyphs[c];
            for (std::size_t f = 0; f < p.factors.size(); ++f) {
                const double a = p.factors[f] * nd(rng);
                for (std::size_t s = 0; s < z.size(); ++s) z[s] += a * dirs[c][f][s];
            }
            const std::size_t l = pick(rng);
            Image clean = tigm::apply(transforms[l], z);
            Image x = clean;
            add_noise(x, p.noise, noise_rng);
            d.frames.push_back(std::move(x));
            d.truth.clean.push_back(std::move(clean));
            d.truth.latent.push_back(std::move(z));
            d.truth.classes.push_back(c);
            d.truth.ops.push_back(l);
            const auto params = transforms[l].params();
            d.truth.shifts.push_back({params.dv, params.dh});
        }
    std::string factors;
    for (double f : p.factors) factors += (factors.empty() ? "" : ",") + str(f);
    d.truth.params = {{"generator", "sheared_glyphs"}, {"seed", str(seed)},          {"classes", str(glyphs.size())},
                      {"per_class", str(p.per_class)}, {"transforms", str(transforms.size())},
                      {"factors", factors},            {"noise", str(p.noise)}};
    return d;
}

// ---------------------------------------------------------------- occlusion

Dataset gen_occluded(const Dataset& base, const Bar& bar) {
    Dataset d = base;
    for (auto& f : d.frames) {
        require_length(f, base.shape, "gen_occluded frame");
        for (std::size_t i = 0; i < base.shape.height; ++i)
            for (std::size_t j = 0; j < base.shape.width; ++j)
                if (bar.contains(i, j)) f[base.shape.index(i, j)] = bar.intensity;
    }
    d.truth.params.push_back({"bar", str(bar.top) + "," + str(bar.left) + "," + str(bar.height) + "," + str(bar.width)});
    d.truth.params.push_back({"bar_intensity", str(bar.intensity)});
    return d;
}

std::vector<std::size_t> occlusion_coverage(ImageShape shape, const std::vector<std::pair<int, int>>& shifts,
                                            const Bar& bar) {
    std::vector<std::size_t> seen(shape.n(), 0);
    for (const auto& [dv, dh] : shifts)
        for (std::size_t i = 0; i < shape.height; ++i)
            for (std::size_t j = 0; j < shape.width; ++j) {
                const int r = wrap_index(static_cast<int>(i) + dv, shape.height);
                const int c = wrap_index(static_cast<int>(j) + dh, shape.width);
                if (!bar.contains(static_cast<std::size_t>(r), static_cast<std::size_t>(c))) ++seen[shape.index(i, j)];
            }
    return seen;
}

}  // namespace tigm
