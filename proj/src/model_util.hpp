#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tigm/em.hpp"
#include "tigm/image.hpp"

namespace tigm::detail {

inline void check_distribution(std::span<const double> p, const std::string& what) {
    double sum = 0.0;
    for (double v : p) {
        require(v >= 0.0 && std::isfinite(v), what + " has a negative or nonfinite entry");
        sum += v;
    }
    require(std::abs(sum - 1.0) < 1e-8, what + " does not sum to one");
}

inline void check_positive(std::span<const double> v, const std::string& what) {
    for (double x : v) require(x > 0.0 && std::isfinite(x), what + " must be positive and finite");
}

inline void check_finite(std::span<const double> v, const std::string& what) {
    for (double x : v) require(std::isfinite(x), what + ": nonfinite pixel value");
}

inline void normalize(std::vector<double>& p) {
    const double sum = std::accumulate(p.begin(), p.end(), 0.0);
    for (double& v : p) v /= sum;
}

/// Ties psi to its mean when requested, then applies the variance floor.
inline void finish_psi(std::vector<double>& psi, bool tie, double floor) {
    if (tie) {
        const double mean = std::accumulate(psi.begin(), psi.end(), 0.0) / static_cast<double>(psi.size());
        std::fill(psi.begin(), psi.end(), mean);
    }
    for (double& v : psi) v = std::max(v, floor);
}

/// Pooled pixel variance, or 1 for constant data.
inline double reference_variance(std::span<const Image> data) {
    const double var = global_pixel_variance(data);
    return var > 0.0 ? var : 1.0;
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// `count` indices in [0, size), distinct while possible.
inline std::vector<std::size_t> distinct_picks(std::size_t size, std::size_t count, std::mt19937_64& rng) {
    std::vector<std::size_t> order(size);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::size_t> picks(count);
    for (std::size_t i = 0; i < count; ++i) picks[i] = order[i % size];
    return picks;
}

inline std::size_t draw_index(std::span<const double> probs, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double r = u(rng);
    for (std::size_t i = 0; i < probs.size(); ++i) {
        r -= probs[i];
        if (r < 0.0) return i;
    }
    for (std::size_t i = probs.size(); i-- > 0;)
        if (probs[i] > 0.0) return i;
    return 0;
}

/// Reseeds a starved template from a random datum.
inline void rescue_template(Image& mu, Image& phi, std::span<const Image> data, std::uint64_t seed, std::size_t c) {
    std::mt19937_64 rng(mix_seed(seed, c));
    std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
    mu = data[pick(rng)];
    phi.assign(mu.size(), reference_variance(data));
}

}  // namespace tigm::detail
