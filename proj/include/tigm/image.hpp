#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace tigm {

/// Grayscale image stored row-major as doubles; intensities are nominally in [0, 1].
using Image = std::vector<double>;

/// Raised when a caller breaks an operation's preconditions (length mismatch,
/// nonpositive variance, out-of-range index).
class ContractViolation : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when log-domain arithmetic still underflows (every joint term is -inf).
class NumericalUnderflow : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ImageShape {
    std::size_t height = 1;
    std::size_t width = 1;

    constexpr std::size_t n() const noexcept { return height * width; }
    constexpr std::size_t index(std::size_t row, std::size_t col) const noexcept {
        return row * width + col;
    }
    friend constexpr bool operator==(const ImageShape&, const ImageShape&) = default;
};

inline void require(bool ok, const std::string& what) {
    if (!ok) throw ContractViolation(what);
}

inline void require_length(const Image& image, const ImageShape& shape, const char* what) {
    if (image.size() != shape.n()) {
        throw ContractViolation(std::string(what) + ": image length " + std::to_string(image.size()) +
                                " does not match shape (" + std::to_string(shape.n()) + " pixels)");
    }
}

}  // namespace tigm
