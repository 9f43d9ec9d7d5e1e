#pragma once

// Binary PGM frames and RFC 4180 CSV tables.

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "tigm/image.hpp"

namespace tigm {

/// File-level failure; the message names the offending file.
class MediaError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Frames {
    ImageShape shape{};
    std::vector<Image> frames;
};

/// Intensities are clamped to [0, 1] and quantized to maxval 255 (8-bit) or
/// 65535 (16-bit, big-endian samples).
void write_pgm(const std::filesystem::path& path, const Image& image, ImageShape shape, int bits = 8);
Frames read_pgm(const std::filesystem::path& path);  // one frame

/// Writes frame_000000.pgm, frame_000001.pgm, ... into dir (created if needed).
void write_frames(const std::vector<Image>& frames, ImageShape shape, const std::filesystem::path& dir, int bits = 8);
/// Reads every *.pgm in dir in filename order; all must share one shape.
Frames read_frames(const std::filesystem::path& dir);

/// Tiles images into a grid with a one-pixel separator, rescaled jointly to
/// the observed [min, max] range.
void write_montage(const std::filesystem::path& path, const std::vector<Image>& images, ImageShape shape,
                   std::size_t columns = 0);

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    /// Column index by header name; throws MediaError when absent.
    std::size_t column(const std::string& name) const;
};

std::string to_csv(const CsvTable& table);
CsvTable parse_csv(const std::string& text, const std::string& origin = "<csv>");
void write_csv(const std::filesystem::path& path, const CsvTable& table);
CsvTable read_csv(const std::filesystem::path& path);

}  // namespace tigm
