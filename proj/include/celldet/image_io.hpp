#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include "celldet/grid.hpp"

namespace celldet {

// Raster I/O uses binary Netpbm: PGM (P5) for grayscale at 8 or 16 bit,
// PPM (P6) for color overlays.

/// Reads an 8- or 16-bit PGM; intensities are divided by the file's maxval.
ImageRecord read_image(const std::filesystem::path& path);

/// Writes values clipped to [0,1] as 8-bit (bits=8) or 16-bit (bits=16) PGM.
void write_image(const std::filesystem::path& path, const RealGrid& pixels, int bits = 8);

/// Writes a heatmap after per-image min-max normalization to the 0-255 scale.
void write_heatmap_image(const std::filesystem::path& path, const RealGrid& heatmap);

using Rgb = std::array<std::uint8_t, 3>;

struct ColorImage {
    int height = 0;
    int width = 0;
    std::vector<Rgb> pixels;

    ColorImage(const RealGrid& gray);
    void set(int y, int x, Rgb c);
    /// Square outline of half-size `radius` centered at (x, y); clipped at borders.
    void draw_marker(double x, double y, int radius, Rgb c);
};

void write_color_image(const std::filesystem::path& path, const ColorImage& image);

}  // namespace celldet
