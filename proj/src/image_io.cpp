#include "celldet/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

#include "celldet/errors.hpp"
#include "celldet/io_util.hpp"

namespace celldet {

namespace fs = std::filesystem;

namespace {

class HeaderReader {
public:
    HeaderReader(const std::string& bytes, const fs::path& path) : bytes_(bytes), path_(path) {}

    std::string token() {
        skip_space_and_comments();
        std::string out;
        while (pos_ < bytes_.size() && !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
            out.push_back(bytes_[pos_++]);
        }
        if (out.empty()) fail("truncated header");
        return out;
    }

    int integer() {
        const std::string t = token();
        try {
            return static_cast<int>(parse_int(t, "header field"));
        } catch (const ParseError&) {
            fail("bad header field '" + t + "'");
        }
    }

    // Exactly one whitespace byte separates the header from the raster.
    std::size_t raster_offset() {
        if (pos_ >= bytes_.size()) fail("missing raster data");
        return pos_ + 1;
    }

    [[noreturn]] void fail(const std::string& what) const {
        throw ParseError("'" + path_.string() + "': " + what);
    }

private:
    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            const char c = bytes_[pos_];
            if (c == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else if (std::isspace(static_cast<unsigned char>(c))) {
                ++pos_;
            } else {
                return;
            }
        }
    }

    const std::string& bytes_;
    const fs::path& path_;
    std::size_t pos_ = 0;
};

std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

ImageRecord read_image(const fs::path& path) {
    const std::string bytes = read_text_file(path);
    HeaderReader header(bytes, path);
    if (header.token() != "P5") header.fail("not a binary PGM (P5)");
    const int width = header.integer();
    const int height = header.integer();
    const int maxval = header.integer();
    if (width < 1 || height < 1) header.fail("empty image");
    if (maxval < 1 || maxval > 65535) header.fail("maxval out of range");

    const std::size_t offset = header.raster_offset();
    const std::size_t bytes_per_px = maxval < 256 ? 1 : 2;
    const std::size_t needed = static_cast<std::size_t>(width) * height * bytes_per_px;
    if (bytes.size() < offset + needed) header.fail("truncated raster");

    ImageRecord record;
    record.image_id = path.stem().string();
    record.source_path = path.string();
    record.pixels = RealGrid(height, width);
    const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data() + offset);
    for (std::size_t i = 0; i < record.pixels.size(); ++i) {
        unsigned value = bytes_per_px == 1 ? raw[i] : (unsigned{raw[2 * i]} << 8) | raw[2 * i + 1];
        if (value > static_cast<unsigned>(maxval)) header.fail("sample exceeds maxval");
        record.pixels.values()[i] = static_cast<double>(value) / maxval;
    }
    return record;
}

void write_image(const fs::path& path, const RealGrid& pixels, int bits) {
    if (bits != 8 && bits != 16) throw InvalidArgument("bit depth must be 8 or 16");
    const int maxval = bits == 8 ? 255 : 65535;
    std::string out = "P5\n" + std::to_string(pixels.width()) + " " + std::to_string(pixels.height()) + "\n" +
                      std::to_string(maxval) + "\n";
    for (double v : pixels) {
        const auto q = static_cast<unsigned>(std::lround(std::clamp(v, 0.0, 1.0) * maxval));
        if (bits == 8) {
            out.push_back(static_cast<char>(q));
        } else {
            out.push_back(static_cast<char>(q >> 8));
            out.push_back(static_cast<char>(q & 0xFF));
        }
    }
    write_file_atomic(path, out);
}

void write_heatmap_image(const fs::path& path, const RealGrid& heatmap) {
    RealGrid scaled(heatmap.shape());
    if (!heatmap.empty()) {
        const auto [lo, hi] = std::minmax_element(heatmap.begin(), heatmap.end());
        const double range = *hi - *lo;
        if (range > 0) {
            for (std::size_t i = 0; i < heatmap.size(); ++i) {
                scaled.values()[i] = (heatmap.values()[i] - *lo) / range;
            }
        }
    }
    write_image(path, scaled, 8);
}

ColorImage::ColorImage(const RealGrid& gray)
    : height(gray.height()), width(gray.width()), pixels(gray.size()) {
    for (std::size_t i = 0; i < gray.size(); ++i) {
        const auto b = to_byte(gray.values()[i]);
        pixels[i] = {b, b, b};
    }
}

void ColorImage::set(int y, int x, Rgb c) {
    if (y >= 0 && x >= 0 && y < height && x < width) pixels[static_cast<std::size_t>(y) * width + x] = c;
}

void ColorImage::draw_marker(double x, double y, int radius, Rgb c) {
    const int cx = static_cast<int>(std::lround(x));
    const int cy = static_cast<int>(std::lround(y));
    for (int d = -radius; d <= radius; ++d) {
        set(cy - radius, cx + d, c);
        set(cy + radius, cx + d, c);
        set(cy + d, cx - radius, c);
        set(cy + d, cx + radius, c);
    }
}

void write_color_image(const fs::path& path, const ColorImage& image) {
    std::string out = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
    out.reserve(out.size() + image.pixels.size() * 3);
    for (const auto& px : image.pixels) {
        out.append(reinterpret_cast<const char*>(px.data()), 3);
    }
    write_file_atomic(path, out);
}

}  // namespace celldet
