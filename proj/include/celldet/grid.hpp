#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "celldet/errors.hpp"

namespace celldet {

struct Shape {
    int height = 0;
    int width = 0;

    friend bool operator==(const Shape&, const Shape&) = default;
    std::size_t area() const { return static_cast<std::size_t>(height) * width; }
};

std::string to_string(const Shape& s);

/// Dense row-major 2-D grid. Index order is (y, x) = (row, column).
template <class T>
class Grid {
public:
    Grid() = default;
    Grid(int height, int width, T fill = T{})
        : shape_{height, width}, data_(checked_area(height, width), fill) {}
    explicit Grid(Shape s, T fill = T{}) : Grid(s.height, s.width, fill) {}

    int height() const { return shape_.height; }
    int width() const { return shape_.width; }
    Shape shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T& operator()(int y, int x) { return data_[static_cast<std::size_t>(y) * shape_.width + x]; }
    const T& operator()(int y, int x) const {
        return data_[static_cast<std::size_t>(y) * shape_.width + x];
    }

    bool contains(int y, int x) const {
        return y >= 0 && x >= 0 && y < shape_.height && x < shape_.width;
    }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& values() { return data_; }
    const std::vector<T>& values() const { return data_; }

    auto begin() { return data_.begin(); }
    auto end() { return data_.end(); }
    auto begin() const { return data_.begin(); }
    auto end() const { return data_.end(); }

    friend bool operator==(const Grid&, const Grid&) = default;

private:
    static std::size_t checked_area(int h, int w) {
        if (h < 0 || w < 0) throw ShapeError("negative grid dimension");
        return static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    }

    Shape shape_{};
    std::vector<T> data_;
};

using RealGrid = Grid<double>;
using BinaryGrid = Grid<std::uint8_t>;

/// A grayscale image with intensities normalized to [0,1].
struct ImageRecord {
    std::string image_id;
    RealGrid pixels;
    std::string source_path;

    Shape shape() const { return pixels.shape(); }
};

/// Throws ShapeError unless the record is non-empty with every intensity in [0,1].
void validate(const ImageRecord& image);

void require_same_shape(Shape a, Shape b, const char* what);

}  // namespace celldet
