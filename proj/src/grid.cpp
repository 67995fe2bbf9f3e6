#include "celldet/grid.hpp"

#include <cmath>

namespace celldet {

std::string to_string(const Shape& s) {
    return std::to_string(s.height) + "x" + std::to_string(s.width);
}

void validate(const ImageRecord& image) {
    if (image.pixels.height() < 1 || image.pixels.width() < 1) {
        throw ShapeError("image '" + image.image_id + "' is empty");
    }
    for (double v : image.pixels) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw ShapeError("image '" + image.image_id + "' has intensity outside [0,1]");
        }
    }
}

void require_same_shape(Shape a, Shape b, const char* what) {
    if (!(a == b)) {
        throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
    }
}

}  // namespace celldet
