#include "domalign/image.hpp"

#include <algorithm>
#include <string>

namespace domalign {

Plane ImageRGB::channel(int c) const {
    Plane p(height, width);
    for (std::size_t i = 0; i < pixel_count(); ++i) {
        p.values[i] = data[3 * i + c];
    }
    return p;
}

void ImageRGB::set_channel(int c, const Plane& p) {
    require_same_shape(height, width, p.height, p.width, "set_channel: plane shape differs from image");
    for (std::size_t i = 0; i < pixel_count(); ++i) {
        data[3 * i + c] = p.values[i];
    }
}

void ImageRGB::clamp() {
    for (double& v : data) {
        v = std::clamp(v, 0.0, 1.0);
    }
}

void LabelMap::validate(int class_count) const {
    for (std::uint8_t l : labels) {
        if (l != kIgnoreLabel && l >= class_count) {
            throw FormatError("label " + std::to_string(l) + " out of range for " +
                              std::to_string(class_count) + " classes");
        }
    }
}

}  // namespace domalign
