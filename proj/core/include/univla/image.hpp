#pragma once

#include <cstdint>
#include <vector>

namespace univla {

/// Dense RGB image, row-major, channels interleaved, values in [0,1].
struct Image {
    int height = 0;
    int width = 0;
    std::vector<float> data; // height*width*3

    Image() = default;
    Image(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w * 3, 0.0f) {}

    float& at(int y, int x, int c) {
        return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
    float at(int y, int x, int c) const {
        return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }

    bool operator==(const Image& o) const {
        return height == o.height && width == o.width && data == o.data;
    }
};

/// Channel value from a byte; the single conversion used everywhere so that
/// render, store, and load agree bit-for-bit.
inline float channel_from_byte(std::uint8_t b) { return static_cast<float>(b) / 255.0f; }

/// Inverse of channel_from_byte for values produced by it; clips otherwise.
std::uint8_t channel_to_byte(float v);

std::vector<std::uint8_t> image_to_bytes(const Image& img);
Image image_from_bytes(int h, int w, const std::uint8_t* bytes);

} // namespace univla
