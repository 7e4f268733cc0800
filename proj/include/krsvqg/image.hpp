#pragma once

#include <string>
#include <vector>

#include "krsvqg/tensor.hpp"

namespace krsvqg {

// Interleaved HWC raster with values in [0, 1].
struct Image {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<float> values;  // values[(y * width + x) * channels + c]

    float at(int y, int x, int c) const {
        return values[static_cast<std::size_t>((y * width + x) * channels + c)];
    }
    float& at(int y, int x, int c) {
        return values[static_cast<std::size_t>((y * width + x) * channels + c)];
    }
};

// Dispatches on magic bytes: "P6" (binary PPM) or "KIMG" (raw float32).
Image load_image(const std::string& path);

// Raw little-endian float32 container: "KIMG", u32 height, width, channels,
// then height*width*channels floats.
void save_imgf32(const Image& img, const std::string& path);
Image load_imgf32(const std::string& path);

void save_ppm(const Image& img, const std::string& path);
Image load_ppm(const std::string& path);

Image resize_bilinear(const Image& img, int out_height, int out_width);

// Flattens non-overlapping patches into rows: patch (py, px) becomes row
// py * (W/P) + px, with columns ordered (dy, dx, channel).
template <class Scalar>
Matrix<Scalar> patchify(const Image& img, int patch) {
    if (patch <= 0 || img.height % patch != 0 || img.width % patch != 0)
        throw std::invalid_argument("image size must be divisible by patch size");
    const int py_count = img.height / patch;
    const int px_count = img.width / patch;
    Matrix<Scalar> out(py_count * px_count, patch * patch * img.channels);
    for (int py = 0; py < py_count; ++py) {
        for (int px = 0; px < px_count; ++px) {
            Eigen::Index col = 0;
            const Eigen::Index row = py * px_count + px;
            for (int dy = 0; dy < patch; ++dy)
                for (int dx = 0; dx < patch; ++dx)
                    for (int c = 0; c < img.channels; ++c)
                        out(row, col++) =
                            static_cast<Scalar>(img.at(py * patch + dy, px * patch + dx, c));
        }
    }
    return out;
}

}  // namespace krsvqg
