#include "krsvqg/image.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "krsvqg/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "image containers are defined little-endian");

namespace krsvqg {

namespace {

void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t read_u32(std::istream& in, const std::string& path) {
    std::uint32_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
        throw IoError("truncated image file: " + path);
    return v;
}

}  // namespace

void save_imgf32(const Image& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write image file: " + path);
    out.write("KIMG", 4);
    write_u32(out, static_cast<std::uint32_t>(img.height));
    write_u32(out, static_cast<std::uint32_t>(img.width));
    write_u32(out, static_cast<std::uint32_t>(img.channels));
    out.write(reinterpret_cast<const char*>(img.values.data()),
              static_cast<std::streamsize>(img.values.size() * sizeof(float)));
    if (!out) throw IoError("failed writing image file: " + path);
}

Image load_imgf32(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read image file: " + path);
    char magic[4] = {};
    if (!in.read(magic, 4) || std::memcmp(magic, "KIMG", 4) != 0)
        throw IoError("not a raw float image file: " + path);
    Image img;
    img.height = static_cast<int>(read_u32(in, path));
    img.width = static_cast<int>(read_u32(in, path));
    img.channels = static_cast<int>(read_u32(in, path));
    const std::size_t n =
        static_cast<std::size_t>(img.height) * img.width * img.channels;
    img.values.resize(n);
    if (!in.read(reinterpret_cast<char*>(img.values.data()),
                 static_cast<std::streamsize>(n * sizeof(float))))
        throw IoError("truncated image file: " + path);
    return img;
}

void save_ppm(const Image& img, const std::string& path) {
    if (img.channels != 3) throw std::invalid_argument("PPM requires 3 channels");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write image file: " + path);
    out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
    for (float v : img.values) {
        const int q = std::clamp(static_cast<int>(std::lround(v * 255.0f)), 0, 255);
        out.put(static_cast<char>(q));
    }
    if (!out) throw IoError("failed writing image file: " + path);
}

Image load_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read image file: " + path);
    std::string magic;
    in >> magic;
    if (magic != "P6") throw IoError("not a binary PPM file: " + path);

    auto next_int = [&]() {
        // Skips whitespace and '#' comments.
        for (;;) {
            int c = in.peek();
            if (c == '#') {
                std::string line;
                std::getline(in, line);
            } else if (std::isspace(c)) {
                in.get();
            } else {
                break;
            }
        }
        int v = 0;
        if (!(in >> v)) throw IoError("malformed PPM header: " + path);
        return v;
    };
    Image img;
    img.width = next_int();
    img.height = next_int();
    const int maxval = next_int();
    if (maxval != 255) throw IoError("only maxval 255 PPM supported: " + path);
    in.get();  // single whitespace after header
    img.channels = 3;
    const std::size_t n = static_cast<std::size_t>(img.height) * img.width * 3;
    std::vector<unsigned char> raw(n);
    if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n)))
        throw IoError("truncated PPM file: " + path);
    img.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) img.values[i] = static_cast<float>(raw[i]) / 255.0f;
    return img;
}

Image load_image(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read image file: " + path);
    char magic[4] = {};
    in.read(magic, 4);
    in.close();
    if (std::memcmp(magic, "KIMG", 4) == 0) return load_imgf32(path);
    if (magic[0] == 'P' && magic[1] == '6') return load_ppm(path);
    throw IoError("unrecognized image format: " + path);
}

Image resize_bilinear(const Image& img, int out_height, int out_width) {
    if (out_height <= 0 || out_width <= 0)
        throw std::invalid_argument("resize target must be positive");
    if (img.height == out_height && img.width == out_width) return img;

    Image out;
    out.height = out_height;
    out.width = out_width;
    out.channels = img.channels;
    out.values.resize(static_cast<std::size_t>(out_height) * out_width * img.channels);

    const float sy = static_cast<float>(img.height) / static_cast<float>(out_height);
    const float sx = static_cast<float>(img.width) / static_cast<float>(out_width);
    for (int y = 0; y < out_height; ++y) {
        const float fy = (static_cast<float>(y) + 0.5f) * sy - 0.5f;
        const int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, img.height - 1);
        const int y1 = std::min(y0 + 1, img.height - 1);
        const float wy = std::clamp(fy - static_cast<float>(y0), 0.0f, 1.0f);
        for (int x = 0; x < out_width; ++x) {
            const float fx = (static_cast<float>(x) + 0.5f) * sx - 0.5f;
            const int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, img.width - 1);
            const int x1 = std::min(x0 + 1, img.width - 1);
            const float wx = std::clamp(fx - static_cast<float>(x0), 0.0f, 1.0f);
            for (int c = 0; c < img.channels; ++c) {
                const float top = img.at(y0, x0, c) * (1 - wx) + img.at(y0, x1, c) * wx;
                const float bot = img.at(y1, x0, c) * (1 - wx) + img.at(y1, x1, c) * wx;
                out.at(y, x, c) = top * (1 - wy) + bot * wy;
            }
        }
    }
    return out;
}

}  // namespace krsvqg
