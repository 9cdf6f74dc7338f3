#include "sspnet/image.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace sspnet {

namespace {

uint8_t to_byte(double v) {
    const double c = std::clamp(v, 0.0, 1.0);
    return static_cast<uint8_t>(std::llround(c * 255.0));
}

int read_ppm_token(std::istream& in) {
    // Skips whitespace and '#' comments, then reads one non-negative integer.
    int c = in.get();
    while (c != EOF && (std::isspace(c) || c == '#')) {
        if (c == '#')
            while (c != EOF && c != '\n') c = in.get();
        c = in.get();
    }
    if (c == EOF) return -1;
    int value = 0;
    bool any = false;
    while (c != EOF && std::isdigit(c)) {
        value = value * 10 + (c - '0');
        any = true;
        c = in.get();
    }
    return any ? value : -1;
}

}  // namespace

Image read_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image file: " + path.string());
    char magic[2] = {0, 0};
    in.read(magic, 2);
    if (magic[0] != 'P' || magic[1] != '6')
        throw ParseError("not a binary PPM (P6) file: " + path.string());
    const int w = read_ppm_token(in);
    const int h = read_ppm_token(in);
    const int maxval = read_ppm_token(in);
    if (w <= 0 || h <= 0 || maxval != 255)
        throw ParseError("unsupported PPM header in " + path.string());
    in.get();  // single whitespace after maxval
    std::vector<uint8_t> raw(static_cast<size_t>(w) * h * 3);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<size_t>(in.gcount()) != raw.size())
        throw ParseError("truncated PPM payload in " + path.string());
    Image img(h, w);
    for (size_t i = 0; i < raw.size(); ++i) img.pixels[i] = raw[i] / 255.0;
    return img;
}

void write_ppm(const Image& img, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write image file: " + path.string());
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    std::vector<uint8_t> raw(img.pixels.size());
    for (size_t i = 0; i < raw.size(); ++i) raw[i] = to_byte(img.pixels[i]);
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) throw IoError("failed writing image file: " + path.string());
}

void quantize_to_8bit(Image& img) {
    for (auto& v : img.pixels) v = to_byte(v) / 255.0;
}

std::vector<double> resize_bilinear_plane(const std::vector<double>& src, int sh, int sw, int th,
                                          int tw) {
    if (sh <= 0 || sw <= 0 || th <= 0 || tw <= 0) throw ShapeError("resize: empty extent");
    std::vector<double> dst(static_cast<size_t>(th) * tw);
    const double sy = static_cast<double>(sh) / th;
    const double sx = static_cast<double>(sw) / tw;
    for (int i = 0; i < th; ++i) {
        double fy = (i + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(sh - 1));
        int y0 = static_cast<int>(std::floor(fy));
        y0 = std::min(y0, std::max(sh - 2, 0));
        const int y1 = std::min(y0 + 1, sh - 1);
        const double wy = fy - y0;
        for (int j = 0; j < tw; ++j) {
            double fx = (j + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<double>(sw - 1));
            int x0 = static_cast<int>(std::floor(fx));
            x0 = std::min(x0, std::max(sw - 2, 0));
            const int x1 = std::min(x0 + 1, sw - 1);
            const double wx = fx - x0;
            const double v = (1.0 - wy) * ((1.0 - wx) * src[static_cast<size_t>(y0) * sw + x0] +
                                           wx * src[static_cast<size_t>(y0) * sw + x1]) +
                             wy * ((1.0 - wx) * src[static_cast<size_t>(y1) * sw + x0] +
                                   wx * src[static_cast<size_t>(y1) * sw + x1]);
            dst[static_cast<size_t>(i) * tw + j] = v;
        }
    }
    return dst;
}

Image resize_bilinear(const Image& img, int th, int tw) {
    if (img.height == th && img.width == tw) return img;
    Image out(th, tw);
    std::vector<double> plane(static_cast<size_t>(img.height) * img.width);
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                plane[static_cast<size_t>(y) * img.width + x] = img.at(y, x, c);
        const auto resized = resize_bilinear_plane(plane, img.height, img.width, th, tw);
        for (int y = 0; y < th; ++y)
            for (int x = 0; x < tw; ++x) out.at(y, x, c) = resized[static_cast<size_t>(y) * tw + x];
    }
    return out;
}

namespace {

void put_u32(std::vector<uint8_t>& buf, uint32_t v) {
    buf.push_back(static_cast<uint8_t>(v >> 24));
    buf.push_back(static_cast<uint8_t>(v >> 16));
    buf.push_back(static_cast<uint8_t>(v >> 8));
    buf.push_back(static_cast<uint8_t>(v));
}

void put_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& data) {
    put_u32(out, static_cast<uint32_t>(data.size()));
    const size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const uint32_t crc = static_cast<uint32_t>(
        ::crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start)));
    put_u32(out, crc);
}

}  // namespace

void write_png_rgb(const std::filesystem::path& path, const std::vector<uint8_t>& rgb, int height,
                   int width) {
    if (rgb.size() != static_cast<size_t>(height) * width * 3)
        throw ShapeError("write_png_rgb: buffer size mismatch");
    // Filter byte 0 per scanline, then one zlib stream.
    std::vector<uint8_t> raw;
    raw.reserve(rgb.size() + static_cast<size_t>(height));
    for (int y = 0; y < height; ++y) {
        raw.push_back(0);
        const uint8_t* row = rgb.data() + static_cast<size_t>(y) * width * 3;
        raw.insert(raw.end(), row, row + static_cast<size_t>(width) * 3);
    }
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> compressed(bound);
    if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw IoError("png: zlib compression failed");
    compressed.resize(bound);

    std::vector<uint8_t> out{0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
    std::vector<uint8_t> ihdr;
    put_u32(ihdr, static_cast<uint32_t>(width));
    put_u32(ihdr, static_cast<uint32_t>(height));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // colour type: truecolour
    ihdr.push_back(0);  // compression
    ihdr.push_back(0);  // filter
    ihdr.push_back(0);  // interlace
    put_chunk(out, "IHDR", ihdr);
    put_chunk(out, "IDAT", compressed);
    put_chunk(out, "IEND", {});

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write PNG file: " + path.string());
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("failed writing PNG file: " + path.string());
}

}  // namespace sspnet
