#pragma once

#include <string>
#include <vector>

namespace htr {

// Grayscale raster, values in [0,1]. The pipeline convention is ink = 1,
// background = 0 (bright ink on dark background on disk).
struct Image {
    int h = 0, w = 0;
    std::vector<double> px;

    Image() = default;
    Image(int height, int width) : h(height), w(width), px(static_cast<size_t>(height) * width, 0.0) {}

    double& at(int y, int x) { return px[static_cast<size_t>(y) * w + x]; }
    double at(int y, int x) const { return px[static_cast<size_t>(y) * w + x]; }
    bool empty() const { return h == 0 || w == 0; }
};

// P5 (binary) and P2 (ascii) PGM, 8-bit.
Image read_pgm(const std::string& path);
void write_pgm(const Image& img, const std::string& path);

Image resize_bilinear(const Image& src, int new_h, int new_w);

}  // namespace htr
