#include "htr/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "htr/tensor.hpp"

namespace htr {

namespace {

int read_pnm_int(std::istream& in) {
    // skips whitespace and '#' comments
    while (true) {
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
    int value = -1;
    in >> value;
    require(in.good() && value >= 0, "malformed PGM header");
    return value;
}

}  // namespace

Image read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.is_open(), "cannot open image: " + path);
    std::string magic;
    in >> magic;
    require(magic == "P5" || magic == "P2", "unsupported image format in " + path);
    int w = read_pnm_int(in);
    int h = read_pnm_int(in);
    int maxval = read_pnm_int(in);
    require(w > 0 && h > 0 && maxval > 0 && maxval < 65536, "bad PGM dimensions in " + path);
    Image img(h, w);
    if (magic == "P5") {
        in.get();  // single whitespace after maxval
        require(maxval < 256, "16-bit PGM not supported: " + path);
        std::vector<unsigned char> buf(static_cast<size_t>(w) * h);
        in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        require(in.gcount() == static_cast<std::streamsize>(buf.size()),
                "truncated PGM data in " + path);
        for (size_t i = 0; i < buf.size(); ++i) img.px[i] = buf[i] / static_cast<double>(maxval);
    } else {
        for (auto& p : img.px) p = read_pnm_int(in) / static_cast<double>(maxval);
    }
    return img;
}

void write_pgm(const Image& img, const std::string& path) {
    require(!img.empty(), "refusing to write an empty image: " + path);
    std::ofstream out(path, std::ios::binary);
    require(out.is_open(), "cannot write image: " + path);
    out << "P5\n" << img.w << " " << img.h << "\n255\n";
    std::vector<unsigned char> buf(img.px.size());
    for (size_t i = 0; i < buf.size(); ++i) {
        double v = std::clamp(img.px[i], 0.0, 1.0);
        buf[i] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    require(out.good(), "short write: " + path);
}

Image resize_bilinear(const Image& src, int new_h, int new_w) {
    require(!src.empty(), "resize of an empty image");
    require(new_h > 0 && new_w > 0, "resize target must be positive");
    if (new_h == src.h && new_w == src.w) return src;
    Image dst(new_h, new_w);
    double sy = static_cast<double>(src.h) / new_h;
    double sx = static_cast<double>(src.w) / new_w;
    for (int y = 0; y < new_h; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        double wy = fy - y0;
        int ya = std::clamp(y0, 0, src.h - 1), yb = std::clamp(y0 + 1, 0, src.h - 1);
        for (int x = 0; x < new_w; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            int x0 = static_cast<int>(std::floor(fx));
            double wx = fx - x0;
            int xa = std::clamp(x0, 0, src.w - 1), xb = std::clamp(x0 + 1, 0, src.w - 1);
            dst.at(y, x) = (1 - wy) * ((1 - wx) * src.at(ya, xa) + wx * src.at(ya, xb)) +
                           wy * ((1 - wx) * src.at(yb, xa) + wx * src.at(yb, xb));
        }
    }
    return dst;
}

}  // namespace htr
