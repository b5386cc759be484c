// SPDX-License-Identifier: Apache-2.0
#include "inpad/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace inpad {

namespace {

void skip_whitespace_and_comments(std::istream& in) {
    while (true) {
        const int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            break;
        }
    }
}

struct PnmHeader {
    std::string magic;
    int64_t width = 0, height = 0, maxval = 0;
};

PnmHeader read_pnm_header(std::istream& in, const std::string& path) {
    PnmHeader h;
    in >> h.magic;
    skip_whitespace_and_comments(in);
    in >> h.width;
    skip_whitespace_and_comments(in);
    in >> h.height;
    skip_whitespace_and_comments(in);
    in >> h.maxval;
    in.get(); // single whitespace before raster
    if (!in || h.width <= 0 || h.height <= 0) throw std::runtime_error("bad PNM header in " + path);
    return h;
}

uint8_t to_byte(double v) {
    return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

} // namespace

void write_ppm(const std::string& path, const ImageTensor& image) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_ppm: cannot open " + path);
    out << "P6\n" << image.width << " " << image.height << "\n255\n";
    std::vector<uint8_t> row(static_cast<size_t>(image.width) * 3);
    for (int64_t y = 0; y < image.height; ++y) {
        for (int64_t x = 0; x < image.width; ++x) {
            for (int64_t c = 0; c < 3; ++c) {
                row[static_cast<size_t>(x * 3 + c)] = to_byte(image.at(y, x, c));
            }
        }
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw std::runtime_error("write_ppm: write failed for " + path);
}

ImageTensor read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_ppm: cannot open " + path);
    const PnmHeader h = read_pnm_header(in, path);
    if (h.magic != "P6" || h.maxval != 255) throw std::runtime_error("read_ppm: unsupported format in " + path);
    ImageTensor img(h.height, h.width);
    std::vector<uint8_t> row(static_cast<size_t>(h.width) * 3);
    for (int64_t y = 0; y < h.height; ++y) {
        in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
        if (!in) throw std::runtime_error("read_ppm: truncated file " + path);
        for (int64_t x = 0; x < h.width; ++x) {
            for (int64_t c = 0; c < 3; ++c) {
                img.at(y, x, c) = static_cast<double>(row[static_cast<size_t>(x * 3 + c)]) / 255.0;
            }
        }
    }
    return img;
}

void write_pgm_mask(const std::string& path, const Mask& mask) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_pgm_mask: cannot open " + path);
    out << "P5\n" << mask.width << " " << mask.height << "\n255\n";
    std::vector<uint8_t> row(static_cast<size_t>(mask.width));
    for (int64_t y = 0; y < mask.height; ++y) {
        for (int64_t x = 0; x < mask.width; ++x) row[static_cast<size_t>(x)] = mask.at(y, x) ? 255 : 0;
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw std::runtime_error("write_pgm_mask: write failed for " + path);
}

Mask read_pgm_mask(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_pgm_mask: cannot open " + path);
    const PnmHeader h = read_pnm_header(in, path);
    if (h.magic != "P5" || h.maxval != 255) throw std::runtime_error("read_pgm_mask: unsupported format in " + path);
    Mask mask(h.height, h.width);
    std::vector<uint8_t> row(static_cast<size_t>(h.width));
    for (int64_t y = 0; y < h.height; ++y) {
        in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
        if (!in) throw std::runtime_error("read_pgm_mask: truncated file " + path);
        for (int64_t x = 0; x < h.width; ++x) mask.at(y, x) = row[static_cast<size_t>(x)] >= 128 ? 1 : 0;
    }
    return mask;
}

void write_pgm16(const std::string& path, const Tensor& map) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_pgm16: cannot open " + path);
    out << "P5\n" << map.cols() << " " << map.rows() << "\n65535\n";
    const double mx = std::max(map.max(), 1e-12);
    for (int64_t i = 0; i < map.size(); ++i) {
        const double norm = std::clamp(map[i] / mx, 0.0, 1.0);
        const uint16_t v = static_cast<uint16_t>(std::lround(norm * 65535.0));
        // big-endian per the format
        const uint8_t hi = static_cast<uint8_t>(v >> 8);
        const uint8_t lo = static_cast<uint8_t>(v & 0xff);
        out.put(static_cast<char>(hi));
        out.put(static_cast<char>(lo));
    }
    if (!out) throw std::runtime_error("write_pgm16: write failed for " + path);
}

void write_raw_map(const std::string& path, const Tensor& map) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_raw_map: cannot open " + path);
    const int64_t dims[2] = {map.rows(), map.cols()};
    out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
    out.write(reinterpret_cast<const char*>(map.data()), static_cast<std::streamsize>(map.size() * sizeof(double)));
    if (!out) throw std::runtime_error("write_raw_map: write failed for " + path);
}

Tensor read_raw_map(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_raw_map: cannot open " + path);
    int64_t dims[2];
    in.read(reinterpret_cast<char*>(dims), sizeof(dims));
    Tensor map(dims[0], dims[1]);
    in.read(reinterpret_cast<char*>(map.data()), static_cast<std::streamsize>(map.size() * sizeof(double)));
    if (!in) throw std::runtime_error("read_raw_map: truncated file " + path);
    return map;
}

} // namespace inpad
