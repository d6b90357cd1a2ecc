#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "camila/error.hpp"

namespace camila {

/// H×W×3 image, channel-interleaved, values in [0, 1].
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> rgb;

    static Image filled(std::size_t h, std::size_t w, double r, double g, double b) {
        Image img{h, w, std::vector<double>(h * w * 3)};
        for (std::size_t i = 0; i < h * w; ++i) {
            img.rgb[3 * i] = r;
            img.rgb[3 * i + 1] = g;
            img.rgb[3 * i + 2] = b;
        }
        return img;
    }

    double& at(std::size_t y, std::size_t x, std::size_t c) { return rgb[(y * width + x) * 3 + c]; }
    double at(std::size_t y, std::size_t x, std::size_t c) const { return rgb[(y * width + x) * 3 + c]; }

    bool operator==(const Image&) const = default;
};

/// H×W binary mask.
struct Mask {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> bits;

    static Mask zeros(std::size_t h, std::size_t w) { return Mask{h, w, std::vector<std::uint8_t>(h * w, 0)}; }

    std::uint8_t& at(std::size_t y, std::size_t x) { return bits[y * width + x]; }
    std::uint8_t at(std::size_t y, std::size_t x) const { return bits[y * width + x]; }

    std::size_t area() const {
        return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
    }
    bool empty() const { return area() == 0; }

    bool operator==(const Mask&) const = default;
};

inline Mask mask_union(const Mask& a, const Mask& b) {
    Mask out = a;
    for (std::size_t i = 0; i < out.bits.size(); ++i) {
        out.bits[i] = (a.bits[i] | b.bits[i]) ? 1 : 0;
    }
    return out;
}

/// Intersection-over-union; two empty masks count as a perfect match.
inline double mask_iou(const Mask& pred, const Mask& truth) {
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < pred.bits.size(); ++i) {
        inter += (pred.bits[i] & truth.bits[i]) ? 1 : 0;
        uni += (pred.bits[i] | truth.bits[i]) ? 1 : 0;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline double mask_dice(const Mask& pred, const Mask& truth) {
    std::size_t inter = 0, total = 0;
    for (std::size_t i = 0; i < pred.bits.size(); ++i) {
        inter += (pred.bits[i] & truth.bits[i]) ? 1 : 0;
        total += pred.bits[i] + truth.bits[i];
    }
    return total == 0 ? 1.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Portable pixmap / graymap (binary P6 / P5, maxval 255).

inline std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline std::string encode_ppm(const Image& img) {
    std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    out.reserve(out.size() + img.rgb.size());
    for (double v : img.rgb) {
        out.push_back(static_cast<char>(to_byte(v)));
    }
    return out;
}

inline std::string encode_pgm(const Mask& mask) {
    std::string out = "P5\n" + std::to_string(mask.width) + " " + std::to_string(mask.height) + "\n255\n";
    for (std::uint8_t b : mask.bits) {
        out.push_back(static_cast<char>(b ? 255 : 0));
    }
    return out;
}

namespace detail {

struct NetpbmHeader {
    std::string magic;
    std::size_t width = 0, height = 0, maxval = 0;
    std::size_t data_offset = 0;
};

inline NetpbmHeader parse_netpbm_header(const std::string& bytes) {
    NetpbmHeader h;
    std::size_t pos = 0;
    auto next_token = [&]() {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') {
                    ++pos;
                }
            } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
        const std::size_t start = pos;
        while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
            ++pos;
        }
        return bytes.substr(start, pos - start);
    };
    h.magic = next_token();
    try {
        h.width = std::stoul(next_token());
        h.height = std::stoul(next_token());
        h.maxval = std::stoul(next_token());
    } catch (const std::exception&) {
        throw FormatError("malformed netpbm header");
    }
    if (h.maxval != 255) {
        throw FormatError("only maxval 255 netpbm payloads are supported");
    }
    h.data_offset = pos + 1;  // single whitespace after maxval
    return h;
}

}  // namespace detail

inline Image decode_ppm(const std::string& bytes) {
    const auto h = detail::parse_netpbm_header(bytes);
    if (h.magic != "P6") {
        throw FormatError("expected P6 pixmap, got " + h.magic);
    }
    const std::size_t n = h.width * h.height * 3;
    if (bytes.size() < h.data_offset + n) {
        throw FormatError("truncated pixmap payload");
    }
    Image img{h.height, h.width, std::vector<double>(n)};
    for (std::size_t i = 0; i < n; ++i) {
        img.rgb[i] = static_cast<double>(static_cast<unsigned char>(bytes[h.data_offset + i])) / 255.0;
    }
    return img;
}

inline Mask decode_pgm(const std::string& bytes) {
    const auto h = detail::parse_netpbm_header(bytes);
    if (h.magic != "P5") {
        throw FormatError("expected P5 graymap, got " + h.magic);
    }
    const std::size_t n = h.width * h.height;
    if (bytes.size() < h.data_offset + n) {
        throw FormatError("truncated graymap payload");
    }
    Mask m = Mask::zeros(h.height, h.width);
    for (std::size_t i = 0; i < n; ++i) {
        m.bits[i] = static_cast<unsigned char>(bytes[h.data_offset + i]) >= 128 ? 1 : 0;
    }
    return m;
}

inline void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot open " + path + " for writing");
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("write failed for " + path);
    }
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path);
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace camila
