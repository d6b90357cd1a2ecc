#pragma once

#include <cmath>
#include <vector>

#include "camila/encoders.hpp"
#include "camila/image.hpp"

namespace camila {

inline constexpr double kDirectionEps = 1e-9;

inline void require_same_image_shape(const Image& a, const Image& b) {
    if (a.height != b.height || a.width != b.width || a.rgb.size() != b.rgb.size()) {
        throw DimensionError("images differ in shape");
    }
}

inline double l1_distance(const Image& a, const Image& b) {
    require_same_image_shape(a, b);
    double s = 0.0;
    for (std::size_t i = 0; i < a.rgb.size(); ++i) {
        s += std::abs(a.rgb[i] - b.rgb[i]);
    }
    return s / static_cast<double>(a.rgb.size());
}

inline double l2_distance(const Image& a, const Image& b) {
    require_same_image_shape(a, b);
    double s = 0.0;
    for (std::size_t i = 0; i < a.rgb.size(); ++i) {
        const double d = a.rgb[i] - b.rgb[i];
        s += d * d;
    }
    return s / static_cast<double>(a.rgb.size());
}

/// Mean absolute error restricted to pixels where `region` is set; 0 for an
/// empty region.
inline double masked_l1(const Image& a, const Image& b, const Mask& region) {
    require_same_image_shape(a, b);
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t p = 0; p < region.bits.size(); ++p) {
        if (!region.bits[p]) {
            continue;
        }
        for (std::size_t c = 0; c < 3; ++c) {
            s += std::abs(a.rgb[p * 3 + c] - b.rgb[p * 3 + c]);
        }
        n += 3;
    }
    return n == 0 ? 0.0 : s / static_cast<double>(n);
}

inline double sim_image(const ProxyClip& clip, const Image& output, const Image& goal) {
    return cosine(clip.embed_image(output), clip.embed_image(goal));
}

inline double sim_text(const ProxyClip& clip, const Image& output, const std::vector<std::string>& goal_description) {
    return cosine(clip.embed_text(goal_description), clip.embed_image(output));
}

/// Cosine between the image-embedding change and the caption-embedding
/// change; 0 when either change is (numerically) zero.
inline double sim_direction(const ProxyClip& clip, const Image& source, const Image& output,
                            const std::vector<std::string>& source_caption,
                            const std::vector<std::string>& goal_caption) {
    const auto a0 = clip.embed_image(source), a1 = clip.embed_image(output);
    const auto t0 = clip.embed_text(source_caption), t1 = clip.embed_text(goal_caption);
    std::vector<double> di(a0.size()), dt(t0.size());
    double ni = 0.0, nt = 0.0;
    for (std::size_t k = 0; k < a0.size(); ++k) {
        di[k] = a1[k] - a0[k];
        dt[k] = t1[k] - t0[k];
        ni += di[k] * di[k];
        nt += dt[k] * dt[k];
    }
    if (std::sqrt(ni) < kDirectionEps || std::sqrt(nt) < kDirectionEps) {
        return 0.0;
    }
    return cosine(di, dt);
}

}  // namespace camila
