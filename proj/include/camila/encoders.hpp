#pragma once

#include <algorithm>
#include <array>
#include <numbers>
#include <cmath>
#include <string>
#include <vector>

#include "camila/image.hpp"
#include "camila/numerics/nn.hpp"
#include "camila/world.hpp"

// Frozen stand-in encoders: patch tokens for the joint head, the diffusion
// text encoder, the latent autoencoder, and the proxy similarity space.

namespace camila {

inline constexpr std::size_t kEmbedDim = 32;
inline constexpr std::size_t kColorFeatures = 12;  // 2×2 sub-blocks × RGB
inline constexpr std::size_t kShapeFeatures = 8;   // width and height bins, roundness, patch coverage
inline constexpr std::size_t kPatchFeatures = kColorFeatures + kShapeFeatures;
inline constexpr std::size_t kLatentRes = 16;
inline constexpr std::size_t kLatentChannels = 4;

inline void require_image(const Image& img) {
    if (img.height != 64 || img.width != 64 || img.rgb.size() != 64 * 64 * 3) {
        throw DimensionError("expected a 64x64x3 image, got " + std::to_string(img.height) + "x" +
                             std::to_string(img.width));
    }
}

namespace detail {

struct Component {
    std::size_t x0 = 64, y0 = 64, x1 = 0, y1 = 0, pixels = 0;
};

/// 4-connected components of equal, non-black colour. `label` gets the
/// component index per pixel or kNone for background.
inline std::vector<Component> colour_components(const Image& img, std::vector<std::size_t>& label) {
    const std::size_t n = img.height * img.width;
    label.assign(n, world::kNone);
    std::vector<Component> comps;
    std::vector<std::size_t> stack;
    auto same = [&](std::size_t a, std::size_t b) {
        return img.rgb[3 * a] == img.rgb[3 * b] && img.rgb[3 * a + 1] == img.rgb[3 * b + 1] &&
               img.rgb[3 * a + 2] == img.rgb[3 * b + 2];
    };
    for (std::size_t start = 0; start < n; ++start) {
        const bool background = img.rgb[3 * start] == 0.0 && img.rgb[3 * start + 1] == 0.0 && img.rgb[3 * start + 2] == 0.0;
        if (background || label[start] != world::kNone) {
            continue;
        }
        Component c;
        label[start] = comps.size();
        stack.assign(1, start);
        while (!stack.empty()) {
            const std::size_t p = stack.back();
            stack.pop_back();
            const std::size_t y = p / img.width, x = p % img.width;
            c.x0 = std::min(c.x0, x);
            c.x1 = std::max(c.x1, x);
            c.y0 = std::min(c.y0, y);
            c.y1 = std::max(c.y1, y);
            ++c.pixels;
            const std::size_t nb[4] = {x > 0 ? p - 1 : p, x + 1 < img.width ? p + 1 : p, y > 0 ? p - img.width : p,
                                       y + 1 < img.height ? p + img.width : p};
            for (std::size_t q : nb) {
                if (label[q] == world::kNone && same(p, q)) {
                    label[q] = comps.size();
                    stack.push_back(q);
                }
            }
        }
        comps.push_back(c);
    }
    return comps;
}

}  // namespace detail

/// Per 8×8 patch: mean colour of each 2×2 sub-block, then a descriptor of the
/// colour region covering most of the patch (one-hot width and height in
/// patches, clamped to 1..3, and whether it fills less than 90% of its
/// bounding box) and the patch's coverage. Stands in for pretrained patch
/// features, where object category is linearly readable.
inline Tensor patch_features(const Image& img) {
    require_image(img);
    const std::size_t ps = 8, half = 4;
    std::vector<std::size_t> label;
    const auto comps = detail::colour_components(img, label);
    auto t = Tensor::zeros({world::kGrid * world::kGrid, kPatchFeatures});
    auto d = t.data();
    std::vector<std::size_t> votes(comps.size());
    for (std::size_t py = 0; py < world::kGrid; ++py) {
        for (std::size_t px = 0; px < world::kGrid; ++px) {
            const std::size_t row = py * world::kGrid + px;
            double* f = &d[row * kPatchFeatures];
            for (std::size_t sy = 0; sy < 2; ++sy) {
                for (std::size_t sx = 0; sx < 2; ++sx) {
                    for (std::size_t c = 0; c < 3; ++c) {
                        double s = 0.0;
                        for (std::size_t y = 0; y < half; ++y) {
                            for (std::size_t x = 0; x < half; ++x) {
                                s += img.at(py * ps + sy * half + y, px * ps + sx * half + x, c);
                            }
                        }
                        f[(sy * 2 + sx) * 3 + c] = s / (half * half);
                    }
                }
            }
            std::fill(votes.begin(), votes.end(), 0);
            std::size_t covered = 0;
            for (std::size_t y = py * ps; y < (py + 1) * ps; ++y) {
                for (std::size_t x = px * ps; x < (px + 1) * ps; ++x) {
                    if (const std::size_t l = label[y * img.width + x]; l != world::kNone) {
                        ++votes[l];
                        ++covered;
                    }
                }
            }
            if (covered == 0) {
                continue;
            }
            const auto& c = comps[static_cast<std::size_t>(std::max_element(votes.begin(), votes.end()) - votes.begin())];
            const double w = static_cast<double>(c.x1 - c.x0 + 1), h = static_cast<double>(c.y1 - c.y0 + 1);
            auto bin = [&](double extent) {
                return std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(extent / ps)), 1, 3) - 1;
            };
            f[kColorFeatures + bin(w)] = 1.0;
            f[kColorFeatures + 3 + bin(h)] = 1.0;
            f[kColorFeatures + 6] = static_cast<double>(c.pixels) < 0.9 * w * h ? 1.0 : 0.0;
            f[kColorFeatures + 7] = static_cast<double>(covered) / (ps * ps);
        }
    }
    return t;
}

/// Frozen vision encoder: linear projection of patch features.
class VisionEncoder {
public:
    VisionEncoder(ParamStore& store, Rng& rng) {
        proj_ = store.add("vision.proj", randn({kPatchFeatures, kEmbedDim}, 1.0 / std::sqrt(3.0), rng), false);
    }

    Tensor encode(const Image& img) const { return matmul(patch_features(img), proj_); }

private:
    Tensor proj_;
};

/// Frozen diffusion text encoder: word table, sinusoidal positions and one
/// residual self-attention layer.
class TextEncoder {
public:
    TextEncoder(ParamStore& store, Rng& rng) {
        table_ = store.add("text.table", randn({world::Vocabulary::get().size(), kEmbedDim}, 1.0, rng), false);
        attn_ = MultiHeadAttention(store, "text.attn", kEmbedDim, kEmbedDim, kEmbedDim, 1, rng, false);
    }

    std::vector<std::size_t> tokenize(const std::string& text) const {
        return world::Vocabulary::get().tokenize(text);
    }

    /// m × 32; m = 0 for an empty id list.
    Tensor embed(const std::vector<std::size_t>& ids) const {
        if (ids.empty()) {
            return Tensor::zeros({0, kEmbedDim});
        }
        auto x = gather_rows(table_, ids);
        auto pos = Tensor::zeros({ids.size(), kEmbedDim});
        for (std::size_t i = 0; i < ids.size(); ++i) {
            const auto s = sinusoid(static_cast<double>(i), kEmbedDim);
            std::copy(s.begin(), s.end(), pos.data().begin() + static_cast<std::ptrdiff_t>(i * kEmbedDim));
        }
        x = add(x, pos);
        return add(x, attn_.forward(x, x));
    }

private:
    Tensor table_;
    MultiHeadAttention attn_;
};

// ---------------------------------------------------------------------------
// Latent autoencoder: 4×4 block means of R, G, B and luminance mapped to
// [-1, 1]; decoding is the least-squares inverse.

inline constexpr std::array<double, 3> kLuma = {0.299, 0.587, 0.114};

inline Tensor encode_latent(const Image& img) {
    require_image(img);
    auto z = Tensor::zeros({kLatentRes * kLatentRes, kLatentChannels});
    auto d = z.data();
    for (std::size_t by = 0; by < kLatentRes; ++by) {
        for (std::size_t bx = 0; bx < kLatentRes; ++bx) {
            std::array<double, 3> m{};
            for (std::size_t y = 0; y < 4; ++y) {
                for (std::size_t x = 0; x < 4; ++x) {
                    for (std::size_t c = 0; c < 3; ++c) {
                        m[c] += img.at(by * 4 + y, bx * 4 + x, c) / 16.0;
                    }
                }
            }
            const double luma = kLuma[0] * m[0] + kLuma[1] * m[1] + kLuma[2] * m[2];
            double* row = &d[(by * kLatentRes + bx) * kLatentChannels];
            for (std::size_t c = 0; c < 3; ++c) {
                row[c] = 2.0 * m[c] - 1.0;
            }
            row[3] = 2.0 * luma - 1.0;
        }
    }
    return z;
}

inline Image decode_latent(const Tensor& z) {
    if (z.rank() != 2 || z.rows() != kLatentRes * kLatentRes || z.cols() != kLatentChannels) {
        throw DimensionError("latent must be 256x4, got " + shape_str(z.shape()));
    }
    // Least-squares solve of [I; luma] m = v for the three colour means.
    const auto& v = z.values();
    double g[3][3];
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
            g[i][j] = (i == j ? 1.0 : 0.0) + kLuma[i] * kLuma[j];
        }
    }
    const double det = g[0][0] * (g[1][1] * g[2][2] - g[1][2] * g[2][1]) -
                       g[0][1] * (g[1][0] * g[2][2] - g[1][2] * g[2][0]) +
                       g[0][2] * (g[1][0] * g[2][1] - g[1][1] * g[2][0]);
    double inv[3][3];
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
            const std::size_t r0 = (j + 1) % 3, r1 = (j + 2) % 3, c0 = (i + 1) % 3, c1 = (i + 2) % 3;
            inv[i][j] = (g[r0][c0] * g[r1][c1] - g[r0][c1] * g[r1][c0]) / det;
        }
    }
    Image img = Image::filled(64, 64, 0, 0, 0);
    for (std::size_t by = 0; by < kLatentRes; ++by) {
        for (std::size_t bx = 0; bx < kLatentRes; ++bx) {
            const double* row = &v[(by * kLatentRes + bx) * kLatentChannels];
            std::array<double, 3> rhs{};
            for (std::size_t c = 0; c < 3; ++c) {
                rhs[c] = (row[c] + 1.0) / 2.0 + kLuma[c] * (row[3] + 1.0) / 2.0;
            }
            for (std::size_t c = 0; c < 3; ++c) {
                const double m = std::clamp(inv[c][0] * rhs[0] + inv[c][1] * rhs[1] + inv[c][2] * rhs[2], 0.0, 1.0);
                for (std::size_t y = 0; y < 4; ++y) {
                    for (std::size_t x = 0; x < 4; ++x) {
                        img.at(by * 4 + y, bx * 4 + x, c) = m;
                    }
                }
            }
        }
    }
    return img;
}

// ---------------------------------------------------------------------------
// Proxy similarity space. Both branches describe a picture as per-quadrant
// colour mass (4 × RGB) plus a constant anchor, then share one frozen
// seeded projection to 32 dimensions and L2-normalise.

inline constexpr std::size_t kConceptDim = 13;
inline constexpr double kConceptAnchor = 0.25;

inline std::vector<double> image_concept(const Image& img) {
    require_image(img);
    std::vector<double> c(kConceptDim, 0.0);
    for (std::size_t y = 0; y < 64; ++y) {
        for (std::size_t x = 0; x < 64; ++x) {
            const std::size_t q = (y / 32) * 2 + x / 32;
            for (std::size_t k = 0; k < 3; ++k) {
                c[q * 3 + k] += img.at(y, x, k) / (32.0 * 32.0);
            }
        }
    }
    c[12] = kConceptAnchor;
    return c;
}

/// Reads "a COLOR LABEL at V H" phrases; unrelated words are ignored.
inline std::vector<double> text_concept(const std::vector<std::string>& words) {
    std::vector<double> c(kConceptDim, 0.0);
    c[12] = kConceptAnchor;
    auto find_color = [](const std::string& w) -> std::size_t {
        for (std::size_t i = 0; i < world::kColors.size(); ++i) {
            if (world::kColors[i].word == w) {
                return i;
            }
        }
        return world::kNone;
    };
    auto find_label = [](const std::string& w) -> std::size_t {
        for (std::size_t i = 0; i < world::kLabels.size(); ++i) {
            if (world::kLabels[i].word == w) {
                return i;
            }
        }
        return world::kNone;
    };
    for (std::size_t i = 0; i + 4 < words.size(); ++i) {
        const std::size_t color = find_color(words[i]);
        const std::size_t label = find_label(words[i + 1]);
        if (color == world::kNone || label == world::kNone || words[i + 2] != "at") {
            continue;
        }
        const bool top = words[i + 3] == "top", bottom = words[i + 3] == "bottom";
        const bool left = words[i + 4] == "left", right = words[i + 4] == "right";
        if (!(top || bottom) || !(left || right)) {
            continue;
        }
        const std::size_t q = (bottom ? 2 : 0) + (right ? 1 : 0);
        const auto& spec = world::kLabels[label];
        double area = static_cast<double>(spec.w * spec.h) / 16.0;
        if (spec.ellipse) {
            area *= std::numbers::pi / 4.0;
        }
        const auto& col = world::kColors[color];
        c[q * 3 + 0] += col.r * area;
        c[q * 3 + 1] += col.g * area;
        c[q * 3 + 2] += col.b * area;
    }
    return c;
}

class ProxyClip {
public:
    explicit ProxyClip(std::uint64_t seed = 0xc11f) {
        Rng rng(mix_seed(seed, 0x9));
        std::normal_distribution<double> dist(0.0, 1.0);
        for (auto& v : proj_) {
            v = dist(rng);
        }
    }

    std::vector<double> embed(const std::vector<double>& features) const {
        std::vector<double> out(kEmbedDim, 0.0);
        for (std::size_t i = 0; i < kConceptDim; ++i) {
            for (std::size_t j = 0; j < kEmbedDim; ++j) {
                out[j] += features[i] * proj_[i * kEmbedDim + j];
            }
        }
        double n = 0.0;
        for (double v : out) {
            n += v * v;
        }
        n = std::sqrt(n);
        for (double& v : out) {
            v /= n;
        }
        return out;
    }

    std::vector<double> embed_image(const Image& img) const { return embed(image_concept(img)); }
    std::vector<double> embed_text(const std::vector<std::string>& words) const { return embed(text_concept(words)); }

private:
    std::array<double, kConceptDim * kEmbedDim> proj_{};
};

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    return ab / std::sqrt(aa * bb);
}

}  // namespace camila
