#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "camila/image.hpp"
#include "camila/instruction_head.hpp"
#include "camila/numerics/nn.hpp"

// Two cross-attention layers over patch features (text, then [MASK] tokens)
// and a scaled dot-product score per (patch, token).

namespace camila {

inline constexpr std::size_t kMaskRes = 64;
inline constexpr std::size_t kPatchScale = 8;  // patch grid → mask resolution

class TokenDecoder {
public:
    TokenDecoder(ParamStore& store, Rng& rng, std::size_t heads = 4, std::size_t hidden = 64) {
        const std::size_t w = kEmbedDim;
        auto pos = Tensor::zeros({world::kGrid * world::kGrid, w});
        for (std::size_t p = 0; p < world::kGrid * world::kGrid; ++p) {
            const auto sx = sinusoid(static_cast<double>(p % world::kGrid), w / 2, 16.0);
            const auto sy = sinusoid(static_cast<double>(p / world::kGrid), w / 2, 16.0);
            for (std::size_t k = 0; k < w / 2; ++k) {
                pos.at(p, k) = sx[k];
                pos.at(p, w / 2 + k) = sy[k];
            }
        }
        pos_ = store.add("decoder.pos", pos, true);
        in_ = Linear(store, "decoder.in", w, w, rng);
        ln_q1_ = LayerNorm(store, "decoder.ln_q1", w);
        attn1_ = MultiHeadAttention(store, "decoder.attn1", w, w, w, heads, rng);
        ln_m1_ = LayerNorm(store, "decoder.ln_m1", w);
        mlp1_ = Mlp(store, "decoder.mlp1", w, hidden, rng);
        ln_q2_ = LayerNorm(store, "decoder.ln_q2", w);
        attn2_ = MultiHeadAttention(store, "decoder.attn2", w, w, w, heads, rng);
        ln_m2_ = LayerNorm(store, "decoder.ln_m2", w);
        mlp2_ = Mlp(store, "decoder.mlp2", w, hidden, rng);
        ln_out_ = LayerNorm(store, "decoder.ln_out", w);
        patch_proj_ = Linear(store, "decoder.patch_proj", w, w, rng, false);
        token_proj_ = Linear(store, "decoder.token_proj", w, w, rng, false);
        bias_ = store.add("decoder.bias", Tensor::scalar(-2.0), true);
    }

    /// Pre-sigmoid scores on the patch grid: 64 × k for the k given tokens.
    Tensor patch_logits(const Tensor& image_tokens, const Tensor& c_t, const Tensor& mask_tokens) const {
        if (c_t.rows() == 0) {
            throw ContractError("decoder needs at least one text position");
        }
        if (mask_tokens.rows() == 0) {
            throw ContractError("decoder needs at least one [MASK] token");
        }
        Tensor x = add(in_.forward(image_tokens), pos_);
        x = add(x, attn1_.forward(ln_q1_.forward(x), c_t));
        x = add(x, mlp1_.forward(ln_m1_.forward(x)));
        x = add(x, attn2_.forward(ln_q2_.forward(x), mask_tokens));
        x = add(x, mlp2_.forward(ln_m2_.forward(x)));
        const Tensor p = patch_proj_.forward(ln_out_.forward(x));
        const Tensor t = token_proj_.forward(mask_tokens);
        return add(scale(matmul_nt(p, t), 1.0 / std::sqrt(static_cast<double>(kEmbedDim))), bias_);
    }

    /// Probabilities at mask resolution: 4096 × k.
    Tensor probabilities(const Tensor& image_tokens, const Tensor& c_t, const Tensor& mask_tokens) const {
        return upsample_nearest(sigmoid(patch_logits(image_tokens, c_t, mask_tokens)), world::kGrid, world::kGrid,
                                kPatchScale);
    }

    /// Binary masks for all n tokens. [NEG] tokens get all-zero masks and the
    /// decoder is only run when at least one token is [MASK].
    std::vector<Mask> decode(const Tensor& image_tokens, const Tensor& c_t, const OutputTokenSet& o,
                             const std::vector<TokenLabel>& labels) const {
        if (labels.size() != o.size()) {
            throw DimensionError("decode: " + std::to_string(labels.size()) + " labels for " +
                                 std::to_string(o.size()) + " tokens");
        }
        std::vector<Mask> out(labels.size(), Mask::zeros(kMaskRes, kMaskRes));
        std::vector<std::size_t> active;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] == TokenLabel::mask) {
                active.push_back(i);
            }
        }
        if (active.empty()) {
            return out;
        }
        NoGradGuard guard;
        const Tensor logits = upsample_nearest(
            patch_logits(image_tokens, c_t, gather_rows(o.embeddings, active)), world::kGrid, world::kGrid,
            kPatchScale);
        const auto masks = masks_from_logits(logits);
        for (std::size_t a = 0; a < active.size(); ++a) {
            out[active[a]] = masks[a];
        }
        ++evaluations_;
        return out;
    }

    /// Thresholds 4096 × k logits at sigmoid ≥ 0.5 (logit ≥ 0).
    static std::vector<Mask> masks_from_logits(const Tensor& logits) {
        if (logits.rank() != 2 || logits.rows() != kMaskRes * kMaskRes) {
            throw DimensionError("mask logits must be 4096 x k, got " + shape_str(logits.shape()));
        }
        require_finite(logits, "mask logits");
        std::vector<Mask> out(logits.cols(), Mask::zeros(kMaskRes, kMaskRes));
        for (std::size_t p = 0; p < logits.rows(); ++p) {
            for (std::size_t k = 0; k < logits.cols(); ++k) {
                out[k].bits[p] = logits.at(p, k) >= 0.0 ? 1 : 0;
            }
        }
        return out;
    }

    /// Number of times `decode` actually ran the network.
    std::size_t evaluations() const noexcept { return evaluations_; }

private:
    Tensor pos_;
    Linear in_;
    LayerNorm ln_q1_, ln_m1_, ln_q2_, ln_m2_, ln_out_;
    MultiHeadAttention attn1_, attn2_;
    Mlp mlp1_, mlp2_;
    Linear patch_proj_, token_proj_;
    Tensor bias_;
    mutable std::size_t evaluations_ = 0;
};

/// Masks as a 4096 × k constant tensor, one column per mask.
inline Tensor masks_to_tensor(const std::vector<Mask>& masks) {
    auto t = Tensor::zeros({kMaskRes * kMaskRes, masks.size()});
    for (std::size_t k = 0; k < masks.size(); ++k) {
        for (std::size_t p = 0; p < kMaskRes * kMaskRes; ++p) {
            t.at(p, k) = masks[k].bits[p];
        }
    }
    return t;
}

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()) + " differ");
    }
}

}  // namespace detail

/// 1 − (2Σpg + ε)/(Σp + Σg + ε), averaged over columns when given several.
inline Tensor dice_loss(const Tensor& probs, const Tensor& gt, double eps = 1.0) {
    detail::require_same_shape(probs, gt, "dice_loss");
    const Tensor inter = sum_axis(mul(probs, gt), 0);
    const Tensor denom = add(sum_axis(probs, 0), sum_axis(gt, 0));
    const Tensor ratio = mul(add_scalar(scale(inter, 2.0), eps), reciprocal(add_scalar(denom, eps)));
    return one_minus(mean(ratio));
}

/// Mean per-pixel binary cross-entropy. Probabilities are clamped to
/// [1e-12, 1 − 1e-12] inside the logarithms.
inline Tensor mask_bce_loss(const Tensor& probs, const Tensor& gt) {
    detail::require_same_shape(probs, gt, "mask_bce_loss");
    constexpr double kClamp = 1e-12;
    const Tensor p = clamp(probs, kClamp, 1.0 - kClamp);
    const Tensor pos = mul(gt, log(p));
    const Tensor neg = mul(one_minus(gt), log(one_minus(p)));
    return scale(mean(add(pos, neg)), -1.0);
}

inline void export_masks_pgm(const std::vector<Mask>& masks, const std::string& dir, const std::string& stem = "mask") {
    for (std::size_t i = 0; i < masks.size(); ++i) {
        write_file(dir + "/" + stem + "_" + std::to_string(i) + ".pgm", encode_pgm(masks[i]));
    }
}

}  // namespace camila
