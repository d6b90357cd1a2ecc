#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "camila/encoders.hpp"
#include "camila/image.hpp"
#include "camila/numerics/nn.hpp"

// Toy latent denoiser with one mask-modulated cross-attention block at 16×16,
// two-condition classifier-free guidance, and a deterministic DDIM sampler.

namespace camila {

inline constexpr std::size_t kAttnRes = 16;

struct GuidanceConfig {
    double s_image = 1.5;
    double s_text = 7.5;
};

/// Linear schedule in noise level: ᾱ_t goes from 0.98 at t = 0 to 0.10 at
/// t = T − 1.
struct Schedule {
    std::vector<double> alpha_bar;

    static Schedule linear(std::size_t steps = 10, double first = 0.98, double last = 0.10) {
        if (steps < 2) {
            throw ContractError("schedule needs at least two steps");
        }
        Schedule s;
        for (std::size_t t = 0; t < steps; ++t) {
            s.alpha_bar.push_back(first + (last - first) * static_cast<double>(t) / static_cast<double>(steps - 1));
        }
        return s;
    }

    std::size_t steps() const noexcept { return alpha_bar.size(); }
};

// ---------------------------------------------------------------------------
// Mask assembly and attention modulation

/// Column j = mask α_j max-pooled from 64×64 to 16×16 (4×4 blocks). Result is
/// 256 × m with row index y·16 + x.
inline Tensor concat_masks(const std::vector<Mask>& masks, const std::vector<std::size_t>& alpha) {
    const std::size_t f = 64 / kAttnRes;
    auto out = Tensor::zeros({kAttnRes * kAttnRes, alpha.size()});
    for (std::size_t j = 0; j < alpha.size(); ++j) {
        if (alpha[j] >= masks.size()) {
            throw ContractError("alignment index " + std::to_string(alpha[j]) + " out of range for " +
                                std::to_string(masks.size()) + " masks");
        }
        const Mask& m = masks[alpha[j]];
        if (m.height != 64 || m.width != 64) {
            throw DimensionError("masks must be 64x64");
        }
        for (std::size_t y = 0; y < 64; ++y) {
            for (std::size_t x = 0; x < 64; ++x) {
                if (m.at(y, x)) {
                    out.at((y / f) * kAttnRes + x / f, j) = 1.0;
                }
            }
        }
    }
    return out;
}

/// A′ = softmax((X⊙M + Y⊙(1−M)) / √d) over the text axis.
inline Tensor modulate_attention(const Tensor& x, const Tensor& y, const Tensor& m, std::size_t d) {
    if (x.shape() != y.shape() || x.shape() != m.shape()) {
        throw DimensionError("modulate_attention: X " + shape_str(x.shape()) + ", Y " + shape_str(y.shape()) +
                             ", M " + shape_str(m.shape()));
    }
    const Tensor blended = add(mul(x, m), mul(y, one_minus(m)));
    return softmax(scale(blended, 1.0 / std::sqrt(static_cast<double>(d))), 1);
}

/// ẽ = e(∅,∅) + s_I(e(c_I,∅) − e(∅,∅)) + s_T(e(c_I,c_T) − e(c_I,∅)).
inline Tensor cfg_combine(const Tensor& e_uncond, const Tensor& e_image, const Tensor& e_full,
                          const GuidanceConfig& cfg) {
    if (e_uncond.shape() != e_image.shape() || e_uncond.shape() != e_full.shape()) {
        throw DimensionError("cfg_combine: score shapes differ");
    }
    return add(add(e_uncond, scale(sub(e_image, e_uncond), cfg.s_image)), scale(sub(e_full, e_image), cfg.s_text));
}

// ---------------------------------------------------------------------------
// Denoiser

struct DenoiserConfig {
    std::size_t channels = 32;
    std::size_t attn_dim = 16;
    std::size_t mlp_hidden = 64;
};

class Denoiser {
public:
    Denoiser(ParamStore& store, Rng& rng, DenoiserConfig config = {}) : config_(config) {
        const std::size_t c = config.channels;
        in_ = Linear(store, "denoiser.in", 2 * kLatentChannels, c, rng);
        time_ = Linear(store, "denoiser.time", 16, c, rng);
        down1_ = Linear(store, "denoiser.down1", c, c, rng);
        down2_ = Linear(store, "denoiser.down2", c, c, rng);
        up_ = Linear(store, "denoiser.up", c, c, rng);
        ln_attn_ = LayerNorm(store, "denoiser.ln_attn", c);
        q_ = Linear(store, "denoiser.q", c, config.attn_dim, rng, false);
        k_ = Linear(store, "denoiser.k", kEmbedDim, config.attn_dim, rng, false);
        v_ = Linear(store, "denoiser.v", kEmbedDim, c, rng, false);
        o_ = Linear(store, "denoiser.o", c, c, rng);
        null_text_ = store.add("denoiser.null_text", randn({1, kEmbedDim}, 1.0, rng), true);
        ln_mlp_ = LayerNorm(store, "denoiser.ln_mlp", c);
        mlp_ = Mlp(store, "denoiser.mlp", c, config.mlp_hidden, rng);
        out_ = Linear(store, "denoiser.out", c, kLatentChannels, rng, true, true, 0.1);
    }

    /// Predicted noise (256 × 4). `c_t` is m × 32 and `mask` 256 × m; a
    /// text-ablated call passes an all-zero mask, which routes every
    /// attention weight to the null branch.
    Tensor score(const Tensor& z_t, const Tensor& c_i, std::size_t t, const Tensor& c_t, const Tensor& mask) const {
        const std::size_t m = c_t.rows();
        if (m == 0) {
            throw ContractError("denoiser requires at least one text position");
        }
        if (mask.rank() != 2 || mask.rows() != kAttnRes * kAttnRes || mask.cols() != m) {
            throw DimensionError("concatenated mask must be 256 x " + std::to_string(m) + ", got " +
                                 shape_str(mask.shape()));
        }
        const auto tv = sinusoid(static_cast<double>(t), 16, 100.0);
        const Tensor temb = time_.forward(Tensor::from({1, 16}, tv));
        const Tensor h0 = silu(add(in_.forward(concat({z_t, c_i}, 1)), temb));
        Tensor hd = avg_pool(h0, kAttnRes, kAttnRes, 2);
        hd = silu(down1_.forward(hd));
        hd = add(hd, silu(down2_.forward(hd)));
        const Tensor h1 = add(h0, up_.forward(upsample_nearest(hd, kAttnRes / 2, kAttnRes / 2, 2)));

        const Tensor q = q_.forward(ln_attn_.forward(h1));
        const Tensor c_null = gather_rows(null_text_, std::vector<std::size_t>(m, 0));
        const Tensor x = matmul_nt(q, k_.forward(c_t));
        const Tensor y = matmul_nt(q, k_.forward(c_null));
        const Tensor a = modulate_attention(x, y, mask, config_.attn_dim);
        const Tensor attended =
            add(matmul(mul(a, mask), v_.forward(c_t)), matmul(mul(a, one_minus(mask)), v_.forward(c_null)));
        const Tensor h2 = add(h1, o_.forward(attended));
        const Tensor h3 = add(h2, mlp_.forward(ln_mlp_.forward(h2)));
        return out_.forward(h3);
    }

    /// e(z_t, c_I, ∅): the same network with an all-zero mask.
    Tensor score_image_only(const Tensor& z_t, const Tensor& c_i, std::size_t t, const Tensor& c_t) const {
        return score(z_t, c_i, t, c_t, Tensor::zeros({kAttnRes * kAttnRes, c_t.rows()}));
    }

    /// e(z_t, ∅, ∅): image condition zeroed as well.
    Tensor score_uncond(const Tensor& z_t, std::size_t t, const Tensor& c_t) const {
        return score_image_only(z_t, Tensor::zeros(z_t.shape()), t, c_t);
    }

    const DenoiserConfig& config() const noexcept { return config_; }

private:
    DenoiserConfig config_;
    Linear in_, time_, down1_, down2_, up_, q_, k_, v_, o_, out_;
    LayerNorm ln_attn_, ln_mlp_;
    Mlp mlp_;
    Tensor null_text_;
};

/// Deterministic DDIM (η = 0) edit of `x_img` from seeded noise mixed with its
/// latent. Runs without recording gradients.
inline Image sample(const Denoiser& net, const Image& x_img, const Tensor& c_t, const Tensor& mask,
                    const GuidanceConfig& cfg, std::uint64_t seed, const Schedule& schedule = Schedule::linear()) {
    NoGradGuard guard;
    const Tensor c_i = encode_latent(x_img);
    const std::size_t T = schedule.steps();
    Rng rng(mix_seed(seed, 0xd1f));
    const Tensor noise = randn(c_i.shape(), 1.0, rng);
    const double ab_last = schedule.alpha_bar[T - 1];
    Tensor z = add(scale(c_i, std::sqrt(ab_last)), scale(noise, std::sqrt(1.0 - ab_last)));
    for (std::size_t step = T; step-- > 0;) {
        const double ab = schedule.alpha_bar[step];
        const Tensor e_full = net.score(z, c_i, step, c_t, mask);
        const Tensor e_img = net.score_image_only(z, c_i, step, c_t);
        const Tensor e_unc = net.score_uncond(z, step, c_t);
        const Tensor eps = cfg_combine(e_unc, e_img, e_full, cfg);
        Tensor x0 = scale(sub(z, scale(eps, std::sqrt(1.0 - ab))), 1.0 / std::sqrt(ab));
        x0 = clamp(x0, -1.0, 1.0);
        if (step == 0) {
            z = x0;
            break;
        }
        const double ab_prev = schedule.alpha_bar[step - 1];
        z = add(scale(x0, std::sqrt(ab_prev)), scale(eps, std::sqrt(1.0 - ab_prev)));
    }
    return decode_latent(z);
}

}  // namespace camila
