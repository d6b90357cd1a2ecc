#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "camila/encoders.hpp"
#include "camila/numerics/nn.hpp"

// Single-block transformer predicting the proxy text-image score from the
// pooled image, the pooled instruction embedding and a mask summary.

namespace camila {

inline constexpr double kMaskSummaryGain = 10.0;

struct SurrogateInput {
    Tensor image;         // 1 × 32
    Tensor instruction;   // 1 × 32
    Tensor mask_summary;  // 1 × 32
};

class Surrogate {
public:
    Surrogate(ParamStore& store, Rng& rng) {
        const std::size_t w = kEmbedDim;
        summary_proj_ = store.add("surrogate_fixed.summary_proj", randn({w, w}, 1.0 / std::sqrt(double(w)), rng), false);
        type_ = store.add("surrogate.type", randn({3, w}, 0.1, rng), true);
        ln1_ = LayerNorm(store, "surrogate.ln1", w);
        attn_ = MultiHeadAttention(store, "surrogate.attn", w, w, w, 4, rng);
        ln2_ = LayerNorm(store, "surrogate.ln2", w);
        mlp_ = Mlp(store, "surrogate.mlp", w, 64, rng);
        head_ = Linear(store, "surrogate.head", w, 1, rng);
    }

    /// Coverage of each 𝓜 column (mean over the 256 cells) weighting the
    /// text embeddings, through the fixed projection: 1 × 32.
    Tensor mask_summary(const Tensor& c_t, const Tensor& mask) const {
        if (mask.cols() != c_t.rows()) {
            throw DimensionError("mask columns must match text positions");
        }
        const Tensor coverage = mean_axis(mask, 0);  // 1 × m
        const double gain = kMaskSummaryGain / static_cast<double>(c_t.rows());
        return scale(matmul(matmul(coverage, c_t), summary_proj_), gain);
    }

    SurrogateInput make_input(const Tensor& image_tokens, const Tensor& c_t, const Tensor& mask) const {
        return {mean_axis(image_tokens, 0), mean_axis(c_t, 0), mask_summary(c_t, mask)};
    }

    /// Scalar prediction in [−1, 1] as a 1 × 1 tensor.
    Tensor predict(const SurrogateInput& in) const {
        Tensor x = add(concat({in.image, in.instruction, in.mask_summary}, 0), type_);
        const Tensor h = ln1_.forward(x);
        x = add(x, attn_.forward(h, h));
        x = add(x, mlp_.forward(ln2_.forward(x)));
        return tanh(head_.forward(mean_axis(x, 0)));
    }

private:
    Tensor summary_proj_, type_;
    LayerNorm ln1_, ln2_;
    MultiHeadAttention attn_;
    Mlp mlp_;
    Linear head_;
};

/// Mean of (actual − predicted)².
inline Tensor surrogate_mse_loss(const Tensor& predicted, const Tensor& actual) {
    if (predicted.numel() == 0) {
        throw ContractError("surrogate_mse_loss needs a non-empty batch");
    }
    if (predicted.shape() != actual.shape()) {
        throw DimensionError("surrogate_mse_loss: shapes " + shape_str(predicted.shape()) + " and " +
                             shape_str(actual.shape()) + " differ");
    }
    return mse(predicted, actual);
}

/// 𝓛_updated = 𝓛_main + λ₅ (oracle − predicted)². `surrogate_frozen` states
/// whether every surrogate parameter is excluded from the optimiser.
inline Tensor refine_step(const Tensor& main_loss, const Tensor& predicted, double oracle, double lambda5,
                          bool surrogate_frozen) {
    if (!surrogate_frozen) {
        throw ContractError("refinement requires a frozen surrogate");
    }
    if (lambda5 == 0.0) {
        return main_loss;
    }
    const Tensor target = Tensor::filled(predicted.shape(), oracle);
    return add(main_loss, scale(surrogate_mse_loss(predicted, target), lambda5));
}

}  // namespace camila
