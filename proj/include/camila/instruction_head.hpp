#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "camila/encoders.hpp"
#include "camila/numerics/nn.hpp"
#include "camila/world.hpp"

// Joint image/instruction transformer. Emits one output token per instruction
// (the hidden state at its <sep> marker) with [MASK]/[NEG] class logits.

namespace camila {

enum class TokenLabel { mask = 0, neg = 1 };

struct OutputTokenSet {
    Tensor embeddings;    // n × 32
    Tensor class_logits;  // n × 2, columns [MASK, NEG]
    std::size_t size() const { return embeddings.rows(); }
};

struct HeadConfig {
    std::size_t width = kEmbedDim;
    std::size_t heads = 4;
    std::size_t blocks = 2;
    std::size_t mlp_hidden = 64;
    std::size_t lora_rank = 4;
    double lora_scale = 16.0;
    bool adapt_mlp = true;
    bool staged = true;               // first block reads text only
    double image_position_scale = 0.2;
    bool image_local = true;          // image rows attend only to themselves
    double half_plane_code = 1.0;
};

/// Additive attention mask for [image; prompt]: image rows see image
/// columns (only themselves when `image_local` is set); a prompt row sees the
/// non-connective tokens of its own instruction, plus the image columns when
/// `see_image` is set; connective rows see only themselves.
inline Tensor head_attention_mask(std::size_t n_image, const world::Prompt& prompt, bool see_image = true,
                                  bool image_local = false) {
    const auto& vocab = world::Vocabulary::get();
    const std::size_t connective = vocab.id(world::kConnective);
    const std::size_t m = prompt.ids.size();
    const std::size_t L = n_image + m;
    constexpr double kBlocked = -1e9;
    auto mask = Tensor::filled({L, L}, kBlocked);
    auto d = mask.data();
    for (std::size_t r = 0; r < L; ++r) {
        if (r >= n_image && prompt.ids[r - n_image] == connective) {
            d[r * L + r] = 0.0;
            continue;
        }
        if (r < n_image) {
            if (image_local) {
                d[r * L + r] = 0.0;
                continue;
            }
            for (std::size_t c = 0; c < n_image; ++c) {
                d[r * L + c] = 0.0;
            }
            continue;
        }
        if (see_image) {
            for (std::size_t c = 0; c < n_image; ++c) {
                d[r * L + c] = 0.0;
            }
        }
        const std::size_t inst = prompt.instruction_of[r - n_image];
        for (std::size_t j = 0; j < m; ++j) {
            if (prompt.instruction_of[j] == inst && prompt.ids[j] != connective) {
                d[r * L + n_image + j] = 0.0;
            }
        }
    }
    return mask;
}

class InstructionHead {
public:
    InstructionHead(ParamStore& store, Rng& rng, HeadConfig config = {}) : config_(config) {
        const std::size_t w = config.width;
        embed_ = store.add("head.embed", randn({world::Vocabulary::get().size(), w}, 1.0, rng), false);
        projector_ = Linear(store, "head.projector", kEmbedDim, w, rng, true, true);
        const std::size_t P = world::kGrid * world::kGrid;
        auto pos = Tensor::zeros({P, w});
        for (std::size_t p = 0; p < P; ++p) {
            const auto sx = sinusoid(static_cast<double>(p % world::kGrid), w / 2, 16.0);
            const auto sy = sinusoid(static_cast<double>(p / world::kGrid), w / 2, 16.0);
            for (std::size_t k = 0; k < w / 2; ++k) {
                pos.at(p, k) = config.image_position_scale * sx[k];
                pos.at(p, w / 2 + k) = config.image_position_scale * sy[k];
            }
            // ±1 for left/right and top/bottom half in the last two dims of every head.
            const double hx = p % world::kGrid < world::kGrid / 2 ? 1.0 : -1.0;
            const double hy = p / world::kGrid < world::kGrid / 2 ? 1.0 : -1.0;
            for (std::size_t h = 0; h < config.heads; ++h) {
                const std::size_t end = (h + 1) * (w / config.heads);
                pos.at(p, end - 2) += config.half_plane_code * hx;
                pos.at(p, end - 1) += config.half_plane_code * hy;
            }
        }
        image_pos_ = store.add("head.image_position", pos, false);
        for (std::size_t b = 0; b < config.blocks; ++b) {
            const std::string p = "head.block" + std::to_string(b);
            Block blk;
            blk.ln1 = LayerNorm(store, p + ".ln1", w, false);
            blk.attn = MultiHeadAttention(store, p + ".attn", w, w, w, config.heads, rng, false);
            blk.ln2 = LayerNorm(store, p + ".ln2", w, false);
            blk.mlp = Mlp(store, p + ".mlp", w, config.mlp_hidden, rng, false);
            blocks_.push_back(std::move(blk));
        }
        final_ln_ = LayerNorm(store, "head.final_ln", w, true);
        classifier_ = Linear(store, "head.classifier", w, 2, rng, true, true);
    }

    /// Attaches low-rank adapters to every frozen block projection.
    void apply_lora(ParamStore& store, std::size_t rank, double scale, Rng& rng) {
        for (auto& blk : blocks_) {
            for (Linear* l : blk.attn.projections()) {
                l->attach_adapter(store, rank, scale, rng);
            }
            if (config_.adapt_mlp) {
                for (Linear* l : blk.mlp.projections()) {
                    l->attach_adapter(store, rank, scale, rng);
                }
            }
        }
    }

    void set_adapters_enabled(bool on) {
        for (auto& blk : blocks_) {
            for (Linear* l : blk.attn.projections()) {
                l->set_adapter_enabled(on);
            }
            for (Linear* l : blk.mlp.projections()) {
                l->set_adapter_enabled(on);
            }
        }
    }

    /// `position_signals = false` is the diagnostic mode without prompt
    /// position encodings.
    OutputTokenSet forward(const Tensor& image_tokens, const world::Prompt& prompt,
                           bool position_signals = true) const {
        if (prompt.boundaries.empty()) {
            throw ContractError("prompt contains no instruction boundary");
        }
        if (image_tokens.rank() != 2 || image_tokens.cols() != kEmbedDim) {
            throw DimensionError("image tokens must be P x 32, got " + shape_str(image_tokens.shape()));
        }
        const std::size_t w = config_.width;
        const std::size_t P = image_tokens.rows();
        const std::size_t m = prompt.ids.size();

        if (P != image_pos_.rows()) {
            throw DimensionError("expected " + std::to_string(image_pos_.rows()) + " image tokens, got " +
                                 std::to_string(P));
        }
        Tensor img = add(projector_.forward(image_tokens), image_pos_);

        Tensor txt = gather_rows(embed_, prompt.ids);
        if (position_signals) {
            auto pos = Tensor::zeros({m, w});
            for (std::size_t j = 0; j < m; ++j) {
                const auto g = sinusoid(static_cast<double>(j), w / 2, 64.0);
                const auto l = sinusoid(static_cast<double>(prompt.offset_in_instruction[j]), w / 2, 16.0);
                for (std::size_t k = 0; k < w / 2; ++k) {
                    pos.at(j, k) = g[k];
                    pos.at(j, w / 2 + k) = l[k];
                }
            }
            txt = add(txt, pos);
        }

        // The first block reads the instruction alone; later blocks query the
        // image with that summary.
        const Tensor text_only = head_attention_mask(P, prompt, !config_.staged, config_.image_local);
        const Tensor joint = head_attention_mask(P, prompt, true, config_.image_local);
        Tensor x = concat({img, txt}, 0);
        for (std::size_t b = 0; b < blocks_.size(); ++b) {
            const auto& blk = blocks_[b];
            const Tensor h = blk.ln1.forward(x);
            x = add(x, blk.attn.forward(h, h, b == 0 ? &text_only : &joint));
            x = add(x, blk.mlp.forward(blk.ln2.forward(x)));
        }
        std::vector<std::size_t> rows;
        for (std::size_t b : prompt.boundaries) {
            rows.push_back(P + b);
        }
        const Tensor out = final_ln_.forward(gather_rows(x, rows));
        return OutputTokenSet{out, classifier_.forward(out)};
    }

    const HeadConfig& config() const noexcept { return config_; }

private:
    struct Block {
        LayerNorm ln1, ln2;
        MultiHeadAttention attn;
        Mlp mlp;
    };

    HeadConfig config_;
    Tensor embed_;
    Tensor image_pos_;
    Linear projector_;
    std::vector<Block> blocks_;
    LayerNorm final_ln_;
    Linear classifier_;
};

/// Per-row argmax; ties resolve to NEG.
inline std::vector<TokenLabel> classify(const Tensor& class_logits) {
    if (class_logits.rank() != 2 || class_logits.cols() != 2) {
        throw DimensionError("class logits must be n x 2, got " + shape_str(class_logits.shape()));
    }
    require_finite(class_logits, "classify");
    std::vector<TokenLabel> out;
    for (std::size_t i = 0; i < class_logits.rows(); ++i) {
        out.push_back(class_logits.at(i, 0) > class_logits.at(i, 1) ? TokenLabel::mask : TokenLabel::neg);
    }
    return out;
}

/// Mean cross-entropy against applicability (applicable → MASK).
inline Tensor token_ce_loss(const Tensor& class_logits, const std::vector<bool>& applicable) {
    if (class_logits.rows() != applicable.size()) {
        throw DimensionError("token_ce_loss: " + std::to_string(class_logits.rows()) + " logits rows vs " +
                             std::to_string(applicable.size()) + " labels");
    }
    std::vector<std::size_t> targets;
    for (bool a : applicable) {
        targets.push_back(a ? 0 : 1);
    }
    return cross_entropy(class_logits, targets);
}

}  // namespace camila
