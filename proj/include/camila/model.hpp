#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "camila/diffusion_editor.hpp"
#include "camila/encoders.hpp"
#include "camila/instruction_head.hpp"
#include "camila/surrogate_refiner.hpp"
#include "camila/token_broadcaster.hpp"
#include "camila/token_decoder.hpp"
#include "camila/world.hpp"

// Every module of the editing pipeline over one parameter store, plus the
// per-episode tensors the trainer and evaluator share.

namespace camila {

struct ModelConfig {
    std::uint64_t seed = 0;
    HeadConfig head;
};

class Model {
public:
    explicit Model(const ModelConfig& config)
        : config_(config),
          rng_(mix_seed(config.seed, 0x30de1)),
          vision(store, rng_),
          text(store, rng_),
          head(store, rng_, config.head),
          broadcaster(store, rng_),
          decoder(store, rng_),
          denoiser(store, rng_),
          surrogate(store, rng_) {
        head.apply_lora(store, config.head.lora_rank, config.head.lora_scale, rng_);
    }

    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    const ModelConfig& config() const noexcept { return config_; }

private:
    ModelConfig config_;
    Rng rng_;

public:
    ParamStore store;
    VisionEncoder vision;
    TextEncoder text;
    InstructionHead head;
    TokenBroadcaster broadcaster;
    TokenDecoder decoder;
    Denoiser denoiser;
    Surrogate surrogate;
};

/// Parameter-name prefixes of the trainable sets per phase.
inline const std::vector<std::string>& main_prefixes() {
    static const std::vector<std::string> p = {"head.", "broadcast.", "decoder.", "denoiser."};
    return p;
}
inline const std::vector<std::string>& surrogate_prefixes() {
    static const std::vector<std::string> p = {"surrogate."};
    return p;
}

inline bool has_prefix(const std::string& name, const std::vector<std::string>& prefixes) {
    for (const auto& p : prefixes) {
        if (name.rfind(p, 0) == 0) {
            return true;
        }
    }
    return false;
}

/// Trainable tensors matching `prefixes`; marks them as requiring grad and
/// clears the flag on everything else.
inline std::vector<Tensor> select_trainable(ParamStore& store, const std::vector<std::string>& prefixes) {
    std::vector<Tensor> out;
    for (auto& e : store.entries()) {
        const bool on = e.trainable && has_prefix(e.name, prefixes);
        e.tensor.set_requires_grad(on);
        e.tensor.zero_grad();
        if (on) {
            out.push_back(e.tensor);
        }
    }
    return out;
}

inline void freeze_all(ParamStore& store) {
    for (auto& e : store.entries()) {
        e.tensor.set_requires_grad(false);
    }
}

/// Hash of every parameter outside `prefixes`.
inline std::uint64_t hash_excluding(const ParamStore& store, const std::vector<std::string>& prefixes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& e : store.entries()) {
        if (has_prefix(e.name, prefixes)) {
            continue;
        }
        h = fnv1a(e.name.data(), e.name.size(), h);
        for (double v : e.tensor.data()) {
            const auto bits = std::bit_cast<std::uint64_t>(v);
            h = fnv1a(&bits, sizeof bits, h);
        }
    }
    return h;
}

inline std::uint64_t hash_including(const ParamStore& store, const std::vector<std::string>& prefixes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& e : store.entries()) {
        if (!has_prefix(e.name, prefixes)) {
            continue;
        }
        h = fnv1a(e.name.data(), e.name.size(), h);
        for (double v : e.tensor.data()) {
            const auto bits = std::bit_cast<std::uint64_t>(v);
            h = fnv1a(&bits, sizeof bits, h);
        }
    }
    return h;
}

/// Hash of every parameter registered as non-trainable.
inline std::uint64_t hash_frozen(const ParamStore& store) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& e : store.entries()) {
        if (e.trainable) {
            continue;
        }
        h = fnv1a(e.name.data(), e.name.size(), h);
        for (double v : e.tensor.data()) {
            const auto bits = std::bit_cast<std::uint64_t>(v);
            h = fnv1a(&bits, sizeof bits, h);
        }
    }
    return h;
}

// ---------------------------------------------------------------------------
// Prepared episodes

struct Prepared {
    const world::Episode* episode = nullptr;
    world::Prompt prompt;
    Tensor image_tokens;                  // 64 × 32
    Tensor c_t;                           // m × 32
    std::vector<bool> applicable;         // per instruction
    std::vector<std::size_t> applicable_index;
    std::vector<std::size_t> gt_alignment;  // per text position
    Tensor gt_masks;                      // 4096 × (#applicable)
    Tensor gt_concat;                     // 256 × m
    Tensor z_scene, z_goal;               // 256 × 4
};

inline Prepared prepare(const Model& model, const world::Episode& ep) {
    NoGradGuard guard;
    Prepared p;
    p.episode = &ep;
    p.prompt = world::build_prompt(ep.instructions);
    p.image_tokens = model.vision.encode(ep.scene.image);
    p.c_t = model.text.embed(p.prompt.ids);
    std::vector<Mask> app_masks, all_masks;
    for (std::size_t i = 0; i < ep.instructions.size(); ++i) {
        const auto& in = ep.instructions[i];
        p.applicable.push_back(in.applicable);
        all_masks.push_back(in.target_mask);
        if (in.applicable) {
            p.applicable_index.push_back(i);
            app_masks.push_back(in.target_mask);
        }
    }
    p.gt_alignment = p.prompt.instruction_of;
    p.gt_masks = masks_to_tensor(app_masks);
    p.gt_concat = concat_masks(all_masks, p.gt_alignment);
    p.z_scene = encode_latent(ep.scene.image);
    p.z_goal = encode_latent(ep.goal_image);
    return p;
}

inline std::vector<Prepared> prepare_all(const Model& model, const std::vector<world::Episode>& eps) {
    std::vector<Prepared> out;
    out.reserve(eps.size());
    for (const auto& ep : eps) {
        out.push_back(prepare(model, ep));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Inference

struct EditResult {
    std::vector<TokenLabel> labels;
    std::vector<std::size_t> alignment;
    std::vector<Mask> masks;
    Tensor concat;  // 256 × m
    Image edited;
};

/// Full edit: classify, align, decode, assemble 𝓜 and sample.
inline EditResult run_edit(const Model& model, const Image& scene, const world::Prompt& prompt,
                           const GuidanceConfig& cfg, std::uint64_t seed) {
    NoGradGuard guard;
    const Tensor image_tokens = model.vision.encode(scene);
    const Tensor c_t = model.text.embed(prompt.ids);
    EditResult r;
    const OutputTokenSet o = model.head.forward(image_tokens, prompt);
    r.labels = classify(o.class_logits);
    r.alignment = align(similarity(o.embeddings, c_t, model.broadcaster));
    r.masks = model.decoder.decode(image_tokens, c_t, o, r.labels);
    r.concat = concat_masks(r.masks, r.alignment);
    r.edited = sample(model.denoiser, scene, c_t, r.concat, cfg, seed);
    return r;
}

/// Generation with text conditioning removed: all-zero mask and null text.
inline Image run_text_ablated(const Model& model, const Image& scene, std::size_t m, const GuidanceConfig& cfg,
                              std::uint64_t seed) {
    return sample(model.denoiser, scene, Tensor::zeros({m, kEmbedDim}),
                  Tensor::zeros({kAttnRes * kAttnRes, m}), cfg, seed);
}

}  // namespace camila
