#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
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

namespace camila::testing {

// Relative error |a − n| / max(|a|, |n|, floor). The floor keeps entries whose
// true gradient is ~0 from dividing round-off by round-off.
inline constexpr double kGradFloor = 1e-6;
inline constexpr double kFdStep = 1e-3;

struct GradCheck {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::string worst;
    double worst_analytic = 0.0, worst_numeric = 0.0;
};

/// Compares reverse-mode gradients of `loss` against five-point central
/// differences on up to `per_tensor` randomly chosen entries of every tensor in
/// `params`.
inline GradCheck check_gradients(const std::function<Tensor()>& loss, std::vector<std::pair<std::string, Tensor>> params,
                                 Rng& rng, std::size_t per_tensor = 4) {
    for (auto& [name, p] : params) {
        p.set_requires_grad(true);
        p.zero_grad();
    }
    backward(loss());
    GradCheck out;
    for (auto& [name, p] : params) {
        const std::vector<double> analytic(p.grad().begin(), p.grad().end());
        std::vector<std::size_t> idx(p.numel());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            idx[i] = i;
        }
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(std::min(per_tensor, idx.size()));
        for (std::size_t i : idx) {
            NoGradGuard guard;
            const double x = p.data()[i];
            auto at = [&](double offset) {
                p.data()[i] = x + offset;
                return loss().item();
            };
            const double f2p = at(2.0 * kFdStep), f1p = at(kFdStep), f1m = at(-kFdStep), f2m = at(-2.0 * kFdStep);
            p.data()[i] = x;
            const double numeric = (-f2p + 8.0 * f1p - 8.0 * f1m + f2m) / (12.0 * kFdStep);
            const double rel = std::abs(analytic[i] - numeric) /
                               std::max({std::abs(analytic[i]), std::abs(numeric), kGradFloor});
            ++out.checked;
            if (rel > out.max_rel_error) {
                out.max_rel_error = rel;
                out.worst = name + "[" + std::to_string(i) + "]";
                out.worst_analytic = analytic[i];
                out.worst_numeric = numeric;
            }
        }
    }
    return out;
}

/// A module under test: its parameters, inputs and a scalar loss.
struct ModuleCase {
    std::shared_ptr<ParamStore> store = std::make_shared<ParamStore>();
    std::shared_ptr<void> module;
    std::function<Tensor()> loss;

    std::vector<std::pair<std::string, Tensor>> trainable() const {
        std::vector<std::pair<std::string, Tensor>> out;
        for (const auto& e : store->entries()) {
            if (e.trainable) {
                out.emplace_back(e.name, e.tensor);
            }
        }
        return out;
    }
};

// Moves every trainable tensor off its initial value so zero-initialised
// adapters and unit LayerNorm gains do not hide gradient paths.
inline void jitter(ParamStore& store, Rng& rng, double stddev = 0.1) {
    std::normal_distribution<double> d(0.0, stddev);
    for (auto& e : store.entries()) {
        if (e.trainable) {
            for (double& v : e.tensor.data()) {
                v += d(rng);
            }
        }
    }
}

inline world::Episode episode_with_nonapplicable(std::uint64_t seed) {
    for (std::uint64_t s = seed;; ++s) {
        auto ep = world::gen_episode(s);
        if (ep.task == world::TaskKind::context_aware) {
            return ep;
        }
    }
}

inline ModuleCase head_case(std::uint64_t seed) {
    ModuleCase c;
    Rng rng(seed);
    auto head = std::make_shared<InstructionHead>(*c.store, rng);
    const double lora_scale = head->config().lora_scale;
    head->apply_lora(*c.store, head->config().lora_rank, lora_scale, rng);
    jitter(*c.store, rng);
    // Undo most of the adapter jitter so the scaled update stays comparable to
    // the other perturbations; otherwise attention saturates and the stencil
    // sees curvature rather than the gradient.
    for (auto& e : c.store->entries()) {
        if (e.name.find(".lora_b") != std::string::npos) {
            for (double& v : e.tensor.data()) {
                v /= lora_scale;
            }
        }
    }
    const auto ep = episode_with_nonapplicable(seed);
    const auto prompt = world::build_prompt(ep.instructions);
    std::vector<bool> applicable;
    for (const auto& in : ep.instructions) {
        applicable.push_back(in.applicable);
    }
    const Tensor img = randn({world::kGrid * world::kGrid, kEmbedDim}, 1.0, rng);
    const Tensor w = randn({prompt.boundaries.size(), head->config().width}, 1.0, rng);
    c.module = head;
    c.loss = [head, prompt, applicable, img, w] {
        const auto o = head->forward(img, prompt);
        return add(token_ce_loss(o.class_logits, applicable), sum(mul(o.embeddings, w)));
    };
    return c;
}

inline ModuleCase broadcaster_case(std::uint64_t seed) {
    ModuleCase c;
    Rng rng(seed);
    auto b = std::make_shared<TokenBroadcaster>(*c.store, rng);
    const std::size_t n = 2 + seed % 3, m = 5 + seed % 7;
    const Tensor o = randn({n, kEmbedDim}, 1.0, rng);
    const Tensor ct = randn({m, kEmbedDim}, 1.0, rng);
    std::vector<std::size_t> gt(m);
    for (std::size_t j = 0; j < m; ++j) {
        gt[j] = rng() % n;
    }
    c.module = b;
    c.loss = [b, o, ct, gt] { return broadcast_ce_loss(similarity(o, ct, *b), gt); };
    return c;
}

inline ModuleCase decoder_case(std::uint64_t seed) {
    ModuleCase c;
    Rng rng(seed);
    auto dec = std::make_shared<TokenDecoder>(*c.store, rng);
    jitter(*c.store, rng, 0.05);
    const std::size_t k = 1 + seed % 3;
    const Tensor img = randn({world::kGrid * world::kGrid, kEmbedDim}, 1.0, rng);
    const Tensor ct = randn({6, kEmbedDim}, 1.0, rng);
    const Tensor tokens = randn({k, kEmbedDim}, 1.0, rng);
    auto gt = Tensor::zeros({kMaskRes * kMaskRes, k});
    for (std::size_t col = 0; col < k; ++col) {
        const std::size_t x0 = rng() % 40, y0 = rng() % 40;
        for (std::size_t y = y0; y < y0 + 16; ++y) {
            for (std::size_t x = x0; x < x0 + 24; ++x) {
                gt.at(y * kMaskRes + x, col) = 1.0;
            }
        }
    }
    c.module = dec;
    c.loss = [dec, img, ct, tokens, gt] {
        const Tensor p = dec->probabilities(img, ct, tokens);
        return add(dice_loss(p, gt), mask_bce_loss(p, gt));
    };
    return c;
}

inline ModuleCase denoiser_case(std::uint64_t seed) {
    ModuleCase c;
    Rng rng(seed);
    auto net = std::make_shared<Denoiser>(*c.store, rng);
    jitter(*c.store, rng, 0.05);
    const std::size_t m = 3 + seed % 5;
    const std::size_t cells = kAttnRes * kAttnRes;
    const Tensor z = randn({cells, kLatentChannels}, 1.0, rng);
    const Tensor ci = randn({cells, kLatentChannels}, 0.5, rng);
    const Tensor ct = randn({m, kEmbedDim}, 1.0, rng);
    const Tensor eps = randn({cells, kLatentChannels}, 1.0, rng);
    auto mask = Tensor::zeros({cells, m});
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (double& v : mask.data()) {
        v = u(rng);
    }
    const std::size_t t = seed % 10;
    c.module = net;
    c.loss = [net, z, ci, ct, eps, mask, t] { return mse(net->score(z, ci, t, ct, mask), eps); };
    return c;
}

inline ModuleCase surrogate_case(std::uint64_t seed) {
    ModuleCase c;
    Rng rng(seed);
    auto s = std::make_shared<Surrogate>(*c.store, rng);
    jitter(*c.store, rng, 0.05);
    std::vector<SurrogateInput> inputs;
    std::vector<double> targets;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t b = 0; b < 4; ++b) {
        const std::size_t m = 4 + b;
        auto mask = Tensor::zeros({kAttnRes * kAttnRes, m});
        for (double& v : mask.data()) {
            v = u(rng) < 0.3 ? 1.0 : 0.0;
        }
        inputs.push_back(s->make_input(randn({64, kEmbedDim}, 1.0, rng), randn({m, kEmbedDim}, 1.0, rng), mask));
        targets.push_back(u(rng));
    }
    const Tensor actual = Tensor::from({targets.size(), 1}, targets);
    c.module = s;
    c.loss = [s, inputs, actual] {
        std::vector<Tensor> preds;
        for (const auto& in : inputs) {
            preds.push_back(s->predict(in));
        }
        return surrogate_mse_loss(concat(preds, 0), actual);
    };
    return c;
}

struct NamedCase {
    const char* name;
    ModuleCase (*make)(std::uint64_t);
};

inline constexpr NamedCase kModuleCases[] = {
    {"head", head_case},
    {"broadcaster", broadcaster_case},
    {"decoder", decoder_case},
    {"denoiser", denoiser_case},
    {"surrogate", surrogate_case},
};

}  // namespace camila::testing
