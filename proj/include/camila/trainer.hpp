#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "camila/checkpoint.hpp"
#include "camila/metrics.hpp"
#include "camila/model.hpp"
#include "camila/report.hpp"

// Loss assembly, the three training phases and evaluation.

namespace camila {

struct LossWeights {
    double token = 1.0, broadcast = 1.0, dice = 1.0, bce = 1.0;

    static LossWeights from(const TrainConfig& c) {
        return {c.lambda_token, c.lambda_broadcast, c.lambda_dice, c.lambda_bce};
    }
};

/// λ₁·token + λ₂·broadcast + λ₃·dice + λ₄·bce.
inline Tensor main_loss(const Tensor& token, const Tensor& broadcast, const Tensor& dice, const Tensor& bce,
                        const LossWeights& w) {
    return add(add(scale(token, w.token), scale(broadcast, w.broadcast)),
               add(scale(dice, w.dice), scale(bce, w.bce)));
}

inline double main_loss(const std::array<double, 4>& c, const LossWeights& w) {
    return w.token * c[0] + w.broadcast * c[1] + w.dice * c[2] + w.bce * c[3];
}

inline GuidanceConfig guidance(const TrainConfig& c) { return {c.s_image, c.s_text}; }

struct EpisodeLoss {
    Tensor main;                       // Eq. 6 total (differentiable)
    Tensor total;                      // main + denoiser loss
    std::array<double, 5> parts{};     // token, broadcast, dice, bce, denoise
    OutputTokenSet tokens;
};

/// Main-phase objective for one episode. The decoder is teacher-forced with
/// the ground-truth [MASK] tokens; the denoiser term is included when
/// `with_denoiser` is set.
inline EpisodeLoss episode_loss(const Model& model, const Prepared& p, const TrainConfig& cfg, Rng& rng,
                                bool with_denoiser) {
    EpisodeLoss out;
    out.tokens = model.head.forward(p.image_tokens, p.prompt);
    const Tensor l_token = token_ce_loss(out.tokens.class_logits, p.applicable);
    const Tensor s = similarity(out.tokens.embeddings, p.c_t, model.broadcaster);
    const Tensor l_broadcast = broadcast_ce_loss(s, p.gt_alignment);
    Tensor l_dice = Tensor::scalar(0.0), l_bce = Tensor::scalar(0.0);
    if (!p.applicable_index.empty()) {
        const Tensor probs =
            model.decoder.probabilities(p.image_tokens, p.c_t, gather_rows(out.tokens.embeddings, p.applicable_index));
        l_dice = dice_loss(probs, p.gt_masks);
        l_bce = mask_bce_loss(probs, p.gt_masks);
    }
    out.main = main_loss(l_token, l_broadcast, l_dice, l_bce, LossWeights::from(cfg));
    out.parts = {l_token.item(), l_broadcast.item(), l_dice.item(), l_bce.item(), 0.0};
    out.total = out.main;
    if (with_denoiser) {
        const Schedule sched = Schedule::linear();
        const std::size_t t = std::uniform_int_distribution<std::size_t>(0, sched.steps() - 1)(rng);
        const double ab = sched.alpha_bar[t];
        const Tensor eps = randn(p.z_goal.shape(), 1.0, rng);
        const Tensor z_t = add(scale(p.z_goal, std::sqrt(ab)), scale(eps, std::sqrt(1.0 - ab)));
        std::uniform_real_distribution<double> u(0.0, 1.0);
        const bool drop_image = u(rng) < cfg.cond_dropout;
        const bool drop_text = u(rng) < cfg.cond_dropout;
        const Tensor c_i = drop_image ? Tensor::zeros(p.z_scene.shape()) : p.z_scene;
        const Tensor mask = drop_text ? Tensor::zeros(p.gt_concat.shape()) : p.gt_concat;
        const Tensor l_den = mse(model.denoiser.score(z_t, c_i, t, p.c_t, mask), eps);
        out.parts[4] = l_den.item();
        out.total = add(out.total, l_den);
    }
    return out;
}

namespace detail {

/// Deterministic batch schedule: reshuffled every pass over the data.
class BatchSampler {
public:
    BatchSampler(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        std::shuffle(order_.begin(), order_.end(), rng_);
    }

    std::vector<std::size_t> next(std::size_t batch) {
        std::vector<std::size_t> out;
        while (out.size() < batch) {
            if (pos_ == order_.size()) {
                std::shuffle(order_.begin(), order_.end(), rng_);
                pos_ = 0;
            }
            out.push_back(order_[pos_++]);
        }
        return out;
    }

private:
    std::vector<std::size_t> order_;
    Rng rng_;
    std::size_t pos_ = 0;
};

inline std::string hex64(std::uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline void log_line(std::ostream* log, const std::string& s) {
    if (log != nullptr) {
        *log << s << std::endl;
    }
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

/// Mean Eq. 6 loss (and denoiser loss) over `eps` with a fixed noise stream.
inline std::array<double, 2> fixed_loss(const Model& model, const std::vector<Prepared>& eps, const TrainConfig& cfg,
                                        std::size_t limit = 64) {
    NoGradGuard guard;
    Rng rng(mix_seed(cfg.seed, 0xf1ed));
    const std::size_t n = std::min(limit, eps.size());
    double main = 0.0, den = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto l = episode_loss(model, eps[i], cfg, rng, true);
        main += l.main.item();
        den += l.parts[4];
    }
    return {main / static_cast<double>(n), den / static_cast<double>(n)};
}

inline RunReport base_report(const std::string& phase, const TrainConfig& cfg) {
    RunReport r;
    r.phase = phase;
    r.seed = cfg.seed;
    r.config = cfg.echo;
    return r;
}

// ---------------------------------------------------------------------------
// Phase: main

/// The episode's scene with freshly sampled instructions and goal: up to two
/// applicable edits and, with probability 0.6, one non-applicable one.
/// Nullopt when the scene cannot support the draw.
inline std::optional<world::Episode> resample_instructions(const world::Episode& ep, Rng& rng) {
    std::size_t n_app = rng() % 3;
    std::size_t n_non = std::bernoulli_distribution(0.6)(rng) ? 1 : 0;
    if (n_app + n_non == 0) {
        n_non = 1;
    }
    const std::uint64_t seed = rng();
    try {
        world::Episode out;
        out.seed = ep.seed;
        out.task = n_non ? world::TaskKind::context_aware : ep.task;
        out.scene = ep.scene;
        out.instructions = world::gen_instructions(ep.scene, n_app, n_non, seed);
        auto goal = world::render_goal(ep.scene, out.instructions);
        out.goal_image = std::move(goal.image);
        out.goal_description = std::move(goal.description);
        return out;
    } catch (const GenerationError&) {
        return std::nullopt;
    }
}

inline RunReport train_main(Model& model, const std::vector<world::Episode>& train_set, const TrainConfig& cfg,
                            std::ostream* log = nullptr) {
    if (train_set.empty()) {
        throw ContractError("training split is empty");
    }
    const auto t0 = std::chrono::steady_clock::now();
    const auto prepared = prepare_all(model, train_set);
    auto params = select_trainable(model.store, main_prefixes());
    const std::uint64_t frozen_before = hash_frozen(model.store);
    AdamW opt(params, {.lr = cfg.lr_main, .weight_decay = cfg.weight_decay});
    detail::BatchSampler sampler(prepared.size(), mix_seed(cfg.seed, 0xba7c));
    RunReport report = base_report("main", cfg);
    const auto initial = fixed_loss(model, prepared, cfg);
    std::array<double, 5> acc{};
    std::size_t acc_n = 0;
    for (std::uint64_t step = 0; step < cfg.steps_main; ++step) {
        Rng rng(mix_seed(cfg.seed, 0x57e9 + step));
        opt.zero_grad();
        for (std::size_t idx : sampler.next(cfg.batch_size)) {
            std::optional<world::Episode> fresh;
            if (std::bernoulli_distribution(cfg.augment)(rng)) {
                fresh = resample_instructions(*prepared[idx].episode, rng);
            }
            const Prepared p = fresh ? prepare(model, *fresh) : Prepared{};
            auto l = episode_loss(model, fresh ? p : prepared[idx], cfg, rng, true);
            backward(scale(l.total, 1.0 / static_cast<double>(cfg.batch_size)));
            for (std::size_t k = 0; k < 5; ++k) {
                acc[k] += l.parts[k];
            }
            ++acc_n;
        }
        opt.step();
        if ((step + 1) % cfg.log_every == 0 || step + 1 == cfg.steps_main) {
            const char* names[] = {"token", "broadcast", "dice", "bce", "denoise"};
            std::string line = "main step " + std::to_string(step + 1);
            for (std::size_t k = 0; k < 5; ++k) {
                const double v = acc[k] / static_cast<double>(acc_n);
                report.traces[names[k]].push_back(v);
                line += " " + std::string(names[k]) + "=" + format_double(v).substr(0, 8);
            }
            line += " t=" + std::to_string(static_cast<int>(detail::seconds_since(t0))) + "s";
            detail::log_line(log, line);
            acc = {};
            acc_n = 0;
        }
    }
    freeze_all(model.store);
    const auto final = fixed_loss(model, prepared, cfg);
    report.metrics["train_loss_initial"] = initial[0];
    report.metrics["train_loss_final"] = final[0];
    report.metrics["denoise_loss_initial"] = initial[1];
    report.metrics["denoise_loss_final"] = final[1];
    report.metrics["steps"] = static_cast<double>(cfg.steps_main);
    report.metrics["frozen_params_unchanged"] = hash_frozen(model.store) == frozen_before ? 1.0 : 0.0;
    return report;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EpisodeMetrics {
    double l1 = 0, l2 = 0, sim_i = 0, sim_t = 0, sim_dir = 0;
    std::size_t tokens = 0, tokens_correct = 0;
    std::vector<double> iou, dice;
    bool masked_win = false;
    bool has_applicable = false;
};

inline EpisodeMetrics score_episode(const world::Episode& ep, const EditResult& r, const ProxyClip& clip) {
    EpisodeMetrics m;
    m.l1 = l1_distance(r.edited, ep.goal_image);
    m.l2 = l2_distance(r.edited, ep.goal_image);
    m.sim_i = sim_image(clip, r.edited, ep.goal_image);
    m.sim_t = sim_text(clip, r.edited, ep.goal_description);
    m.sim_dir = sim_direction(clip, ep.scene.image, r.edited, world::caption_words(ep.scene.objects),
                              ep.goal_description);
    Mask region = Mask::zeros(64, 64);
    for (std::size_t i = 0; i < ep.instructions.size(); ++i) {
        const auto& in = ep.instructions[i];
        ++m.tokens;
        if ((r.labels[i] == TokenLabel::mask) == in.applicable) {
            ++m.tokens_correct;
        }
        if (in.applicable) {
            m.iou.push_back(mask_iou(r.masks[i], in.target_mask));
            m.dice.push_back(mask_dice(r.masks[i], in.target_mask));
            region = mask_union(region, in.target_mask);
            m.has_applicable = true;
        }
    }
    if (m.has_applicable) {
        m.masked_win = masked_l1(r.edited, ep.goal_image, region) < masked_l1(ep.scene.image, ep.goal_image, region);
    }
    return m;
}

inline std::uint64_t edit_seed(std::uint64_t seed, const world::Episode& ep) { return mix_seed(seed, ep.seed); }

inline RunReport evaluate(const Model& model, const std::vector<world::Episode>& eps, const TrainConfig& cfg,
                          const std::string& split = "test") {
    if (eps.empty()) {
        throw ContractError("evaluation split '" + split + "' is empty");
    }
    const ProxyClip clip;
    RunReport report = base_report("eval", cfg);
    double l1 = 0, l2 = 0, si = 0, st = 0, sd = 0;
    std::size_t tok = 0, tok_ok = 0, n_app_eps = 0, wins = 0;
    double iou = 0, dice = 0;
    std::size_t n_masks = 0;
    for (const auto& ep : eps) {
        const auto r = run_edit(model, ep.scene.image, world::build_prompt(ep.instructions), guidance(cfg),
                                edit_seed(cfg.seed, ep));
        const auto m = score_episode(ep, r, clip);
        l1 += m.l1;
        l2 += m.l2;
        si += m.sim_i;
        st += m.sim_t;
        sd += m.sim_dir;
        tok += m.tokens;
        tok_ok += m.tokens_correct;
        for (std::size_t k = 0; k < m.iou.size(); ++k) {
            iou += m.iou[k];
            dice += m.dice[k];
            ++n_masks;
        }
        if (m.has_applicable) {
            ++n_app_eps;
            wins += m.masked_win ? 1 : 0;
        }
    }
    const double n = static_cast<double>(eps.size());
    report.metrics["episodes"] = n;
    report.metrics["l1"] = l1 / n;
    report.metrics["l2"] = l2 / n;
    report.metrics["sim_i"] = si / n;
    report.metrics["sim_t"] = st / n;
    report.metrics["sim_dir"] = sd / n;
    report.metrics["token_accuracy"] = static_cast<double>(tok_ok) / static_cast<double>(tok);
    report.metrics["iou"] = n_masks ? iou / static_cast<double>(n_masks) : 0.0;
    report.metrics["dice"] = n_masks ? dice / static_cast<double>(n_masks) : 0.0;
    report.metrics["applicable_instructions"] = static_cast<double>(n_masks);
    report.metrics["masked_l1_win_rate"] =
        n_app_eps ? static_cast<double>(wins) / static_cast<double>(n_app_eps) : 0.0;
    return report;
}

// ---------------------------------------------------------------------------
// Phase: surrogate

struct ScoreSample {
    const Prepared* prepared = nullptr;
    Tensor mask;  // 256 × m
    double actual = 0.0;
};

/// Four mask variants per episode (model prediction, ground truth, empty, and
/// a random subset of the ground-truth instructions), each scored by sampling.
inline std::vector<ScoreSample> build_score_samples(const Model& model, const std::vector<Prepared>& eps,
                                                    const TrainConfig& cfg, std::uint64_t stream) {
    NoGradGuard guard;
    const ProxyClip clip;
    std::vector<ScoreSample> out;
    Rng rng(mix_seed(cfg.seed, stream));
    for (const auto& p : eps) {
        const auto& ep = *p.episode;
        const std::uint64_t seed = edit_seed(cfg.seed, ep);
        std::vector<Tensor> variants;
        {
            const OutputTokenSet o = model.head.forward(p.image_tokens, p.prompt);
            const auto labels = classify(o.class_logits);
            const auto alpha = align(similarity(o.embeddings, p.c_t, model.broadcaster));
            variants.push_back(concat_masks(model.decoder.decode(p.image_tokens, p.c_t, o, labels), alpha));
        }
        variants.push_back(p.gt_concat);
        variants.push_back(Tensor::zeros(p.gt_concat.shape()));
        {
            std::vector<Mask> masks;
            std::bernoulli_distribution keep(0.5);
            for (const auto& in : ep.instructions) {
                masks.push_back(in.applicable && keep(rng) ? in.target_mask : Mask::zeros(64, 64));
            }
            variants.push_back(concat_masks(masks, p.gt_alignment));
        }
        for (auto& v : variants) {
            const Image edited = sample(model.denoiser, ep.scene.image, p.c_t, v, guidance(cfg), seed);
            out.push_back({&p, v, sim_text(clip, edited, ep.goal_description)});
        }
    }
    return out;
}

inline double surrogate_mse(const Model& model, const std::vector<ScoreSample>& samples) {
    NoGradGuard guard;
    double s = 0.0;
    for (const auto& x : samples) {
        const double pred =
            model.surrogate.predict(model.surrogate.make_input(x.prepared->image_tokens, x.prepared->c_t, x.mask))
                .item();
        s += (pred - x.actual) * (pred - x.actual);
    }
    return s / static_cast<double>(samples.size());
}

inline RunReport train_surrogate(Model& model, const std::vector<world::Episode>& train_set,
                                 const std::vector<world::Episode>& val_set, const TrainConfig& cfg,
                                 std::ostream* log = nullptr) {
    if (train_set.empty() || val_set.empty()) {
        throw ContractError("surrogate phase needs non-empty train and val splits");
    }
    const auto t0 = std::chrono::steady_clock::now();
    const auto train_p = prepare_all(model, train_set);
    const auto val_p = prepare_all(model, val_set);
    const auto train_s = build_score_samples(model, train_p, cfg, 0x5a01);
    const auto val_s = build_score_samples(model, val_p, cfg, 0x5a02);
    detail::log_line(log, "surrogate samples built in " + std::to_string(static_cast<int>(detail::seconds_since(t0))) +
                              "s");
    double mean_actual = 0.0;
    for (const auto& s : train_s) {
        mean_actual += s.actual;
    }
    mean_actual /= static_cast<double>(train_s.size());
    double baseline = 0.0, var_val = 0.0, mean_val = 0.0;
    for (const auto& s : val_s) {
        baseline += (s.actual - mean_actual) * (s.actual - mean_actual);
        mean_val += s.actual;
    }
    baseline /= static_cast<double>(val_s.size());
    mean_val /= static_cast<double>(val_s.size());
    for (const auto& s : val_s) {
        var_val += (s.actual - mean_val) * (s.actual - mean_val);
    }
    var_val /= static_cast<double>(val_s.size());

    const std::uint64_t others_before = hash_excluding(model.store, surrogate_prefixes());
    RunReport report = base_report("surrogate", cfg);
    report.metrics["surrogate_val_mse_initial"] = surrogate_mse(model, val_s);

    auto params = select_trainable(model.store, surrogate_prefixes());
    AdamW opt(params, {.lr = cfg.lr_surrogate, .weight_decay = cfg.weight_decay});
    detail::BatchSampler sampler(train_s.size(), mix_seed(cfg.seed, 0x5a03));
    double acc = 0.0;
    std::size_t acc_n = 0;
    for (std::uint64_t step = 0; step < cfg.steps_surrogate; ++step) {
        opt.zero_grad();
        for (std::size_t idx : sampler.next(cfg.batch_size)) {
            const auto& x = train_s[idx];
            const Tensor pred =
                model.surrogate.predict(model.surrogate.make_input(x.prepared->image_tokens, x.prepared->c_t, x.mask));
            const Tensor l = surrogate_mse_loss(pred, Tensor::scalar(x.actual));
            acc += l.item();
            ++acc_n;
            backward(scale(l, 1.0 / static_cast<double>(cfg.batch_size)));
        }
        opt.step();
        if ((step + 1) % cfg.log_every == 0 || step + 1 == cfg.steps_surrogate) {
            report.traces["surrogate_mse"].push_back(acc / static_cast<double>(acc_n));
            detail::log_line(log, "surrogate step " + std::to_string(step + 1) + " mse=" +
                                      format_double(acc / static_cast<double>(acc_n)).substr(0, 10));
            acc = 0.0;
            acc_n = 0;
        }
    }
    freeze_all(model.store);
    report.metrics["surrogate_val_mse"] = surrogate_mse(model, val_s);
    report.metrics["surrogate_baseline_mse"] = baseline;
    report.metrics["surrogate_val_variance"] = var_val;
    report.metrics["surrogate_train_samples"] = static_cast<double>(train_s.size());
    report.metrics["surrogate_val_samples"] = static_cast<double>(val_s.size());
    report.metrics["non_surrogate_params_unchanged"] =
        hash_excluding(model.store, surrogate_prefixes()) == others_before ? 1.0 : 0.0;
    return report;
}

// ---------------------------------------------------------------------------
// Phase: refine

/// 𝓜 with straight-through gradients: the forward value equals the hard
/// assembly (classify → threshold → argmax alignment) and gradients flow
/// through MASK probabilities, decoder probabilities and the column softmax.
inline Tensor soft_concat_mask(const Model& model, const Prepared& p, const OutputTokenSet& o) {
    const std::size_t n = o.size(), m = p.c_t.rows();
    const Tensor p_mask = slice_cols(softmax(o.class_logits, 1), 0, 1);  // n × 1
    const auto labels = classify(o.class_logits);
    auto gate_hard = Tensor::zeros({1, n});
    for (std::size_t i = 0; i < n; ++i) {
        gate_hard.at(0, i) = labels[i] == TokenLabel::mask ? 1.0 : 0.0;
    }
    const Tensor gate = straight_through(gate_hard, transpose(p_mask));

    const Tensor s = similarity(o.embeddings, p.c_t, model.broadcaster);
    const Tensor col = softmax(s, 0);  // n × m
    const auto alpha = align(s);
    auto a_hard = Tensor::zeros({n, m});
    for (std::size_t j = 0; j < m; ++j) {
        a_hard.at(alpha[j], j) = 1.0;
    }
    const Tensor assign = straight_through(a_hard, col);

    const Tensor cell_probs = upsample_nearest(sigmoid(model.decoder.patch_logits(p.image_tokens, p.c_t, o.embeddings)),
                                               world::kGrid, world::kGrid, kAttnRes / world::kGrid);  // 256 × n
    auto cell_hard = Tensor::zeros(cell_probs.shape());
    for (std::size_t k = 0; k < cell_probs.numel(); ++k) {
        cell_hard.data()[k] = cell_probs.data()[k] >= 0.5 ? 1.0 : 0.0;
    }
    const Tensor cells = straight_through(cell_hard, cell_probs);
    return matmul(mul(cells, gate), assign);
}

inline Tensor refine_loss(const Model& model, const Prepared& p, const TrainConfig& cfg, Rng& rng,
                          double* main_out = nullptr, double* pred_out = nullptr) {
    const auto l = episode_loss(model, p, cfg, rng, false);
    const Tensor mask = soft_concat_mask(model, p, l.tokens);
    const Tensor pred = model.surrogate.predict(model.surrogate.make_input(p.image_tokens, p.c_t, mask));
    if (main_out) {
        *main_out = l.main.item();
    }
    if (pred_out) {
        *pred_out = pred.item();
    }
    const bool frozen = !model.store.find("surrogate.head.weight")->requires_grad();
    return refine_step(l.main, pred, cfg.oracle_score, cfg.lambda_mse, frozen);
}

inline double mean_refine_loss(const Model& model, const std::vector<Prepared>& eps, const TrainConfig& cfg) {
    NoGradGuard guard;
    Rng rng(mix_seed(cfg.seed, 0x7e1));
    double s = 0.0;
    for (const auto& p : eps) {
        s += refine_loss(model, p, cfg, rng).item();
    }
    return s / static_cast<double>(eps.size());
}

inline RunReport train_refine(Model& model, const std::vector<world::Episode>& train_set,
                              const std::vector<world::Episode>& val_set, const TrainConfig& cfg,
                              std::ostream* log = nullptr) {
    if (train_set.empty() || val_set.empty()) {
        throw ContractError("refine phase needs non-empty train and val splits");
    }
    const auto train_p = prepare_all(model, train_set);
    const auto val_p = prepare_all(model, val_set);
    RunReport report = base_report("refine", cfg);
    const std::uint64_t surrogate_before = hash_including(model.store, surrogate_prefixes());
    freeze_all(model.store);
    report.metrics["val_sim_t_before"] = evaluate(model, val_set, cfg, "val").metrics.at("sim_t");
    report.metrics["val_updated_loss_before"] = mean_refine_loss(model, val_p, cfg);

    auto params = select_trainable(model.store, main_prefixes());
    AdamW opt(params, {.lr = cfg.lr_refine, .weight_decay = cfg.weight_decay});
    detail::BatchSampler sampler(train_p.size(), mix_seed(cfg.seed, 0x7e2));
    double acc_main = 0.0, acc_pred = 0.0, acc_total = 0.0;
    std::size_t acc_n = 0;
    for (std::uint64_t step = 0; step < cfg.steps_refine; ++step) {
        Rng rng(mix_seed(cfg.seed, 0x7e3 + step));
        opt.zero_grad();
        for (std::size_t idx : sampler.next(cfg.batch_size)) {
            double lm = 0.0, pr = 0.0;
            const Tensor l = refine_loss(model, train_p[idx], cfg, rng, &lm, &pr);
            acc_main += lm;
            acc_pred += pr;
            acc_total += l.item();
            ++acc_n;
            backward(scale(l, 1.0 / static_cast<double>(cfg.batch_size)));
        }
        opt.step();
        if ((step + 1) % cfg.log_every == 0 || step + 1 == cfg.steps_refine) {
            const double n = static_cast<double>(acc_n);
            report.traces["refine_main"].push_back(acc_main / n);
            report.traces["refine_predicted"].push_back(acc_pred / n);
            report.traces["refine_updated"].push_back(acc_total / n);
            detail::log_line(log, "refine step " + std::to_string(step + 1) + " updated=" +
                                      format_double(acc_total / n).substr(0, 8) + " predicted=" +
                                      format_double(acc_pred / n).substr(0, 8));
            acc_main = acc_pred = acc_total = 0.0;
            acc_n = 0;
        }
    }
    freeze_all(model.store);
    report.metrics["val_sim_t_after"] = evaluate(model, val_set, cfg, "val").metrics.at("sim_t");
    report.metrics["val_updated_loss_after"] = mean_refine_loss(model, val_p, cfg);
    report.metrics["surrogate_unchanged"] =
        hash_including(model.store, surrogate_prefixes()) == surrogate_before ? 1.0 : 0.0;
    return report;
}

// ---------------------------------------------------------------------------
// Checkpointed phase driver

inline const char* required_previous_phase(const std::string& phase) {
    if (phase == "main") {
        return "";
    }
    if (phase == "surrogate") {
        return "main";
    }
    if (phase == "refine") {
        return "surrogate";
    }
    throw ContractError("unknown phase '" + phase + "' (expected main, surrogate or refine)");
}

inline ModelConfig model_config_from(const TrainConfig& cfg) {
    ModelConfig mc;
    mc.seed = cfg.seed;
    mc.head.lora_rank = cfg.lora_rank;
    mc.head.lora_scale = cfg.lora_scale;
    return mc;
}

inline CheckpointMeta model_meta(const ModelConfig& mc, const std::string& phase) {
    return {{"phase", phase},
            {"model_seed", std::to_string(mc.seed)},
            {"lora_rank", std::to_string(mc.head.lora_rank)},
            {"lora_scale", format_double(mc.head.lora_scale)}};
}

inline ModelConfig model_config_from(const CheckpointMeta& meta) {
    auto get = [&](const std::string& k) -> const std::string& {
        auto it = meta.find(k);
        if (it == meta.end()) {
            throw FormatError("checkpoint metadata lacks '" + k + "'");
        }
        return it->second;
    };
    ModelConfig mc;
    mc.seed = parse_uint(get("model_seed"), "model_seed");
    mc.head.lora_rank = parse_uint(get("lora_rank"), "lora_rank");
    mc.head.lora_scale = parse_double(get("lora_scale"), "lora_scale");
    return mc;
}

struct LoadedModel {
    std::unique_ptr<Model> model;
    CheckpointMeta meta;
};

inline LoadedModel load_model(const std::string& path) {
    const std::string bytes = read_file(path);
    LoadedModel lm;
    lm.meta = read_checkpoint_meta(bytes);
    lm.model = std::make_unique<Model>(model_config_from(lm.meta));
    decode_checkpoint(bytes, lm.model->store);
    return lm;
}

inline void save_model(const Model& model, const std::string& phase, const std::string& path) {
    write_file(path, encode_checkpoint(model.store, model_meta(model.config(), phase)));
}

}  // namespace camila
