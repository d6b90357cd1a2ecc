// Acceptance suite: one PASS/FAIL line per criterion. Usage:
//   acceptance <path-to-camila-cli> [work-dir]
// Criteria 6 and 7 run the full main, surrogate and refine phases on the
// seed-0 256/32/64 split and take several minutes.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "camila/episode_io.hpp"
#include "camila/trainer.hpp"
#include "support.hpp"

using namespace camila;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void verdict(int id, const std::string& what, bool pass, const std::string& detail) {
    std::cout << (pass ? "PASS" : "FAIL") << " [" << id << "] " << what << ": " << detail << std::endl;
    failures += pass ? 0 : 1;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double d = 0.0;
    for (std::size_t k = 0; k < a.numel(); ++k) {
        d = std::max(d, std::abs(a.values()[k] - b.values()[k]));
    }
    return d;
}

// 1. Finite-difference gradient checks on every trainable module.
void gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    std::string where;
    std::size_t seeds = 0;
    for (const auto& mc : camila::testing::kModuleCases) {
        for (std::uint64_t seed = 1; seed <= 20; ++seed) {
            auto c = mc.make(seed);
            Rng rng(seed * 7919);
            const auto r = camila::testing::check_gradients(c.loss, c.trainable(), rng);
            ++seeds;
            if (r.max_rel_error > worst) {
                worst = r.max_rel_error;
                where = std::string(mc.name) + " seed " + std::to_string(seed) + " " + r.worst;
            }
        }
    }
    const double secs = seconds_since(t0);
    verdict(1, "gradient checks", worst <= 1e-4 && secs < 120.0,
            "max rel error " + fmt(worst) + " (" + where + ") over " + std::to_string(seeds) + " module seeds in " +
                fmt(secs) + " s");
}

struct Fixture {
    ParamStore store;
    Rng rng{22};
    Denoiser net{store, rng};
    Tensor z = randn({256, kLatentChannels}, 1.0, rng);
    Tensor ci = randn({256, kLatentChannels}, 0.5, rng);
    Tensor ct = randn({6, kEmbedDim}, 1.0, rng);
    Fixture() { camila::testing::jitter(store, rng, 0.05); }
};

// 2. Guidance collapses to the single-branch scores.
void guidance_collapse() {
    Fixture f;
    double worst = 0.0;
    for (std::size_t t = 0; t < 10; ++t) {
        auto mask = Tensor::zeros({256, 6});
        for (std::size_t i = t % 3; i < 256; i += 3) {
            mask.at(i, i % 6) = 1.0;
        }
        const Tensor full = f.net.score(f.z, f.ci, t, f.ct, mask);
        const Tensor img = f.net.score_image_only(f.z, f.ci, t, f.ct);
        const Tensor unc = f.net.score_uncond(f.z, t, f.ct);
        worst = std::max(worst, max_abs_diff(cfg_combine(unc, img, full, {0.0, 0.0}), unc));
        worst = std::max(worst, max_abs_diff(cfg_combine(unc, img, full, {1.0, 0.0}), img));
        worst = std::max(worst, max_abs_diff(cfg_combine(unc, img, full, {1.0, 1.0}), full));
    }
    verdict(2, "guidance collapse at (0,0), (1,0), (1,1)", worst <= 1e-12, "max abs diff " + fmt(worst));
}

// 3. Attention modulation limits and row sums.
void modulation() {
    Rng rng(30);
    double worst_ones = 0.0, worst_zeros = 0.0, worst_row = 0.0;
    const std::size_t d = 16;
    for (int c = 0; c < 50; ++c) {
        const std::size_t m = 1 + rng() % 12;
        const Tensor x = randn({256, m}, 3.0, rng), y = randn({256, m}, 3.0, rng);
        auto mixed = Tensor::zeros({256, m});
        for (double& v : mixed.data()) {
            v = rng() % 2 ? 1.0 : 0.0;
        }
        const double s = 1.0 / std::sqrt(static_cast<double>(d));
        worst_ones = std::max(
            worst_ones, max_abs_diff(modulate_attention(x, y, Tensor::filled({256, m}, 1.0), d), softmax(scale(x, s), 1)));
        worst_zeros = std::max(worst_zeros,
                               max_abs_diff(modulate_attention(x, y, Tensor::zeros({256, m}), d), softmax(scale(y, s), 1)));
        const Tensor a = modulate_attention(x, y, mixed, d);
        for (std::size_t i = 0; i < 256; ++i) {
            double row = 0.0;
            for (std::size_t j = 0; j < m; ++j) {
                row += a.at(i, j);
            }
            worst_row = std::max(worst_row, std::abs(row - 1.0));
        }
    }
    verdict(3, "attention modulation", worst_ones <= 1e-12 && worst_zeros <= 1e-12 && worst_row <= 1e-12,
            "M=1 diff " + fmt(worst_ones) + ", M=0 diff " + fmt(worst_zeros) + ", row-sum error " + fmt(worst_row));
}

// 4. All-NEG prompts sever text: zero 𝓜 and output equal to text-ablated sampling.
void severing() {
    ModelConfig mc;
    mc.seed = 5;
    Model model(mc);
    Rng rng(31);
    camila::testing::jitter(model.store, rng, 0.05);
    auto& w = *model.store.find("head.classifier.weight");
    auto& b = *model.store.find("head.classifier.bias");
    std::fill(w.data().begin(), w.data().end(), 0.0);
    b.data()[0] = -5.0;
    b.data()[1] = 5.0;
    bool all_neg = true, zero_mask = true, identical = true, text_matters = false;
    for (std::uint64_t s = 0; s < 4; ++s) {
        const auto ep = world::gen_episode(s);
        const auto prompt = world::build_prompt(ep.instructions);
        for (double s_t : {0.0, 7.5, 20.0}) {
            const GuidanceConfig g{1.5, s_t};
            const auto r = run_edit(model, ep.scene.image, prompt, g, 11 + s);
            for (auto l : r.labels) {
                all_neg = all_neg && l == TokenLabel::neg;
            }
            for (double v : r.concat.values()) {
                zero_mask = zero_mask && v == 0.0;
            }
            identical = identical && r.edited.rgb == run_text_ablated(model, ep.scene.image, prompt.ids.size(), g, 11 + s).rgb;
            if (s == 0 && s_t == 7.5) {
                // Control: the same prompt with a non-zero mask does change the output.
                const Tensor ones = Tensor::filled(r.concat.shape(), 1.0);
                const Image full = sample(model.denoiser, ep.scene.image, model.text.embed(prompt.ids), ones, g, 11);
                text_matters = full.rgb != r.edited.rgb;
            }
        }
    }
    verdict(4, "severing of non-applicable instructions", all_neg && zero_mask && identical && text_matters,
            std::string("all NEG ") + (all_neg ? "yes" : "no") + ", M all zero " + (zero_mask ? "yes" : "no") +
                ", bit-identical to text-ablated for s_T in {0, 7.5, 20} " + (identical ? "yes" : "no") +
                ", control differs " + (text_matters ? "yes" : "no"));
}

std::vector<std::size_t> column_argmax(const Tensor& s) {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < s.cols(); ++j) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < s.rows(); ++i) {
            if (s.at(i, j) > s.at(best, j)) {
                best = i;
            }
        }
        out.push_back(best);
    }
    return out;
}

// 5. Broadcaster alignment: scale invariance and brute-force oracle.
void broadcaster() {
    ParamStore store;
    Rng rng(32);
    const TokenBroadcaster b(store, rng);
    std::uniform_real_distribution<double> u(0.01, 100.0);
    std::size_t invariant = 0, oracle = 0;
    for (int c = 0; c < 100; ++c) {
        const std::size_t n = 1 + rng() % 4, m = 2 + rng() % 10;
        const Tensor o = randn({n, kEmbedDim}, 1.0, rng), ct = randn({m, kEmbedDim}, 1.0, rng);
        const Tensor s = similarity(o, ct, b);
        const auto alpha = align(s);
        oracle += alpha == column_argmax(s) ? 1 : 0;
        invariant += align(similarity(scale(o, u(rng)), scale(ct, u(rng)), b)) == alpha ? 1 : 0;
    }
    verdict(5, "broadcaster alignment", invariant == 100 && oracle == 100,
            std::to_string(invariant) + "/100 unchanged under positive scaling, " + std::to_string(oracle) +
                "/100 equal to column-max oracle");
}

// 8. Loss unit values.
void loss_values() {
    auto gt = Tensor::zeros({kMaskRes * kMaskRes, 2});
    for (std::size_t p = 0; p < 700; ++p) {
        gt.at(p, 0) = 1.0;
        gt.at(4095 - p, 1) = 1.0;
    }
    const double dice = dice_loss(gt, gt).item();
    const double bce = mask_bce_loss(Tensor::filled(gt.shape(), 0.5), gt).item();
    const double ce = cross_entropy(Tensor::zeros({5, 2}), {0, 1, 1, 0, 1}).item();
    const LossWeights w{0.5, 2.0, 0.25, 4.0};
    const std::array<double, 4> parts = {1.5, 0.75, 2.0, 0.125};
    const double expected = 0.5 * 1.5 + 2.0 * 0.75 + 0.25 * 2.0 + 4.0 * 0.125;
    const double weighted =
        main_loss(Tensor::scalar(parts[0]), Tensor::scalar(parts[1]), Tensor::scalar(parts[2]), Tensor::scalar(parts[3]), w)
            .item();
    const bool pass = dice == 0.0 && std::abs(bce - std::numbers::ln2) <= 1e-12 &&
                      std::abs(ce - std::numbers::ln2) <= 1e-12 && weighted == expected &&
                      main_loss(parts, w) == expected;
    verdict(8, "loss unit values", pass,
            "dice(perfect) " + fmt(dice) + ", |BCE(0.5) - ln2| " + fmt(std::abs(bce - std::numbers::ln2)) +
                ", |CE(uniform) - ln2| " + fmt(std::abs(ce - std::numbers::ln2)) + ", weighted sum " + fmt(weighted) +
                " vs " + fmt(expected));
}

// 10. Dataset invariants and category mix over 10,000 episodes.
void dataset() {
    std::size_t violations = 0;
    std::array<double, 4> counts{};
    double total = 0;
    for (std::uint64_t s = 0; s < 10000; ++s) {
        const auto ep = world::gen_episode(s);
        violations += world::episode_violations(ep).size();
        for (const auto& in : ep.instructions) {
            counts[static_cast<std::size_t>(in.category)] += 1;
            total += 1;
        }
    }
    // Category order is add, remove, replace, change.
    const std::array<double, 4> reference = {34.3, 21.1, 20.5, 24.1};
    bool within = true;
    std::string hist;
    for (std::size_t c = 0; c < 4; ++c) {
        const double pct = 100.0 * counts[c] / total;
        within = within && std::abs(pct - reference[c]) <= 5.0;
        hist += std::string(c ? ", " : "") + std::string(world::category_name(world::kCategories[c])) + " " + fmt(pct);
    }
    verdict(10, "dataset invariants and category mix", violations == 0 && within,
            std::to_string(violations) + " violations; " + hist);
}

// 6 and 7. Full training pipeline on the seed-0 split.
void pipeline(const fs::path& work) {
    const fs::path data = work / "data";
    world::build_split({256, 32, 64}, 0, data.string());
    const auto train = world::load_split(data.string(), "train");
    const auto val = world::load_split(data.string(), "val");
    const auto test = world::load_split(data.string(), "test");
    TrainConfig cfg;
    cfg.log_every = 250;
    Model model(model_config_from(cfg));
    const auto t0 = std::chrono::steady_clock::now();
    train_main(model, train, cfg, &std::cerr);
    const double main_secs = seconds_since(t0);
    const auto eval = evaluate(model, test, cfg);
    const double acc = eval.metrics.at("token_accuracy"), iou = eval.metrics.at("iou");
    verdict(6, "main-phase training", acc >= 0.95 && iou >= 0.5 && main_secs < 1800.0,
            "test token accuracy " + fmt(acc) + ", mean IoU " + fmt(iou) + " over " +
                fmt(eval.metrics.at("applicable_instructions")) + " applicable instructions, main phase " +
                fmt(main_secs) + " s");

    const auto sur = train_surrogate(model, train, val, cfg, &std::cerr);
    const auto ref = train_refine(model, train, val, cfg, &std::cerr);
    const double mse = sur.metrics.at("surrogate_val_mse"), base = sur.metrics.at("surrogate_baseline_mse");
    const double drop = ref.metrics.at("val_sim_t_before") - ref.metrics.at("val_sim_t_after");
    const bool unchanged = ref.metrics.at("surrogate_unchanged") == 1.0;
    verdict(7, "surrogate phases", mse <= 0.5 * base && unchanged && drop <= 0.005,
            "val MSE " + fmt(mse) + " vs constant-mean " + fmt(base) + ", surrogate hash " +
                (unchanged ? "unchanged" : "changed") + ", val sim-T drop " + fmt(drop));
}

// 9. Determinism of the command-line pipeline.
std::string slurp(const fs::path& p) { return read_file(p.string()); }

bool same_tree(const fs::path& a, const fs::path& b) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        if (e.is_regular_file()) {
            files.push_back(fs::relative(e.path(), a));
        }
    }
    std::size_t n_b = 0;
    for (const auto& e : fs::recursive_directory_iterator(b)) {
        n_b += e.is_regular_file() ? 1 : 0;
    }
    if (files.size() != n_b || files.empty()) {
        return false;
    }
    for (const auto& f : files) {
        if (!fs::exists(b / f) || slurp(a / f) != slurp(b / f)) {
            return false;
        }
    }
    return true;
}

int run(const std::string& cmd) { return std::system((cmd + " 2>/dev/null").c_str()); }

void determinism(const std::string& cli, const fs::path& work) {
    fs::create_directories(work);
    const fs::path cfg = work / "det.cfg";
    write_file(cfg.string(), "steps_main = 30\nsteps_surrogate = 20\nsteps_refine = 10\nlog_every = 10\n");
    bool ok = true;
    for (const char* run_name : {"a", "b"}) {
        const fs::path d = work / run_name;
        fs::create_directories(d);
        const std::string q = "'" + cli + "'";
        ok = ok && run(q + " gen-data --seed 3 --train 24 --val 6 --test 8 --out '" + (d / "data").string() + "'") == 0;
        std::string prev;
        for (const char* phase : {"main", "surrogate", "refine"}) {
            const std::string ckpt = (d / (std::string(phase) + ".ckpt")).string();
            ok = ok && run(q + " train --phase " + phase + " --config '" + cfg.string() + "' --data '" +
                           (d / "data").string() + "' --out '" + ckpt + "' --report '" +
                           (d / (std::string(phase) + ".report")).string() + "'" +
                           (prev.empty() ? "" : " --init '" + prev + "'")) == 0;
            prev = ckpt;
        }
        ok = ok && run(q + " eval --checkpoint '" + prev + "' --data '" + (d / "data").string() + "' --config '" +
                       cfg.string() + "' --report '" + (d / "eval.report").string() + "'") == 0;
    }
    const bool data_same = ok && same_tree(work / "a" / "data", work / "b" / "data");
    bool rest_same = ok;
    for (const char* f : {"main.ckpt", "surrogate.ckpt", "refine.ckpt", "main.report", "surrogate.report",
                          "refine.report", "eval.report"}) {
        rest_same = rest_same && slurp(work / "a" / f) == slurp(work / "b" / f);
    }
    verdict(9, "determinism of gen-data, train and eval", ok && data_same && rest_same,
            std::string("commands ") + (ok ? "succeeded" : "failed") + ", datasets " +
                (data_same ? "byte-identical" : "differ") + ", checkpoints and reports " +
                (rest_same ? "byte-identical" : "differ"));
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::cerr << "usage: acceptance <camila-cli> [work-dir]\n";
        return 2;
    }
    const std::string cli = argv[1];
    const fs::path work = argc > 2 ? fs::path(argv[2]) : fs::temp_directory_path() / "camila_acceptance";
    fs::remove_all(work);
    fs::create_directories(work);
    try {
        gradients();
        guidance_collapse();
        modulation();
        severing();
        broadcaster();
        loss_values();
        determinism(cli, work / "det");
        dataset();
        pipeline(work / "pipeline");
    } catch (const std::exception& e) {
        std::cout << "FAIL aborted: " << e.what() << std::endl;
        return 1;
    }
    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
    return failures == 0 ? 0 : 1;
}
