#include <gtest/gtest.h>

#include <cmath>

#include "camila/checkpoint.hpp"
#include "camila/metrics.hpp"
#include "camila/trainer.hpp"

using namespace camila;

namespace {

Mask box(std::size_t x0, std::size_t y0, std::size_t w, std::size_t h) {
    Mask m = Mask::zeros(64, 64);
    for (std::size_t y = y0; y < y0 + h; ++y) {
        for (std::size_t x = x0; x < x0 + w; ++x) {
            m.bits[y * 64 + x] = 1;
        }
    }
    return m;
}

TEST(Metrics, IouAndDiceExtremes) {
    const Mask a = box(4, 4, 10, 10), b = box(30, 30, 10, 10);
    EXPECT_EQ(mask_iou(a, a), 1.0);
    EXPECT_EQ(mask_iou(a, b), 0.0);
    EXPECT_EQ(mask_dice(a, a), 1.0);
    EXPECT_EQ(mask_dice(a, b), 0.0);
}

TEST(Metrics, OverlapMatchesPerPixelOracle) {
    Rng rng(1);
    for (int c = 0; c < 20; ++c) {
        const Mask a = box(rng() % 40, rng() % 40, 1 + rng() % 24, 1 + rng() % 24);
        const Mask b = box(rng() % 40, rng() % 40, 1 + rng() % 24, 1 + rng() % 24);
        double inter = 0, uni = 0, sa = 0, sb = 0;
        for (std::size_t y = 0; y < 64; ++y) {
            for (std::size_t x = 0; x < 64; ++x) {
                const bool pa = a.at(y, x), pb = b.at(y, x);
                inter += pa && pb;
                uni += pa || pb;
                sa += pa;
                sb += pb;
            }
        }
        EXPECT_NEAR(mask_iou(a, b), inter / uni, 1e-12);
        EXPECT_NEAR(mask_dice(a, b), 2 * inter / (sa + sb), 1e-12);
    }
}

TEST(Metrics, PixelDistancesMatchOracle) {
    const Image a = world::gen_scene(1).image, b = world::gen_scene(2).image;
    long double s1 = 0, s2 = 0;
    for (std::size_t y = 0; y < 64; ++y) {
        for (std::size_t x = 0; x < 64; ++x) {
            for (std::size_t c = 0; c < 3; ++c) {
                const long double d = static_cast<long double>(a.at(y, x, c)) - b.at(y, x, c);
                s1 += std::abs(d);
                s2 += d * d;
            }
        }
    }
    EXPECT_NEAR(l1_distance(a, b), static_cast<double>(s1 / (64 * 64 * 3)), 1e-12);
    EXPECT_NEAR(l2_distance(a, b), static_cast<double>(s2 / (64 * 64 * 3)), 1e-12);
    EXPECT_EQ(l1_distance(a, a), 0.0);
}

TEST(Metrics, ProxySimilarities) {
    const ProxyClip clip;
    const auto ep = world::gen_episode(5);
    EXPECT_NEAR(sim_image(clip, ep.goal_image, ep.goal_image), 1.0, 1e-12);
    EXPECT_EQ(sim_direction(clip, ep.scene.image, ep.scene.image, world::caption_words(ep.scene.objects),
                            ep.goal_description),
              0.0);
    const double st = sim_text(clip, ep.goal_image, ep.goal_description);
    EXPECT_LE(std::abs(st), 1.0 + 1e-12);
}

TEST(Report, RoundTripIsLossless) {
    RunReport r;
    r.phase = "eval";
    r.seed = 42;
    r.config = {{"steps_main", "7"}, {"lr_main", "0.001"}};
    r.metrics = {{"iou", 0.1 + 0.2}, {"l1", 1.0 / 3.0}, {"tiny", 1e-300}};
    r.traces = {{"token", {0.5, 0.25, 1.0 / 7.0}}};
    EXPECT_EQ(parse_report(write_report(r)), r);
    EXPECT_THROW(parse_report("hello\n"), FormatError);
    EXPECT_THROW(parse_report("camila-report 1\nbogus = 1\n"), FormatError);
}

TEST(Config, ParsesEchoesAndRejects) {
    const auto c = parse_train_config("# comment\nsteps_main = 12\n\nlr_main = 1e-3\n");
    EXPECT_EQ(c.steps_main, 12u);
    EXPECT_EQ(c.lr_main, 1e-3);
    ASSERT_EQ(c.echo.size(), 2u);
    EXPECT_EQ(c.echo[0].first, "steps_main");
    EXPECT_THROW(parse_train_config("unknown_key = 1\n"), FormatError);
    EXPECT_THROW(parse_train_config("steps_main = -4\n"), FormatError);
    EXPECT_THROW(parse_train_config("lr_main = fast\n"), FormatError);
    EXPECT_THROW(parse_train_config("lr_main = 0\n"), ContractError);
    EXPECT_THROW(parse_train_config("just words\n"), FormatError);
}

TEST(Losses, MainLossArithmetic) {
    const LossWeights unit;
    EXPECT_EQ(main_loss(std::array<double, 4>{0, 0, 0, 0}, unit), 0.0);
    EXPECT_NEAR(main_loss(std::array<double, 4>{0.1, 0.2, 0.3, 0.4}, unit), 1.0, 1e-15);
}

TEST(Losses, WeightScalesGradientContribution) {
    Tensor a = Tensor::from({1, 3}, {0.3, -0.2, 0.7}).set_requires_grad(true);
    auto grads = [&](const LossWeights& w) {
        a.zero_grad();
        const Tensor token = sum(square(a));
        const Tensor bce = sum(camila::exp(a));
        backward(main_loss(token, Tensor::scalar(0.0), Tensor::scalar(0.0), bce, w));
        return std::vector<double>(a.grad().begin(), a.grad().end());
    };
    const auto g1 = grads({1.0, 1.0, 1.0, 1.0});
    const auto g3 = grads({3.0, 1.0, 1.0, 1.0});
    for (std::size_t k = 0; k < 3; ++k) {
        EXPECT_NEAR(g3[k] - g1[k], 2.0 * 2.0 * a.data()[k], 1e-12);
    }
}

TEST(Checkpoint, RoundTripRestoresEveryParameter) {
    ModelConfig mc;
    mc.seed = 3;
    Model a(mc);
    Rng rng(4);
    for (auto& e : a.store.entries()) {
        for (double& v : e.tensor.data()) {
            v += 1e-3 * static_cast<double>(rng() % 1000);
        }
    }
    const std::string bytes = encode_checkpoint(a.store, model_meta(mc, "main"));
    Model b(mc);
    const auto meta = decode_checkpoint(bytes, b.store);
    EXPECT_EQ(meta.at("phase"), "main");
    EXPECT_EQ(encode_checkpoint(b.store, meta), bytes);
}

TEST(Checkpoint, CorruptionIsDetected) {
    Model m(ModelConfig{});
    std::string bytes = encode_checkpoint(m.store, model_meta(m.config(), "main"));
    EXPECT_THROW(read_checkpoint_meta("NOTACKPT0000000000"), FormatError);
    std::string flipped = bytes;
    flipped[bytes.size() / 2] ^= 0x40;
    EXPECT_THROW(decode_checkpoint(flipped, m.store), FormatError);
    EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3), m.store), FormatError);
    ParamStore other;
    other.add("x", Tensor::zeros({1, 1}), true);
    EXPECT_THROW(decode_checkpoint(bytes, other), FormatError);
}

TEST(Trainer, PhaseOrderIsEnforced) {
    EXPECT_STREQ(required_previous_phase("main"), "");
    EXPECT_STREQ(required_previous_phase("surrogate"), "main");
    EXPECT_STREQ(required_previous_phase("refine"), "surrogate");
    EXPECT_THROW(required_previous_phase("warmup"), ContractError);
}

TEST(Trainer, EmptySplitsAreRejected) {
    Model m(ModelConfig{});
    EXPECT_THROW(train_main(m, {}, TrainConfig{}), ContractError);
    EXPECT_THROW(evaluate(m, {}, TrainConfig{}), ContractError);
}

}  // namespace
