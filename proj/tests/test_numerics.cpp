#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "camila/numerics/nn.hpp"
#include "camila/token_decoder.hpp"
#include "camila/trainer.hpp"

using namespace camila;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
    Rng rng(seed);
    return randn({r, c}, 1.0, rng);
}

TEST(Matmul, MatchesTripleLoopOracle) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const std::size_t p = 1 + seed % 5, q = 2 + seed % 7, r = 1 + seed % 4;
        const Tensor a = random_matrix(p, q, seed), b = random_matrix(q, r, seed + 100);
        const Tensor c = matmul(a, b);
        for (std::size_t i = 0; i < p; ++i) {
            for (std::size_t j = 0; j < r; ++j) {
                long double s = 0;
                for (std::size_t k = 0; k < q; ++k) {
                    s += static_cast<long double>(a.at(i, k)) * b.at(k, j);
                }
                EXPECT_NEAR(c.at(i, j), static_cast<double>(s), 1e-12);
            }
        }
        EXPECT_EQ(matmul_nt(a, transpose(b)).values(), c.values());
    }
}

TEST(Matmul, RejectsInnerMismatch) {
    EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
}

TEST(Softmax, MatchesLongDoubleOracle) {
    const Tensor a = random_matrix(5, 9, 3);
    const Tensor s = softmax(scale(a, 30.0), 1);
    for (std::size_t i = 0; i < 5; ++i) {
        long double mx = -1e300L, z = 0;
        for (std::size_t j = 0; j < 9; ++j) {
            mx = std::max<long double>(mx, 30.0L * a.at(i, j));
        }
        for (std::size_t j = 0; j < 9; ++j) {
            z += std::exp(30.0L * a.at(i, j) - mx);
        }
        double row = 0;
        for (std::size_t j = 0; j < 9; ++j) {
            EXPECT_NEAR(s.at(i, j), static_cast<double>(std::exp(30.0L * a.at(i, j) - mx) / z), 1e-14);
            row += s.at(i, j);
        }
        EXPECT_NEAR(row, 1.0, 1e-12);
    }
}

TEST(Softmax, ColumnAxisSumsToOne) {
    const Tensor s = softmax(random_matrix(7, 3, 4), 0);
    for (std::size_t j = 0; j < 3; ++j) {
        double col = 0;
        for (std::size_t i = 0; i < 7; ++i) {
            col += s.at(i, j);
        }
        EXPECT_NEAR(col, 1.0, 1e-12);
    }
}

TEST(CrossEntropy, MatchesPerRowSummation) {
    const Tensor logits = random_matrix(6, 4, 5);
    const std::vector<std::size_t> t = {0, 3, 1, 1, 2, 0};
    long double total = 0;
    for (std::size_t i = 0; i < 6; ++i) {
        long double z = 0;
        for (std::size_t j = 0; j < 4; ++j) {
            z += std::exp(static_cast<long double>(logits.at(i, j)));
        }
        total += std::log(z) - logits.at(i, t[i]);
    }
    EXPECT_NEAR(cross_entropy(logits, t).item(), static_cast<double>(total / 6), 1e-12);
}

TEST(CrossEntropy, UniformTwoClassIsLn2) {
    EXPECT_NEAR(cross_entropy(Tensor::zeros({3, 2}), {0, 1, 0}).item(), std::numbers::ln2, 1e-12);
}

TEST(CrossEntropy, RejectsBadTargets) {
    EXPECT_THROW(cross_entropy(Tensor::zeros({2, 2}), {0}), DimensionError);
    EXPECT_THROW(cross_entropy(Tensor::zeros({1, 2}), {2}), DimensionError);
}

TEST(Losses, DicePerfectPredictionIsZero) {
    auto gt = Tensor::zeros({kMaskRes * kMaskRes, 2});
    for (std::size_t p = 0; p < 500; ++p) {
        gt.at(p, 0) = 1.0;
        gt.at(4000 - p, 1) = 1.0;
    }
    EXPECT_EQ(dice_loss(gt, gt).item(), 0.0);
}

TEST(Losses, MaskBceAtHalfIsLn2) {
    const Tensor probs = Tensor::filled({64, 3}, 0.5);
    auto gt = Tensor::zeros({64, 3});
    for (std::size_t p = 0; p < gt.numel(); p += 3) {
        gt.data()[p] = 1.0;
    }
    EXPECT_NEAR(mask_bce_loss(probs, gt).item(), std::numbers::ln2, 1e-12);
}

TEST(Losses, MaskBceClampsSaturatedProbabilities) {
    const Tensor probs = Tensor::from({1, 2}, {0.0, 1.0});
    const Tensor gt = Tensor::from({1, 2}, {1.0, 0.0});
    const double v = mask_bce_loss(probs, gt).item();
    EXPECT_TRUE(std::isfinite(v));
    const double hi = 1.0 - 1e-12;
    EXPECT_NEAR(v, 0.5 * (-std::log(1e-12) - std::log(1.0 - hi)), 1e-12);
}

TEST(Losses, WeightedSumIsExact) {
    const LossWeights w{0.5, 2.0, 0.25, 4.0};
    const std::array<double, 4> parts = {1.5, 0.75, 2.0, 0.125};
    const double expected = 0.5 * 1.5 + 2.0 * 0.75 + 0.25 * 2.0 + 4.0 * 0.125;
    EXPECT_EQ(main_loss(parts, w), expected);
    const Tensor t = main_loss(Tensor::scalar(parts[0]), Tensor::scalar(parts[1]), Tensor::scalar(parts[2]),
                               Tensor::scalar(parts[3]), w);
    EXPECT_EQ(t.item(), expected);
}

TEST(Losses, DefaultWeightsAreUnit) {
    const auto w = LossWeights::from(TrainConfig{});
    EXPECT_EQ(w.token, 1.0);
    EXPECT_EQ(w.broadcast, 1.0);
    EXPECT_EQ(w.dice, 1.0);
    EXPECT_EQ(w.bce, 1.0);
    EXPECT_EQ(TrainConfig{}.lambda_mse, 10.0);
}

TEST(LayerNorm, RowsHaveZeroMeanUnitVariance) {
    const Tensor x = random_matrix(4, 16, 9);
    const Tensor y = layer_norm(x, Tensor::filled({1, 16}, 1.0), Tensor::zeros({1, 16}), 0.0);
    for (std::size_t i = 0; i < 4; ++i) {
        double m = 0, v = 0;
        for (std::size_t j = 0; j < 16; ++j) {
            m += y.at(i, j);
        }
        m /= 16;
        for (std::size_t j = 0; j < 16; ++j) {
            v += (y.at(i, j) - m) * (y.at(i, j) - m);
        }
        EXPECT_NEAR(m, 0.0, 1e-12);
        EXPECT_NEAR(v / 16, 1.0, 1e-10);
    }
}

TEST(Ops, ReciprocalAndLogRejectInvalidInput) {
    EXPECT_THROW(reciprocal(Tensor::from({1, 2}, {1.0, 0.0})), NumericError);
    EXPECT_THROW(camila::log(Tensor::from({1, 1}, {-1.0})), NumericError);
}

TEST(Ops, BroadcastShapesMustBeCompatible) {
    EXPECT_THROW(add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), DimensionError);
    EXPECT_EQ(add(Tensor::zeros({2, 3}), Tensor::filled({1, 3}, 1.0)).values(), std::vector<double>(6, 1.0));
}

TEST(Pooling, AvgPoolAndUpsampleRoundTripConstantBlocks) {
    const Tensor small = random_matrix(4, 2, 11);
    const Tensor big = upsample_nearest(small, 2, 2, 4);
    EXPECT_EQ(big.rows(), 64u);
    const Tensor back = avg_pool(big, 8, 8, 4);
    for (std::size_t k = 0; k < small.numel(); ++k) {
        EXPECT_NEAR(back.values()[k], small.values()[k], 1e-15);
    }
}

TEST(AdamW, FirstStepMovesByLearningRate) {
    Tensor p = Tensor::from({1, 2}, {1.0, -1.0});
    p.set_requires_grad(true);
    AdamW opt({p}, {.lr = 0.1});
    backward(sum(mul(p, Tensor::from({1, 2}, {3.0, -0.5}))));
    opt.step();
    // Bias-corrected first step is lr·g/(|g| + eps).
    EXPECT_NEAR(p.data()[0], 1.0 - 0.1 * 3.0 / (3.0 + 1e-8), 1e-15);
    EXPECT_NEAR(p.data()[1], -1.0 + 0.1 * 0.5 / (0.5 + 1e-8), 1e-15);
}

TEST(AdamW, SkipsParametersWithoutGradient) {
    Tensor p = Tensor::from({1, 1}, {2.0});
    AdamW opt({p}, {.lr = 0.1});
    opt.step();
    EXPECT_EQ(p.item(), 2.0);
}

TEST(ParamStore, HashChangesWithValues) {
    ParamStore store;
    store.add("a.w", Tensor::from({1, 2}, {1.0, 2.0}), true);
    store.add("b.w", Tensor::from({1, 1}, {3.0}), false);
    const auto h = store.hash("a.");
    store.find("b.w")->data()[0] = 4.0;
    EXPECT_EQ(store.hash("a."), h);
    store.find("a.w")->data()[0] = 1.5;
    EXPECT_NE(store.hash("a."), h);
    EXPECT_FALSE(store.find("b.w")->requires_grad());
}

}  // namespace
