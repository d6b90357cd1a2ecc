#include <gtest/gtest.h>

#include "support.hpp"

using namespace camila;
using camila::testing::check_gradients;

namespace {

constexpr double kTolerance = 1e-4;
constexpr std::uint64_t kSeeds = 20;

class ModuleGradients : public ::testing::TestWithParam<camila::testing::NamedCase> {};

TEST_P(ModuleGradients, MatchCentralDifferencesOverSeeds) {
    for (std::uint64_t seed = 1; seed <= kSeeds; ++seed) {
        auto c = GetParam().make(seed);
        Rng rng(seed * 7919);
        const auto r = check_gradients(c.loss, c.trainable(), rng);
        EXPECT_LE(r.max_rel_error, kTolerance) << GetParam().name << " seed " << seed << " worst " << r.worst
                                                << " analytic " << r.worst_analytic << " numeric " << r.worst_numeric;
        EXPECT_GT(r.checked, 0u);
    }
}

INSTANTIATE_TEST_SUITE_P(All, ModuleGradients, ::testing::ValuesIn(camila::testing::kModuleCases),
                         [](const auto& info) { return std::string(info.param.name); });

// Single ops, each wrapped as a scalar loss against a random projection.
struct OpCase {
    const char* name;
    std::function<Tensor(const Tensor&, const Tensor&)> f;
};

Tensor positive(const Tensor& a) { return add_scalar(square(a), 0.5); }

const std::vector<OpCase>& op_cases() {
    static const std::vector<OpCase> cases = {
        {"matmul", [](const Tensor& a, const Tensor& b) { return matmul(a, transpose(b)); }},
        {"matmul_nt", [](const Tensor& a, const Tensor& b) { return matmul_nt(a, b); }},
        {"mul_broadcast_row", [](const Tensor& a, const Tensor& b) { return mul(a, slice_rows(b, 0, 1)); }},
        {"sub_broadcast_col", [](const Tensor& a, const Tensor& b) { return sub(a, slice_cols(b, 0, 1)); }},
        {"silu", [](const Tensor& a, const Tensor&) { return silu(a); }},
        {"tanh", [](const Tensor& a, const Tensor&) { return camila::tanh(a); }},
        {"sigmoid", [](const Tensor& a, const Tensor&) { return sigmoid(a); }},
        {"exp", [](const Tensor& a, const Tensor&) { return camila::exp(a); }},
        {"log", [](const Tensor& a, const Tensor&) { return camila::log(positive(a)); }},
        {"reciprocal", [](const Tensor& a, const Tensor&) { return reciprocal(positive(a)); }},
        {"softmax_rows", [](const Tensor& a, const Tensor&) { return softmax(a, 1); }},
        {"softmax_cols", [](const Tensor& a, const Tensor&) { return softmax(a, 0); }},
        {"layer_norm",
         [](const Tensor& a, const Tensor& b) {
             return layer_norm(a, slice_rows(b, 0, 1), slice_rows(b, 1, 2));
         }},
        {"normalize_rows", [](const Tensor& a, const Tensor&) { return normalize_rows(a); }},
        {"sum_axis0", [](const Tensor& a, const Tensor&) { return sum_axis(a, 0); }},
        {"mean_axis1", [](const Tensor& a, const Tensor&) { return mean_axis(a, 1); }},
        {"concat", [](const Tensor& a, const Tensor& b) { return concat({a, b}, 0); }},
        {"gather_rows", [](const Tensor& a, const Tensor&) { return gather_rows(a, {3, 0, 3, 1}); }},
        {"reshape", [](const Tensor& a, const Tensor&) { return reshape(a, {2, a.numel() / 2}); }},
        {"avg_pool", [](const Tensor& a, const Tensor&) { return avg_pool(reshape(a, {16, 2}), 4, 4, 2); }},
        {"upsample", [](const Tensor& a, const Tensor&) { return upsample_nearest(reshape(a, {4, 8}), 2, 2, 2); }},
        {"cross_entropy", [](const Tensor& a, const Tensor&) { return cross_entropy(a, {0, 7, 2, 5}); }},
    };
    return cases;
}

TEST(OpGradients, MatchCentralDifferences) {
    for (const auto& op : op_cases()) {
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            Rng rng(seed);
            Tensor a = randn({4, 8}, 1.0, rng);
            Tensor b = randn({4, 8}, 1.0, rng);
            const Tensor w = randn(op.f(a, b).shape(), 1.0, rng);
            auto loss = [&] { return sum(mul(op.f(a, b), w)); };
            const auto r = check_gradients(loss, {{"a", a}, {"b", b}}, rng, 32);
            EXPECT_LE(r.max_rel_error, kTolerance) << op.name << " seed " << seed << " worst " << r.worst;
        }
    }
}

TEST(OpGradients, StraightThroughCopiesHardAndPassesGradientToSoft) {
    Tensor soft = Tensor::from({1, 3}, {0.2, 0.7, 0.4}).set_requires_grad(true);
    const Tensor hard = Tensor::from({1, 3}, {0.0, 1.0, 0.0});
    const Tensor y = straight_through(hard, soft);
    EXPECT_EQ(y.values(), hard.values());
    backward(sum(mul(y, Tensor::from({1, 3}, {1.0, 2.0, 3.0}))));
    EXPECT_EQ(std::vector<double>(soft.grad().begin(), soft.grad().end()), (std::vector<double>{1.0, 2.0, 3.0}));
}

TEST(OpGradients, ClampHasZeroGradientOutsideRange) {
    Tensor a = Tensor::from({1, 3}, {-2.0, 0.3, 2.0}).set_requires_grad(true);
    backward(sum(clamp(a, -1.0, 1.0)));
    EXPECT_EQ(std::vector<double>(a.grad().begin(), a.grad().end()), (std::vector<double>{0.0, 1.0, 0.0}));
}

TEST(Tape, NoGradGuardRecordsNothing) {
    Tensor a = Tensor::from({1, 2}, {1.0, 2.0}).set_requires_grad(true);
    {
        NoGradGuard guard;
        const Tensor y = sum(square(a));
        EXPECT_FALSE(y.requires_grad());
    }
    EXPECT_TRUE(grad_enabled());
}

TEST(Tape, BackwardRejectsNonScalar) {
    Tensor a = Tensor::from({1, 2}, {1.0, 2.0}).set_requires_grad(true);
    EXPECT_THROW(backward(square(a)), DimensionError);
}

}  // namespace
