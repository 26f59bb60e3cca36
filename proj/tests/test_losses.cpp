#include "csdn/errors.hpp"
#include "csdn/gradcheck.hpp"
#include "csdn/losses.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <array>
#include <numeric>

using namespace csdn;
using csdn::test::random_tensor;

namespace {

using VarD = Var<double>;

LabelMap random_labels(std::int64_t n, std::int64_t h, std::int64_t w, int k, std::mt19937_64& rng)
{
    LabelMap l(n, h, w);
    std::uniform_int_distribution<int> u(0, k - 1);
    for (auto& v : l.values)
        v = static_cast<std::uint8_t>(u(rng));
    return l;
}

// Logits with a large margin on the labelled class.
Tensor<double> confident_logits(const LabelMap& l, int k, double margin)
{
    Tensor<double> z({l.n, k, l.h, l.w}, -margin);
    for (std::int64_t b = 0; b < l.n; ++b)
        for (std::int64_t y = 0; y < l.h; ++y)
            for (std::int64_t x = 0; x < l.w; ++x)
                z(b, l(b, y, x), y, x) = margin;
    return z;
}

// Plain cross-entropy: mean of log(sum exp z) - z_y, no max shift.
double cross_entropy(const Tensor<double>& z, const LabelMap& l)
{
    const Shape s = z.shape();
    double total = 0;
    for (std::int64_t b = 0; b < s.n; ++b)
        for (std::int64_t y = 0; y < s.h; ++y)
            for (std::int64_t x = 0; x < s.w; ++x) {
                double se = 0;
                for (std::int64_t k = 0; k < s.c; ++k)
                    se += std::exp(z(b, k, y, x));
                total += std::log(se) - z(b, l(b, y, x), y, x);
            }
    return total / static_cast<double>(s.n * s.h * s.w);
}

double value(const VarD& v) { return v.value()[0]; }

} // namespace

TEST(FocalLoss, SinglePixelExample)
{
    LabelMap l(1, 1, 1, 1);
    LossConfig cfg;
    EXPECT_NEAR(value(focal_loss(VarD::constant(Tensor<double>({1, 2, 1, 1})), l, cfg)), 0.25 * std::log(2.0), 1e-15);
    EXPECT_NEAR(0.25 * std::log(2.0), 0.17329, 1e-5);
}

TEST(FocalLoss, PerfectPredictionIsZero)
{
    std::mt19937_64 rng(50);
    auto l = random_labels(2, 4, 4, 3, rng);
    EXPECT_LT(value(focal_loss(VarD::constant(confident_logits(l, 3, 40.0)), l, LossConfig{})), 1e-30);
}

TEST(FocalLoss, GammaZeroIsCrossEntropy)
{
    std::mt19937_64 rng(51);
    LossConfig cfg;
    cfg.focal_gamma = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
        auto l = random_labels(2, 5, 3, 3, rng);
        auto z = random_tensor({2, 3, 5, 3}, rng, -4, 4);
        EXPECT_NEAR(value(focal_loss(VarD::constant(z), l, cfg)), cross_entropy(z, l), 1e-7);
    }
}

TEST(FocalLoss, Gradients)
{
    std::mt19937_64 rng(52);
    auto l = random_labels(2, 3, 4, 3, rng);
    for (double gamma : {0.0, 0.5, 2.0}) {
        LossConfig cfg;
        cfg.focal_gamma = gamma;
        cfg.focal_alpha = {0.5, 1.0, 2.0};
        auto r = finite_diff_check([&](const VarD& z) { return focal_loss(z, l, cfg); },
                                   random_tensor({2, 3, 3, 4}, rng, -3, 3), 1e-4);
        EXPECT_TRUE(r.passed) << gamma << " " << r.max_rel_error;
    }
}

TEST(FocalLoss, ErrorPaths)
{
    LabelMap l(1, 2, 2, 3);
    EXPECT_THROW(focal_loss(VarD::constant(Tensor<double>({1, 3, 2, 2})), l, LossConfig{}), DataError);
    EXPECT_THROW(focal_loss(VarD::constant(Tensor<double>({1, 4, 2, 3})), l, LossConfig{}), ShapeError);
    LossConfig bad;
    bad.focal_gamma = -1;
    EXPECT_THROW(focal_loss(VarD::constant(Tensor<double>({1, 4, 2, 2})), l, bad), UsageError);
}

TEST(DiceLoss, UniformPredictionOnSingleClassImage)
{
    LabelMap l(1, 4, 4, 1);
    LossConfig cfg;
    // D_1 = (N + eps) / (1.5 N + eps), class 0 absent from the truth.
    const double n = 16.0;
    const double expected = 1.0 - (n + cfg.dice_eps) / (1.5 * n + cfg.dice_eps);
    EXPECT_NEAR(value(dice_loss(VarD::constant(Tensor<double>({1, 2, 4, 4})), l, cfg)), expected, 1e-15);
    EXPECT_NEAR(expected, 1.0 / 3.0, 1e-6);
}

TEST(DiceLoss, PerfectOverlapAndNoNaNForEmptyClass)
{
    std::mt19937_64 rng(53);
    auto l = random_labels(2, 6, 6, 2, rng);
    auto v = value(dice_loss(VarD::constant(confident_logits(l, 3, 30.0)), l, LossConfig{}));
    EXPECT_LT(v, 1e-5);
    EXPECT_GE(v, 0.0);
    EXPECT_TRUE(std::isfinite(v));
}

TEST(DiceLoss, Gradients)
{
    std::mt19937_64 rng(54);
    auto l = random_labels(2, 4, 3, 3, rng);
    l.values[0] = 0;
    auto r = finite_diff_check([&](const VarD& z) { return dice_loss(z, l, LossConfig{}); },
                               random_tensor({2, 3, 4, 3}, rng, -2, 2), 1e-4);
    EXPECT_TRUE(r.passed) << r.max_rel_error;
    LabelMap two(1, 3, 3, 2);
    two.values[4] = 0;
    auto r2 = finite_diff_check([&](const VarD& z) { return dice_loss(z, two, LossConfig{}); },
                                random_tensor({1, 4, 3, 3}, rng, -2, 2), 1e-4);
    EXPECT_TRUE(r2.passed) << r2.max_rel_error;
}

TEST(LossProperties, NonNegativeShiftAndPermutationInvariant)
{
    std::mt19937_64 rng(55);
    LossConfig cfg;
    cfg.focal_alpha = {0.3, 1.1, 2.0};
    const std::array<int, 3> perm{2, 0, 1};
    for (int trial = 0; trial < 20; ++trial) {
        auto l = random_labels(1, 5, 5, 3, rng);
        auto z = random_tensor({1, 3, 5, 5}, rng, -5, 5);
        const double f = value(focal_loss(VarD::constant(z), l, cfg));
        const double d = value(dice_loss(VarD::constant(z), l, cfg));
        EXPECT_GE(f, 0.0);
        EXPECT_GE(d, 0.0);

        Tensor<double> shifted = z;
        for (std::int64_t y = 0; y < 5; ++y)
            for (std::int64_t x = 0; x < 5; ++x) {
                const double c = std::uniform_real_distribution<double>(-20, 20)(rng);
                for (int k = 0; k < 3; ++k)
                    shifted(0, k, y, x) += c;
            }
        EXPECT_NEAR(value(focal_loss(VarD::constant(shifted), l, cfg)), f, 1e-6);
        EXPECT_NEAR(value(dice_loss(VarD::constant(shifted), l, cfg)), d, 1e-6);

        Tensor<double> zp(z.shape());
        LabelMap lp = l;
        LossConfig cp = cfg;
        for (int k = 0; k < 3; ++k) {
            cp.focal_alpha[perm[k]] = cfg.focal_alpha[k];
            for (std::int64_t i = 0; i < 25; ++i)
                zp[perm[k] * 25 + i] = z[k * 25 + i];
        }
        for (auto& v : lp.values)
            v = static_cast<std::uint8_t>(perm[v]);
        EXPECT_NEAR(value(focal_loss(VarD::constant(zp), lp, cp)), f, 1e-12);
        EXPECT_NEAR(value(dice_loss(VarD::constant(zp), lp, cp)), d, 1e-12);
    }
}

TEST(HybridLoss, DefinitionAndAuxWeighting)
{
    std::mt19937_64 rng(56);
    auto l = random_labels(1, 4, 4, 3, rng);
    CsdnOutput<double> out;
    out.main_logits = VarD::constant(random_tensor({1, 3, 4, 4}, rng));
    LossConfig cfg;
    const double main = value(focal_loss(out.main_logits, l, cfg)) + value(dice_loss(out.main_logits, l, cfg));
    EXPECT_NEAR(value(hybrid_loss(out, l, cfg)), main, 1e-15);
    for (int t = 0; t < 4; ++t)
        out.aux_logits.push_back(VarD::constant(random_tensor({1, 3, 4, 4}, rng)));
    double aux = 0;
    for (const auto& a : out.aux_logits)
        aux += value(focal_loss(a, l, cfg)) + value(dice_loss(a, l, cfg));
    EXPECT_NEAR(value(hybrid_loss(out, l, cfg)), main + 0.4 * aux, 1e-12);
    cfg.aux_weight = 0.0;
    EXPECT_NEAR(value(hybrid_loss(out, l, cfg)), main, 1e-15);
}

TEST(HybridLoss, PerfectPredictionBelowThreshold)
{
    std::mt19937_64 rng(57);
    auto l = random_labels(2, 8, 8, 3, rng);
    CsdnOutput<double> out;
    out.main_logits = VarD::constant(confident_logits(l, 3, 30.0));
    for (int t = 0; t < 4; ++t)
        out.aux_logits.push_back(out.main_logits);
    EXPECT_LT(value(hybrid_loss(out, l, LossConfig{})), 1e-4);
}

TEST(HybridLoss, GradientThroughTinyNetwork)
{
    auto net = Network<float>(NetworkConfig::tiny()).cast<double>();
    net.initialize(7);
    std::mt19937_64 rng(58);
    auto x = random_tensor({1, 3, 64, 64}, rng, 0.0, 1.0);
    auto l = random_labels(1, 64, 64, 3, rng);
    const ForwardOptions opt{Mode::train, true};
    auto grads = backward(hybrid_loss(net.forward(x, opt), l, LossConfig{}));
    std::vector<GradCheckTarget> targets;
    for (auto& [name, p] : net.parameters().entries())
        if (p.learnable())
            targets.push_back({name, &p.value, grads.at(name)});
    auto eval = [&] {
        NoGradGuard g;
        return value(hybrid_loss(net.forward(x, opt), l, LossConfig{}));
    };
    GradCheckOptions opts;
    opts.max_entries = 4;
    auto report = finite_diff_check(eval, targets, 1e-4, opts);
    EXPECT_TRUE(report.passed) << report.max_rel_error << " at " << report.worst;
}

TEST(LossValues, UnrecordedPathMatchesRecordedGraph)
{
    std::mt19937_64 rng(58);
    LossConfig cfg;
    cfg.focal_alpha = {0.5, 1.0, 1.5};
    for (double gamma : {0.0, 1.5, 2.0}) {
        cfg.focal_gamma = gamma;
        auto l = random_labels(2, 6, 7, 3, rng);
        auto z = random_tensor({2, 3, 6, 7}, rng, -4, 4);
        const auto leaf = VarD::leaf(z, true, "z");
        const double f = value(focal_loss(leaf, l, cfg));
        const double d = value(dice_loss(leaf, l, cfg));
        CsdnOutput<double> out;
        out.main_logits = leaf;
        out.aux_logits = {leaf};
        const double h = value(hybrid_loss(out, l, cfg));
        NoGradGuard g;
        EXPECT_NEAR(value(focal_loss(VarD::constant(z), l, cfg)), f, 1e-13);
        EXPECT_NEAR(value(dice_loss(VarD::constant(z), l, cfg)), d, 1e-13);
        out.main_logits = VarD::constant(z);
        out.aux_logits = {out.main_logits};
        EXPECT_NEAR(value(hybrid_loss(out, l, cfg)), h, 1e-13);
    }
}
