#include "csdn/errors.hpp"
#include "csdn/gradcheck.hpp"
#include "csdn/layers.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

using namespace csdn;
using csdn::test::random_tensor;

namespace {

using VarD = Var<double>;

VarD constant(const Tensor<double>& t) { return VarD::constant(t); }

// Direct nested-loop cross-correlation, groups supported.
Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>* b, const ConvSpec& s)
{
    const Shape in = x.shape();
    const auto ho = s.out_h(in.h);
    const auto wo = s.out_w(in.w);
    const auto cin_g = s.in_channels / s.groups;
    const auto cout_g = s.out_channels / s.groups;
    Tensor<double> out({in.n, s.out_channels, ho, wo});
    for (std::int64_t n = 0; n < in.n; ++n)
        for (std::int64_t co = 0; co < s.out_channels; ++co)
            for (std::int64_t oy = 0; oy < ho; ++oy)
                for (std::int64_t ox = 0; ox < wo; ++ox) {
                    double acc = b ? (*b)[co] : 0.0;
                    const auto g = co / cout_g;
                    for (std::int64_t ci = 0; ci < cin_g; ++ci)
                        for (int ky = 0; ky < s.kernel_h; ++ky)
                            for (int kx = 0; kx < s.kernel_w; ++kx) {
                                const auto iy = oy * s.stride_h - s.pad_h + ky;
                                const auto ix = ox * s.stride_w - s.pad_w + kx;
                                if (iy < 0 || iy >= in.h || ix < 0 || ix >= in.w)
                                    continue;
                                acc += w(co, ci, ky, kx) * x(n, g * cin_g + ci, iy, ix);
                            }
                    out(n, co, oy, ox) = acc;
                }
    return out;
}

struct BnFixture {
    Tensor<double> mean;
    Tensor<double> var;
    BatchNormState<double> state;

    explicit BnFixture(std::int64_t c, NormMode mode)
        : mean(Shape{c, 1, 1, 1}), var(Tensor<double>::ones({c, 1, 1, 1}))
    {
        state.running_mean = &mean;
        state.running_var = &var;
        state.mode = mode;
    }
};

constexpr double kTol = 1e-4;

} // namespace

// ---------------------------------------------------------------- conv2d

TEST(Conv2d, UnitKernelIsIdentity)
{
    std::mt19937_64 rng(1);
    auto x = random_tensor({2, 1, 5, 5}, rng);
    auto spec = ConvSpec::square(1, 1, 1);
    auto y = conv2d(constant(x), constant(Tensor<double>::ones(spec.weight_shape())), VarD{}, spec).value();
    EXPECT_EQ(y, x);
}

TEST(Conv2d, OnesKernelCountsOverlap)
{
    auto spec = ConvSpec::square(1, 1, 3);
    auto y = conv2d(constant(Tensor<double>::ones({1, 1, 4, 4})), constant(Tensor<double>::ones(spec.weight_shape())),
                    VarD{}, spec)
                 .value();
    EXPECT_EQ(y(0, 0, 1, 1), 9);
    EXPECT_EQ(y(0, 0, 2, 2), 9);
    EXPECT_EQ(y(0, 0, 0, 0), 4);
    EXPECT_EQ(y(0, 0, 3, 3), 4);
    EXPECT_EQ(y(0, 0, 0, 1), 6);
}

TEST(Conv2d, MatchesNaiveLoopsIncludingGroups)
{
    std::mt19937_64 rng(2);
    for (std::int64_t groups : {1, 2, 4}) {
        ConvSpec spec = ConvSpec::square(4, 8, 3, 2, groups, true);
        auto x = random_tensor({2, 4, 7, 6}, rng);
        auto w = random_tensor(spec.weight_shape(), rng);
        auto b = random_tensor(spec.bias_shape(), rng);
        auto y = conv2d(constant(x), constant(w), constant(b), spec).value();
        EXPECT_LT(max_abs_diff(y, naive_conv(x, w, &b, spec)), 1e-12) << groups;
    }
}

TEST(Conv2d, GroupedEqualsIndependentDenseSlices)
{
    std::mt19937_64 rng(3);
    const std::int64_t g = 2;
    ConvSpec grouped = ConvSpec::square(4, 6, 3, 1, g);
    auto x = random_tensor({1, 4, 5, 5}, rng);
    auto w = random_tensor(grouped.weight_shape(), rng);
    auto y = conv2d(constant(x), constant(w), VarD{}, grouped).value();
    ConvSpec dense = ConvSpec::square(2, 3, 3);
    for (std::int64_t k = 0; k < g; ++k) {
        Tensor<double> xs({1, 2, 5, 5});
        Tensor<double> ws(dense.weight_shape());
        std::copy_n(x.data() + x.offset(0, 2 * k, 0, 0), xs.numel(), xs.data());
        std::copy_n(w.data() + k * ws.numel(), ws.numel(), ws.data());
        auto ys = conv2d(constant(xs), constant(ws), VarD{}, dense).value();
        for (std::int64_t i = 0; i < ys.numel(); ++i)
            EXPECT_EQ(ys[i], y[y.offset(0, 3 * k, 0, 0) + i]);
    }
}

TEST(Conv2d, StridedShapeAndGradients)
{
    std::mt19937_64 rng(4);
    ConvSpec spec = ConvSpec::square(4, 5, 3, 2, 1, true);
    auto x = random_tensor({1, 4, 8, 8}, rng);
    auto w = random_tensor(spec.weight_shape(), rng);
    auto b = random_tensor(spec.bias_shape(), rng);
    const auto probe = test::probe_weights({1, 5, 4, 4});
    EXPECT_EQ(conv2d(constant(x), constant(w), constant(b), spec).shape(), (Shape{1, 5, 4, 4}));

    auto wrt_x = finite_diff_check(
        [&](const VarD& v) { return test::weighted_sum(conv2d(v, constant(w), constant(b), spec), probe); }, x, kTol);
    auto wrt_w = finite_diff_check(
        [&](const VarD& v) { return test::weighted_sum(conv2d(constant(x), v, constant(b), spec), probe); }, w, kTol);
    auto wrt_b = finite_diff_check(
        [&](const VarD& v) { return test::weighted_sum(conv2d(constant(x), constant(w), v, spec), probe); }, b, kTol);
    EXPECT_TRUE(wrt_x.passed) << wrt_x.max_rel_error;
    EXPECT_TRUE(wrt_w.passed) << wrt_w.max_rel_error;
    EXPECT_TRUE(wrt_b.passed) << wrt_b.max_rel_error;
}

TEST(Conv2d, RejectsBadInputs)
{
    ConvSpec spec = ConvSpec::square(3, 4, 3);
    auto w = constant(Tensor<double>(spec.weight_shape()));
    EXPECT_THROW(conv2d(constant(Tensor<double>({1, 2, 4, 4})), w, VarD{}, spec), ShapeError);
    ConvSpec big = ConvSpec::square(3, 4, 5);
    big.pad_h = big.pad_w = 0;
    EXPECT_THROW(conv2d(constant(Tensor<double>({1, 3, 3, 3})), constant(Tensor<double>(big.weight_shape())), VarD{}, big),
                 ShapeError);
    ConvSpec bad_groups = ConvSpec::square(3, 4, 3, 1, 2);
    EXPECT_THROW(bad_groups.validate(), ShapeError);
}

// ------------------------------------------------------ depthwise_conv2d

TEST(DepthwiseConv2d, ChannelsAreIndependent)
{
    std::mt19937_64 rng(5);
    ConvSpec spec = ConvSpec::depthwise(2, 3, 1, true);
    auto x = random_tensor({1, 2, 5, 5}, rng);
    for (std::int64_t i = 0; i < 25; ++i)
        x[25 + i] = 0.0;
    auto w = random_tensor(spec.weight_shape(), rng);
    auto b = random_tensor(spec.bias_shape(), rng);
    auto y = depthwise_conv2d(constant(x), constant(w), constant(b), spec).value();
    for (std::int64_t i = 0; i < 25; ++i)
        EXPECT_EQ(y[25 + i], b[1]);
}

TEST(DepthwiseConv2d, EqualsBlockDiagonalDenseConv)
{
    std::mt19937_64 rng(6);
    ConvSpec dw = ConvSpec::depthwise(3, 3);
    auto x = random_tensor({1, 3, 6, 6}, rng);
    auto w = random_tensor(dw.weight_shape(), rng);
    ConvSpec dense = ConvSpec::square(3, 3, 3);
    Tensor<double> wd(dense.weight_shape());
    for (std::int64_t c = 0; c < 3; ++c)
        for (int k = 0; k < 9; ++k)
            wd[wd.offset(c, c, k / 3, k % 3)] = w[w.offset(c, 0, k / 3, k % 3)];
    auto a = depthwise_conv2d(constant(x), constant(w), VarD{}, dw).value();
    auto b = conv2d(constant(x), constant(wd), VarD{}, dense).value();
    EXPECT_LT(max_abs_diff(a, b), 1e-12);
}

TEST(DepthwiseConv2d, GradientsMatchFiniteDifferences)
{
    std::mt19937_64 rng(7);
    for (int stride : {1, 2}) {
        ConvSpec spec = ConvSpec::depthwise(4, 3, stride, true);
        auto x = random_tensor({1, 4, 8, 8}, rng);
        auto w = random_tensor(spec.weight_shape(), rng);
        auto b = random_tensor(spec.bias_shape(), rng);
        const auto probe = test::probe_weights({1, 4, spec.out_h(8), spec.out_w(8)});
        auto rx = finite_diff_check(
            [&](const VarD& v) { return test::weighted_sum(depthwise_conv2d(v, constant(w), constant(b), spec), probe); },
            x, kTol);
        auto rw = finite_diff_check(
            [&](const VarD& v) { return test::weighted_sum(depthwise_conv2d(constant(x), v, constant(b), spec), probe); },
            w, kTol);
        EXPECT_TRUE(rx.passed) << rx.max_rel_error;
        EXPECT_TRUE(rw.passed) << rw.max_rel_error;
    }
}

TEST(DepthwiseConv2d, RejectsNonDepthwiseSpec)
{
    ConvSpec spec = ConvSpec::square(4, 4, 3, 1, 2);
    EXPECT_THROW(depthwise_conv2d(constant(Tensor<double>({1, 4, 4, 4})), constant(Tensor<double>(spec.weight_shape())),
                                  VarD{}, spec),
                 ShapeError);
}

// ----------------------------------------------------------- batchnorm2d

TEST(BatchNorm2d, TrainModeStandardises)
{
    std::mt19937_64 rng(8);
    BnFixture bn(3, NormMode::batch);
    auto x = random_tensor({2, 3, 4, 4}, rng, -3.0, 5.0);
    auto y = batchnorm2d(constant(x), constant(Tensor<double>::ones({3, 1, 1, 1})), constant(Tensor<double>({3, 1, 1, 1})),
                         bn.state)
                 .value();
    for (std::int64_t c = 0; c < 3; ++c) {
        double s = 0, sq = 0;
        for (std::int64_t n = 0; n < 2; ++n)
            for (std::int64_t i = 0; i < 16; ++i) {
                const double v = y[y.offset(n, c, 0, 0) + i];
                s += v;
                sq += v * v;
            }
        EXPECT_NEAR(s / 32, 0.0, 1e-5);
        EXPECT_NEAR(sq / 32, 1.0, 1e-5);
    }
}

TEST(BatchNorm2d, UpdatesRunningStatisticsWithMomentum)
{
    BnFixture bn(1, NormMode::batch);
    Tensor<double> x({1, 1, 1, 4}, {1, 2, 3, 6});
    batchnorm2d(constant(x), constant(Tensor<double>::ones({1, 1, 1, 1})), constant(Tensor<double>({1, 1, 1, 1})),
                bn.state);
    // mean 3, unbiased variance 14/3
    EXPECT_NEAR(bn.mean[0], 0.1 * 3.0, 1e-12);
    EXPECT_NEAR(bn.var[0], 0.9 + 0.1 * 14.0 / 3.0, 1e-12);
}

TEST(BatchNorm2d, EvalWithUnitStatsIsIdentity)
{
    std::mt19937_64 rng(9);
    BnFixture bn(2, NormMode::running);
    auto x = random_tensor({1, 2, 3, 3}, rng);
    auto y = batchnorm2d(constant(x), constant(Tensor<double>::ones({2, 1, 1, 1})), constant(Tensor<double>({2, 1, 1, 1})),
                         bn.state)
                 .value();
    EXPECT_LT(max_abs_diff(y, x), 1e-5);
}

TEST(BatchNorm2d, GradientsThroughBatchStatistics)
{
    std::mt19937_64 rng(10);
    auto x = random_tensor({2, 3, 4, 4}, rng);
    auto gamma = random_tensor({3, 1, 1, 1}, rng, 0.5, 1.5);
    auto beta = random_tensor({3, 1, 1, 1}, rng);
    const auto probe = test::probe_weights(x.shape());
    auto run = [&](const VarD& xv, const VarD& gv, const VarD& bv) {
        BnFixture bn(3, NormMode::batch);
        return test::weighted_sum(batchnorm2d(xv, gv, bv, bn.state), probe);
    };
    auto rx = finite_diff_check([&](const VarD& v) { return run(v, constant(gamma), constant(beta)); }, x, kTol);
    auto rg = finite_diff_check([&](const VarD& v) { return run(constant(x), v, constant(beta)); }, gamma, kTol);
    auto rb = finite_diff_check([&](const VarD& v) { return run(constant(x), constant(gamma), v); }, beta, kTol);
    EXPECT_TRUE(rx.passed) << rx.max_rel_error << " " << rx.worst;
    EXPECT_TRUE(rg.passed) << rg.max_rel_error;
    EXPECT_TRUE(rb.passed) << rb.max_rel_error;
}

TEST(BatchNorm2d, RunningModeGradients)
{
    std::mt19937_64 rng(11);
    auto x = random_tensor({1, 3, 3, 3}, rng);
    auto gamma = random_tensor({3, 1, 1, 1}, rng, 0.5, 1.5);
    BnFixture bn(3, NormMode::running);
    bn.mean = random_tensor({3, 1, 1, 1}, rng);
    bn.var = random_tensor({3, 1, 1, 1}, rng, 0.5, 2.0);
    const auto probe = test::probe_weights(x.shape());
    auto beta = constant(Tensor<double>({3, 1, 1, 1}));
    auto rx = finite_diff_check(
        [&](const VarD& v) { return test::weighted_sum(batchnorm2d(v, constant(gamma), beta, bn.state), probe); }, x, kTol);
    auto rg = finite_diff_check(
        [&](const VarD& v) { return test::weighted_sum(batchnorm2d(constant(x), v, beta, bn.state), probe); }, gamma,
        kTol);
    EXPECT_TRUE(rx.passed);
    EXPECT_TRUE(rg.passed);
}

TEST(BatchNorm2d, ErrorPaths)
{
    BnFixture bn(1, NormMode::batch);
    auto one = constant(Tensor<double>::ones({1, 1, 1, 1}));
    auto zero = constant(Tensor<double>({1, 1, 1, 1}));
    EXPECT_THROW(batchnorm2d(constant(Tensor<double>({1, 1, 1, 1})), one, zero, bn.state), ShapeError);
    BnFixture eval(1, NormMode::running);
    eval.var[0] = 0.0;
    EXPECT_THROW(batchnorm2d(constant(Tensor<double>({1, 1, 2, 2})), one, zero, eval.state), NumericError);
}

// ----------------------------------------------------------------- prelu

TEST(Prelu, PositiveHalfLineIsIdentityAndNegativeIsScaled)
{
    std::mt19937_64 rng(12);
    auto x = random_tensor({1, 2, 3, 3}, rng, 0.0, 1.0);
    auto alpha = constant(Tensor<double>::full({2, 1, 1, 1}, 0.7));
    EXPECT_EQ(prelu(constant(x), alpha).value(), x);
    auto y = prelu(constant(Tensor<double>::full({1, 1, 1, 1}, -2.0)), constant(Tensor<double>::full({1, 1, 1, 1}, 0.25)));
    EXPECT_EQ(y.value()[0], -0.5);
}

TEST(Prelu, AlphaGradientIsSumOfNegativeInputs)
{
    std::mt19937_64 rng(13);
    auto x = random_tensor({2, 2, 3, 3}, rng);
    auto alpha = Tensor<double>::full({2, 1, 1, 1}, 0.25);
    auto g = backward(sum(prelu(constant(x), VarD::leaf(alpha, true, "alpha")))).at("alpha");
    for (std::int64_t c = 0; c < 2; ++c) {
        double expected = 0;
        for (std::int64_t n = 0; n < 2; ++n)
            for (std::int64_t i = 0; i < 9; ++i)
                expected += std::min(0.0, x[x.offset(n, c, 0, 0) + i]);
        EXPECT_NEAR(g[c], expected, 1e-12);
    }
    const auto probe = test::probe_weights(x.shape());
    auto ra = finite_diff_check([&](const VarD& v) { return test::weighted_sum(prelu(constant(x), v), probe); }, alpha, kTol);
    auto rx = finite_diff_check([&](const VarD& v) { return test::weighted_sum(prelu(v, constant(alpha)), probe); }, x, kTol);
    EXPECT_TRUE(ra.passed);
    EXPECT_TRUE(rx.passed);
}

TEST(Prelu, RejectsWrongAlphaLength)
{
    EXPECT_THROW(prelu(constant(Tensor<double>({1, 3, 2, 2})), constant(Tensor<double>({2, 1, 1, 1}))), ShapeError);
}

// ----------------------------------------------------------------- pools

TEST(Pool2d, ConstantInputStaysConstant)
{
    auto x = constant(Tensor<double>::full({1, 2, 6, 6}, 3.5));
    for (auto kind : {PoolKind::max, PoolKind::avg}) {
        auto y = pool2d(kind, x, PoolSpec{3, 2, 1}).value();
        for (double v : y.values())
            EXPECT_DOUBLE_EQ(v, 3.5);
    }
}

TEST(Pool2d, TwoByTwoWindow)
{
    auto x = constant(Tensor<double>({1, 1, 2, 2}, {1, 2, 3, 4}));
    EXPECT_EQ(pool2d(PoolKind::max, x, PoolSpec{2, 2, 0}).value()[0], 4.0);
    EXPECT_EQ(pool2d(PoolKind::avg, x, PoolSpec{2, 2, 0}).value()[0], 2.5);
}

TEST(Pool2d, AveragePaddingCountsInBoundsOnly)
{
    auto x = constant(Tensor<double>({1, 1, 2, 2}, {1, 2, 3, 4}));
    auto y = pool2d(PoolKind::avg, x, PoolSpec{3, 2, 1}).value();
    EXPECT_DOUBLE_EQ(y[0], 2.5);
}

TEST(Pool2d, MaxGradientRoutesToArgmax)
{
    std::mt19937_64 rng(14);
    // Distinct values: a shuffled ramp has no ties.
    Tensor<double> x({2, 2, 6, 6});
    for (std::int64_t i = 0; i < x.numel(); ++i)
        x[i] = 0.01 * static_cast<double>(i);
    std::shuffle(x.values().begin(), x.values().end(), rng);
    const PoolSpec spec{3, 2, 1};
    const auto probe = test::probe_weights({2, 2, 3, 3});
    auto r = finite_diff_check([&](const VarD& v) { return test::weighted_sum(pool2d(PoolKind::max, v, spec), probe); }, x,
                               kTol, GradCheckOptions{1e-4, 4, 0});
    EXPECT_TRUE(r.passed) << r.max_rel_error;
    auto ra = finite_diff_check([&](const VarD& v) { return test::weighted_sum(pool2d(PoolKind::avg, v, spec), probe); }, x,
                                kTol);
    EXPECT_TRUE(ra.passed);
}

TEST(Pool2d, MaxTiesGoToFirstPosition)
{
    auto x = VarD::leaf(Tensor<double>::ones({1, 1, 2, 2}), true, "x");
    auto g = backward(sum(pool2d(PoolKind::max, x, PoolSpec{2, 2, 0}))).at("x");
    EXPECT_EQ(g[0], 1.0);
    EXPECT_EQ(g[1] + g[2] + g[3], 0.0);
}

TEST(GlobalAvgPool, MeanPerChannel)
{
    EXPECT_EQ(global_avg_pool(constant(Tensor<double>::full({1, 1, 3, 3}, 7.0))).value()[0], 7.0);
    EXPECT_EQ(global_avg_pool(constant(Tensor<double>({1, 1, 2, 2}, {1, 2, 3, 4}))).value()[0], 2.5);
}

TEST(GlobalAvgPool, UniformGradientAndAvgPoolEquivalence)
{
    std::mt19937_64 rng(15);
    auto x = random_tensor({2, 3, 5, 5}, rng);
    auto g = backward(sum(global_avg_pool(VarD::leaf(x, true, "x")))).at("x");
    for (double v : g.values())
        EXPECT_DOUBLE_EQ(v, 1.0 / 25.0);
    auto full = pool2d(PoolKind::avg, constant(x), PoolSpec{5, 5, 0}).value();
    EXPECT_LT(max_abs_diff(full, global_avg_pool(constant(x)).value()), 1e-15);
    auto r = finite_diff_check(
        [&](const VarD& v) { return test::weighted_sum(global_avg_pool(v), test::probe_weights({2, 3, 1, 1})); }, x, kTol);
    EXPECT_TRUE(r.passed);
}

// ---------------------------------------------------------------- resize

TEST(Resize, SameSizeIsIdentity)
{
    std::mt19937_64 rng(16);
    auto x = random_tensor({1, 2, 5, 7}, rng);
    for (auto mode : {ResizeMode::nearest, ResizeMode::bilinear, ResizeMode::bicubic})
        EXPECT_LT(max_abs_diff(resize(constant(x), 5, 7, mode).value(), x), 1e-15);
}

TEST(Resize, PreservesConstants)
{
    auto x = constant(Tensor<double>::full({1, 1, 6, 5}, 0.3));
    for (auto mode : {ResizeMode::nearest, ResizeMode::bilinear, ResizeMode::bicubic})
        for (auto [h, w] : {std::pair{3, 2}, std::pair{12, 10}, std::pair{7, 13}, std::pair{1, 1}}) {
            auto y = resize(x, h, w, mode).value();
            for (double v : y.values())
                EXPECT_NEAR(v, 0.3, 1e-14);
        }
}

TEST(Resize, BilinearUpsampleMatchesDirectInterpolation)
{
    Tensor<double> x({1, 1, 2, 2}, {1.0, 2.0, 5.0, 11.0});
    auto y = resize(constant(x), 4, 4, ResizeMode::bilinear).value();
    auto src = [](int o) { return std::max(0.0, (o + 0.5) * 0.5 - 0.5); };
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            const double sy = src(i), sx = src(j);
            const int y0 = static_cast<int>(sy), x0 = static_cast<int>(sx);
            const int y1 = std::min(y0 + 1, 1), x1 = std::min(x0 + 1, 1);
            const double ly = sy - y0, lx = sx - x0;
            const double expected = (1 - ly) * ((1 - lx) * x(0, 0, y0, x0) + lx * x(0, 0, y0, x1)) +
                                    ly * ((1 - lx) * x(0, 0, y1, x0) + lx * x(0, 0, y1, x1));
            EXPECT_EQ(y(0, 0, i, j), expected) << i << "," << j;
        }
}

TEST(Resize, BicubicKernelMatchesCatmullRomFamily)
{
    // a = -0.75 at t = 0.5: outer taps a/8 * ... evaluated by hand.
    auto w = cubic_weights(0.5);
    EXPECT_NEAR(w[0], -0.09375, 1e-15);
    EXPECT_NEAR(w[1], 0.59375, 1e-15);
    EXPECT_NEAR(w[2], 0.59375, 1e-15);
    EXPECT_NEAR(w[3], -0.09375, 1e-15);
}

TEST(Resize, GradientsForAllModes)
{
    std::mt19937_64 rng(17);
    auto x = random_tensor({1, 2, 5, 6}, rng);
    for (auto mode : {ResizeMode::nearest, ResizeMode::bilinear, ResizeMode::bicubic})
        for (auto [h, w] : {std::pair{9, 4}, std::pair{3, 11}}) {
            const auto probe = test::probe_weights({1, 2, h, w});
            auto r = finite_diff_check([&](const VarD& v) { return test::weighted_sum(resize(v, h, w, mode), probe); }, x,
                                       kTol);
            EXPECT_TRUE(r.passed) << r.max_rel_error;
        }
}

// --------------------------------------------------------- pixel shuffle

TEST(PixelShuffle, UnshuffleLayout)
{
    auto y = pixel_unshuffle(constant(Tensor<double>({1, 1, 2, 2}, {1, 2, 3, 4})), 2).value();
    EXPECT_EQ(y.shape(), (Shape{1, 4, 1, 1}));
    EXPECT_EQ(y[0], 1);
    EXPECT_EQ(y[1], 2);
    EXPECT_EQ(y[2], 3);
    EXPECT_EQ(y[3], 4);
}

TEST(PixelShuffle, FactorOneIsIdentityAndShapes)
{
    std::mt19937_64 rng(18);
    auto x = random_tensor({1, 3, 4, 6}, rng);
    EXPECT_EQ(pixel_unshuffle(constant(x), 1).value(), x);
    EXPECT_EQ(pixel_shuffle(constant(x), 1).value(), x);
    EXPECT_EQ(pixel_unshuffle(constant(Tensor<double>({1, 3, 224, 224})), 2).shape(), (Shape{1, 12, 112, 112}));
    EXPECT_EQ(pixel_shuffle(constant(Tensor<double>({1, 12, 112, 112})), 2).shape(), (Shape{1, 3, 224, 224}));
}

TEST(PixelShuffle, RoundTripIsBitExact)
{
    std::mt19937_64 rng(19);
    std::uniform_int_distribution<int> small(1, 3);
    for (int trial = 0; trial < 100; ++trial) {
        const int r = 2 + trial % 3;
        auto x = random_tensor({small(rng), small(rng), r * small(rng), r * small(rng)}, rng);
        auto down = pixel_unshuffle(constant(x), r).value();
        EXPECT_EQ(pixel_shuffle(constant(down), r).value(), x);
        auto a = std::vector<double>(x.values().begin(), x.values().end());
        auto b = std::vector<double>(down.values().begin(), down.values().end());
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        EXPECT_EQ(a, b);
    }
}

TEST(PixelShuffle, RejectsIndivisibleSizes)
{
    EXPECT_THROW(pixel_unshuffle(constant(Tensor<double>({1, 1, 3, 4})), 2), ShapeError);
    EXPECT_THROW(pixel_shuffle(constant(Tensor<double>({1, 6, 2, 2})), 2), ShapeError);
}

TEST(PixelShuffle, Gradients)
{
    std::mt19937_64 rng(20);
    auto x = random_tensor({1, 2, 4, 6}, rng);
    auto r1 = finite_diff_check(
        [&](const VarD& v) { return test::weighted_sum(pixel_unshuffle(v, 2), test::probe_weights({1, 8, 2, 3})); }, x,
        kTol);
    auto r2 = finite_diff_check(
        [&](const VarD& v) { return test::weighted_sum(pixel_shuffle(v, 2), test::probe_weights({1, 2, 8, 12}, 5)); },
        random_tensor({1, 8, 4, 6}, rng), kTol);
    EXPECT_TRUE(r1.passed);
    EXPECT_TRUE(r2.passed);
}

// --------------------------------------------------------------- concat

TEST(ConcatChannels, SingleInputAndChannelCount)
{
    std::mt19937_64 rng(21);
    auto x = random_tensor({2, 3, 4, 4}, rng);
    EXPECT_EQ(concat_channels<double>({constant(x)}).value(), x);
    auto y = concat_channels<double>({constant(x), constant(random_tensor({2, 5, 4, 4}, rng))});
    EXPECT_EQ(y.shape().c, 8);
    EXPECT_EQ(y.value()(1, 2, 3, 3), x(1, 2, 3, 3));
}

TEST(ConcatChannels, BackwardSplitsByRanges)
{
    std::mt19937_64 rng(22);
    auto a = random_tensor({2, 2, 3, 3}, rng);
    auto b = random_tensor({2, 3, 3, 3}, rng);
    const auto probe = test::probe_weights({2, 5, 3, 3});
    auto ra = finite_diff_check(
        [&](const VarD& v) { return test::weighted_sum(concat_channels<double>({v, constant(b)}), probe); }, a, kTol);
    auto rb = finite_diff_check(
        [&](const VarD& v) { return test::weighted_sum(concat_channels<double>({constant(a), v}), probe); }, b, kTol);
    EXPECT_TRUE(ra.passed);
    EXPECT_TRUE(rb.passed);
}

TEST(ConcatChannels, RejectsSpatialMismatch)
{
    EXPECT_THROW(concat_channels<double>({constant(Tensor<double>({1, 1, 2, 2})), constant(Tensor<double>({1, 1, 2, 3}))}),
                 ShapeError);
}

// --------------------------------------------------------------- sigmoid

TEST(Sigmoid, ValuesSymmetryAndSaturation)
{
    EXPECT_EQ(sigmoid(constant(Tensor<double>({1, 1, 1, 1}))).value()[0], 0.5);
    std::mt19937_64 rng(23);
    auto x = random_tensor({1, 1, 4, 4}, rng, -10, 10);
    Tensor<double> neg(x.shape());
    neg.array() = -x.array();
    auto a = sigmoid(constant(x)).value();
    auto b = sigmoid(constant(neg)).value();
    for (std::int64_t i = 0; i < x.numel(); ++i)
        EXPECT_NEAR(b[i], 1.0 - a[i], 1e-7);
    auto sat = sigmoid(constant(Tensor<double>({1, 1, 1, 2}, {-800.0, 800.0}))).value();
    EXPECT_EQ(sat[0], 0.0);
    EXPECT_EQ(sat[1], 1.0);
    auto satf = sigmoid(Var<float>::constant(Tensor<float>({1, 1, 1, 2}, {-40.f, 40.f}))).value();
    EXPECT_TRUE(satf.all_finite());
}

TEST(Sigmoid, Gradient)
{
    std::mt19937_64 rng(24);
    auto r = finite_diff_check(
        [&](const VarD& v) { return test::weighted_sum(sigmoid(v), test::probe_weights({1, 2, 3, 3})); },
        random_tensor({1, 2, 3, 3}, rng, -4, 4), kTol);
    EXPECT_TRUE(r.passed);
}

// Property: every layer passes the finite-difference suite on random
// shapes up to 2x8x16x16.
TEST(LayerProperties, RandomShapeGradientSweep)
{
    std::mt19937_64 rng(25);
    std::uniform_int_distribution<int> n(1, 2), c(1, 8), hw(3, 16);
    for (int trial = 0; trial < 3; ++trial) {
        const Shape s{n(rng), c(rng), hw(rng), hw(rng)};
        auto x = random_tensor(s, rng);
        ConvSpec spec = ConvSpec::square(s.c, 3, 3, 2, 1, true);
        auto w = random_tensor(spec.weight_shape(), rng);
        auto b = random_tensor(spec.bias_shape(), rng);
        const Shape co{s.n, 3, spec.out_h(s.h), spec.out_w(s.w)};
        GradCheckOptions opt;
        opt.max_entries = 200;
        auto r = finite_diff_check(
            [&](const VarD& v) { return test::weighted_sum(conv2d(v, constant(w), constant(b), spec), test::probe_weights(co)); },
            x, kTol, opt);
        EXPECT_TRUE(r.passed) << s.str();
        auto rs = finite_diff_check(
            [&](const VarD& v) { return test::weighted_sum(sigmoid(v), test::probe_weights(s)); }, x, kTol, opt);
        EXPECT_TRUE(rs.passed) << s.str();
        auto rr = finite_diff_check(
            [&](const VarD& v) {
                return test::weighted_sum(resize(v, 2 * s.h, s.w + 1, ResizeMode::bicubic),
                                          test::probe_weights({s.n, s.c, 2 * s.h, s.w + 1}));
            },
            x, kTol, opt);
        EXPECT_TRUE(rr.passed) << s.str();
    }
}
