#include "csdn/autodiff.hpp"
#include "csdn/errors.hpp"
#include "csdn/gradcheck.hpp"
#include "csdn/ops.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

using namespace csdn;
using csdn::test::random_tensor;

namespace {

Var<double> leaf(const Tensor<double>& t, const char* name = "x") { return Var<double>::leaf(t, true, name); }

} // namespace

TEST(Elementwise, AddsMatchingShapes)
{
    auto a = Var<double>::constant(Tensor<double>({1, 1, 1, 2}, {1, 2}));
    auto b = Var<double>::constant(Tensor<double>({1, 1, 1, 2}, {3, 4}));
    const auto c = add(a, b).value();
    EXPECT_EQ(c[0], 4);
    EXPECT_EQ(c[1], 6);
}

TEST(Elementwise, MulByOnesIsIdentity)
{
    std::mt19937_64 rng(1);
    auto x = random_tensor({2, 3, 4, 5}, rng);
    auto y = mul(Var<double>::constant(x), Var<double>::constant(Tensor<double>::ones(x.shape()))).value();
    EXPECT_EQ(y, x);
}

TEST(Elementwise, GradOfProductSumMatchesCentralDifference)
{
    std::mt19937_64 rng(2);
    auto a = random_tensor({2, 3, 4, 4}, rng);
    auto b = random_tensor({2, 3, 4, 4}, rng);
    auto va = leaf(a, "a");
    auto grads = backward(sum(mul(va, Var<double>::constant(b))));
    auto fd = test::central_difference(
        [&](const Tensor<double>& x) { return (x.array() * b.array()).sum(); }, a);
    EXPECT_LT(max_abs_diff(grads.at("a"), b), 1e-12);
    EXPECT_LT(max_abs_diff(grads.at("a"), fd), 1e-8);
}

TEST(Elementwise, BroadcastsSpatialAndChannelSingletons)
{
    std::mt19937_64 rng(3);
    auto x = random_tensor({2, 3, 4, 5}, rng);
    auto per_channel = random_tensor({2, 3, 1, 1}, rng);
    auto per_pixel = random_tensor({2, 1, 4, 5}, rng);
    auto sp = add(Var<double>::constant(x), Var<double>::constant(per_channel)).value();
    auto ch = mul(Var<double>::constant(x), Var<double>::constant(per_pixel)).value();
    EXPECT_DOUBLE_EQ(sp(1, 2, 3, 4), x(1, 2, 3, 4) + per_channel(1, 2, 0, 0));
    EXPECT_DOUBLE_EQ(ch(1, 2, 3, 4), x(1, 2, 3, 4) * per_pixel(1, 0, 3, 4));

    for (auto op : {BinaryOp::add, BinaryOp::sub, BinaryOp::mul})
        for (const Tensor<double>* b : {&per_channel, &per_pixel}) {
            auto report = finite_diff_check(
                [&](const Var<double>& v) {
                    return test::weighted_sum(elementwise(op, Var<double>::constant(x), v), test::probe_weights(x.shape()));
                },
                *b, 1e-6);
            EXPECT_TRUE(report.passed) << report.max_rel_error;
        }
}

TEST(Elementwise, RejectsUnsupportedBroadcast)
{
    auto a = Var<double>::constant(Tensor<double>({1, 3, 4, 4}));
    auto b = Var<double>::constant(Tensor<double>({1, 3, 4, 1}));
    EXPECT_THROW(add(a, b), ShapeError);
}

TEST(Backward, LinearAndQuadraticCases)
{
    std::mt19937_64 rng(4);
    auto w = random_tensor({1, 2, 3, 3}, rng);
    auto x = random_tensor({1, 2, 3, 3}, rng);
    auto g1 = backward(sum(mul(leaf(w, "w"), Var<double>::constant(x))));
    EXPECT_EQ(g1.at("w"), x);

    auto vw = leaf(w, "w");
    auto g2 = backward(scale(sum(mul(vw, vw)), 0.5));
    EXPECT_LT(max_abs_diff(g2.at("w"), w), 1e-15);
}

TEST(Backward, VisitsEachNodeOnce)
{
    auto x = leaf(Tensor<double>::full({1, 1, 2, 2}, 3.0));
    auto g = backward(sum(add(x, x)));
    for (double v : g.at("x").values())
        EXPECT_EQ(v, 2.0);
}

TEST(Backward, RejectsNonScalarLoss)
{
    auto x = leaf(Tensor<double>::ones({1, 1, 2, 2}));
    EXPECT_THROW(backward(scale(x, 2.0)), GraphError);
}

TEST(Backward, RejectsSecondBackward)
{
    auto x = leaf(Tensor<double>::ones({1, 1, 2, 2}));
    auto loss = sum(mul(x, x));
    backward(loss);
    EXPECT_THROW(backward(loss), GraphError);
}

TEST(Backward, RejectsLossWithoutTrainableInputs)
{
    auto x = Var<double>::constant(Tensor<double>::ones({1, 1, 2, 2}));
    EXPECT_THROW(backward(sum(x)), GraphError);
}

TEST(Backward, NoGradGuardSkipsRecording)
{
    auto x = leaf(Tensor<double>::ones({1, 1, 2, 2}));
    NoGradGuard guard;
    auto y = sum(x);
    EXPECT_FALSE(y.requires_grad());
}

TEST(Backward, NonFiniteForwardIsReported)
{
    auto x = leaf(Tensor<double>::full({1, 1, 1, 1}, 1e308));
    EXPECT_THROW(scale(x, 10.0), NumericError);
}

TEST(Backward, DeterministicAcrossRuns)
{
    auto run = [] {
        std::mt19937_64 rng(11);
        auto a = random_tensor({2, 3, 4, 4}, rng);
        auto b = random_tensor({2, 3, 1, 1}, rng);
        auto va = leaf(a, "a");
        return backward(sum(mul(add(va, Var<double>::constant(b)), va))).at("a");
    };
    EXPECT_EQ(run(), run());
}

TEST(FiniteDiffCheck, SumHasExactGradient)
{
    std::mt19937_64 rng(5);
    auto report = finite_diff_check([](const Var<double>& v) { return sum(v); }, random_tensor({1, 2, 3, 3}, rng), 1e-4);
    EXPECT_TRUE(report.passed);
    EXPECT_LT(report.max_rel_error, 1e-9);
}

TEST(FiniteDiffCheck, DetectsWrongBackward)
{
    // Doubles the forward but triples... the backward claims 4x instead of 2x.
    auto bad_double = [](const Var<double>& x) {
        Tensor<double> out(x.shape());
        out.array() = 2.0 * x.value().array();
        return record<double>("bad_double", std::move(out), {x}, [](Node<double>& self) {
            if (auto* g = self.input_grad(0))
                g->array() += 4.0 * self.grad.array();
        });
    };
    std::mt19937_64 rng(6);
    auto report = finite_diff_check([&](const Var<double>& v) { return sum(bad_double(v)); },
                                    random_tensor({1, 1, 3, 3}, rng), 1e-4);
    EXPECT_FALSE(report.passed);
    EXPECT_NEAR(report.max_rel_error, 1.0 / 3.0, 1e-6);
}

TEST(FiniteDiffCheck, RejectsNonDeterministicObjective)
{
    int calls = 0;
    std::mt19937_64 rng(7);
    auto x = random_tensor({1, 1, 2, 2}, rng);
    EXPECT_THROW(finite_diff_check(
                     [&](const Var<double>& v) {
                         ++calls;
                         return scale(sum(v), 1.0 + calls * 1e-3);
                     },
                     x, 1e-4),
                 NumericError);
}

// Property: every elementwise op passes the checker on random shapes.
TEST(FiniteDiffCheck, ElementwisePropertyOverRandomShapes)
{
    std::mt19937_64 rng(8);
    std::uniform_int_distribution<int> n(1, 2), c(1, 8), hw(1, 16);
    for (int trial = 0; trial < 6; ++trial) {
        const Shape s{n(rng), c(rng), hw(rng), hw(rng)};
        auto other = random_tensor(s, rng);
        auto weights = test::probe_weights(s, static_cast<std::uint64_t>(trial));
        for (auto op : {BinaryOp::add, BinaryOp::sub, BinaryOp::mul}) {
            auto report = finite_diff_check(
                [&](const Var<double>& v) {
                    return test::weighted_sum(elementwise(op, v, Var<double>::constant(other)), weights);
                },
                random_tensor(s, rng), 1e-4);
            EXPECT_TRUE(report.passed) << s.str() << " " << report.max_rel_error;
        }
    }
}
