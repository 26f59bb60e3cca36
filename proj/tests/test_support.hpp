#pragma once

#include "csdn/autodiff.hpp"
#include "csdn/ops.hpp"

#include <functional>
#include <random>

namespace csdn::test {

inline Tensor<double> random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0)
{
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor<double> t(s);
    for (auto& v : t.values())
        v = u(rng);
    return t;
}

inline Tensor<float> random_tensor_f(Shape s, std::mt19937_64& rng, float lo = -1.0f, float hi = 1.0f)
{
    std::uniform_real_distribution<float> u(lo, hi);
    Tensor<float> t(s);
    for (auto& v : t.values())
        v = u(rng);
    return t;
}

/// Plain second-order central difference, independent of the library's
/// adaptive checker.
inline Tensor<double> central_difference(const std::function<double(const Tensor<double>&)>& f, Tensor<double> x,
                                         double h = 1e-4)
{
    Tensor<double> g(x.shape());
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        const double saved = x[i];
        x[i] = saved + h;
        const double fp = f(x);
        x[i] = saved - h;
        const double fm = f(x);
        x[i] = saved;
        g[i] = (fp - fm) / (2 * h);
    }
    return g;
}

/// sum(out * weights): a scalar objective with non-uniform upstream gradient.
inline Var<double> weighted_sum(const Var<double>& out, const Tensor<double>& weights)
{
    return sum(mul(out, Var<double>::constant(weights)));
}

/// Weights matching `shape`, fixed by seed.
inline Tensor<double> probe_weights(Shape shape, std::uint64_t seed = 99)
{
    std::mt19937_64 rng(seed);
    return random_tensor(shape, rng);
}

} // namespace csdn::test
