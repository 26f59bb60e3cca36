#pragma once

#include "csdn/autodiff.hpp"

namespace csdn {

enum class BinaryOp { add, sub, mul };

/// a (op) b. `b` is either the same shape as `a`, spatially global
/// (n, c, 1, 1), or channel-shared (n, 1, h, w); it is broadcast over `a`
/// and its gradient is reduced back over the broadcast axes.
template <typename Scalar>
Var<Scalar> elementwise(BinaryOp op, const Var<Scalar>& a, const Var<Scalar>& b);

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) { return elementwise(BinaryOp::add, a, b); }
template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) { return elementwise(BinaryOp::sub, a, b); }
template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) { return elementwise(BinaryOp::mul, a, b); }

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar factor);

/// Sum of all elements as a (1,1,1,1) tensor.
template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a);

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& a);

} // namespace csdn
