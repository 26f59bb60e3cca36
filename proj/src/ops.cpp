#include "csdn/ops.hpp"

#include "csdn/errors.hpp"

namespace csdn {
namespace {

enum class Broadcast { none, spatial, channel };

Broadcast broadcast_kind(const Shape& a, const Shape& b)
{
    if (a == b)
        return Broadcast::none;
    if (b.n == a.n && b.c == a.c && b.h == 1 && b.w == 1)
        return Broadcast::spatial;
    if (b.n == a.n && b.c == 1 && b.h == a.h && b.w == a.w)
        return Broadcast::channel;
    throw ShapeError("elementwise: cannot broadcast " + b.str() + " over " + a.str());
}

// Index into b for flat index i of a.
inline std::int64_t b_index(Broadcast kind, const Shape& a, std::int64_t i)
{
    switch (kind) {
    case Broadcast::none:
        return i;
    case Broadcast::spatial:
        return i / a.plane();
    case Broadcast::channel: {
        const std::int64_t n = i / (a.c * a.plane());
        return n * a.plane() + i % a.plane();
    }
    }
    return i;
}

} // namespace

template <typename Scalar>
Var<Scalar> elementwise(BinaryOp op, const Var<Scalar>& a, const Var<Scalar>& b)
{
    const Shape sa = a.shape();
    const Shape sb = b.shape();
    const Broadcast kind = broadcast_kind(sa, sb);
    const Tensor<Scalar>& x = a.value();
    const Tensor<Scalar>& y = b.value();

    Tensor<Scalar> out(sa);
    if (kind == Broadcast::none) {
        switch (op) {
        case BinaryOp::add: out.array() = x.array() + y.array(); break;
        case BinaryOp::sub: out.array() = x.array() - y.array(); break;
        case BinaryOp::mul: out.array() = x.array() * y.array(); break;
        }
    } else {
        for (std::int64_t i = 0; i < sa.numel(); ++i) {
            const Scalar u = x[i];
            const Scalar v = y[b_index(kind, sa, i)];
            out[i] = op == BinaryOp::add ? u + v : op == BinaryOp::sub ? u - v : u * v;
        }
    }

    const char* name = op == BinaryOp::add ? "add" : op == BinaryOp::sub ? "sub" : "mul";
    return record<Scalar>(name, std::move(out), {a, b}, [op, kind, sa](Node<Scalar>& self) {
        const Tensor<Scalar>& g = self.grad;
        const Tensor<Scalar>& x = self.inputs[0]->value;
        const Tensor<Scalar>& y = self.inputs[1]->value;
        if (Tensor<Scalar>* gx = self.input_grad(0)) {
            if (op == BinaryOp::mul) {
                if (kind == Broadcast::none)
                    gx->array() += g.array() * y.array();
                else
                    for (std::int64_t i = 0; i < sa.numel(); ++i)
                        (*gx)[i] += g[i] * y[b_index(kind, sa, i)];
            } else {
                gx->array() += g.array();
            }
        }
        if (Tensor<Scalar>* gy = self.input_grad(1)) {
            const Scalar sign = op == BinaryOp::sub ? Scalar(-1) : Scalar(1);
            if (kind == Broadcast::none) {
                if (op == BinaryOp::mul)
                    gy->array() += g.array() * x.array();
                else
                    gy->array() += sign * g.array();
            } else {
                for (std::int64_t i = 0; i < sa.numel(); ++i) {
                    const Scalar d = op == BinaryOp::mul ? g[i] * x[i] : sign * g[i];
                    (*gy)[b_index(kind, sa, i)] += d;
                }
            }
        }
    });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar factor)
{
    Tensor<Scalar> out(a.shape());
    out.array() = a.value().array() * factor;
    return record<Scalar>("scale", std::move(out), {a}, [factor](Node<Scalar>& self) {
        if (auto* gx = self.input_grad(0))
            gx->array() += factor * self.grad.array();
    });
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a)
{
    const Scalar total = a.value().numel() == 0 ? Scalar(0) : a.value().array().sum();
    return record<Scalar>("sum", Tensor<Scalar>::scalar(total), {a}, [](Node<Scalar>& self) {
        if (auto* gx = self.input_grad(0))
            gx->array() += self.grad[0];
    });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& a)
{
    const auto count = a.value().numel();
    if (count == 0)
        throw ShapeError("mean of an empty tensor");
    return scale(sum(a), Scalar(1) / static_cast<Scalar>(count));
}

#define CSDN_INSTANTIATE(S)                                                        \
    template Var<S> elementwise(BinaryOp, const Var<S>&, const Var<S>&);         \
    template Var<S> scale(const Var<S>&, S);                                      \
    template Var<S> sum(const Var<S>&);                                           \
    template Var<S> mean(const Var<S>&);
CSDN_INSTANTIATE(float)
CSDN_INSTANTIATE(double)
#undef CSDN_INSTANTIATE

} // namespace csdn
