#include "csdn/tensor.hpp"

#include "csdn/errors.hpp"

#include <algorithm>
#include <cmath>

namespace csdn {

std::string Shape::str() const
{
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, Scalar fill) : shape_(shape)
{
    if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0)
        throw ShapeError("negative tensor extent " + shape.str());
    data_.assign(static_cast<std::size_t>(shape.numel()), fill);
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, std::vector<Scalar> values) : shape_(shape), data_(values.begin(), values.end())
{
    if (static_cast<std::int64_t>(data_.size()) != shape.numel())
        throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape.str());
}

template <typename Scalar>
bool Tensor<Scalar>::all_finite() const
{
    return std::all_of(data_.begin(), data_.end(), [](Scalar v) { return std::isfinite(v); });
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::reshaped(Shape shape) const
{
    if (shape.numel() != numel())
        throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
    Tensor out = *this;
    out.shape_ = shape;
    return out;
}

template <typename Scalar>
Scalar max_abs_diff(const Tensor<Scalar>& a, const Tensor<Scalar>& b)
{
    if (a.shape() != b.shape())
        throw ShapeError("max_abs_diff: " + a.shape().str() + " vs " + b.shape().str());
    if (a.numel() == 0)
        return Scalar(0);
    return (a.array() - b.array()).abs().maxCoeff();
}

template class Tensor<float>;
template class Tensor<double>;
template float max_abs_diff(const Tensor<float>&, const Tensor<float>&);
template double max_abs_diff(const Tensor<double>&, const Tensor<double>&);

} // namespace csdn
