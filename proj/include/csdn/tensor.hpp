#pragma once

#include <Eigen/Core>
#include <Eigen/StdVector>

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace csdn {

/// Rank-4 (batch, channel, height, width) extents.
struct Shape {
    std::int64_t n = 0;
    std::int64_t c = 0;
    std::int64_t h = 0;
    std::int64_t w = 0;

    [[nodiscard]] constexpr std::int64_t numel() const { return n * c * h * w; }
    [[nodiscard]] constexpr std::int64_t plane() const { return h * w; }
    [[nodiscard]] std::array<std::int64_t, 4> dims() const { return {n, c, h, w}; }
    [[nodiscard]] std::string str() const;

    friend constexpr bool operator==(const Shape&, const Shape&) = default;
};

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using ArrayX = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

/// Storage with a fixed alignment so vectorised reductions split the same
/// way on every allocation (bit-reproducible sums).
template <typename Scalar>
using AlignedBuffer = std::vector<Scalar, Eigen::aligned_allocator<Scalar>>;

/// Dense row-major NCHW tensor with value semantics.
template <typename Scalar>
class Tensor {
public:
    using value_type = Scalar;

    Tensor() = default;
    explicit Tensor(Shape shape, Scalar fill = Scalar(0));
    Tensor(Shape shape, std::vector<Scalar> values);

    static Tensor zeros(Shape shape) { return Tensor(shape); }
    static Tensor ones(Shape shape) { return Tensor(shape, Scalar(1)); }
    static Tensor full(Shape shape, Scalar v) { return Tensor(shape, v); }
    static Tensor scalar(Scalar v) { return Tensor(Shape{1, 1, 1, 1}, v); }

    [[nodiscard]] const Shape& shape() const { return shape_; }
    [[nodiscard]] std::int64_t numel() const { return shape_.numel(); }
    [[nodiscard]] bool empty() const { return data_.empty(); }

    Scalar* data() { return data_.data(); }
    [[nodiscard]] const Scalar* data() const { return data_.data(); }
    std::span<Scalar> values() { return data_; }
    [[nodiscard]] std::span<const Scalar> values() const { return data_; }

    Scalar& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    Scalar operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    [[nodiscard]] std::int64_t offset(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) const
    {
        return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
    }
    Scalar& operator()(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x)
    {
        return data_[static_cast<std::size_t>(offset(n, c, y, x))];
    }
    Scalar operator()(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) const
    {
        return data_[static_cast<std::size_t>(offset(n, c, y, x))];
    }

    /// Whole buffer as an Eigen array.
    Eigen::Map<ArrayX<Scalar>> array() { return {data_.data(), static_cast<Eigen::Index>(data_.size())}; }
    [[nodiscard]] Eigen::Map<const ArrayX<Scalar>> array() const
    {
        return {data_.data(), static_cast<Eigen::Index>(data_.size())};
    }

    /// Sample n as a (c, h*w) matrix.
    Eigen::Map<RowMatrix<Scalar>> sample(std::int64_t n)
    {
        return {data_.data() + n * shape_.c * shape_.plane(), shape_.c, shape_.plane()};
    }
    [[nodiscard]] Eigen::Map<const RowMatrix<Scalar>> sample(std::int64_t n) const
    {
        return {data_.data() + n * shape_.c * shape_.plane(), shape_.c, shape_.plane()};
    }

    void fill(Scalar v) { std::fill(data_.begin(), data_.end(), v); }
    [[nodiscard]] bool all_finite() const;

    /// Same values under a new shape with equal element count.
    [[nodiscard]] Tensor reshaped(Shape shape) const;

    template <typename Other>
    [[nodiscard]] Tensor<Other> cast() const
    {
        Tensor<Other> out(shape_);
        std::copy(data_.begin(), data_.end(), out.data());
        return out;
    }

    friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

private:
    Shape shape_{};
    AlignedBuffer<Scalar> data_;
};

/// Largest elementwise |a - b|; shapes must match.
template <typename Scalar>
Scalar max_abs_diff(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

extern template class Tensor<float>;
extern template class Tensor<double>;

} // namespace csdn
