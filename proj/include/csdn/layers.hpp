#pragma once

#include "csdn/autodiff.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace csdn {

/// Geometry of a 2-D convolution. Weights are (out, in/groups, kh, kw),
/// biases (out, 1, 1, 1).
struct ConvSpec {
    std::int64_t in_channels = 0;
    std::int64_t out_channels = 0;
    int kernel_h = 3;
    int kernel_w = 3;
    int stride_h = 1;
    int stride_w = 1;
    int pad_h = 0;
    int pad_w = 0;
    std::int64_t groups = 1;
    bool bias = false;

    /// Square kernel k, stride s, padding k/2.
    static ConvSpec square(std::int64_t in, std::int64_t out, int k, int stride = 1, std::int64_t groups = 1,
                           bool bias = false);
    static ConvSpec depthwise(std::int64_t channels, int k, int stride = 1, bool bias = false)
    {
        return square(channels, channels, k, stride, channels, bias);
    }

    [[nodiscard]] Shape weight_shape() const
    {
        return {out_channels, in_channels / groups, kernel_h, kernel_w};
    }
    [[nodiscard]] Shape bias_shape() const { return {out_channels, 1, 1, 1}; }
    [[nodiscard]] std::int64_t out_h(std::int64_t in_h) const { return (in_h + 2 * pad_h - kernel_h) / stride_h + 1; }
    [[nodiscard]] std::int64_t out_w(std::int64_t in_w) const { return (in_w + 2 * pad_w - kernel_w) / stride_w + 1; }
    [[nodiscard]] bool is_depthwise() const { return groups > 1 && groups == in_channels && groups == out_channels; }
    /// Learnable scalar count.
    [[nodiscard]] std::int64_t parameter_count() const
    {
        return weight_shape().numel() + (bias ? out_channels : 0);
    }
    /// Throws ShapeError on an inconsistent spec.
    void validate() const;
};

/// Cross-correlation with zero padding. `bias` may be an undefined Var.
template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias, const ConvSpec& spec);

/// conv2d restricted to groups == in_channels == out_channels.
template <typename Scalar>
Var<Scalar> depthwise_conv2d(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias,
                             const ConvSpec& spec);

enum class NormMode {
    batch,   ///< normalise with batch statistics, update running stats
    running, ///< deterministic per-channel affine map from running stats
};

/// Running statistics of a batch-norm layer. The tensors are owned by the
/// caller (normally a ParameterStore) and updated in place in batch mode.
template <typename Scalar>
struct BatchNormState {
    Tensor<Scalar>* running_mean = nullptr;
    Tensor<Scalar>* running_var = nullptr;
    double momentum = 0.1;
    double eps = 1e-5;
    NormMode mode = NormMode::batch;
    bool update_running = true;
};

template <typename Scalar>
Var<Scalar> batchnorm2d(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                        BatchNormState<Scalar>& state);

/// Per-channel leaky slope: y = x for x >= 0, alpha_c * x otherwise.
template <typename Scalar>
Var<Scalar> prelu(const Var<Scalar>& x, const Var<Scalar>& alpha);

template <typename Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& x);

enum class PoolKind { max, avg };

struct PoolSpec {
    int kernel = 2;
    int stride = 2;
    int padding = 0;
};

/// Max pooling treats padding as -inf; average pooling divides by the
/// number of in-bounds elements. Max-pool ties route to the first
/// row-major position.
template <typename Scalar>
Var<Scalar> pool2d(PoolKind kind, const Var<Scalar>& x, const PoolSpec& spec);

template <typename Scalar>
Var<Scalar> global_avg_pool(const Var<Scalar>& x);

enum class ResizeMode { nearest, bilinear, bicubic };

/// Half-pixel (align_corners = false) resampling; bicubic uses a = -0.75
/// with border replication.
template <typename Scalar>
Var<Scalar> resize(const Var<Scalar>& x, std::int64_t out_h, std::int64_t out_w, ResizeMode mode);

/// (n, c, h, w) -> (n, c*r*r, h/r, w/r); channel c*r*r + i*r + j holds the
/// pixel at offset (i, j) of each r x r block.
template <typename Scalar>
Var<Scalar> pixel_unshuffle(const Var<Scalar>& x, int r);

/// Inverse of pixel_unshuffle.
template <typename Scalar>
Var<Scalar> pixel_shuffle(const Var<Scalar>& x, int r);

template <typename Scalar>
Var<Scalar> concat_channels(const std::vector<Var<Scalar>>& xs);

/// Interpolation taps for one output coordinate along one axis.
struct ResampleTap {
    std::int64_t index[4];
    double weight[4];
    int count;
};

/// Per-axis resampling table shared by resize() and its tests.
std::vector<ResampleTap> resample_taps(std::int64_t in, std::int64_t out, ResizeMode mode);

/// Bicubic convolution kernel weights for fractional offset t.
std::array<double, 4> cubic_weights(double t, double a = -0.75);

} // namespace csdn
