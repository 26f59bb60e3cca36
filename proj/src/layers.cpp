#include "csdn/layers.hpp"

#include "csdn/errors.hpp"
#include "csdn/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace csdn {

ConvSpec ConvSpec::square(std::int64_t in, std::int64_t out, int k, int stride, std::int64_t groups, bool bias)
{
    ConvSpec s;
    s.in_channels = in;
    s.out_channels = out;
    s.kernel_h = s.kernel_w = k;
    s.stride_h = s.stride_w = stride;
    s.pad_h = s.pad_w = k / 2;
    s.groups = groups;
    s.bias = bias;
    return s;
}

void ConvSpec::validate() const
{
    if (in_channels < 1 || out_channels < 1 || kernel_h < 1 || kernel_w < 1 || stride_h < 1 || stride_w < 1 ||
        pad_h < 0 || pad_w < 0 || groups < 1)
        throw ShapeError("conv2d: invalid spec");
    if (in_channels % groups != 0 || out_channels % groups != 0)
        throw ShapeError("conv2d: groups " + std::to_string(groups) + " must divide in " +
                         std::to_string(in_channels) + " and out " + std::to_string(out_channels));
}

namespace {

template <typename Scalar>
void check_conv_inputs(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias, const ConvSpec& spec)
{
    spec.validate();
    const Shape s = x.shape();
    if (s.c != spec.in_channels)
        throw ShapeError("conv2d: input has " + std::to_string(s.c) + " channels, spec expects " +
                         std::to_string(spec.in_channels));
    if (weight.shape() != spec.weight_shape())
        throw ShapeError("conv2d: weight " + weight.shape().str() + " expected " + spec.weight_shape().str());
    if (spec.bias != bias.defined())
        throw ShapeError("conv2d: bias presence does not match spec");
    if (bias.defined() && bias.shape() != spec.bias_shape())
        throw ShapeError("conv2d: bias " + bias.shape().str() + " expected " + spec.bias_shape().str());
    if (spec.out_h(s.h) < 1 || spec.out_w(s.w) < 1)
        throw ShapeError("conv2d: output size < 1 for input " + s.str());
}

// Unfolds the channels [c0, c0 + cin) of x into a (cin*kh*kw, n*ho*wo) matrix.
template <typename Scalar>
void im2col(const Tensor<Scalar>& x, std::int64_t c0, std::int64_t cin, const ConvSpec& spec, std::int64_t ho,
            std::int64_t wo, RowMatrix<Scalar>& col)
{
    const Shape s = x.shape();
    const std::int64_t p = ho * wo;
    col.resize(cin * spec.kernel_h * spec.kernel_w, s.n * p);
    parallel_for(cin, [&](std::int64_t ci) {
        for (int ky = 0; ky < spec.kernel_h; ++ky)
            for (int kx = 0; kx < spec.kernel_w; ++kx) {
                const std::int64_t row = (ci * spec.kernel_h + ky) * spec.kernel_w + kx;
                Scalar* dst = col.data() + row * col.cols();
                for (std::int64_t n = 0; n < s.n; ++n) {
                    const Scalar* src = x.data() + x.offset(n, c0 + ci, 0, 0);
                    for (std::int64_t oy = 0; oy < ho; ++oy) {
                        const std::int64_t iy = oy * spec.stride_h - spec.pad_h + ky;
                        Scalar* d = dst + n * p + oy * wo;
                        if (iy < 0 || iy >= s.h) {
                            std::fill(d, d + wo, Scalar(0));
                            continue;
                        }
                        const Scalar* srow = src + iy * s.w;
                        for (std::int64_t ox = 0; ox < wo; ++ox) {
                            const std::int64_t ix = ox * spec.stride_w - spec.pad_w + kx;
                            d[ox] = (ix >= 0 && ix < s.w) ? srow[ix] : Scalar(0);
                        }
                    }
                }
            }
    });
}

template <typename Scalar>
void col2im(const RowMatrix<Scalar>& col, std::int64_t c0, std::int64_t cin, const ConvSpec& spec, std::int64_t ho,
            std::int64_t wo, Tensor<Scalar>& dx)
{
    const Shape s = dx.shape();
    const std::int64_t p = ho * wo;
    parallel_for(cin, [&](std::int64_t ci) {
        for (int ky = 0; ky < spec.kernel_h; ++ky)
            for (int kx = 0; kx < spec.kernel_w; ++kx) {
                const std::int64_t row = (ci * spec.kernel_h + ky) * spec.kernel_w + kx;
                const Scalar* src = col.data() + row * col.cols();
                for (std::int64_t n = 0; n < s.n; ++n) {
                    Scalar* dst = dx.data() + dx.offset(n, c0 + ci, 0, 0);
                    for (std::int64_t oy = 0; oy < ho; ++oy) {
                        const std::int64_t iy = oy * spec.stride_h - spec.pad_h + ky;
                        if (iy < 0 || iy >= s.h)
                            continue;
                        const Scalar* srow = src + n * p + oy * wo;
                        Scalar* drow = dst + iy * s.w;
                        for (std::int64_t ox = 0; ox < wo; ++ox) {
                            const std::int64_t ix = ox * spec.stride_w - spec.pad_w + kx;
                            if (ix >= 0 && ix < s.w)
                                drow[ix] += srow[ox];
                        }
                    }
                }
            }
    });
}

template <typename Scalar>
Tensor<Scalar> dense_conv_forward(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const ConvSpec& spec,
                                  std::int64_t ho, std::int64_t wo)
{
    const Shape s = x.shape();
    const std::int64_t p = ho * wo;
    const std::int64_t cin = spec.in_channels / spec.groups;
    const std::int64_t cout = spec.out_channels / spec.groups;
    const std::int64_t k = cin * spec.kernel_h * spec.kernel_w;
    Tensor<Scalar> out(Shape{s.n, spec.out_channels, ho, wo});
    RowMatrix<Scalar> col;
    RowMatrix<Scalar> prod;
    for (std::int64_t g = 0; g < spec.groups; ++g) {
        im2col(x, g * cin, cin, spec, ho, wo, col);
        Eigen::Map<const RowMatrix<Scalar>> wg(w.data() + g * cout * k, cout, k);
        prod.noalias() = wg * col;
        for (std::int64_t n = 0; n < s.n; ++n)
            for (std::int64_t co = 0; co < cout; ++co)
                std::copy_n(prod.data() + co * prod.cols() + n * p, p, out.data() + out.offset(n, g * cout + co, 0, 0));
    }
    return out;
}

template <typename Scalar>
void dense_conv_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& gy,
                         const ConvSpec& spec, Tensor<Scalar>* gx, Tensor<Scalar>* gw)
{
    const Shape s = x.shape();
    const std::int64_t ho = gy.shape().h;
    const std::int64_t wo = gy.shape().w;
    const std::int64_t p = ho * wo;
    const std::int64_t cin = spec.in_channels / spec.groups;
    const std::int64_t cout = spec.out_channels / spec.groups;
    const std::int64_t k = cin * spec.kernel_h * spec.kernel_w;
    RowMatrix<Scalar> col;
    RowMatrix<Scalar> dy(cout, s.n * p);
    RowMatrix<Scalar> dcol;
    for (std::int64_t g = 0; g < spec.groups; ++g) {
        for (std::int64_t n = 0; n < s.n; ++n)
            for (std::int64_t co = 0; co < cout; ++co)
                std::copy_n(gy.data() + gy.offset(n, g * cout + co, 0, 0), p, dy.data() + co * dy.cols() + n * p);
        Eigen::Map<const RowMatrix<Scalar>> wg(w.data() + g * cout * k, cout, k);
        if (gw) {
            im2col(x, g * cin, cin, spec, ho, wo, col);
            Eigen::Map<RowMatrix<Scalar>> dwg(gw->data() + g * cout * k, cout, k);
            dwg.noalias() += dy * col.transpose();
        }
        if (gx) {
            dcol.noalias() = wg.transpose() * dy;
            col2im(dcol, g * cin, cin, spec, ho, wo, *gx);
        }
    }
}

template <typename Scalar>
Tensor<Scalar> depthwise_forward(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const ConvSpec& spec,
                                 std::int64_t ho, std::int64_t wo)
{
    const Shape s = x.shape();
    Tensor<Scalar> out(Shape{s.n, s.c, ho, wo});
    const int kh = spec.kernel_h;
    const int kw = spec.kernel_w;
    parallel_for(s.n * s.c, [&](std::int64_t nc) {
        const std::int64_t c = nc % s.c;
        const Scalar* src = x.data() + nc * s.plane();
        const Scalar* ker = w.data() + c * kh * kw;
        Scalar* dst = out.data() + nc * ho * wo;
        for (std::int64_t oy = 0; oy < ho; ++oy)
            for (std::int64_t ox = 0; ox < wo; ++ox) {
                Scalar acc = 0;
                for (int ky = 0; ky < kh; ++ky) {
                    const std::int64_t iy = oy * spec.stride_h - spec.pad_h + ky;
                    if (iy < 0 || iy >= s.h)
                        continue;
                    for (int kx = 0; kx < kw; ++kx) {
                        const std::int64_t ix = ox * spec.stride_w - spec.pad_w + kx;
                        if (ix >= 0 && ix < s.w)
                            acc += ker[ky * kw + kx] * src[iy * s.w + ix];
                    }
                }
                dst[oy * wo + ox] = acc;
            }
    });
    return out;
}

template <typename Scalar>
void depthwise_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& gy,
                        const ConvSpec& spec, Tensor<Scalar>* gx, Tensor<Scalar>* gw)
{
    const Shape s = x.shape();
    const std::int64_t ho = gy.shape().h;
    const std::int64_t wo = gy.shape().w;
    const int kh = spec.kernel_h;
    const int kw = spec.kernel_w;
    // Weight gradients are reduced over the batch per channel, in order.
    parallel_for(s.c, [&](std::int64_t c) {
        const Scalar* ker = w.data() + c * kh * kw;
        for (std::int64_t n = 0; n < s.n; ++n) {
            const std::int64_t nc = n * s.c + c;
            const Scalar* src = x.data() + nc * s.plane();
            const Scalar* g = gy.data() + nc * ho * wo;
            Scalar* dsrc = gx ? gx->data() + nc * s.plane() : nullptr;
            Scalar* dker = gw ? gw->data() + c * kh * kw : nullptr;
            for (std::int64_t oy = 0; oy < ho; ++oy)
                for (std::int64_t ox = 0; ox < wo; ++ox) {
                    const Scalar go = g[oy * wo + ox];
                    for (int ky = 0; ky < kh; ++ky) {
                        const std::int64_t iy = oy * spec.stride_h - spec.pad_h + ky;
                        if (iy < 0 || iy >= s.h)
                            continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            const std::int64_t ix = ox * spec.stride_w - spec.pad_w + kx;
                            if (ix < 0 || ix >= s.w)
                                continue;
                            if (dsrc)
                                dsrc[iy * s.w + ix] += ker[ky * kw + kx] * go;
                            if (dker)
                                dker[ky * kw + kx] += src[iy * s.w + ix] * go;
                        }
                    }
                }
        }
    });
}

template <typename Scalar>
void add_bias(Tensor<Scalar>& out, const Tensor<Scalar>& bias)
{
    const Shape s = out.shape();
    for (std::int64_t n = 0; n < s.n; ++n)
        out.sample(n).colwise() += Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(bias.data(), s.c);
}

template <typename Scalar>
void bias_grad(const Tensor<Scalar>& gy, Tensor<Scalar>& gb)
{
    for (std::int64_t n = 0; n < gy.shape().n; ++n)
        Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(gb.data(), gy.shape().c) += gy.sample(n).rowwise().sum();
}

} // namespace

template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias, const ConvSpec& spec)
{
    check_conv_inputs(x, weight, bias, spec);
    const std::int64_t ho = spec.out_h(x.shape().h);
    const std::int64_t wo = spec.out_w(x.shape().w);
    const bool dw = spec.is_depthwise();
    Tensor<Scalar> out = dw ? depthwise_forward(x.value(), weight.value(), spec, ho, wo)
                            : dense_conv_forward(x.value(), weight.value(), spec, ho, wo);
    if (bias.defined())
        add_bias(out, bias.value());

    auto backward_fn = [spec, dw](Node<Scalar>& self) {
        const Tensor<Scalar>& x = self.inputs[0]->value;
        const Tensor<Scalar>& w = self.inputs[1]->value;
        Tensor<Scalar>* gx = self.input_grad(0);
        Tensor<Scalar>* gw = self.input_grad(1);
        if (dw)
            depthwise_backward(x, w, self.grad, spec, gx, gw);
        else
            dense_conv_backward(x, w, self.grad, spec, gx, gw);
        if (self.inputs.size() > 2)
            if (Tensor<Scalar>* gb = self.input_grad(2))
                bias_grad(self.grad, *gb);
    };
    if (bias.defined())
        return record<Scalar>("conv2d", std::move(out), {x, weight, bias}, backward_fn);
    return record<Scalar>("conv2d", std::move(out), {x, weight}, backward_fn);
}

template <typename Scalar>
Var<Scalar> depthwise_conv2d(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias,
                             const ConvSpec& spec)
{
    if (!(spec.groups == spec.in_channels && spec.groups == spec.out_channels))
        throw ShapeError("depthwise_conv2d: requires groups == in_channels == out_channels");
    return conv2d(x, weight, bias, spec);
}

template <typename Scalar>
Var<Scalar> batchnorm2d(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                        BatchNormState<Scalar>& state)
{
    const Shape s = x.shape();
    const Shape cs{s.c, 1, 1, 1};
    if (gamma.shape() != cs || beta.shape() != cs)
        throw ShapeError("batchnorm2d: gamma/beta must be " + cs.str());
    if (!state.running_mean || !state.running_var || state.running_mean->shape() != cs ||
        state.running_var->shape() != cs)
        throw ShapeError("batchnorm2d: running statistics must be " + cs.str());
    const std::int64_t m = s.n * s.plane();
    const Scalar eps = static_cast<Scalar>(state.eps);
    const Tensor<Scalar>& in = x.value();
    const Tensor<Scalar>& g = gamma.value();
    const Tensor<Scalar>& b = beta.value();

    Tensor<Scalar> mean(cs);
    Tensor<Scalar> inv_std(cs);
    if (state.mode == NormMode::running) {
        for (std::int64_t c = 0; c < s.c; ++c) {
            const Scalar rv = (*state.running_var)[c];
            if (!(rv > 0))
                throw NumericError("batchnorm2d: running variance must be positive");
            mean[c] = (*state.running_mean)[c];
            inv_std[c] = Scalar(1) / std::sqrt(rv + eps);
        }
    } else {
        if (m < 2)
            throw ShapeError("batchnorm2d: batch statistics need n*h*w >= 2, got " + s.str());
        const Scalar mom = static_cast<Scalar>(state.momentum);
        for (std::int64_t c = 0; c < s.c; ++c) {
            Scalar acc = 0;
            for (std::int64_t n = 0; n < s.n; ++n)
                acc += in.sample(n).row(c).sum();
            const Scalar mu = acc / static_cast<Scalar>(m);
            Scalar sq = 0;
            for (std::int64_t n = 0; n < s.n; ++n)
                sq += (in.sample(n).row(c).array() - mu).square().sum();
            const Scalar var = sq / static_cast<Scalar>(m);
            mean[c] = mu;
            inv_std[c] = Scalar(1) / std::sqrt(var + eps);
            if (state.update_running) {
                Scalar& rm = (*state.running_mean)[c];
                Scalar& rv = (*state.running_var)[c];
                rm = (Scalar(1) - mom) * rm + mom * mu;
                rv = (Scalar(1) - mom) * rv + mom * var * static_cast<Scalar>(m) / static_cast<Scalar>(m - 1);
            }
        }
    }

    Tensor<Scalar> out(s);
    for (std::int64_t n = 0; n < s.n; ++n)
        for (std::int64_t c = 0; c < s.c; ++c) {
            const Scalar a = g[c] * inv_std[c];
            const Scalar off = b[c] - mean[c] * a;
            out.sample(n).row(c).array() = in.sample(n).row(c).array() * a + off;
        }

    const bool batch_stats = state.mode == NormMode::batch;
    return record<Scalar>(
        "batchnorm2d", std::move(out), {x, gamma, beta}, [mean, inv_std, s, m, batch_stats](Node<Scalar>& self) {
            const Tensor<Scalar>& x = self.inputs[0]->value;
            const Tensor<Scalar>& gam = self.inputs[1]->value;
            Tensor<Scalar>* gx = self.input_grad(0);
            Tensor<Scalar>* gg = self.input_grad(1);
            Tensor<Scalar>* gb = self.input_grad(2);
            const Tensor<Scalar>& gy = self.grad;
            for (std::int64_t c = 0; c < s.c; ++c) {
                const Scalar mu = mean[c];
                const Scalar is = inv_std[c];
                Scalar sum_dy = 0;
                Scalar sum_dy_xhat = 0;
                for (std::int64_t n = 0; n < s.n; ++n) {
                    const auto dy = gy.sample(n).row(c).array();
                    sum_dy += dy.sum();
                    sum_dy_xhat += (dy * (x.sample(n).row(c).array() - mu) * is).sum();
                }
                if (gb)
                    (*gb)[c] += sum_dy;
                if (gg)
                    (*gg)[c] += sum_dy_xhat;
                if (!gx)
                    continue;
                const Scalar a = gam[c] * is;
                for (std::int64_t n = 0; n < s.n; ++n) {
                    auto dx = gx->sample(n).row(c).array();
                    const auto dy = gy.sample(n).row(c).array();
                    if (batch_stats) {
                        const auto xhat = (x.sample(n).row(c).array() - mu) * is;
                        const Scalar inv_m = Scalar(1) / static_cast<Scalar>(m);
                        dx += a * (dy - sum_dy * inv_m - xhat * (sum_dy_xhat * inv_m));
                    } else {
                        dx += a * dy;
                    }
                }
            }
        });
}

template <typename Scalar>
Var<Scalar> prelu(const Var<Scalar>& x, const Var<Scalar>& alpha)
{
    const Shape s = x.shape();
    if (alpha.shape() != Shape{s.c, 1, 1, 1})
        throw ShapeError("prelu: alpha " + alpha.shape().str() + " for " + std::to_string(s.c) + " channels");
    const Tensor<Scalar>& in = x.value();
    const Tensor<Scalar>& a = alpha.value();
    Tensor<Scalar> out(s);
    for (std::int64_t n = 0; n < s.n; ++n)
        for (std::int64_t c = 0; c < s.c; ++c) {
            const auto src = in.sample(n).row(c).array();
            out.sample(n).row(c).array() = (src >= Scalar(0)).select(src, a[c] * src);
        }
    return record<Scalar>("prelu", std::move(out), {x, alpha}, [s](Node<Scalar>& self) {
        const Tensor<Scalar>& x = self.inputs[0]->value;
        const Tensor<Scalar>& a = self.inputs[1]->value;
        Tensor<Scalar>* gx = self.input_grad(0);
        Tensor<Scalar>* ga = self.input_grad(1);
        for (std::int64_t n = 0; n < s.n; ++n)
            for (std::int64_t c = 0; c < s.c; ++c) {
                const auto src = x.sample(n).row(c).array();
                const auto dy = self.grad.sample(n).row(c).array();
                if (gx)
                    gx->sample(n).row(c).array() += (src >= Scalar(0)).select(dy, a[c] * dy);
                if (ga)
                    (*ga)[c] += (src < Scalar(0)).select(dy * src, Scalar(0)).sum();
#ifdef CSDN_INJECT_GRAD_BUG
                // Test-only fault: a 1% error in the slope gradient.
                if (ga)
                    (*ga)[c] *= Scalar(1.01);
#endif
            }
    });
}

template <typename Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& x)
{
    Tensor<Scalar> out(x.shape());
    const Tensor<Scalar>& in = x.value();
    for (std::int64_t i = 0; i < in.numel(); ++i) {
        const Scalar v = in[i];
        if (v >= 0) {
            out[i] = Scalar(1) / (Scalar(1) + std::exp(-v));
        } else {
            const Scalar e = std::exp(v);
            out[i] = e / (Scalar(1) + e);
        }
    }
    return record<Scalar>("sigmoid", std::move(out), {x}, [](Node<Scalar>& self) {
        if (auto* gx = self.input_grad(0))
            gx->array() += self.grad.array() * self.value.array() * (Scalar(1) - self.value.array());
    });
}

template <typename Scalar>
Var<Scalar> pool2d(PoolKind kind, const Var<Scalar>& x, const PoolSpec& spec)
{
    const Shape s = x.shape();
    if (spec.kernel < 1 || spec.stride < 1 || spec.padding < 0 || spec.padding * 2 > spec.kernel)
        throw ShapeError("pool2d: invalid kernel/stride/padding");
    const std::int64_t ho = (s.h + 2 * spec.padding - spec.kernel) / spec.stride + 1;
    const std::int64_t wo = (s.w + 2 * spec.padding - spec.kernel) / spec.stride + 1;
    if (ho < 1 || wo < 1)
        throw ShapeError("pool2d: output size < 1 for input " + s.str());
    const Tensor<Scalar>& in = x.value();
    Tensor<Scalar> out(Shape{s.n, s.c, ho, wo});

    auto window = [spec](std::int64_t o, std::int64_t extent) {
        const std::int64_t lo = o * spec.stride - spec.padding;
        return std::pair{std::max<std::int64_t>(lo, 0), std::min<std::int64_t>(lo + spec.kernel, extent)};
    };

    if (kind == PoolKind::max) {
        std::vector<std::int64_t> argmax(static_cast<std::size_t>(out.numel()));
        parallel_for(s.n * s.c, [&](std::int64_t nc) {
            const Scalar* src = in.data() + nc * s.plane();
            for (std::int64_t oy = 0; oy < ho; ++oy)
                for (std::int64_t ox = 0; ox < wo; ++ox) {
                    const auto [y0, y1] = window(oy, s.h);
                    const auto [x0, x1] = window(ox, s.w);
                    Scalar best = -std::numeric_limits<Scalar>::infinity();
                    std::int64_t at = -1;
                    for (std::int64_t y = y0; y < y1; ++y)
                        for (std::int64_t xx = x0; xx < x1; ++xx)
                            if (at < 0 || src[y * s.w + xx] > best) {
                                best = src[y * s.w + xx];
                                at = y * s.w + xx;
                            }
                    const std::int64_t o = (nc * ho + oy) * wo + ox;
                    out[o] = best;
                    argmax[static_cast<std::size_t>(o)] = nc * s.plane() + at;
                }
        });
        return record<Scalar>("max_pool2d", std::move(out), {x}, [argmax = std::move(argmax)](Node<Scalar>& self) {
            if (auto* gx = self.input_grad(0))
                for (std::size_t o = 0; o < argmax.size(); ++o)
                    (*gx)[argmax[o]] += self.grad[static_cast<std::int64_t>(o)];
        });
    }

    parallel_for(s.n * s.c, [&](std::int64_t nc) {
        const Scalar* src = in.data() + nc * s.plane();
        for (std::int64_t oy = 0; oy < ho; ++oy)
            for (std::int64_t ox = 0; ox < wo; ++ox) {
                const auto [y0, y1] = window(oy, s.h);
                const auto [x0, x1] = window(ox, s.w);
                Scalar acc = 0;
                for (std::int64_t y = y0; y < y1; ++y)
                    for (std::int64_t xx = x0; xx < x1; ++xx)
                        acc += src[y * s.w + xx];
                out[(nc * ho + oy) * wo + ox] = acc / static_cast<Scalar>((y1 - y0) * (x1 - x0));
            }
    });
    return record<Scalar>("avg_pool2d", std::move(out), {x}, [s, ho, wo, window](Node<Scalar>& self) {
        Tensor<Scalar>* gx = self.input_grad(0);
        if (!gx)
            return;
        parallel_for(s.n * s.c, [&](std::int64_t nc) {
            Scalar* dst = gx->data() + nc * s.plane();
            for (std::int64_t oy = 0; oy < ho; ++oy)
                for (std::int64_t ox = 0; ox < wo; ++ox) {
                    const auto [y0, y1] = window(oy, s.h);
                    const auto [x0, x1] = window(ox, s.w);
                    const Scalar g = self.grad[(nc * ho + oy) * wo + ox] / static_cast<Scalar>((y1 - y0) * (x1 - x0));
                    for (std::int64_t y = y0; y < y1; ++y)
                        for (std::int64_t xx = x0; xx < x1; ++xx)
                            dst[y * s.w + xx] += g;
                }
        });
    });
}

template <typename Scalar>
Var<Scalar> global_avg_pool(const Var<Scalar>& x)
{
    const Shape s = x.shape();
    if (s.h < 1 || s.w < 1)
        throw ShapeError("global_avg_pool: empty spatial extent");
    Tensor<Scalar> out(Shape{s.n, s.c, 1, 1});
    for (std::int64_t n = 0; n < s.n; ++n)
        for (std::int64_t c = 0; c < s.c; ++c)
            out(n, c, 0, 0) = x.value().sample(n).row(c).mean();
    return record<Scalar>("global_avg_pool", std::move(out), {x}, [s](Node<Scalar>& self) {
        if (auto* gx = self.input_grad(0)) {
            const Scalar inv = Scalar(1) / static_cast<Scalar>(s.plane());
            for (std::int64_t n = 0; n < s.n; ++n)
                for (std::int64_t c = 0; c < s.c; ++c)
                    gx->sample(n).row(c).array() += self.grad(n, c, 0, 0) * inv;
        }
    });
}

std::array<double, 4> cubic_weights(double t, double a)
{
    auto near = [a](double d) { return ((a + 2) * d - (a + 3)) * d * d + 1; };          // |d| <= 1
    auto far = [a](double d) { return ((a * d - 5 * a) * d + 8 * a) * d - 4 * a; };      // 1 < |d| < 2
    return {far(t + 1), near(t), near(1 - t), far(2 - t)};
}

std::vector<ResampleTap> resample_taps(std::int64_t in, std::int64_t out, ResizeMode mode)
{
    if (in < 1 || out < 1)
        throw ShapeError("resize: sizes must be >= 1");
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    std::vector<ResampleTap> taps(static_cast<std::size_t>(out));
    auto clamp = [in](std::int64_t i) { return std::clamp<std::int64_t>(i, 0, in - 1); };
    for (std::int64_t o = 0; o < out; ++o) {
        ResampleTap& t = taps[static_cast<std::size_t>(o)];
        const double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
        switch (mode) {
        case ResizeMode::nearest: {
            t.count = 1;
            t.index[0] = clamp(static_cast<std::int64_t>(std::floor((static_cast<double>(o) + 0.5) * scale)));
            t.weight[0] = 1.0;
            break;
        }
        case ResizeMode::bilinear: {
            const double c = std::max(src, 0.0);
            const auto i0 = std::min<std::int64_t>(static_cast<std::int64_t>(std::floor(c)), in - 1);
            const double l = std::min(c - static_cast<double>(i0), 1.0);
            t.count = 2;
            t.index[0] = i0;
            t.index[1] = clamp(i0 + 1);
            t.weight[0] = 1.0 - l;
            t.weight[1] = l;
            break;
        }
        case ResizeMode::bicubic: {
            const double f = std::floor(src);
            const auto i0 = static_cast<std::int64_t>(f);
            const auto w = cubic_weights(src - f);
            t.count = 4;
            for (int k = 0; k < 4; ++k) {
                t.index[k] = clamp(i0 - 1 + k);
                t.weight[k] = w[static_cast<std::size_t>(k)];
            }
            break;
        }
        }
    }
    return taps;
}

namespace {

// Applies taps along the last axis (w) of every (n, c, y) row.
template <typename Scalar>
Tensor<Scalar> resample_w(const Tensor<Scalar>& x, const std::vector<ResampleTap>& taps)
{
    const Shape s = x.shape();
    const auto wo = static_cast<std::int64_t>(taps.size());
    Tensor<Scalar> out(Shape{s.n, s.c, s.h, wo});
    parallel_for(s.n * s.c, [&](std::int64_t nc) {
        for (std::int64_t y = 0; y < s.h; ++y) {
            const Scalar* src = x.data() + (nc * s.h + y) * s.w;
            Scalar* dst = out.data() + (nc * s.h + y) * wo;
            for (std::int64_t o = 0; o < wo; ++o) {
                const ResampleTap& t = taps[static_cast<std::size_t>(o)];
                Scalar acc = 0;
                for (int k = 0; k < t.count; ++k)
                    acc += static_cast<Scalar>(t.weight[k]) * src[t.index[k]];
                dst[o] = acc;
            }
        }
    });
    return out;
}

template <typename Scalar>
Tensor<Scalar> resample_w_transpose(const Tensor<Scalar>& g, const std::vector<ResampleTap>& taps, std::int64_t wi)
{
    const Shape s = g.shape();
    Tensor<Scalar> out(Shape{s.n, s.c, s.h, wi});
    parallel_for(s.n * s.c, [&](std::int64_t nc) {
        for (std::int64_t y = 0; y < s.h; ++y) {
            const Scalar* src = g.data() + (nc * s.h + y) * s.w;
            Scalar* dst = out.data() + (nc * s.h + y) * wi;
            for (std::int64_t o = 0; o < s.w; ++o) {
                const ResampleTap& t = taps[static_cast<std::size_t>(o)];
                for (int k = 0; k < t.count; ++k)
                    dst[t.index[k]] += static_cast<Scalar>(t.weight[k]) * src[o];
            }
        }
    });
    return out;
}

template <typename Scalar>
Tensor<Scalar> resample_h(const Tensor<Scalar>& x, const std::vector<ResampleTap>& taps)
{
    const Shape s = x.shape();
    const auto ho = static_cast<std::int64_t>(taps.size());
    Tensor<Scalar> out(Shape{s.n, s.c, ho, s.w});
    parallel_for(s.n * s.c, [&](std::int64_t nc) {
        const Scalar* src = x.data() + nc * s.plane();
        Scalar* dst = out.data() + nc * ho * s.w;
        for (std::int64_t o = 0; o < ho; ++o) {
            const ResampleTap& t = taps[static_cast<std::size_t>(o)];
            Scalar* row = dst + o * s.w;
            std::fill(row, row + s.w, Scalar(0));
            for (int k = 0; k < t.count; ++k) {
                const Scalar wk = static_cast<Scalar>(t.weight[k]);
                const Scalar* srow = src + t.index[k] * s.w;
                for (std::int64_t xx = 0; xx < s.w; ++xx)
                    row[xx] += wk * srow[xx];
            }
        }
    });
    return out;
}

template <typename Scalar>
Tensor<Scalar> resample_h_transpose(const Tensor<Scalar>& g, const std::vector<ResampleTap>& taps, std::int64_t hi)
{
    const Shape s = g.shape();
    Tensor<Scalar> out(Shape{s.n, s.c, hi, s.w});
    parallel_for(s.n * s.c, [&](std::int64_t nc) {
        const Scalar* src = g.data() + nc * s.plane();
        Scalar* dst = out.data() + nc * hi * s.w;
        for (std::int64_t o = 0; o < s.h; ++o) {
            const ResampleTap& t = taps[static_cast<std::size_t>(o)];
            const Scalar* grow = src + o * s.w;
            for (int k = 0; k < t.count; ++k) {
                const Scalar wk = static_cast<Scalar>(t.weight[k]);
                Scalar* row = dst + t.index[k] * s.w;
                for (std::int64_t xx = 0; xx < s.w; ++xx)
                    row[xx] += wk * grow[xx];
            }
        }
    });
    return out;
}

} // namespace

template <typename Scalar>
Var<Scalar> resize(const Var<Scalar>& x, std::int64_t out_h, std::int64_t out_w, ResizeMode mode)
{
    const Shape s = x.shape();
    if (out_h < 1 || out_w < 1)
        throw ShapeError("resize: output size must be >= 1");
    auto taps_h = resample_taps(s.h, out_h, mode);
    auto taps_w = resample_taps(s.w, out_w, mode);
    Tensor<Scalar> out = resample_h(resample_w(x.value(), taps_w), taps_h);
    return record<Scalar>("resize", std::move(out), {x},
                          [taps_h = std::move(taps_h), taps_w = std::move(taps_w), s](Node<Scalar>& self) {
                              if (auto* gx = self.input_grad(0))
                                  gx->array() +=
                                      resample_w_transpose(resample_h_transpose(self.grad, taps_h, s.h), taps_w, s.w)
                                          .array();
                          });
}

namespace {

// Flat index in the (n, c, h, w) tensor for each element of the
// unshuffled (n, c*r*r, h/r, w/r) tensor.
std::vector<std::int64_t> unshuffle_map(const Shape& s, int r)
{
    const std::int64_t ho = s.h / r;
    const std::int64_t wo = s.w / r;
    const std::int64_t co = s.c * r * r;
    std::vector<std::int64_t> map(static_cast<std::size_t>(s.numel()));
    std::size_t k = 0;
    for (std::int64_t n = 0; n < s.n; ++n)
        for (std::int64_t oc = 0; oc < co; ++oc) {
            const std::int64_t c = oc / (r * r);
            const std::int64_t i = (oc / r) % r;
            const std::int64_t j = oc % r;
            for (std::int64_t y = 0; y < ho; ++y)
                for (std::int64_t xx = 0; xx < wo; ++xx)
                    map[k++] = ((n * s.c + c) * s.h + y * r + i) * s.w + xx * r + j;
        }
    return map;
}

template <typename Scalar>
Var<Scalar> permute(const char* op, const Var<Scalar>& x, Shape out_shape, std::vector<std::int64_t> map, bool gather)
{
    // gather: out[k] = in[map[k]]; scatter: out[map[k]] = in[k].
    const Tensor<Scalar>& in = x.value();
    Tensor<Scalar> out(out_shape);
    for (std::size_t k = 0; k < map.size(); ++k) {
        const auto kk = static_cast<std::int64_t>(k);
        if (gather)
            out[kk] = in[map[k]];
        else
            out[map[k]] = in[kk];
    }
    return record<Scalar>(op, std::move(out), {x}, [map = std::move(map), gather](Node<Scalar>& self) {
        if (auto* gx = self.input_grad(0))
            for (std::size_t k = 0; k < map.size(); ++k) {
                const auto kk = static_cast<std::int64_t>(k);
                if (gather)
                    (*gx)[map[k]] += self.grad[kk];
                else
                    (*gx)[kk] += self.grad[map[k]];
            }
    });
}

} // namespace

template <typename Scalar>
Var<Scalar> pixel_unshuffle(const Var<Scalar>& x, int r)
{
    const Shape s = x.shape();
    if (r < 1)
        throw ShapeError("pixel_unshuffle: factor must be >= 1");
    if (s.h % r != 0 || s.w % r != 0)
        throw ShapeError("pixel_unshuffle: spatial size " + s.str() + " not divisible by " + std::to_string(r));
    return permute("pixel_unshuffle", x, Shape{s.n, s.c * r * r, s.h / r, s.w / r}, unshuffle_map(s, r), true);
}

template <typename Scalar>
Var<Scalar> pixel_shuffle(const Var<Scalar>& x, int r)
{
    const Shape s = x.shape();
    if (r < 1)
        throw ShapeError("pixel_shuffle: factor must be >= 1");
    if (s.c % (r * r) != 0)
        throw ShapeError("pixel_shuffle: channels " + std::to_string(s.c) + " not divisible by " +
                         std::to_string(r * r));
    const Shape big{s.n, s.c / (r * r), s.h * r, s.w * r};
    return permute("pixel_shuffle", x, big, unshuffle_map(big, r), false);
}

template <typename Scalar>
Var<Scalar> concat_channels(const std::vector<Var<Scalar>>& xs)
{
    if (xs.empty())
        throw ShapeError("concat_channels: no inputs");
    const Shape s0 = xs.front().shape();
    std::int64_t channels = 0;
    for (const auto& v : xs) {
        const Shape s = v.shape();
        if (s.n != s0.n || s.h != s0.h || s.w != s0.w)
            throw ShapeError("concat_channels: " + s.str() + " vs " + s0.str());
        channels += s.c;
    }
    Tensor<Scalar> out(Shape{s0.n, channels, s0.h, s0.w});
    std::vector<std::int64_t> offsets;
    std::int64_t at = 0;
    for (const auto& v : xs) {
        offsets.push_back(at);
        for (std::int64_t n = 0; n < s0.n; ++n)
            out.sample(n).middleRows(at, v.shape().c) = v.value().sample(n);
        at += v.shape().c;
    }
    return record<Scalar>("concat_channels", std::move(out), xs, [offsets, s0](Node<Scalar>& self) {
        for (std::size_t i = 0; i < self.inputs.size(); ++i)
            if (auto* gx = self.input_grad(i))
                for (std::int64_t n = 0; n < s0.n; ++n)
                    gx->sample(n) += self.grad.sample(n).middleRows(offsets[i], gx->shape().c);
    });
}

#define CSDN_INSTANTIATE(S)                                                                               \
    template Var<S> conv2d(const Var<S>&, const Var<S>&, const Var<S>&, const ConvSpec&);               \
    template Var<S> depthwise_conv2d(const Var<S>&, const Var<S>&, const Var<S>&, const ConvSpec&);     \
    template Var<S> batchnorm2d(const Var<S>&, const Var<S>&, const Var<S>&, BatchNormState<S>&);       \
    template Var<S> prelu(const Var<S>&, const Var<S>&);                                                \
    template Var<S> sigmoid(const Var<S>&);                                                             \
    template Var<S> pool2d(PoolKind, const Var<S>&, const PoolSpec&);                                   \
    template Var<S> global_avg_pool(const Var<S>&);                                                     \
    template Var<S> resize(const Var<S>&, std::int64_t, std::int64_t, ResizeMode);                      \
    template Var<S> pixel_unshuffle(const Var<S>&, int);                                                \
    template Var<S> pixel_shuffle(const Var<S>&, int);                                                  \
    template Var<S> concat_channels(const std::vector<Var<S>>&);
CSDN_INSTANTIATE(float)
CSDN_INSTANTIATE(double)
#undef CSDN_INSTANTIATE

} // namespace csdn
