#include "csdn/network.hpp"

#include "csdn/errors.hpp"
#include "csdn/ops.hpp"

#include <cmath>
#include <random>

namespace csdn {

NetworkConfig NetworkConfig::tiny()
{
    NetworkConfig c;
    c.shallow_channels = {8, 8, 8};
    c.stem_channels = 8;
    c.ge_stage_channels = {8, 8, 8};
    c.ge_expansion = 2;
    c.fusion_channels = 8;
    c.head_channels = 8;
    c.aux_channels = 4;
    return c;
}

void NetworkConfig::validate() const
{
    auto positive = [](int v, const char* what) {
        if (v < 1)
            throw UsageError(std::string("network config: ") + what + " must be >= 1");
    };
    positive(in_frames, "in_frames");
    positive(num_classes, "num_classes");
    positive(downsample_r, "downsample_r");
    for (int c : shallow_channels)
        positive(c, "shallow_channels");
    for (int c : ge_stage_channels)
        positive(c, "ge_stage_channels");
    for (int l : ge_layers)
        positive(l, "ge_layers");
    positive(ge_expansion, "ge_expansion");
    positive(fusion_channels, "fusion_channels");
    positive(head_channels, "head_channels");
    positive(aux_channels, "aux_channels");
    if (stem_channels < 2 || stem_channels % 2 != 0)
        throw UsageError("network config: stem_channels must be even and >= 2");
    if (!(aux_weight >= 0.0f))
        throw UsageError("network config: aux_weight must be >= 0");
    if (!(bn_momentum > 0.0f && bn_momentum <= 1.0f))
        throw UsageError("network config: bn_momentum must be in (0, 1]");
    if (!(bn_eps > 0.0f))
        throw UsageError("network config: bn_eps must be > 0");
}

// ---------------------------------------------------------------- context

template <typename Scalar>
ForwardContext<Scalar>::ForwardContext(ParameterStore<Scalar>& store, NormMode norm, bool update_running, bool declare,
                                       double bn_momentum, double bn_eps)
    : store_(store), norm_(norm), update_running_(update_running), declare_(declare), momentum_(bn_momentum),
      eps_(bn_eps)
{
}

namespace {

template <typename Scalar>
Scalar default_value(ParamKind kind)
{
    switch (kind) {
    case ParamKind::bn_gamma:
    case ParamKind::running_var:
        return Scalar(1);
    case ParamKind::prelu_alpha:
        return Scalar(0.25);
    default:
        return Scalar(0);
    }
}

} // namespace

template <typename Scalar>
Var<Scalar> ForwardContext<Scalar>::param(const std::string& name, Shape shape, ParamKind kind)
{
    if (auto it = leaves_.find(name); it != leaves_.end())
        return it->second;
    Parameter<Scalar>* p = nullptr;
    if (declare_ && !store_.contains(name)) {
        p = &store_.declare(name, shape, kind);
        p->value.fill(default_value<Scalar>(kind));
    } else {
        p = &store_.at(name);
        if (p->value.shape() != shape)
            throw ShapeError("parameter " + name + ": expected " + shape.str() + ", have " + p->value.shape().str());
    }
    auto v = p->learnable() ? Var<Scalar>::leaf(p->value, true, name) : Var<Scalar>::constant(p->value);
    leaves_.emplace(name, v);
    return v;
}

template <typename Scalar>
Var<Scalar> ForwardContext<Scalar>::conv(const std::string& prefix, const Var<Scalar>& x, const ConvSpec& spec)
{
    spec.validate();
    auto w = param(prefix + ".weight", spec.weight_shape(), ParamKind::conv_weight);
    Var<Scalar> b;
    if (spec.bias)
        b = param(prefix + ".bias", spec.bias_shape(), ParamKind::bias);
    return spec.is_depthwise() ? depthwise_conv2d(x, w, b, spec) : conv2d(x, w, b, spec);
}

template <typename Scalar>
Var<Scalar> ForwardContext<Scalar>::bn(const std::string& prefix, const Var<Scalar>& x)
{
    const Shape s{x.shape().c, 1, 1, 1};
    auto gamma = param(prefix + ".gamma", s, ParamKind::bn_gamma);
    auto beta = param(prefix + ".beta", s, ParamKind::bn_beta);
    param(prefix + ".running_mean", s, ParamKind::running_mean);
    param(prefix + ".running_var", s, ParamKind::running_var);
    BatchNormState<Scalar> state;
    state.running_mean = &store_.at(prefix + ".running_mean").value;
    state.running_var = &store_.at(prefix + ".running_var").value;
    state.momentum = momentum_;
    state.eps = eps_;
    state.mode = norm_;
    state.update_running = update_running_;
    return batchnorm2d(x, gamma, beta, state);
}

template <typename Scalar>
Var<Scalar> ForwardContext<Scalar>::prelu(const std::string& prefix, const Var<Scalar>& x)
{
    return csdn::prelu(x, param(prefix + ".alpha", {x.shape().c, 1, 1, 1}, ParamKind::prelu_alpha));
}

template <typename Scalar>
Var<Scalar> ForwardContext<Scalar>::conv_bn(const std::string& prefix, const Var<Scalar>& x, const ConvSpec& spec)
{
    return bn(prefix + ".bn", conv(prefix + ".conv", x, spec));
}

template <typename Scalar>
Var<Scalar> ForwardContext<Scalar>::conv_bn_act(const std::string& prefix, const Var<Scalar>& x, const ConvSpec& spec)
{
    return prelu(prefix + ".act", conv_bn(prefix, x, spec));
}

// ----------------------------------------------------------------- blocks

template <typename Scalar>
Var<Scalar> downsample_module(const Var<Scalar>& x, int r)
{
    const Shape s = x.shape();
    if (s.h % (2 * r) != 0 || s.w % (2 * r) != 0)
        throw ShapeError("downsample: input " + s.str() + " not divisible by " + std::to_string(2 * r));
    return pixel_unshuffle(resize(x, s.h / 2, s.w / 2, ResizeMode::bicubic), r);
}

template <typename Scalar>
Var<Scalar> shallow_forward(ForwardContext<Scalar>& ctx, const Var<Scalar>& x, const NetworkConfig& cfg)
{
    Var<Scalar> y = x;
    std::int64_t in = x.shape().c;
    for (int b = 0; b < 3; ++b) {
        const std::int64_t c = cfg.shallow_channels[b];
        const std::string p = "shallow." + std::to_string(b) + ".";
        y = ctx.conv_bn_act(p + "0", y, ConvSpec::square(in, c, 3, 2));
        y = ctx.conv_bn_act(p + "1", y, ConvSpec::square(c, c, 3));
        y = ctx.conv_bn_act(p + "2", y, ConvSpec::square(c, c, 3));
        in = c;
    }
    return y;
}

template <typename Scalar>
Var<Scalar> stem_block(ForwardContext<Scalar>& ctx, const std::string& prefix, const Var<Scalar>& x, int channels)
{
    const std::int64_t c = channels;
    auto y = ctx.conv_bn_act(prefix + ".conv", x, ConvSpec::square(x.shape().c, c, 3, 2));
    auto a = ctx.conv_bn_act(prefix + ".a1", y, ConvSpec::square(c, c / 2, 1));
    a = ctx.conv_bn_act(prefix + ".a2", a, ConvSpec::square(c / 2, c / 2, 3, 2));
    auto b = pool2d(PoolKind::max, y, PoolSpec{3, 2, 1});
    return ctx.conv_bn_act(prefix + ".fuse", concat_channels<Scalar>({a, b}), ConvSpec::square(c + c / 2, c, 3));
}

template <typename Scalar>
Var<Scalar> ge_stride1(ForwardContext<Scalar>& ctx, const std::string& prefix, const Var<Scalar>& x, int channels,
                       int expansion)
{
    const std::int64_t c = channels;
    const std::int64_t e = c * expansion;
    if (x.shape().c != c)
        throw ShapeError(prefix + ": expected " + std::to_string(c) + " channels, got " + std::to_string(x.shape().c));
    auto y = ctx.conv_bn_act(prefix + ".expand", x, ConvSpec::square(c, e, 3));
    y = ctx.conv_bn(prefix + ".dw", y, ConvSpec::depthwise(e, 3));
    y = ctx.conv_bn(prefix + ".proj", y, ConvSpec::square(e, c, 1));
    return ctx.prelu(prefix + ".act", add(x, y));
}

template <typename Scalar>
Var<Scalar> ge_stride2(ForwardContext<Scalar>& ctx, const std::string& prefix, const Var<Scalar>& x, int in_channels,
                       int out_channels, int expansion)
{
    const std::int64_t ci = in_channels;
    const std::int64_t co = out_channels;
    const std::int64_t e = ci * expansion;
    if (x.shape().c != ci)
        throw ShapeError(prefix + ": expected " + std::to_string(ci) + " channels, got " + std::to_string(x.shape().c));
    auto y = ctx.conv_bn_act(prefix + ".expand", x, ConvSpec::square(ci, e, 3));
    y = ctx.conv_bn(prefix + ".dw1", y, ConvSpec::depthwise(e, 3, 2));
    y = ctx.conv_bn(prefix + ".dw2", y, ConvSpec::depthwise(e, 3));
    y = ctx.conv_bn(prefix + ".proj", y, ConvSpec::square(e, co, 1));
    auto s = ctx.conv_bn(prefix + ".short_dw", x, ConvSpec::depthwise(ci, 3, 2));
    s = ctx.conv_bn(prefix + ".short_proj", s, ConvSpec::square(ci, co, 1));
    return ctx.prelu(prefix + ".act", add(y, s));
}

template <typename Scalar>
Var<Scalar> context_block(ForwardContext<Scalar>& ctx, const std::string& prefix, const Var<Scalar>& x, int channels)
{
    const std::int64_t c = channels;
    auto g = ctx.bn(prefix + ".gap_bn", global_avg_pool(x));
    g = ctx.conv(prefix + ".gap_conv", g, ConvSpec::square(c, c, 1, 1, 1, true));
    return ctx.conv_bn_act(prefix + ".out", add(x, g), ConvSpec::square(c, c, 3));
}

template <typename Scalar>
DeepOutput<Scalar> deep_forward(ForwardContext<Scalar>& ctx, const Var<Scalar>& x, const NetworkConfig& cfg)
{
    DeepOutput<Scalar> out;
    auto y = stem_block(ctx, "deep.stem", x, cfg.stem_channels);
    out.taps.push_back(y);
    int in = cfg.stem_channels;
    for (int s = 0; s < 3; ++s) {
        const int c = cfg.ge_stage_channels[s];
        const std::string p = "deep.s" + std::to_string(s + 3) + ".";
        y = ge_stride2(ctx, p + "0", y, in, c, cfg.ge_expansion);
        for (int l = 1; l < cfg.ge_layers[s]; ++l)
            y = ge_stride1(ctx, p + std::to_string(l), y, c, cfg.ge_expansion);
        out.taps.push_back(y);
        in = c;
    }
    out.semantic = context_block(ctx, "deep.ctx", y, in);
    return out;
}

template <typename Scalar>
Var<Scalar> mutual_guided_fusion(ForwardContext<Scalar>& ctx, const std::string& prefix, const Var<Scalar>& detail,
                                 const Var<Scalar>& semantic, int channels)
{
    const std::int64_t f = channels;
    const Shape ds = detail.shape();
    const Shape ss = semantic.shape();
    if (ds.c != f || ss.c != f)
        throw ShapeError(prefix + ": both inputs need " + std::to_string(f) + " channels, got " + ds.str() + " and " +
                         ss.str());
    if (ds.n != ss.n)
        throw ShapeError(prefix + ": batch mismatch " + ds.str() + " vs " + ss.str());

    auto d2 = ctx.conv_bn(prefix + ".d2", detail, ConvSpec::square(f, f, 3, 2));
    d2 = pool2d(PoolKind::avg, d2, PoolSpec{3, 2, 1});
    if (d2.shape().h != ss.h || d2.shape().w != ss.w)
        throw ShapeError(prefix + ": detail " + ds.str() + " does not compress to semantic " + ss.str());

    auto d1 = ctx.conv_bn(prefix + ".d1_dw", detail, ConvSpec::depthwise(f, 3));
    d1 = ctx.conv(prefix + ".d1_pw", d1, ConvSpec::square(f, f, 1, 1, 1, true));
    auto g1 = ctx.conv_bn(prefix + ".g1", semantic, ConvSpec::square(f, f, 3));
    g1 = sigmoid(resize(g1, ds.h, ds.w, ResizeMode::bilinear));
    auto p1 = mul(d1, g1);

    auto g2 = ctx.conv_bn(prefix + ".g2_dw", semantic, ConvSpec::depthwise(f, 3));
    g2 = sigmoid(ctx.conv(prefix + ".g2_pw", g2, ConvSpec::square(f, f, 1, 1, 1, true)));
    auto p2 = resize(mul(d2, g2), ds.h, ds.w, ResizeMode::bilinear);

    return ctx.conv_bn(prefix + ".out", add(p1, p2), ConvSpec::square(f, f, 3));
}

template <typename Scalar>
Var<Scalar> seg_head(ForwardContext<Scalar>& ctx, const std::string& prefix, const Var<Scalar>& x, int head_channels,
                     int out_classes, std::int64_t out_h, std::int64_t out_w)
{
    auto y = ctx.conv_bn_act(prefix + ".conv", x, ConvSpec::square(x.shape().c, head_channels, 3));
    y = ctx.conv(prefix + ".cls", y, ConvSpec::square(head_channels, 4 * out_classes, 1, 1, 1, true));
    return resize(pixel_shuffle(y, 2), out_h, out_w, ResizeMode::bilinear);
}

template <typename Scalar>
Var<Scalar> aux_head(ForwardContext<Scalar>& ctx, const std::string& prefix, const Var<Scalar>& x, int channels,
                     int out_classes, std::int64_t out_h, std::int64_t out_w)
{
    auto y = ctx.conv_bn_act(prefix + ".conv", x, ConvSpec::square(x.shape().c, channels, 3));
    y = ctx.conv(prefix + ".cls", y, ConvSpec::square(channels, out_classes, 1, 1, 1, true));
    return resize(y, out_h, out_w, ResizeMode::bilinear);
}

template <typename Scalar>
CsdnOutput<Scalar> csdn_forward(ForwardContext<Scalar>& ctx, const Var<Scalar>& x, const NetworkConfig& cfg,
                                bool with_aux)
{
    const Shape s = x.shape();
    if (s.c != cfg.in_frames)
        throw ShapeError("input has " + std::to_string(s.c) + " frames, network expects " +
                         std::to_string(cfg.in_frames));
    if (s.h < 64 || s.w < 64 || s.h % 64 != 0 || s.w % 64 != 0)
        throw ShapeError("input size " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                         " must be a positive multiple of 64");

    auto d = downsample_module(x, cfg.downsample_r);
    auto detail = shallow_forward(ctx, d, cfg);
    auto deep = deep_forward(ctx, d, cfg);
    auto semantic = deep.semantic;
    const int f = cfg.fusion_channels;
    if (cfg.shallow_channels[2] != f)
        detail = ctx.conv_bn("proj.detail", detail, ConvSpec::square(cfg.shallow_channels[2], f, 1));
    if (cfg.ge_stage_channels[2] != f)
        semantic = ctx.conv_bn("proj.semantic", semantic, ConvSpec::square(cfg.ge_stage_channels[2], f, 1));

    CsdnOutput<Scalar> out;
    auto fused = mutual_guided_fusion(ctx, "fusion", detail, semantic, f);
    out.main_logits = seg_head(ctx, "head", fused, cfg.head_channels, cfg.num_classes, s.h, s.w);
    if (with_aux)
        for (std::size_t t = 0; t < deep.taps.size(); ++t)
            out.aux_logits.push_back(aux_head(ctx, kAuxPrefix + std::to_string(t), deep.taps[t], cfg.aux_channels,
                                              cfg.num_classes, s.h, s.w));
    return out;
}

// ----------------------------------------------------------------- network

template <typename Scalar>
void initialize_parameters(ParameterStore<Scalar>& store, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    for (auto& [name, p] : store.entries()) {
        if (p.kind != ParamKind::conv_weight) {
            p.value.fill(default_value<Scalar>(p.kind));
            continue;
        }
        const Shape s = p.value.shape();
        const double bound = std::sqrt(6.0 / static_cast<double>(s.c * s.h * s.w));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (auto& v : p.value.values())
            v = static_cast<Scalar>(u(rng));
    }
}

template <typename Scalar>
Network<Scalar>::Network(NetworkConfig cfg) : config_(std::move(cfg))
{
    config_.validate();
    NoGradGuard no_grad;
    ForwardContext<Scalar> ctx(store_, NormMode::running, false, true, config_.bn_momentum, config_.bn_eps);
    auto x = Var<Scalar>::constant(Tensor<Scalar>({1, config_.in_frames, 64, 64}));
    csdn_forward(ctx, x, config_, true);
}

template <typename Scalar>
CsdnOutput<Scalar> Network<Scalar>::forward(const Tensor<Scalar>& x, ForwardOptions opt)
{
    const bool train = opt.mode == Mode::train;
    const bool batch_stats = train && !opt.frozen_norm;
    ForwardContext<Scalar> ctx(store_, batch_stats ? NormMode::batch : NormMode::running, batch_stats && grad_enabled(),
                               false, config_.bn_momentum, config_.bn_eps);
    return csdn_forward(ctx, Var<Scalar>::constant(x), config_, train);
}

std::int64_t count_parameters(const NetworkConfig& cfg)
{
    return Network<float>(cfg).parameter_count();
}

#define CSDN_INSTANTIATE(S)                                                                                            \
    template class ForwardContext<S>;                                                                                  \
    template class Network<S>;                                                                                         \
    template Var<S> downsample_module(const Var<S>&, int);                                                             \
    template Var<S> shallow_forward(ForwardContext<S>&, const Var<S>&, const NetworkConfig&);                          \
    template Var<S> stem_block(ForwardContext<S>&, const std::string&, const Var<S>&, int);                            \
    template Var<S> ge_stride1(ForwardContext<S>&, const std::string&, const Var<S>&, int, int);                       \
    template Var<S> ge_stride2(ForwardContext<S>&, const std::string&, const Var<S>&, int, int, int);                  \
    template Var<S> context_block(ForwardContext<S>&, const std::string&, const Var<S>&, int);                         \
    template DeepOutput<S> deep_forward(ForwardContext<S>&, const Var<S>&, const NetworkConfig&);                      \
    template Var<S> mutual_guided_fusion(ForwardContext<S>&, const std::string&, const Var<S>&, const Var<S>&, int);   \
    template Var<S> seg_head(ForwardContext<S>&, const std::string&, const Var<S>&, int, int, std::int64_t,            \
                             std::int64_t);                                                                            \
    template Var<S> aux_head(ForwardContext<S>&, const std::string&, const Var<S>&, int, int, std::int64_t,            \
                             std::int64_t);                                                                            \
    template CsdnOutput<S> csdn_forward(ForwardContext<S>&, const Var<S>&, const NetworkConfig&, bool);                \
    template void initialize_parameters(ParameterStore<S>&, std::uint64_t);

CSDN_INSTANTIATE(float)
CSDN_INSTANTIATE(double)

} // namespace csdn
