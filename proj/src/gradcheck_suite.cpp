#include "csdn/gradcheck_suite.hpp"

#include "csdn/losses.hpp"
#include "csdn/ops.hpp"
#include "csdn/phantom.hpp"

#include <chrono>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <random>

namespace csdn {

namespace {

using VarD = Var<double>;
using TensorD = Tensor<double>;

TensorD uniform_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0)
{
    TensorD t(s);
    std::uniform_real_distribution<double> u(lo, hi);
    for (auto& v : t.values())
        v = u(rng);
    return t;
}

// Scalar objective sum(w * y) with fixed random probe weights.
VarD probe(const VarD& y, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    return sum(mul(y, VarD::constant(uniform_tensor(y.shape(), rng))));
}

class Suite {
public:
    Suite(const GradCheckSuiteOptions& o) : opt_(o), rng_(o.seed) {}

    // Layer primitive over explicit input tensors.
    void tensors(const std::string& name, std::vector<std::pair<std::string, TensorD>> inputs,
                 const std::function<VarD(const std::vector<VarD>&)>& fn, std::int64_t max_entries = 0)
    {
        const auto start = std::chrono::steady_clock::now();
        const std::uint64_t probe_seed = rng_();
        auto run = [&](bool leaves) {
            std::vector<VarD> xs;
            for (auto& [n, t] : inputs)
                xs.push_back(leaves ? VarD::leaf(t, true, n) : VarD::constant(t));
            return probe(fn(xs), probe_seed);
        };
        const auto grads = backward(run(true));
        std::vector<GradCheckTarget> targets;
        for (auto& [n, t] : inputs)
            targets.push_back({n, &t, grads.at(n)});
        auto eval = [&] {
            NoGradGuard g;
            return run(false).value()[0];
        };
        finish(name, finite_diff_check(eval, targets, opt_.tol, {1e-2, 14, max_entries}), start);
    }

    // Network block with its own parameters, running-statistics BN.
    void block(const std::string& name, const NetworkConfig& cfg, std::vector<std::pair<std::string, TensorD>> inputs,
               const std::function<VarD(ForwardContext<double>&, const std::vector<VarD>&)>& fn)
    {
        const auto start = std::chrono::steady_clock::now();
        ParameterStore<double> store;
        auto vars = [&](bool leaves) {
            std::vector<VarD> xs;
            for (auto& [n, t] : inputs)
                xs.push_back(leaves ? VarD::leaf(t, true, n) : VarD::constant(t));
            return xs;
        };
        {
            NoGradGuard g;
            ForwardContext<double> ctx(store, NormMode::running, false, true, cfg.bn_momentum, cfg.bn_eps);
            fn(ctx, vars(false));
        }
        initialize_parameters(store, rng_());
        randomize_non_conv(store);
        const std::uint64_t probe_seed = rng_();
        auto run = [&](bool leaves) {
            ForwardContext<double> ctx(store, NormMode::running, false, false, cfg.bn_momentum, cfg.bn_eps);
            return probe(fn(ctx, vars(leaves)), probe_seed);
        };
        const auto grads = backward(run(true));
        std::vector<GradCheckTarget> targets;
        for (auto& [n, t] : inputs)
            targets.push_back({n, &t, grads.at(n)});
        for (auto& [n, p] : store.entries())
            if (p.learnable())
                targets.push_back({n, &p.value, grads.at(n)});
        auto eval = [&] {
            NoGradGuard g;
            return run(false).value()[0];
        };
        finish(name, finite_diff_check(eval, targets, opt_.tol), start);
    }

    void end_to_end(const NetworkConfig& cfg)
    {
        const auto start = std::chrono::steady_clock::now();
        Network<double> net(cfg);
        net.initialize(rng_());
        auto& store = net.parameters();
        randomize_non_conv(store);
        TensorD x = uniform_tensor({1, cfg.in_frames, 64, 64}, rng_, 0.0, 1.0);
        const LabelMap labels = generate_phantom(rng_(), 64).label;
        LossConfig loss_cfg;
        loss_cfg.aux_weight = cfg.aux_weight;
        // Training graph (aux heads included) on running statistics, so a
        // single image is a valid batch.
        auto run = [&](const VarD& input) {
            ForwardContext<double> ctx(store, NormMode::running, false, false, cfg.bn_momentum, cfg.bn_eps);
            return hybrid_loss(csdn_forward(ctx, input, cfg, true), labels, loss_cfg);
        };
        const auto grads = backward(run(VarD::leaf(x, true, "input")));
        std::vector<GradCheckTarget> params;
        for (auto& [n, p] : store.entries())
            if (p.learnable())
                params.push_back({n, &p.value, grads.at(n)});
        std::vector<GradCheckTarget> input{{"input", &x, grads.at("input")}};
        auto eval = [&] {
            NoGradGuard g;
            return run(VarD::constant(x)).value()[0];
        };
        // Every parameter entry; the input every third entry (the blocks
        // check input gradients exhaustively).
        const std::int64_t cap = opt_.end_to_end_max_entries;
        const std::int64_t input_cap = cap > 0 ? cap : (x.numel() + 2) / 3;
        GradCheckReport r = finite_diff_check(eval, params, opt_.tol, {1e-2, 14, cap});
        const GradCheckReport ri = finite_diff_check(eval, input, opt_.tol, {1e-2, 14, input_cap});
        r.checked += ri.checked;
        r.max_abs_error = std::max(r.max_abs_error, ri.max_abs_error);
        if (ri.max_rel_error > r.max_rel_error) {
            r.max_rel_error = ri.max_rel_error;
            r.worst = ri.worst;
        }
        r.passed = r.passed && ri.passed;
        finish("end-to-end hybrid loss", r, start);
    }

    std::mt19937_64& rng() { return rng_; }
    std::vector<BlockCheck> take() { return std::move(results_); }

private:
    void randomize_non_conv(ParameterStore<double>& store)
    {
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        for (auto& [n, p] : store.entries())
            for (auto& v : p.value.values())
                switch (p.kind) {
                case ParamKind::conv_weight:
                    break;
                case ParamKind::bias:
                case ParamKind::bn_beta:
                case ParamKind::running_mean:
                    v = 0.1 * u(rng_);
                    break;
                case ParamKind::bn_gamma:
                    v = 1.0 + 0.2 * u(rng_);
                    break;
                case ParamKind::running_var:
                    v = 1.0 + 0.4 * u(rng_);
                    break;
                case ParamKind::prelu_alpha:
                    v = 0.25 + 0.15 * u(rng_);
                    break;
                }
    }

    void finish(const std::string& name, const GradCheckReport& r, std::chrono::steady_clock::time_point start)
    {
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        results_.push_back({name, r, secs});
        if (opt_.progress)
            *opt_.progress << std::left << std::setw(28) << name << std::right << std::setw(8) << r.checked
                           << std::scientific << std::setprecision(3) << std::setw(12) << r.max_rel_error
                           << std::defaultfloat << "  " << (r.passed ? "ok" : "FAIL") << "  "
                           << std::fixed << std::setprecision(1) << secs << "s" << std::defaultfloat << '\n'
                           << std::flush;
    }

    GradCheckSuiteOptions opt_;
    std::mt19937_64 rng_;
    std::vector<BlockCheck> results_;
};

LabelMap random_labels(Shape s, std::mt19937_64& rng)
{
    LabelMap l(s.n, s.h, s.w);
    std::uniform_int_distribution<int> u(0, static_cast<int>(s.c) - 1);
    for (auto& v : l.values)
        v = static_cast<std::uint8_t>(u(rng));
    return l;
}

// Distinct values so max-pool windows have no ties.
TensorD shuffled_ramp(Shape s, std::mt19937_64& rng)
{
    std::vector<double> v(static_cast<std::size_t>(s.numel()));
    std::iota(v.begin(), v.end(), 0.0);
    std::shuffle(v.begin(), v.end(), rng);
    for (auto& x : v)
        x *= 0.1;
    return TensorD(s, v);
}

} // namespace

std::vector<BlockCheck> run_gradcheck_suite(const NetworkConfig& cfg, const GradCheckSuiteOptions& options)
{
    cfg.validate();
    Suite s(options);
    auto& rng = s.rng();

    const ConvSpec grouped{4, 6, 3, 2, 2, 1, 1, 0, 2, true};
    s.tensors("conv2d", {{"x", uniform_tensor({2, 4, 7, 6}, rng)}, {"w", uniform_tensor(grouped.weight_shape(), rng)},
                         {"b", uniform_tensor(grouped.bias_shape(), rng)}},
              [&](const auto& v) { return conv2d(v[0], v[1], v[2], grouped); });
    const ConvSpec dw = ConvSpec::depthwise(3, 3, 2, true);
    s.tensors("depthwise_conv2d", {{"x", uniform_tensor({2, 3, 7, 8}, rng)}, {"w", uniform_tensor(dw.weight_shape(), rng)},
                                   {"b", uniform_tensor(dw.bias_shape(), rng)}},
              [&](const auto& v) { return depthwise_conv2d(v[0], v[1], v[2], dw); });
    for (const NormMode mode : {NormMode::batch, NormMode::running}) {
        TensorD rm = uniform_tensor({3, 1, 1, 1}, rng, -0.2, 0.2);
        TensorD rv = uniform_tensor({3, 1, 1, 1}, rng, 0.5, 1.5);
        s.tensors(mode == NormMode::batch ? "batchnorm2d (batch)" : "batchnorm2d (running)",
                  {{"x", uniform_tensor({3, 3, 4, 5}, rng)}, {"gamma", uniform_tensor({3, 1, 1, 1}, rng, 0.5, 1.5)},
                   {"beta", uniform_tensor({3, 1, 1, 1}, rng)}},
                  [&, mode](const auto& v) {
                      TensorD m = rm, var = rv;
                      BatchNormState<double> st{&m, &var, 0.1, 1e-5, mode, false};
                      return batchnorm2d(v[0], v[1], v[2], st);
                  });
    }
    s.tensors("prelu", {{"x", uniform_tensor({2, 3, 4, 4}, rng)}, {"alpha", uniform_tensor({3, 1, 1, 1}, rng, 0.1, 0.4)}},
              [](const auto& v) { return prelu(v[0], v[1]); });
    s.tensors("sigmoid", {{"x", uniform_tensor({2, 2, 3, 5}, rng, -4, 4)}}, [](const auto& v) { return sigmoid(v[0]); });
    s.tensors("max_pool", {{"x", shuffled_ramp({2, 2, 7, 7}, rng)}},
              [](const auto& v) { return pool2d(PoolKind::max, v[0], PoolSpec{3, 2, 1}); });
    s.tensors("avg_pool", {{"x", uniform_tensor({2, 2, 7, 7}, rng)}},
              [](const auto& v) { return pool2d(PoolKind::avg, v[0], PoolSpec{3, 2, 1}); });
    s.tensors("global_avg_pool", {{"x", uniform_tensor({2, 3, 5, 4}, rng)}},
              [](const auto& v) { return global_avg_pool(v[0]); });
    for (const auto& [mode, label] : {std::pair{ResizeMode::nearest, "resize nearest"},
                                      std::pair{ResizeMode::bilinear, "resize bilinear"},
                                      std::pair{ResizeMode::bicubic, "resize bicubic"}}) {
        s.tensors(std::string(label) + " up", {{"x", uniform_tensor({1, 2, 5, 4}, rng)}},
                  [mode = mode](const auto& v) { return resize(v[0], 9, 11, mode); });
        s.tensors(std::string(label) + " down", {{"x", uniform_tensor({1, 2, 12, 10}, rng)}},
                  [mode = mode](const auto& v) { return resize(v[0], 6, 4, mode); });
    }
    s.tensors("pixel_shuffle", {{"x", uniform_tensor({2, 8, 3, 2}, rng)}},
              [](const auto& v) { return pixel_shuffle(v[0], 2); });
    s.tensors("pixel_unshuffle", {{"x", uniform_tensor({2, 2, 6, 4}, rng)}},
              [](const auto& v) { return pixel_unshuffle(v[0], 2); });
    s.tensors("concat_channels", {{"a", uniform_tensor({2, 2, 3, 3}, rng)}, {"b", uniform_tensor({2, 3, 3, 3}, rng)}},
              [](const auto& v) { return concat_channels<double>({v[0], v[1]}); });

    const int k = cfg.num_classes;
    LossConfig lc;
    lc.focal_alpha.assign(static_cast<std::size_t>(k), 1.0);
    for (int i = 0; i < k; ++i)
        lc.focal_alpha[static_cast<std::size_t>(i)] = 0.5 + 0.25 * i;
    const LabelMap labels = random_labels({2, k, 5, 4}, rng);
    s.tensors("focal_loss", {{"logits", uniform_tensor({2, k, 5, 4}, rng, -3, 3)}},
              [&](const auto& v) { return focal_loss(v[0], labels, lc); });
    s.tensors("dice_loss", {{"logits", uniform_tensor({2, k, 5, 4}, rng, -3, 3)}},
              [&](const auto& v) { return dice_loss(v[0], labels, lc); });

    const int f = cfg.fusion_channels;
    const int c0 = cfg.ge_stage_channels[0];
    const int din = cfg.in_frames * cfg.downsample_r * cfg.downsample_r;
    auto one = [&](Shape shape) { return std::vector<std::pair<std::string, TensorD>>{{"input", uniform_tensor(shape, rng)}}; };
    s.block("downsample_module", cfg, one({1, cfg.in_frames, 16, 16}),
            [&](auto&, const auto& x) { return downsample_module(x[0], cfg.downsample_r); });
    s.block("shallow branch", cfg, one({1, din, 8, 8}),
            [&](auto& ctx, const auto& x) { return shallow_forward(ctx, x[0], cfg); });
    s.block("stem block", cfg, one({1, din, 16, 16}),
            [&](auto& ctx, const auto& x) { return stem_block(ctx, "stem", x[0], cfg.stem_channels); });
    s.block("ge block stride 1", cfg, one({1, c0, 6, 6}),
            [&](auto& ctx, const auto& x) { return ge_stride1(ctx, "ge", x[0], c0, cfg.ge_expansion); });
    s.block("ge block stride 2", cfg, one({1, cfg.stem_channels, 8, 8}), [&](auto& ctx, const auto& x) {
        return ge_stride2(ctx, "ge", x[0], cfg.stem_channels, c0, cfg.ge_expansion);
    });
    s.block("context block", cfg, one({2, cfg.ge_stage_channels[2], 3, 3}),
            [&](auto& ctx, const auto& x) { return context_block(ctx, "ctx", x[0], cfg.ge_stage_channels[2]); });
    s.block("mutual guided fusion", cfg,
            {{"detail", uniform_tensor({1, f, 8, 8}, rng)}, {"semantic", uniform_tensor({1, f, 2, 2}, rng)}},
            [&](auto& ctx, const auto& x) { return mutual_guided_fusion(ctx, "fusion", x[0], x[1], f); });
    s.block("segmentation head", cfg, one({1, f, 4, 4}), [&](auto& ctx, const auto& x) {
        return seg_head(ctx, "head", x[0], cfg.head_channels, cfg.num_classes, 16, 16);
    });
    s.block("aux head", cfg, one({1, c0, 4, 4}), [&](auto& ctx, const auto& x) {
        return aux_head(ctx, "aux", x[0], cfg.aux_channels, cfg.num_classes, 16, 16);
    });
    s.end_to_end(cfg);
    return s.take();
}

} // namespace csdn
