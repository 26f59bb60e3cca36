#include "csdn/metrics.hpp"

#include "csdn/errors.hpp"
#include "csdn/parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>

namespace csdn {

std::int64_t Mask::count() const
{
    return std::count_if(values.begin(), values.end(), [](std::uint8_t v) { return v != 0; });
}

RegionMasks region_masks(const LabelMap& l, std::int64_t index)
{
    if (index < 0 || index >= l.n)
        throw ShapeError("region_masks: image index out of range");
    RegionMasks r{Mask(l.h, l.w), Mask(l.h, l.w)};
    for (std::int64_t y = 0; y < l.h; ++y)
        for (std::int64_t x = 0; x < l.w; ++x) {
            const std::uint8_t v = l(index, y, x);
            if (v > 2)
                throw DataError("label value " + std::to_string(v) + " outside {0,1,2}");
            r.lumen(y, x) = v == 2;
            r.eem(y, x) = v >= 1;
        }
    return r;
}

namespace {

void check_same(const Mask& a, const Mask& b)
{
    if (a.h != b.h || a.w != b.w)
        throw ShapeError("mask shapes differ: " + std::to_string(a.h) + "x" + std::to_string(a.w) + " vs " +
                         std::to_string(b.h) + "x" + std::to_string(b.w));
}

std::pair<std::int64_t, std::int64_t> overlap(const Mask& a, const Mask& b)
{
    check_same(a, b);
    std::int64_t inter = 0;
    std::int64_t uni = 0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        const bool x = a.values[i] != 0;
        const bool y = b.values[i] != 0;
        inter += x && y;
        uni += x || y;
    }
    return {inter, uni};
}

std::int64_t floor_div(std::int64_t a, std::int64_t b)
{
    std::int64_t q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0)))
        --q;
    return q;
}

// Exact squared Euclidean distance from every pixel to the nearest pixel of
// `sites` (Meijster's two-pass algorithm, integer arithmetic throughout).
std::vector<std::int64_t> squared_distance_map(const Mask& sites)
{
    const std::int64_t h = sites.h;
    const std::int64_t w = sites.w;
    const std::int64_t inf = h + w;
    std::vector<std::int64_t> g(static_cast<std::size_t>(h * w));
    auto G = [&](std::int64_t y, std::int64_t x) -> std::int64_t& { return g[static_cast<std::size_t>(y * w + x)]; };
    for (std::int64_t x = 0; x < w; ++x) {
        G(0, x) = sites(0, x) ? 0 : inf;
        for (std::int64_t y = 1; y < h; ++y)
            G(y, x) = sites(y, x) ? 0 : std::min(inf, G(y - 1, x) + 1);
        for (std::int64_t y = h - 2; y >= 0; --y)
            G(y, x) = std::min(G(y, x), G(y + 1, x) + 1);
    }

    std::vector<std::int64_t> out(static_cast<std::size_t>(h * w));
    std::vector<std::int64_t> s(static_cast<std::size_t>(w));
    std::vector<std::int64_t> t(static_cast<std::size_t>(w));
    for (std::int64_t y = 0; y < h; ++y) {
        auto gi = [&](std::int64_t i) { return G(y, i); };
        auto f = [&](std::int64_t x, std::int64_t i) { return (x - i) * (x - i) + gi(i) * gi(i); };
        auto sep = [&](std::int64_t i, std::int64_t u) {
            return floor_div(u * u - i * i + gi(u) * gi(u) - gi(i) * gi(i), 2 * (u - i));
        };
        std::int64_t q = 0;
        s[0] = 0;
        t[0] = 0;
        for (std::int64_t u = 1; u < w; ++u) {
            while (q >= 0 && f(t[static_cast<std::size_t>(q)], s[static_cast<std::size_t>(q)]) > f(t[static_cast<std::size_t>(q)], u))
                --q;
            if (q < 0) {
                q = 0;
                s[0] = u;
            } else {
                const std::int64_t wv = 1 + sep(s[static_cast<std::size_t>(q)], u);
                if (wv < w) {
                    ++q;
                    s[static_cast<std::size_t>(q)] = u;
                    t[static_cast<std::size_t>(q)] = wv;
                }
            }
        }
        for (std::int64_t u = w - 1; u >= 0; --u) {
            out[static_cast<std::size_t>(y * w + u)] = f(u, s[static_cast<std::size_t>(q)]);
            if (u == t[static_cast<std::size_t>(q)])
                --q;
        }
    }
    return out;
}

// Pooled directed boundary distances in pixels.
std::vector<double> surface_distances(const Mask& a, const Mask& b)
{
    check_same(a, b);
    if (a.empty() || b.empty())
        throw DataError("undefined distance: HD95 needs two non-empty masks");
    const auto ba = boundary_pixels(a);
    const auto bb = boundary_pixels(b);
    Mask sa(a.h, a.w);
    Mask sb(b.h, b.w);
    for (auto [y, x] : ba)
        sa(y, x) = 1;
    for (auto [y, x] : bb)
        sb(y, x) = 1;
    const auto da = squared_distance_map(sa);
    const auto db = squared_distance_map(sb);
    std::vector<double> d;
    d.reserve(ba.size() + bb.size());
    for (auto [y, x] : ba)
        d.push_back(std::sqrt(static_cast<double>(db[static_cast<std::size_t>(y * b.w + x)])));
    for (auto [y, x] : bb)
        d.push_back(std::sqrt(static_cast<double>(da[static_cast<std::size_t>(y * a.w + x)])));
    return d;
}

} // namespace

double dsc(const Mask& a, const Mask& b)
{
    const auto [inter, uni] = overlap(a, b);
    const std::int64_t total = inter + uni;
    return total == 0 ? 1.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(total);
}

double iou(const Mask& a, const Mask& b)
{
    const auto [inter, uni] = overlap(a, b);
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<std::pair<std::int64_t, std::int64_t>> boundary_pixels(const Mask& m)
{
    std::vector<std::pair<std::int64_t, std::int64_t>> out;
    auto outside = [&](std::int64_t y, std::int64_t x) { return y < 0 || y >= m.h || x < 0 || x >= m.w || !m(y, x); };
    for (std::int64_t y = 0; y < m.h; ++y)
        for (std::int64_t x = 0; x < m.w; ++x)
            if (m(y, x) && (outside(y - 1, x) || outside(y + 1, x) || outside(y, x - 1) || outside(y, x + 1)))
                out.emplace_back(y, x);
    return out;
}

double percentile(std::vector<double> values, double q)
{
    if (values.empty())
        throw DataError("percentile of an empty set");
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

double hd95(const Mask& a, const Mask& b, double spacing_mm)
{
    return percentile(surface_distances(a, b), 0.95) * spacing_mm;
}

double hausdorff(const Mask& a, const Mask& b, double spacing_mm)
{
    const auto d = surface_distances(a, b);
    return *std::max_element(d.begin(), d.end()) * spacing_mm;
}

// ---------------------------------------------------------------- reports

namespace {

RegionMetrics region_metrics(const Mask& pred, const Mask& truth, double spacing_mm)
{
    RegionMetrics r;
    r.dsc = dsc(pred, truth);
    r.iou = iou(pred, truth);
    if (!pred.empty() && !truth.empty()) {
        r.hd95_mm = hd95(pred, truth, spacing_mm);
        r.hd95_defined = true;
    } else {
        r.hd95_mm = std::numeric_limits<double>::quiet_NaN();
    }
    return r;
}

} // namespace

SampleMetrics sample_metrics(const std::string& id, const LabelMap& pred, const LabelMap& truth, double spacing_mm,
                             std::int64_t index)
{
    if (pred.h != truth.h || pred.w != truth.w)
        throw ShapeError("prediction and label sizes differ for " + id);
    const RegionMasks p = region_masks(pred, index);
    const RegionMasks t = region_masks(truth, 0);
    return {id, region_metrics(p.lumen, t.lumen, spacing_mm), region_metrics(p.eem, t.eem, spacing_mm)};
}

MetricsReport summarize(std::vector<SampleMetrics> samples)
{
    MetricsReport r;
    r.samples = std::move(samples);
    auto fold = [&](RegionMetrics SampleMetrics::*region, RegionSummary& out, int& excluded) {
        double hd = 0;
        for (const auto& s : r.samples) {
            const RegionMetrics& m = s.*region;
            out.dsc += m.dsc;
            out.iou += m.iou;
            if (m.hd95_defined) {
                hd += m.hd95_mm;
                ++out.hd95_samples;
            } else {
                ++excluded;
            }
        }
        const auto n = static_cast<double>(r.samples.size());
        out.dsc /= n;
        out.iou /= n;
        out.hd95_mm = out.hd95_samples > 0 ? hd / out.hd95_samples : std::numeric_limits<double>::quiet_NaN();
    };
    if (r.samples.empty())
        throw UsageError("no samples to summarize");
    fold(&SampleMetrics::lumen, r.lumen, r.hd95_excluded_lumen);
    fold(&SampleMetrics::eem, r.eem, r.hd95_excluded_eem);
    return r;
}

template <typename Scalar>
LabelMap argmax_labels(const Tensor<Scalar>& logits)
{
    const Shape s = logits.shape();
    LabelMap l(s.n, s.h, s.w);
    for (std::int64_t n = 0; n < s.n; ++n)
        for (std::int64_t y = 0; y < s.h; ++y)
            for (std::int64_t x = 0; x < s.w; ++x) {
                std::int64_t best = 0;
                for (std::int64_t c = 1; c < s.c; ++c)
                    if (logits(n, c, y, x) > logits(n, best, y, x))
                        best = c;
                l(n, y, x) = static_cast<std::uint8_t>(best);
            }
    return l;
}

template <typename Scalar>
std::vector<LabelMap> predict(Network<Scalar>& net, const std::vector<const Sample*>& samples, int batch_size)
{
    if (batch_size < 1)
        throw UsageError("batch_size must be >= 1");
    NoGradGuard guard;
    std::vector<LabelMap> out;
    for (std::size_t begin = 0; begin < samples.size(); begin += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(samples.size(), begin + static_cast<std::size_t>(batch_size));
        const Batch b = make_batch({samples.begin() + static_cast<std::ptrdiff_t>(begin),
                                    samples.begin() + static_cast<std::ptrdiff_t>(end)});
        Tensor<Scalar> x(b.frames.shape());
        for (std::int64_t i = 0; i < x.numel(); ++i)
            x[i] = static_cast<Scalar>(b.frames[i]);
        const LabelMap pred = argmax_labels(net.forward(x, {Mode::eval}).main_logits.value());
        for (std::int64_t i = 0; i < pred.n; ++i) {
            LabelMap one(1, pred.h, pred.w);
            std::copy_n(pred.values.begin() + i * pred.plane(), pred.plane(), one.values.begin());
            out.push_back(std::move(one));
        }
    }
    return out;
}

template <typename Scalar>
MetricsReport evaluate(Network<Scalar>& net, const Dataset& ds, Split split, int batch_size)
{
    const auto samples = ds.split(split);
    if (samples.empty())
        throw UsageError("split '" + to_string(split) + "' has no samples");
    const auto preds = predict(net, samples, batch_size);
    std::vector<SampleMetrics> m;
    for (std::size_t i = 0; i < samples.size(); ++i)
        m.push_back(sample_metrics(samples[i]->id, preds[i], samples[i]->label, samples[i]->spacing_mm));
    return summarize(std::move(m));
}

MetricsReport evaluate_oracle(const Dataset& ds, Split split)
{
    const auto samples = ds.split(split);
    if (samples.empty())
        throw UsageError("split '" + to_string(split) + "' has no samples");
    std::vector<SampleMetrics> m;
    for (const Sample* s : samples)
        m.push_back(sample_metrics(s->id, s->label, s->label, s->spacing_mm));
    return summarize(std::move(m));
}

template <typename Scalar>
FpsResult fps_benchmark(Network<Scalar>& net, int size, int batch, int warmup_iters, int timed_iters)
{
    if (warmup_iters < 1)
        throw UsageError("benchmark needs at least 1 warmup iteration");
    if (timed_iters < 10)
        throw UsageError("benchmark needs at least 10 timed iterations (got " + std::to_string(timed_iters) + ")");
    if (batch < 1)
        throw UsageError("benchmark batch must be >= 1");
    Tensor<Scalar> x({batch, net.config().in_frames, size, size});
    std::mt19937_64 rng(0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& v : x.values())
        v = static_cast<Scalar>(u(rng));

    const int saved = thread_count();
    set_thread_count(1);
    NoGradGuard guard;
    using clock = std::chrono::steady_clock;
    for (int i = 0; i < warmup_iters; ++i)
        net.forward(x, {Mode::eval});
    std::vector<double> ms;
    const auto start = clock::now();
    for (int i = 0; i < timed_iters; ++i) {
        const auto t0 = clock::now();
        net.forward(x, {Mode::eval});
        ms.push_back(std::chrono::duration<double, std::milli>(clock::now() - t0).count());
    }
    const double total = std::chrono::duration<double>(clock::now() - start).count();
    set_thread_count(saved);

    FpsResult r;
    r.fps = static_cast<double>(batch) * timed_iters / total;
    r.p50_ms = percentile(ms, 0.50);
    r.p95_ms = percentile(ms, 0.95);
    r.batch = batch;
    r.iters = timed_iters;
    return r;
}

void write_report_csv(std::ostream& os, const MetricsReport& r)
{
    os << "sample_id,region,dsc,iou,hd95_mm\n";
    os << std::setprecision(9);
    auto row = [&](const std::string& id, const char* region, const RegionMetrics& m) {
        os << id << ',' << region << ',' << m.dsc << ',' << m.iou << ',';
        if (m.hd95_defined)
            os << m.hd95_mm;
        else
            os << "nan";
        os << '\n';
    };
    for (const auto& s : r.samples) {
        row(s.id, "lumen", s.lumen);
        row(s.id, "eem", s.eem);
    }
}

std::string summary_text(const MetricsReport& r)
{
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    os << "samples: " << r.samples.size() << '\n';
    os << "region   DSC      IoU      HD95(mm)\n";
    os << "lumen    " << r.lumen.dsc << "   " << r.lumen.iou << "   " << r.lumen.hd95_mm << '\n';
    os << "eem      " << r.eem.dsc << "   " << r.eem.iou << "   " << r.eem.hd95_mm << '\n';
    if (r.hd95_excluded_lumen > 0 || r.hd95_excluded_eem > 0)
        os << "warning: HD95 undefined (empty mask) for " << r.hd95_excluded_lumen << " lumen and "
           << r.hd95_excluded_eem << " eem predictions; excluded from the HD95 mean\n";
    if (r.fps > 0)
        os << std::setprecision(2) << "fps " << r.fps << "  latency p50 " << r.latency_p50_ms << " ms  p95 "
           << r.latency_p95_ms << " ms\n";
    return os.str();
}

template LabelMap argmax_labels(const Tensor<float>&);
template LabelMap argmax_labels(const Tensor<double>&);
template std::vector<LabelMap> predict(Network<float>&, const std::vector<const Sample*>&, int);
template std::vector<LabelMap> predict(Network<double>&, const std::vector<const Sample*>&, int);
template MetricsReport evaluate(Network<float>&, const Dataset&, Split, int);
template MetricsReport evaluate(Network<double>&, const Dataset&, Split, int);
template FpsResult fps_benchmark(Network<float>&, int, int, int, int);
template FpsResult fps_benchmark(Network<double>&, int, int, int, int);

} // namespace csdn
