#include "csdn/phantom.hpp"

#include "csdn/errors.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <random>

namespace csdn {

namespace {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

Mat2 rotation(double angle)
{
    Mat2 r;
    r << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
    return r;
}

double uniform(std::mt19937_64& rng, double lo, double hi)
{
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

void check_size(int size)
{
    if (size < 64 || size % 64 != 0)
        throw DataError("phantom size " + std::to_string(size) + " must be a positive multiple of 64");
}

// Small random affine about each ellipse's own center.
Ellipse jitter(const Ellipse& e, double mean_radius, std::mt19937_64& rng)
{
    Mat2 m = Mat2::Identity();
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
            m(i, j) += uniform(rng, -0.01, 0.01);
    const Vec2 shift(uniform(rng, -0.02, 0.02) * mean_radius, uniform(rng, -0.02, 0.02) * mean_radius);
    return e.transformed(m, e.center + shift - m * e.center);
}

double mean_radius(const Ellipse& e) { return std::sqrt(e.area() / std::numbers::pi); }

bool in_shadow(const PhantomGeometry& g, const Vec2& p)
{
    const Vec2 d = p - g.catheter;
    const double r = d.norm();
    const double phi = std::atan2(d.y(), d.x());
    for (const auto& s : g.shadows) {
        const double diff = std::remainder(phi - s.direction, 2.0 * std::numbers::pi);
        if (std::abs(diff) <= s.half_width && r >= s.start_radius)
            return true;
    }
    return false;
}

void render_frame(const PhantomGeometry& g, Tensor<float>& frames, int channel, std::mt19937_64& rng)
{
    std::gamma_distribution<float> speckle(4.0f, 0.25f);
    const int n = g.size;
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const Vec2 p(x + 0.5, y + 0.5);
            float v = g.lumen.contains(p) ? kLumenLevel : g.eem.contains(p) ? kWallLevel : kAdventitiaLevel;
            v *= speckle(rng);
            if (in_shadow(g, p))
                v *= kShadowFactor;
            if ((p - g.catheter).norm() <= g.catheter_radius)
                v = kCatheterLevel;
            frames(0, channel, y, x) = std::clamp(v, 0.0f, 1.0f);
        }
}

} // namespace

Ellipse Ellipse::from_axes(Eigen::Vector2d center, double radius_a, double radius_b, double angle)
{
    const Mat2 r = rotation(angle);
    Ellipse e;
    e.center = center;
    e.q = r * Eigen::Vector2d(1.0 / (radius_a * radius_a), 1.0 / (radius_b * radius_b)).asDiagonal() * r.transpose();
    return e;
}

double Ellipse::area() const { return std::numbers::pi / std::sqrt(q.determinant()); }

Ellipse Ellipse::transformed(const Eigen::Matrix2d& m, const Eigen::Vector2d& t) const
{
    const Mat2 inv = m.inverse();
    Ellipse e;
    e.center = m * center + t;
    e.q = inv.transpose() * q * inv;
    return e;
}

Eigen::Vector2d Ellipse::boundary_point(double theta) const
{
    Eigen::SelfAdjointEigenSolver<Mat2> eig(q);
    const Vec2 radii = eig.eigenvalues().cwiseSqrt().cwiseInverse();
    return center + eig.eigenvectors() * Vec2(radii.x() * std::cos(theta), radii.y() * std::sin(theta));
}

PhantomGeometry phantom_geometry(std::uint64_t seed, int size)
{
    check_size(size);
    std::mt19937_64 rng(seed);
    const double n = size;
    PhantomGeometry g;
    g.size = size;
    const Vec2 center(n / 2 + uniform(rng, -0.05, 0.05) * n, n / 2 + uniform(rng, -0.05, 0.05) * n);
    const double a = uniform(rng, 0.25, 0.42) * n;
    const double b = uniform(rng, 0.25, 0.42) * n;
    const double angle = uniform(rng, 0.0, std::numbers::pi);
    g.eem = Ellipse::from_axes(center, a, b, angle);

    const double ra = uniform(rng, 0.35, 0.75);
    const double rb = uniform(rng, 0.35, 0.75);
    // Offsets and tilts are redrawn until the lumen keeps a wall margin of
    // 15% of the EEM radius all round; the centered, aligned lumen always does.
    g.lumen = Ellipse::from_axes(center, ra * a, rb * b, angle);
    for (int attempt = 0; attempt < 64; ++attempt) {
        const double dir = uniform(rng, 0.0, 2 * std::numbers::pi);
        const double dist = uniform(rng, 0.0, 0.3) * std::min(a, b);
        const Ellipse cand = Ellipse::from_axes(center + dist * Vec2(std::cos(dir), std::sin(dir)), ra * a, rb * b,
                                                angle + uniform(rng, -0.3, 0.3));
        bool inside = true;
        for (int k = 0; k < 72 && inside; ++k) {
            const Vec2 d = cand.boundary_point(k * std::numbers::pi / 36) - g.eem.center;
            inside = d.dot(g.eem.q * d) <= 0.85 * 0.85;
        }
        if (inside) {
            g.lumen = cand;
            break;
        }
    }

    const int wedges = std::uniform_int_distribution<int>(0, 2)(rng);
    const double eem_radius = mean_radius(g.eem);
    g.catheter = Vec2(n / 2, n / 2);
    g.catheter_radius = 0.04 * n;
    for (int i = 0; i < wedges; ++i) {
        ShadowWedge s;
        s.direction = uniform(rng, -std::numbers::pi, std::numbers::pi);
        s.half_width = uniform(rng, 10.0, 40.0) * std::numbers::pi / 360.0;
        s.start_radius = uniform(rng, 0.5, 0.9) * eem_radius;
        g.shadows.push_back(s);
    }
    return g;
}

LabelMap render_label(const Ellipse& eem, const Ellipse& lumen, int size)
{
    LabelMap l(1, size, size);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const Vec2 p(x + 0.5, y + 0.5);
            l(0, y, x) = lumen.contains(p) ? 2 : eem.contains(p) ? 1 : 0;
        }
    return l;
}

Sample generate_phantom(std::uint64_t seed, int size)
{
    const PhantomGeometry g = phantom_geometry(seed, size);
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    Sample s;
    s.frames = Tensor<float>({1, 3, size, size});
    s.label = render_label(g.eem, g.lumen, size);
    s.id = "phantom-" + std::to_string(seed);
    for (int f = 0; f < 3; ++f) {
        PhantomGeometry frame = g;
        if (f != 1) {
            frame.eem = jitter(g.eem, mean_radius(g.eem), rng);
            frame.lumen = jitter(g.lumen, mean_radius(g.lumen), rng);
        }
        render_frame(frame, s.frames, f, rng);
    }
    return s;
}

// ------------------------------------------------------------ augmentation

AugmentConfig AugmentConfig::identity()
{
    AugmentConfig c;
    c.translate = 0;
    c.rotate_deg = 0;
    c.scale_min = c.scale_max = 1;
    c.shear_deg = 0;
    c.flip_lr_p = c.flip_ud_p = c.swap_p = 0;
    return c;
}

void AugmentConfig::validate() const
{
    if (translate < 0 || rotate_deg < 0 || shear_deg < 0 || shear_deg >= 90)
        throw UsageError("augment config: translate/rotate/shear ranges must be >= 0 (shear < 90)");
    if (!(scale_min > 0 && scale_min <= scale_max))
        throw UsageError("augment config: need 0 < scale_min <= scale_max");
    for (double p : {flip_lr_p, flip_ud_p, swap_p})
        if (!(p >= 0 && p <= 1))
            throw UsageError("augment config: probabilities must be in [0, 1]");
}

std::pair<Eigen::Matrix2d, Eigen::Vector2d> Augmentation::absolute(int h, int w) const
{
    const Vec2 c(w / 2.0, h / 2.0);
    return {m, c - m * c + t};
}

Augmentation draw_augmentation(std::uint64_t seed, const AugmentConfig& cfg, int size)
{
    cfg.validate();
    std::mt19937_64 rng(seed);
    const double deg = std::numbers::pi / 180.0;
    const double angle = uniform(rng, -cfg.rotate_deg, cfg.rotate_deg) * deg;
    const double scale = uniform(rng, cfg.scale_min, cfg.scale_max);
    const double shear = uniform(rng, -cfg.shear_deg, cfg.shear_deg) * deg;
    const Vec2 t(uniform(rng, -cfg.translate, cfg.translate) * size, uniform(rng, -cfg.translate, cfg.translate) * size);
    const bool lr = std::bernoulli_distribution(cfg.flip_lr_p)(rng);
    const bool ud = std::bernoulli_distribution(cfg.flip_ud_p)(rng);
    const bool swap = std::bernoulli_distribution(cfg.swap_p)(rng);

    Mat2 sh = Mat2::Identity();
    sh(0, 1) = std::tan(shear);
    const Mat2 flip = Vec2(lr ? -1.0 : 1.0, ud ? -1.0 : 1.0).asDiagonal();
    Augmentation a;
    a.m = flip * rotation(angle) * (scale * sh);
    a.t = t;
    a.swap_frames = swap;
    return a;
}

Sample apply_augmentation(const Sample& s, const Augmentation& a)
{
    Sample out = s;
    const std::int64_t h = s.label.h;
    const std::int64_t w = s.label.w;
    if (!a.is_identity()) {
        const auto [m, b] = a.absolute(static_cast<int>(h), static_cast<int>(w));
        const Mat2 inv = m.inverse();
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x) {
                const Vec2 p = inv * (Vec2(x + 0.5, y + 0.5) - b);
                const auto lx = static_cast<std::int64_t>(std::floor(p.x()));
                const auto ly = static_cast<std::int64_t>(std::floor(p.y()));
                out.label(0, y, x) = (lx >= 0 && lx < w && ly >= 0 && ly < h) ? s.label(0, ly, lx) : 0;

                const double u = p.x() - 0.5;
                const double v = p.y() - 0.5;
                const auto x0 = static_cast<std::int64_t>(std::floor(u));
                const auto y0 = static_cast<std::int64_t>(std::floor(v));
                const double fx = u - static_cast<double>(x0);
                const double fy = v - static_cast<double>(y0);
                for (std::int64_t c = 0; c < 3; ++c) {
                    auto at = [&](std::int64_t yy, std::int64_t xx) -> double {
                        return (xx >= 0 && xx < w && yy >= 0 && yy < h) ? s.frames(0, c, yy, xx) : 0.0;
                    };
                    const double val = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
                                       fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
                    out.frames(0, c, y, x) = static_cast<float>(val);
                }
            }
    }
    if (a.swap_frames)
        for (std::int64_t i = 0; i < h * w; ++i)
            std::swap(out.frames[i], out.frames[2 * h * w + i]);
    return out;
}

Sample augment(const Sample& s, std::uint64_t seed, const AugmentConfig& cfg)
{
    return apply_augmentation(s, draw_augmentation(seed, cfg, static_cast<int>(s.label.w)));
}

} // namespace csdn
