#include "csdn/losses.hpp"

#include "csdn/errors.hpp"
#include "csdn/ops.hpp"

#include <Eigen/Core>

#include <cmath>
#include <string>

namespace csdn {

void LossConfig::validate(int num_classes) const
{
    if (!(focal_gamma >= 0.0))
        throw UsageError("loss config: focal_gamma must be >= 0");
    if (!(dice_eps > 0.0))
        throw UsageError("loss config: dice_eps must be > 0");
    if (!(aux_weight >= 0.0))
        throw UsageError("loss config: aux_weight must be >= 0");
    if (!focal_alpha.empty() && static_cast<int>(focal_alpha.size()) != num_classes)
        throw UsageError("loss config: focal_alpha needs " + std::to_string(num_classes) + " values");
    for (double a : focal_alpha)
        if (!(a > 0.0))
            throw UsageError("loss config: focal_alpha values must be > 0");
}

namespace {

template <typename Scalar>
void check_labels(const Var<Scalar>& logits, const LabelMap& labels)
{
    const Shape s = logits.shape();
    if (labels.n != s.n || labels.h != s.h || labels.w != s.w)
        throw ShapeError("loss: logits " + s.str() + " vs labels (" + std::to_string(labels.n) + "," +
                         std::to_string(labels.h) + "," + std::to_string(labels.w) + ")");
    if (static_cast<std::int64_t>(labels.values.size()) != labels.size())
        throw ShapeError("loss: label buffer size mismatch");
    for (auto v : labels.values)
        if (v >= s.c)
            throw DataError("loss: label " + std::to_string(v) + " outside [0," + std::to_string(s.c) + ")");
}

/// Channel softmax, with log p of the labelled class per pixel.
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& z, const LabelMap& labels, std::vector<double>* log_py)
{
    const Shape s = z.shape();
    const std::int64_t hw = s.plane();
    Tensor<Scalar> p(s);
    if (log_py)
        log_py->assign(static_cast<std::size_t>(s.n * hw), 0.0);
    std::vector<double> e(static_cast<std::size_t>(s.c));
    for (std::int64_t b = 0; b < s.n; ++b)
        for (std::int64_t i = 0; i < hw; ++i) {
            const Scalar* zp = z.data() + b * s.c * hw + i;
            double mx = zp[0];
            for (std::int64_t k = 1; k < s.c; ++k)
                mx = std::max(mx, static_cast<double>(zp[k * hw]));
            double total = 0;
            for (std::int64_t k = 0; k < s.c; ++k) {
                e[k] = std::exp(static_cast<double>(zp[k * hw]) - mx);
                total += e[k];
            }
            Scalar* pp = p.data() + b * s.c * hw + i;
            for (std::int64_t k = 0; k < s.c; ++k)
                pp[k * hw] = static_cast<Scalar>(e[k] / total);
            if (log_py) {
                const auto y = labels.values[static_cast<std::size_t>(b * hw + i)];
                (*log_py)[static_cast<std::size_t>(b * hw + i)] = static_cast<double>(zp[y * hw]) - mx - std::log(total);
            }
        }
    return p;
}

// q^gamma with repeated multiplication for small integer gamma.
double power(double q, double gamma)
{
    if (gamma == std::floor(gamma) && gamma >= 0.0 && gamma <= 8.0) {
        double r = 1.0;
        for (int i = 0; i < static_cast<int>(gamma); ++i)
            r *= q;
        return r;
    }
    return std::pow(q, gamma);
}

template <typename Scalar>
bool recording(const Var<Scalar>& v)
{
    return grad_enabled() && v.requires_grad();
}

struct LossValues {
    double focal = 0.0;
    double dice = 0.0;
};

// Value-only focal and dice losses from one vectorised softmax pass, without
// the tensors the backward closures need.
template <typename Scalar>
LossValues loss_values(const Tensor<Scalar>& z, const LabelMap& labels, const LossConfig& cfg)
{
    using Plane = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
    const Shape s = z.shape();
    const std::int64_t hw = s.plane();
    const auto kc = static_cast<std::size_t>(s.c);
    std::vector<Eigen::ArrayXd> e(kc);
    std::vector<double> inter(kc), mass(kc), truth(kc);
    Eigen::ArrayXd mx(hw), se(hw), log_se(hw), inv_se(hw), p_y(hw), z_y(hw), lp(hw), alpha(hw), q(hw), weight(hw);
    const bool gamma_int = cfg.focal_gamma == std::floor(cfg.focal_gamma) && cfg.focal_gamma <= 8.0;
    double focal = 0;
    for (std::int64_t b = 0; b < s.n; ++b) {
        auto plane = [&](std::size_t k) {
            return Plane(z.data() + (b * s.c + static_cast<std::int64_t>(k)) * hw, hw).template cast<double>();
        };
        mx = plane(0);
        for (std::size_t k = 1; k < kc; ++k)
            mx = mx.max(plane(k));
        se.setZero();
        for (std::size_t k = 0; k < kc; ++k) {
            e[k] = (plane(k) - mx).exp();
            se += e[k];
        }
        log_se = se.log();
        inv_se = se.inverse();
        for (std::size_t k = 0; k < kc; ++k)
            mass[k] += (e[k] * inv_se).sum();
        const std::uint8_t* yb = labels.values.data() + b * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
            const std::size_t k = yb[i];
            p_y[i] = e[k][i] * inv_se[i];
            z_y[i] = static_cast<double>(z.data()[(b * s.c + static_cast<std::int64_t>(k)) * hw + i]);
            alpha[i] = cfg.focal_alpha.empty() ? 1.0 : cfg.focal_alpha[k];
            inter[k] += p_y[i];
            truth[k] += 1.0;
        }
        lp = z_y - mx - log_se;
        q = 1.0 - p_y;
        weight = alpha;
        if (gamma_int)
            for (int i = 0; i < static_cast<int>(cfg.focal_gamma); ++i)
                weight *= q;
        else
            weight *= q.pow(cfg.focal_gamma);
        focal -= (weight * lp).sum();
    }
    double total = 0;
    std::int64_t present = 0;
    for (std::size_t k = 0; k < kc; ++k)
        if (truth[k] > 0.0) {
            total += (2.0 * inter[k] + cfg.dice_eps) / (mass[k] + truth[k] + cfg.dice_eps);
            ++present;
        }
    return {focal / static_cast<double>(s.n * hw), present > 0 ? 1.0 - total / static_cast<double>(present) : 0.0};
}

template <typename Scalar>
Var<Scalar> scalar_constant(double v)
{
    return Var<Scalar>::constant(Tensor<Scalar>::scalar(static_cast<Scalar>(v)));
}

} // namespace

template <typename Scalar>
Var<Scalar> focal_loss(const Var<Scalar>& logits, const LabelMap& labels, const LossConfig& cfg)
{
    check_labels(logits, labels);
    const Shape s = logits.shape();
    cfg.validate(static_cast<int>(s.c));
    const std::int64_t hw = s.plane();
    const double count = static_cast<double>(s.n * hw);
    const double gamma = cfg.focal_gamma;
    if (!recording(logits))
        return scalar_constant<Scalar>(loss_values(logits.value(), labels, cfg).focal);

    std::vector<double> log_py;
    Tensor<Scalar> p = softmax(logits.value(), labels, &log_py);
    // dL_pixel/dz_k = coef * (delta_ky - p_k)
    std::vector<double> coef(log_py.size());
    double total = 0;
    for (std::size_t i = 0; i < log_py.size(); ++i) {
        const double lp = log_py[i];
        const double q = -std::expm1(lp);
        const double a = cfg.focal_alpha.empty() ? 1.0 : cfg.focal_alpha[labels.values[i]];
        const double qg = power(q, gamma);
        total += -a * qg * lp;
        double slope = 0.0;
        if (gamma != 0.0) {
            // gamma q^(gamma-1) p log p, written to stay finite as q -> 0
            const double ratio = q < 1e-12 ? -1.0 : lp / q;
            slope = gamma * qg * std::exp(lp) * ratio;
        }
        coef[i] = a * (slope - qg);
    }

    return record<Scalar>("focal_loss", Tensor<Scalar>::scalar(static_cast<Scalar>(total / count)), {logits},
                          [p = std::move(p), coef = std::move(coef), labels, s, hw, count](Node<Scalar>& self) {
                              Tensor<Scalar>* gz = self.input_grad(0);
                              if (!gz)
                                  return;
                              const double g = static_cast<double>(self.grad[0]) / count;
                              for (std::int64_t b = 0; b < s.n; ++b)
                                  for (std::int64_t i = 0; i < hw; ++i) {
                                      const auto px = static_cast<std::size_t>(b * hw + i);
                                      const double c = g * coef[px];
                                      const auto y = labels.values[px];
                                      for (std::int64_t k = 0; k < s.c; ++k) {
                                          const std::int64_t o = (b * s.c + k) * hw + i;
                                          const double delta = k == y ? 1.0 : 0.0;
                                          (*gz)[o] += static_cast<Scalar>(c * (delta - static_cast<double>(p[o])));
                                      }
                                  }
                          });
}

template <typename Scalar>
Var<Scalar> dice_loss(const Var<Scalar>& logits, const LabelMap& labels, const LossConfig& cfg)
{
    check_labels(logits, labels);
    const Shape s = logits.shape();
    cfg.validate(static_cast<int>(s.c));
    const std::int64_t hw = s.plane();
    const double eps = cfg.dice_eps;
    if (!recording(logits))
        return scalar_constant<Scalar>(loss_values(logits.value(), labels, cfg).dice);
    Tensor<Scalar> p = softmax<Scalar>(logits.value(), labels, nullptr);

    std::vector<double> inter(static_cast<std::size_t>(s.c)), mass(inter.size()), truth(inter.size());
    for (std::int64_t b = 0; b < s.n; ++b)
        for (std::int64_t k = 0; k < s.c; ++k)
            for (std::int64_t i = 0; i < hw; ++i) {
                const double pk = p[(b * s.c + k) * hw + i];
                const bool gk = labels.values[static_cast<std::size_t>(b * hw + i)] == k;
                mass[k] += pk;
                if (gk) {
                    inter[k] += pk;
                    truth[k] += 1.0;
                }
            }
    std::int64_t present = 0;
    for (double t : truth)
        present += t > 0.0;
    // u_k(pixel) = scale_k * (2 g_k - D_k) for present classes, else 0.
    std::vector<double> dice(inter.size()), scale_k(inter.size());
    double total = 0;
    for (std::size_t k = 0; k < inter.size(); ++k) {
        if (truth[k] == 0.0)
            continue;
        const double denom = mass[k] + truth[k] + eps;
        dice[k] = (2.0 * inter[k] + eps) / denom;
        scale_k[k] = -1.0 / (static_cast<double>(present) * denom);
        total += dice[k];
    }
    const double loss = present > 0 ? 1.0 - total / static_cast<double>(present) : 0.0;

    return record<Scalar>(
        "dice_loss", Tensor<Scalar>::scalar(static_cast<Scalar>(loss)), {logits},
        [p = std::move(p), dice = std::move(dice), scale_k = std::move(scale_k), labels, s, hw](Node<Scalar>& self) {
            Tensor<Scalar>* gz = self.input_grad(0);
            if (!gz)
                return;
            const double g = self.grad[0];
            std::vector<double> u(static_cast<std::size_t>(s.c));
            for (std::int64_t b = 0; b < s.n; ++b)
                for (std::int64_t i = 0; i < hw; ++i) {
                    const auto y = labels.values[static_cast<std::size_t>(b * hw + i)];
                    double pu = 0;
                    for (std::int64_t k = 0; k < s.c; ++k) {
                        u[k] = scale_k[k] * ((k == y ? 2.0 : 0.0) - dice[k]);
                        pu += static_cast<double>(p[(b * s.c + k) * hw + i]) * u[k];
                    }
                    for (std::int64_t k = 0; k < s.c; ++k) {
                        const std::int64_t o = (b * s.c + k) * hw + i;
                        (*gz)[o] += static_cast<Scalar>(g * static_cast<double>(p[o]) * (u[k] - pu));
                    }
                }
        });
}

template <typename Scalar>
Var<Scalar> hybrid_loss(const CsdnOutput<Scalar>& out, const LabelMap& labels, const LossConfig& cfg)
{
    auto term = [&](const Var<Scalar>& logits) {
        if (recording(logits))
            return add(focal_loss(logits, labels, cfg), dice_loss(logits, labels, cfg));
        check_labels(logits, labels);
        cfg.validate(static_cast<int>(logits.shape().c));
        const LossValues v = loss_values(logits.value(), labels, cfg);
        return scalar_constant<Scalar>(v.focal + v.dice);
    };
    Var<Scalar> total = term(out.main_logits);
    if (cfg.aux_weight > 0.0)
        for (const auto& a : out.aux_logits)
            total = add(total, scale(term(a), static_cast<Scalar>(cfg.aux_weight)));
    return total;
}

#define CSDN_INSTANTIATE(S)                                                                                            \
    template Var<S> focal_loss(const Var<S>&, const LabelMap&, const LossConfig&);                                     \
    template Var<S> dice_loss(const Var<S>&, const LabelMap&, const LossConfig&);                                      \
    template Var<S> hybrid_loss(const CsdnOutput<S>&, const LabelMap&, const LossConfig&);

CSDN_INSTANTIATE(float)
CSDN_INSTANTIATE(double)

} // namespace csdn
