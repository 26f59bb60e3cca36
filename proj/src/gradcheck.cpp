#include "csdn/gradcheck.hpp"

#include "csdn/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace csdn {
namespace {

struct Probe {
    const std::function<double()>& eval;
    Tensor<double>& x;
    std::int64_t i;

    double at(double delta)
    {
        const double saved = x[i];
        x[i] = saved + delta;
        const double v = eval();
        x[i] = saved;
        return v;
    }
};

// Fourth-order central difference from f(x +- h), f(x +- 2h).
double stencil(double fp1, double fm1, double fp2, double fm2, double h)
{
    return (8.0 * (fp1 - fm1) - (fp2 - fm2)) / (12.0 * h);
}

struct Estimate {
    double value = 0.0;
    double gap = std::numeric_limits<double>::infinity();
    bool converged = false;
};

// f64 rounding noise of a stencil at step h, which grows as |f| eps / h.
double noise(double f_scale, double h) { return 64.0 * std::numeric_limits<double>::epsilon() * (f_scale + 1e-300) / h; }

// Levels agree within the tolerance budget or within rounding noise.
bool agrees(double gap, double fine, double tol, double f_scale, double h)
{
    return gap <= 0.05 * tol * (std::abs(fine) + 1e-12) || gap <= noise(f_scale, h);
}

// Third-order one-sided difference on side s (+1 or -1), refined by halving.
Estimate one_sided(Probe& probe, double s, double f0, const GradCheckOptions& options, double tol)
{
    auto stencil3 = [&](double h) {
        return s * (-11.0 * f0 + 18.0 * probe.at(s * h) - 9.0 * probe.at(2 * s * h) + 2.0 * probe.at(3 * s * h)) /
               (6.0 * h);
    };
    double h = options.initial_step;
    double coarse = stencil3(h);
    Estimate best;
    double coarsest = coarse;
    bool previous_ok = false;
    bool previous_quiet = false;
    for (int level = 0; level < options.max_refinements; ++level) {
        h /= 2;
        const double fine = stencil3(h);
        const double gap = std::abs(fine - coarse);
        if (gap < best.gap)
            best = {fine, gap, false};
        const bool ok = agrees(gap, fine, tol, std::abs(f0), h);
        const bool quiet = gap <= noise(std::abs(f0), h);
        if (ok && previous_ok)
            return {previous_quiet ? coarsest : quiet ? coarse : fine, gap, true};
        previous_ok = ok;
        previous_quiet = quiet;
        coarsest = coarse;
        coarse = fine;
    }
    return best;
}

double derivative(Probe& probe, const GradCheckOptions& options, double tol)
{
    double h = options.initial_step;
    double fp1 = probe.at(h);
    double fm1 = probe.at(-h);
    double fp2 = probe.at(2 * h);
    double fm2 = probe.at(-2 * h);
    double coarse = stencil(fp1, fm1, fp2, fm2, h);
    double best = coarse;
    double best_gap = std::numeric_limits<double>::infinity();
    double coarsest = coarse;
    bool previous_ok = false;
    bool previous_quiet = false;
    for (int level = 0; level < options.max_refinements; ++level) {
        // Halving reuses f(x +- h) as the new outer points.
        const double hh = h / 2;
        const double gp1 = probe.at(hh);
        const double gm1 = probe.at(-hh);
        const double fine = stencil(gp1, gm1, fp1, fm1, hh);
        const double gap = std::abs(fine - coarse);
        if (gap < best_gap) {
            best_gap = gap;
            best = fine;
        }
        // A kink inside the stencil shows up as disagreement between levels.
        // Two straddling stencils can agree loosely by chance, so a loose
        // match needs a third level; a match 50x tighter is taken at once.
        // A level that matches the next one within rounding noise is free of
        // truncation error, and the coarsest such level carries the least
        // rounding. Otherwise the finest is the most accurate.
        const double f_scale = std::max(std::abs(gp1), std::abs(gm1));
        const bool ok = agrees(gap, fine, tol, f_scale, hh);
        const bool quiet = gap <= noise(f_scale, hh);
        if (ok && previous_ok)
            return previous_quiet ? coarsest : quiet ? coarse : fine;
        if (gap <= 1e-3 * tol * std::abs(fine))
            return fine;
        previous_ok = ok;
        previous_quiet = quiet;
        coarsest = coarse;
        fp1 = gp1;
        fm1 = gm1;
        h = hh;
        coarse = fine;
    }
    // No central stencil converged: a kink lies within h of x. The side
    // facing away from it is smooth, so take whichever side converges.
    const double f0 = probe.at(0.0);
    const Estimate right = one_sided(probe, 1.0, f0, options, tol);
    const Estimate left = one_sided(probe, -1.0, f0, options, tol);
    if (right.converged || left.converged)
        return right.converged && (!left.converged || right.gap <= left.gap) ? right.value : left.value;
    return best;
}

} // namespace

GradCheckReport finite_diff_check(const std::function<double()>& eval, std::vector<GradCheckTarget>& targets,
                                  double tol, const GradCheckOptions& options)
{
    const double base = eval();
    if (eval() != base)
        throw NumericError("finite_diff_check: objective is not deterministic");

    GradCheckReport report;
    for (auto& t : targets) {
        if (!t.value || t.value->shape() != t.analytic.shape())
            throw ShapeError("finite_diff_check: target '" + t.name + "' has no value or mismatched gradient");
        const std::int64_t n = t.value->numel();
        const std::int64_t stride =
            options.max_entries > 0 && n > options.max_entries ? (n + options.max_entries - 1) / options.max_entries : 1;
        for (std::int64_t i = 0; i < n; i += stride) {
            Probe probe{eval, *t.value, i};
            const double fd = derivative(probe, options, tol);
            const double ad = t.analytic[i];
            const double abs_err = std::abs(ad - fd);
            const double rel = abs_err / (std::abs(ad) + std::abs(fd) + 1e-12);
            ++report.checked;
            report.max_abs_error = std::max(report.max_abs_error, abs_err);
            if (report.worst.empty() || rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst = t.name + "[" + std::to_string(i) + "]";
            }
        }
    }
    report.passed = report.max_rel_error < tol;
    return report;
}

GradCheckReport finite_diff_check(const std::function<Var<double>(const Var<double>&)>& f, const Tensor<double>& x,
                                  double tol, const GradCheckOptions& options)
{
    Var<double> leaf = Var<double>::leaf(x, true, "x");
    Var<double> out = f(leaf);
    if (out.shape() != Shape{1, 1, 1, 1})
        throw GraphError("finite_diff_check: objective must be scalar");
    auto grads = backward(out);

    std::vector<GradCheckTarget> targets(1);
    Tensor<double> probe = x;
    targets[0].name = "x";
    targets[0].value = &probe;
    targets[0].analytic = grads.at("x");
    auto eval = [&]() {
        NoGradGuard guard;
        return f(Var<double>::constant(probe)).value()[0];
    };
    return finite_diff_check(eval, targets, tol, options);
}

} // namespace csdn
