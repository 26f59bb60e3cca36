#pragma once

#include "csdn/autodiff.hpp"

#include <functional>
#include <string>
#include <vector>

namespace csdn {

struct GradCheckOptions {
    /// Largest step tried; halved until three successive stencils agree.
    double initial_step = 1e-2;
    int max_refinements = 14;
    /// Check at most this many entries per tensor (evenly strided); 0 = all.
    std::int64_t max_entries = 0;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::int64_t checked = 0;
    std::string worst; ///< "<tensor>[<index>]" of the largest relative error
    bool passed = false;
};

/// A tensor perturbed in place by the checker, with its analytic gradient.
struct GradCheckTarget {
    std::string name;
    Tensor<double>* value = nullptr;
    Tensor<double> analytic;
};

/// Compares analytic gradients against adaptive fourth-order central
/// differences of `eval`. Relative error per entry is
/// |g_ad - g_fd| / (|g_ad| + |g_fd| + 1e-12). Throws NumericError when two
/// evaluations at the same point differ (non-deterministic objective).
GradCheckReport finite_diff_check(const std::function<double()>& eval, std::vector<GradCheckTarget>& targets,
                                  double tol, const GradCheckOptions& options = {});

/// Single-tensor form: `f` maps a leaf holding x to a scalar Var.
GradCheckReport finite_diff_check(const std::function<Var<double>(const Var<double>&)>& f, const Tensor<double>& x,
                                  double tol, const GradCheckOptions& options = {});

} // namespace csdn
