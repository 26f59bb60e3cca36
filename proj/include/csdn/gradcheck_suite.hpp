#pragma once

#include "csdn/gradcheck.hpp"
#include "csdn/network.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace csdn {

struct BlockCheck {
    std::string block;
    GradCheckReport report;
    double seconds = 0.0;
};

struct GradCheckSuiteOptions {
    double tol = 1e-4;
    std::uint64_t seed = 7;
    /// Per-tensor entry cap for the end-to-end check (0 = every entry).
    std::int64_t end_to_end_max_entries = 0;
    /// Progress lines, one per block as it finishes.
    std::ostream* progress = nullptr;
};

/// Finite-difference checks in double precision: every layer primitive,
/// both losses, each network block at the widths of `cfg`, and the hybrid
/// loss of the whole network on a 1x3x64x64 input.
std::vector<BlockCheck> run_gradcheck_suite(const NetworkConfig& cfg, const GradCheckSuiteOptions& options);

} // namespace csdn
