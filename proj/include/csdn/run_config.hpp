#pragma once

#include "csdn/losses.hpp"
#include "csdn/network.hpp"
#include "csdn/train.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>

namespace csdn {

/// Everything a run can set from a flat "key = value" file.
struct RunConfig {
    NetworkConfig network;
    TrainConfig train;
    LossConfig loss;
    /// Seed of the parameter initializer.
    std::uint64_t init_seed = 0;
    /// Expected dataset image size; 0 accepts whatever the data holds.
    int image_size = 0;
    std::filesystem::path data_dir;
    std::filesystem::path out_dir;

    void validate() const;
};

/// Parses "key = value" lines; '#' starts a comment, blank lines are
/// skipped. Unknown or repeated keys and unparsable values throw
/// UsageError citing `source` and the line number. "preset" (reference or
/// tiny) is applied before the other network keys whatever its position.
RunConfig parse_run_config(std::istream& in, const std::string& source = "config");
RunConfig load_run_config(const std::filesystem::path& path);

/// Every key with its effective value, one "key = value" per line, in a
/// form parse_run_config reads back.
std::string format_run_config(const RunConfig& cfg);

} // namespace csdn
