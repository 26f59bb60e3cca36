#pragma once

#include "csdn/network.hpp"
#include "csdn/optim.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>

namespace csdn {

inline constexpr std::uint16_t kCheckpointVersion = 1;

/// Where a training run stands between epochs.
struct TrainerState {
    int epoch = 0; ///< next epoch to run
    std::int64_t global_step = 0;
    std::uint64_t seed = 0;
    double best_val_dsc = -1.0;

    friend bool operator==(const TrainerState&, const TrainerState&) = default;
};

template <typename Scalar>
struct Checkpoint {
    NetworkConfig config;
    ParameterStore<Scalar> parameters;
    std::optional<OptimizerState<Scalar>> optimizer;
    std::optional<TrainerState> trainer;
};

/// Binary little-endian file: "CSDN", u16 version, network config, a PARM
/// section (name, dtype, kind, rank, dims, raw values per parameter, running
/// statistics included), optional OPTM and TRLR sections, "END!".
template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const Network<Scalar>& net,
                     const OptimizerState<Scalar>* optimizer = nullptr, const TrainerState* trainer = nullptr);

/// Throws DataError on a bad magic, version mismatch or truncated file.
/// Stored values are converted to Scalar when the dtypes differ.
template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::filesystem::path& path);

/// Copies stored values into `net`. Throws ShapeError naming the parameter
/// when shapes differ and DataError on names either side lacks.
template <typename Scalar>
void load_weights(Network<Scalar>& net, const ParameterStore<Scalar>& stored);

} // namespace csdn
