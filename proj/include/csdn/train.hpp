#pragma once

#include "csdn/checkpoint.hpp"
#include "csdn/dataset.hpp"
#include "csdn/losses.hpp"
#include "csdn/metrics.hpp"
#include "csdn/optim.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

namespace csdn {

struct TrainConfig {
    int epochs = 300;
    int batch_size = 16;
    int lr_step = 100;
    double lr_factor = 0.5;
    std::uint64_t seed = 0;
    /// Validate every this many epochs (and after the last one).
    int val_every = 1;
    /// Write last.ckpt every this many epochs (and after the last one).
    int checkpoint_every = 1;
    AdamConfig adam;
    AugmentConfig augment;
    bool augment_enabled = true;

    void validate() const;
};

/// lr0 * factor^floor(e / lr_step).
double lr_at_epoch(int epoch, const TrainConfig& cfg);

struct EpochRecord {
    int epoch = 0;
    double loss = 0.0; ///< mean over the epoch's steps
    double lr = 0.0;
    /// NaN on epochs without validation.
    double val_dsc_lumen = 0.0;
    double val_dsc_eem = 0.0;
    double val_hd95_lumen = 0.0;
    double val_hd95_eem = 0.0;
};

struct TrainOptions {
    /// When set: log.csv, last.ckpt and best.ckpt are written here.
    std::filesystem::path out_dir;
    std::ostream* log = nullptr;
    /// Stop once the global step count reaches this (0 = no limit).
    std::int64_t max_steps = 0;
};

struct TrainResult {
    std::vector<EpochRecord> epochs;
    std::vector<double> step_losses;
    std::optional<MetricsReport> last_validation;
    int skipped_batches = 0;
};

/// Runs epochs state.epoch .. cfg.epochs - 1. Batches of one sample are
/// skipped with a warning (batch statistics need two). A non-finite loss
/// throws NumericError naming the epoch, batch and sample ids.
template <typename Scalar>
TrainResult train(Network<Scalar>& net, const Dataset& ds, const TrainConfig& cfg, const LossConfig& loss_cfg,
                  OptimizerState<Scalar>& opt, TrainerState& state, const TrainOptions& options = {});

/// "epoch,loss,lr,val_dsc_lumen,val_dsc_eem,val_hd95_lumen,val_hd95_eem"
void write_log_header(std::ostream& os);
void write_log_row(std::ostream& os, const EpochRecord& r);

} // namespace csdn
