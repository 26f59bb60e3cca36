#include "csdn/train.hpp"

#include "csdn/errors.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>

namespace csdn {

void TrainConfig::validate() const
{
    if (epochs < 1)
        throw UsageError("epochs must be >= 1");
    if (batch_size < 1)
        throw UsageError("batch_size must be >= 1");
    if (lr_step < 1)
        throw UsageError("lr_step must be >= 1");
    if (!(lr_factor > 0 && lr_factor <= 1))
        throw UsageError("lr_factor must be in (0, 1]");
    if (val_every < 1 || checkpoint_every < 1)
        throw UsageError("val_every and checkpoint_every must be >= 1");
    adam.validate();
    augment.validate();
}

double lr_at_epoch(int epoch, const TrainConfig& cfg)
{
    if (epoch < 0)
        throw UsageError("epoch must be >= 0");
    return cfg.adam.lr0 * std::pow(cfg.lr_factor, epoch / cfg.lr_step);
}

void write_log_header(std::ostream& os) { os << "epoch,loss,lr,val_dsc_lumen,val_dsc_eem,val_hd95_lumen,val_hd95_eem\n"; }

void write_log_row(std::ostream& os, const EpochRecord& r)
{
    auto num = [&](double v) {
        if (std::isnan(v))
            os << "nan";
        else
            os << v;
    };
    const auto flags = os.flags();
    const auto prec = os.precision(10);
    os << r.epoch << ',';
    num(r.loss);
    os << ',';
    num(r.lr);
    for (double v : {r.val_dsc_lumen, r.val_dsc_eem, r.val_hd95_lumen, r.val_hd95_eem}) {
        os << ',';
        num(v);
    }
    os << '\n';
    os.flags(flags);
    os.precision(prec);
}

namespace {

template <typename Scalar>
Tensor<Scalar> to_scalar(const Tensor<float>& t)
{
    if constexpr (std::is_same_v<Scalar, float>) {
        return t;
    } else {
        return t.template cast<Scalar>();
    }
}

std::string join(const std::vector<std::string>& ids)
{
    std::string s;
    for (const auto& id : ids)
        s += (s.empty() ? "" : ",") + id;
    return s;
}

} // namespace

template <typename Scalar>
TrainResult train(Network<Scalar>& net, const Dataset& ds, const TrainConfig& cfg, const LossConfig& loss_cfg,
                  OptimizerState<Scalar>& opt, TrainerState& state, const TrainOptions& options)
{
    cfg.validate();
    loss_cfg.validate(net.config().num_classes);
    const BatchStream stream(ds, Split::train, cfg.batch_size, cfg.seed,
                             cfg.augment_enabled ? std::optional<AugmentConfig>(cfg.augment) : std::nullopt);
    if (stream.sample_count() == 0)
        throw UsageError("train split is empty");
    const bool has_val = !ds.manifest.ids(Split::val).empty();
    std::ostream* log = options.log;

    std::ofstream csv;
    if (!options.out_dir.empty()) {
        std::filesystem::create_directories(options.out_dir);
        const auto path = options.out_dir / "log.csv";
        const bool append = state.epoch > 0 && std::filesystem::exists(path);
        csv.open(path, append ? std::ios::app : std::ios::trunc);
        if (!csv)
            throw DataError("cannot write " + path.string());
        if (!append)
            write_log_header(csv);
    }

    TrainResult result;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (int epoch = state.epoch; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at_epoch(epoch, cfg);
        double loss_sum = 0.0;
        int steps = 0;
        for (std::size_t bi = 0; bi < stream.batch_count(); ++bi) {
            if (options.max_steps > 0 && state.global_step >= options.max_steps)
                return result;
            const Batch batch = stream.batch(epoch, bi);
            if (batch.frames.shape().n < 2) {
                ++result.skipped_batches;
                if (log)
                    *log << "warning: epoch " << epoch << " batch " << bi << " skipped: a single sample ("
                         << join(batch.ids) << ") cannot supply batch statistics\n";
                continue;
            }
            const std::string where =
                "epoch " + std::to_string(epoch) + " batch " + std::to_string(bi) + " (samples " + join(batch.ids) + ")";
            double value = 0.0;
            std::map<std::string, Tensor<Scalar>> grads;
            try {
                const CsdnOutput<Scalar> out = net.forward(to_scalar<Scalar>(batch.frames), {Mode::train});
                const Var<Scalar> loss = hybrid_loss(out, batch.labels, loss_cfg);
                value = static_cast<double>(loss.value()[0]);
                if (!std::isfinite(value))
                    throw NumericError("non-finite loss");
                grads = backward(loss);
            } catch (const NumericError& e) {
                throw NumericError(std::string(e.what()) + " at " + where);
            }
            adam_step(net.parameters(), grads, opt, cfg.adam, lr);
            ++state.global_step;
            loss_sum += value;
            ++steps;
            result.step_losses.push_back(value);
        }

        EpochRecord rec{epoch, steps > 0 ? loss_sum / steps : nan, lr, nan, nan, nan, nan};
        const bool last = epoch + 1 == cfg.epochs;
        state.epoch = epoch + 1;
        bool improved = false;
        if (has_val && ((epoch + 1) % cfg.val_every == 0 || last)) {
            MetricsReport r = evaluate(net, ds, Split::val, cfg.batch_size);
            rec.val_dsc_lumen = r.lumen.dsc;
            rec.val_dsc_eem = r.eem.dsc;
            rec.val_hd95_lumen = r.lumen.hd95_mm;
            rec.val_hd95_eem = r.eem.hd95_mm;
            const double score = 0.5 * (r.lumen.dsc + r.eem.dsc);
            if (score > state.best_val_dsc) {
                state.best_val_dsc = score;
                improved = true;
            }
            result.last_validation = std::move(r);
        }
        result.epochs.push_back(rec);
        if (csv) {
            write_log_row(csv, rec);
            csv.flush();
        }
        if (log) {
            *log << std::fixed << std::setprecision(5) << "epoch " << epoch << " loss " << rec.loss << " lr "
                 << std::setprecision(6) << lr;
            if (!std::isnan(rec.val_dsc_lumen))
                *log << std::setprecision(4) << " val dsc lumen " << rec.val_dsc_lumen << " eem " << rec.val_dsc_eem
                     << " hd95 lumen " << rec.val_hd95_lumen << " eem " << rec.val_hd95_eem;
            *log << std::defaultfloat << '\n';
        }
        if (!options.out_dir.empty()) {
            if (improved || (!has_val && last))
                save_checkpoint(options.out_dir / "best.ckpt", net, &opt, &state);
            if ((epoch + 1) % cfg.checkpoint_every == 0 || last)
                save_checkpoint(options.out_dir / "last.ckpt", net, &opt, &state);
        }
    }
    return result;
}

template TrainResult train(Network<float>&, const Dataset&, const TrainConfig&, const LossConfig&,
                           OptimizerState<float>&, TrainerState&, const TrainOptions&);
template TrainResult train(Network<double>&, const Dataset&, const TrainConfig&, const LossConfig&,
                           OptimizerState<double>&, TrainerState&, const TrainOptions&);

} // namespace csdn
