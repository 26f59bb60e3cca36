#pragma once

#include "csdn/dataset.hpp"
#include "csdn/labels.hpp"
#include "csdn/network.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace csdn {

/// Binary (h, w) mask.
struct Mask {
    std::int64_t h = 0;
    std::int64_t w = 0;
    std::vector<std::uint8_t> values;

    Mask() = default;
    Mask(std::int64_t h_, std::int64_t w_) : h(h_), w(w_), values(static_cast<std::size_t>(h_ * w_), 0) {}

    std::uint8_t& operator()(std::int64_t y, std::int64_t x) { return values[static_cast<std::size_t>(y * w + x)]; }
    [[nodiscard]] bool operator()(std::int64_t y, std::int64_t x) const
    {
        return values[static_cast<std::size_t>(y * w + x)] != 0;
    }
    [[nodiscard]] std::int64_t count() const;
    [[nodiscard]] bool empty() const { return count() == 0; }
};

struct RegionMasks {
    Mask lumen; ///< label 2
    Mask eem;   ///< label 1 or 2
};

/// Masks of image `index` of a label map. Throws DataError on values > 2.
RegionMasks region_masks(const LabelMap& l, std::int64_t index = 0);

/// 2|a∩b| / (|a|+|b|), 1 when both are empty.
double dsc(const Mask& a, const Mask& b);
/// |a∩b| / |a∪b|, 1 when both are empty.
double iou(const Mask& a, const Mask& b);

/// Mask pixels with a 4-neighbour outside the mask; pixels beyond the
/// image border count as outside. Returned as (y, x) in row-major order.
std::vector<std::pair<std::int64_t, std::int64_t>> boundary_pixels(const Mask& m);

/// Linear interpolation between order statistics at rank q (n - 1).
double percentile(std::vector<double> values, double q);

/// 95th percentile of the pooled directed boundary distances, in mm.
/// Throws DataError ("undefined distance") when either mask is empty.
double hd95(const Mask& a, const Mask& b, double spacing_mm);

/// Symmetric Hausdorff distance between boundaries, in mm.
double hausdorff(const Mask& a, const Mask& b, double spacing_mm);

struct RegionMetrics {
    double dsc = 0.0;
    double iou = 0.0;
    double hd95_mm = 0.0;
    bool hd95_defined = false;
};

struct SampleMetrics {
    std::string id;
    RegionMetrics lumen;
    RegionMetrics eem;
};

struct RegionSummary {
    double dsc = 0.0;
    double iou = 0.0;
    double hd95_mm = 0.0; ///< NaN when no sample had a defined distance
    int hd95_samples = 0;
};

struct MetricsReport {
    std::vector<SampleMetrics> samples;
    RegionSummary lumen;
    RegionSummary eem;
    /// Per-region counts of samples left out of the HD95 mean because a
    /// mask was empty.
    int hd95_excluded_lumen = 0;
    int hd95_excluded_eem = 0;
    double fps = 0.0;
    double latency_p50_ms = 0.0;
    double latency_p95_ms = 0.0;
};

SampleMetrics sample_metrics(const std::string& id, const LabelMap& pred, const LabelMap& truth, double spacing_mm,
                             std::int64_t index = 0);

/// Per-sample metrics averaged over the list; empty-mask samples count
/// for DSC/IoU and are excluded from HD95 means.
MetricsReport summarize(std::vector<SampleMetrics> samples);

/// Per-pixel argmax over classes, ties going to the lower class.
template <typename Scalar>
LabelMap argmax_labels(const Tensor<Scalar>& logits);

/// Eval-mode predictions for a list of samples.
template <typename Scalar>
std::vector<LabelMap> predict(Network<Scalar>& net, const std::vector<const Sample*>& samples, int batch_size);

/// Evaluates one split. Throws UsageError when the split is empty.
template <typename Scalar>
MetricsReport evaluate(Network<Scalar>& net, const Dataset& ds, Split split, int batch_size = 8);

/// Ground truth scored against itself.
MetricsReport evaluate_oracle(const Dataset& ds, Split split);

struct FpsResult {
    double fps = 0.0;
    double p50_ms = 0.0;
    double p95_ms = 0.0;
    int batch = 0;
    int iters = 0;
};

/// Times eval-mode forwards on a fixed random input. Throws UsageError
/// unless warmup >= 1 and timed >= 10.
template <typename Scalar>
FpsResult fps_benchmark(Network<Scalar>& net, int size, int batch, int warmup_iters, int timed_iters);

/// "sample_id,region,dsc,iou,hd95_mm", one row per sample and region;
/// undefined distances are written as "nan".
void write_report_csv(std::ostream& os, const MetricsReport& r);
/// Table-style summary: region, DSC, IoU, HD95, plus FPS when measured.
std::string summary_text(const MetricsReport& r);

} // namespace csdn
