#pragma once

#include "csdn/phantom.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace csdn {

enum class Split : std::uint8_t { train, val };

std::string to_string(Split s);
/// Throws UsageError for anything but "train" / "val".
Split parse_split(const std::string& s);

struct ManifestEntry {
    std::string id;
    Split split = Split::train;
};

struct DatasetManifest {
    std::filesystem::path root;
    double spacing_mm = 0.02;
    int size = 0;
    std::vector<ManifestEntry> entries;

    /// Throws DataError on duplicate ids or an id tagged with both splits.
    void validate() const;
    [[nodiscard]] std::vector<std::string> ids(Split s) const;
};

/// Manifest plus samples, `samples[i]` belonging to `manifest.entries[i]`.
struct Dataset {
    DatasetManifest manifest;
    std::vector<Sample> samples;

    [[nodiscard]] std::vector<const Sample*> split(Split s) const;
};

/// 8-bit grayscale raster.
struct GrayImage {
    int h = 0;
    int w = 0;
    std::vector<std::uint8_t> pixels;
};

/// Binary PGM (P5, maxval 255).
void write_pgm(const std::filesystem::path& path, const GrayImage& img);
GrayImage read_pgm(const std::filesystem::path& path);

/// Nearest 8-bit level of a value clamped to [0, 1].
std::uint8_t quantize(float v);

/// n_train + n_val phantoms, sample i generated from derive_seed(seed, i).
Dataset make_phantom_dataset(int n_train, int n_val, int size, std::uint64_t seed);

/// Writes manifest.txt and one directory per sample holding
/// frame1.pgm, frame2.pgm, frame3.pgm and label.pgm.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
DatasetManifest read_manifest(const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

/// One sample directory; the label is optional and left empty when absent.
Sample load_sample_dir(const std::filesystem::path& dir, bool require_label);

struct Batch {
    Tensor<float> frames; ///< (n, 3, H, W)
    LabelMap labels;      ///< (n, H, W)
    std::vector<std::string> ids;
};

/// Batches over one split. The train split is reshuffled every epoch from
/// (seed, epoch) and augmented per sample from (seed, epoch, position);
/// the val split keeps stored order and stored pixels. Every batch is a
/// pure function of (epoch, index), so batches may be built in any order
/// or in parallel.
class BatchStream {
public:
    BatchStream(const Dataset& ds, Split split, int batch_size, std::uint64_t seed,
                std::optional<AugmentConfig> augment = AugmentConfig{});

    [[nodiscard]] std::size_t sample_count() const { return samples_.size(); }
    [[nodiscard]] std::size_t batch_count() const;
    [[nodiscard]] std::vector<std::size_t> order(int epoch) const;
    [[nodiscard]] Batch batch(int epoch, std::size_t index) const;

private:
    std::vector<const Sample*> samples_;
    Split split_;
    int batch_size_;
    std::uint64_t seed_;
    std::optional<AugmentConfig> augment_;
};

/// Stacks samples of one size into a batch.
Batch make_batch(const std::vector<const Sample*>& samples);

/// Zero-pads frames on the bottom/right to the next multiple of `multiple`.
Tensor<float> pad_to_multiple(const Tensor<float>& frames, int multiple);

} // namespace csdn
