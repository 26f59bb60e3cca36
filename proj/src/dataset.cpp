#include "csdn/dataset.hpp"

#include "csdn/errors.hpp"
#include "csdn/seeds.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace csdn {

namespace fs = std::filesystem;

std::string to_string(Split s) { return s == Split::train ? "train" : "val"; }

Split parse_split(const std::string& s)
{
    if (s == "train")
        return Split::train;
    if (s == "val")
        return Split::val;
    throw UsageError("unknown split '" + s + "' (expected train or val)");
}

void DatasetManifest::validate() const
{
    std::set<std::string> train;
    std::set<std::string> val;
    for (const auto& e : entries) {
        auto& own = e.split == Split::train ? train : val;
        const auto& other = e.split == Split::train ? val : train;
        if (other.contains(e.id))
            throw DataError("manifest: id '" + e.id + "' appears in both train and val");
        if (!own.insert(e.id).second)
            throw DataError("manifest: duplicate id '" + e.id + "'");
        if (e.id.empty() || e.id.find_first_of("/\\ \t") != std::string::npos || e.id == "." || e.id == "..")
            throw DataError("manifest: invalid sample id '" + e.id + "'");
    }
}

std::vector<std::string> DatasetManifest::ids(Split s) const
{
    std::vector<std::string> out;
    for (const auto& e : entries)
        if (e.split == s)
            out.push_back(e.id);
    return out;
}

std::vector<const Sample*> Dataset::split(Split s) const
{
    std::vector<const Sample*> out;
    for (std::size_t i = 0; i < manifest.entries.size(); ++i)
        if (manifest.entries[i].split == s)
            out.push_back(&samples[i]);
    return out;
}

// ---------------------------------------------------------------- PGM

void write_pgm(const fs::path& path, const GrayImage& img)
{
    std::ofstream f(path, std::ios::binary);
    if (!f)
        throw DataError("cannot write " + path.string());
    f << "P5\n" << img.w << ' ' << img.h << "\n255\n";
    f.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (!f)
        throw DataError("write failed: " + path.string());
}

namespace {

// Next header token, skipping whitespace and '#' comments.
std::string pgm_token(std::istream& in)
{
    std::string tok;
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n')
                c = in.get();
        } else if (std::isspace(c)) {
            if (!tok.empty())
                return tok;
        } else {
            tok.push_back(static_cast<char>(c));
        }
        c = in.get();
    }
    return tok;
}

int pgm_int(std::istream& in, const fs::path& path, const char* what)
{
    const std::string tok = pgm_token(in);
    if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](char ch) { return std::isdigit(ch); }) ||
        tok.size() > 6)
        throw DataError("malformed PGM header in " + path.string() + ": bad " + what + " '" + tok + "'");
    return std::stoi(tok);
}

} // namespace

GrayImage read_pgm(const fs::path& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw DataError("missing file: " + path.string());
    if (pgm_token(f) != "P5")
        throw DataError("malformed PGM header in " + path.string() + ": expected P5");
    GrayImage img;
    img.w = pgm_int(f, path, "width");
    img.h = pgm_int(f, path, "height");
    const int maxval = pgm_int(f, path, "maxval");
    if (img.w <= 0 || img.h <= 0)
        throw DataError("malformed PGM header in " + path.string() + ": empty image");
    if (maxval != 255)
        throw DataError("malformed PGM header in " + path.string() + ": maxval must be 255");
    img.pixels.resize(static_cast<std::size_t>(img.w) * static_cast<std::size_t>(img.h));
    f.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (f.gcount() != static_cast<std::streamsize>(img.pixels.size()))
        throw DataError("truncated PGM data in " + path.string());
    return img;
}

std::uint8_t quantize(float v)
{
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

// ---------------------------------------------------------------- datasets

Dataset make_phantom_dataset(int n_train, int n_val, int size, std::uint64_t seed)
{
    if (n_train < 0 || n_val < 0)
        throw UsageError("sample counts must be non-negative");
    Dataset ds;
    ds.manifest.size = size;
    for (int i = 0; i < n_train + n_val; ++i) {
        const bool train = i < n_train;
        std::ostringstream id;
        id << (train ? "train" : "val") << '-' << std::setw(4) << std::setfill('0') << (train ? i : i - n_train);
        Sample s = generate_phantom(derive_seed(seed, static_cast<std::uint64_t>(i)), size);
        s.id = id.str();
        s.spacing_mm = ds.manifest.spacing_mm;
        ds.manifest.entries.push_back({s.id, train ? Split::train : Split::val});
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

void save_dataset(const Dataset& ds, const fs::path& dir)
{
    ds.manifest.validate();
    fs::create_directories(dir);
    std::ofstream m(dir / "manifest.txt");
    if (!m)
        throw DataError("cannot write " + (dir / "manifest.txt").string());
    m << "csdn-dataset v1 spacing=" << ds.manifest.spacing_mm << " size=" << ds.manifest.size << '\n';
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        const auto& e = ds.manifest.entries[i];
        const Sample& s = ds.samples[i];
        m << e.id << ' ' << to_string(e.split) << '\n';
        const fs::path sd = dir / e.id;
        fs::create_directories(sd);
        const auto h = static_cast<int>(s.label.h);
        const auto w = static_cast<int>(s.label.w);
        for (int c = 0; c < 3; ++c) {
            GrayImage img{h, w, {}};
            img.pixels.reserve(static_cast<std::size_t>(h * w));
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    img.pixels.push_back(quantize(s.frames(0, c, y, x)));
            write_pgm(sd / ("frame" + std::to_string(c + 1) + ".pgm"), img);
        }
        write_pgm(sd / "label.pgm", GrayImage{h, w, s.label.values});
    }
}

DatasetManifest read_manifest(const fs::path& dir)
{
    std::ifstream f(dir / "manifest.txt");
    if (!f)
        throw DataError("missing manifest: " + (dir / "manifest.txt").string());
    DatasetManifest m;
    m.root = dir;
    std::string line;
    std::getline(f, line);
    {
        std::istringstream hs(line);
        std::string magic, version, spacing, size;
        hs >> magic >> version >> spacing >> size;
        try {
            if (magic != "csdn-dataset" || version != "v1" || spacing.rfind("spacing=", 0) != 0 ||
                size.rfind("size=", 0) != 0)
                throw std::invalid_argument("header");
            m.spacing_mm = std::stod(spacing.substr(8));
            m.size = std::stoi(size.substr(5));
        } catch (const std::exception&) {
            throw DataError("malformed manifest header: '" + line + "'");
        }
        if (!(m.spacing_mm > 0) || m.size <= 0)
            throw DataError("malformed manifest header: '" + line + "'");
    }
    int lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        std::istringstream ls(line);
        std::string id, split, extra;
        if (!(ls >> id))
            continue;
        if (!(ls >> split) || (ls >> extra) || (split != "train" && split != "val"))
            throw DataError("manifest line " + std::to_string(lineno) + ": expected '<id> <train|val>'");
        m.entries.push_back({id, parse_split(split)});
    }
    m.validate();
    return m;
}

Sample load_sample_dir(const fs::path& dir, bool require_label)
{
    Sample s;
    s.id = dir.filename().string();
    int h = 0;
    int w = 0;
    for (int c = 0; c < 3; ++c) {
        const GrayImage img = read_pgm(dir / ("frame" + std::to_string(c + 1) + ".pgm"));
        if (c == 0) {
            h = img.h;
            w = img.w;
            s.frames = Tensor<float>({1, 3, h, w});
        } else if (img.h != h || img.w != w) {
            throw DataError("frame sizes differ in " + dir.string());
        }
        for (int i = 0; i < h * w; ++i)
            s.frames[c * h * w + i] = static_cast<float>(img.pixels[static_cast<std::size_t>(i)]) / 255.0f;
    }
    const fs::path lp = dir / "label.pgm";
    if (!require_label && !fs::exists(lp))
        return s;
    GrayImage lab = read_pgm(lp);
    if (lab.h != h || lab.w != w)
        throw DataError("label size differs from frames in " + dir.string());
    if (std::any_of(lab.pixels.begin(), lab.pixels.end(), [](std::uint8_t v) { return v > 2; }))
        throw DataError("label value > 2 in " + lp.string());
    s.label = LabelMap(1, h, w);
    s.label.values = std::move(lab.pixels);
    return s;
}

Dataset load_dataset(const fs::path& dir)
{
    Dataset ds;
    ds.manifest = read_manifest(dir);
    for (const auto& e : ds.manifest.entries) {
        Sample s = load_sample_dir(dir / e.id, true);
        if (s.label.h != ds.manifest.size || s.label.w != ds.manifest.size)
            throw DataError("sample '" + e.id + "' does not match manifest size " + std::to_string(ds.manifest.size));
        s.id = e.id;
        s.spacing_mm = ds.manifest.spacing_mm;
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

// ---------------------------------------------------------------- batches

Batch make_batch(const std::vector<const Sample*>& samples)
{
    if (samples.empty())
        throw UsageError("empty batch");
    const std::int64_t h = samples.front()->label.h;
    const std::int64_t w = samples.front()->label.w;
    const auto n = static_cast<std::int64_t>(samples.size());
    Batch b;
    b.frames = Tensor<float>({n, 3, h, w});
    b.labels = LabelMap(n, h, w);
    for (std::int64_t i = 0; i < n; ++i) {
        const Sample& s = *samples[static_cast<std::size_t>(i)];
        if (s.label.h != h || s.label.w != w || s.frames.shape() != Shape{1, 3, h, w})
            throw ShapeError("batch samples differ in size");
        std::copy_n(s.frames.data(), 3 * h * w, b.frames.data() + i * 3 * h * w);
        std::copy_n(s.label.values.begin(), h * w, b.labels.values.begin() + i * h * w);
        b.ids.push_back(s.id);
    }
    return b;
}

BatchStream::BatchStream(const Dataset& ds, Split split, int batch_size, std::uint64_t seed,
                         std::optional<AugmentConfig> augment)
    : samples_(ds.split(split)), split_(split), batch_size_(batch_size), seed_(seed), augment_(std::move(augment))
{
    if (batch_size < 1)
        throw UsageError("batch_size must be >= 1");
    if (augment_)
        augment_->validate();
}

std::size_t BatchStream::batch_count() const
{
    const auto b = static_cast<std::size_t>(batch_size_);
    return (samples_.size() + b - 1) / b;
}

std::vector<std::size_t> BatchStream::order(int epoch) const
{
    std::vector<std::size_t> idx(samples_.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (split_ == Split::train) {
        std::mt19937_64 rng(derive_seed(seed_, static_cast<std::uint64_t>(epoch)));
        // Fisher-Yates written out: std::shuffle's draw sequence is
        // implementation-defined.
        for (std::size_t i = idx.size(); i > 1; --i) {
            const std::size_t j = std::uniform_int_distribution<std::size_t>(0, i - 1)(rng);
            std::swap(idx[i - 1], idx[j]);
        }
    }
    return idx;
}

Batch BatchStream::batch(int epoch, std::size_t index) const
{
    if (index >= batch_count())
        throw UsageError("batch index out of range");
    const auto idx = order(epoch);
    const std::size_t begin = index * static_cast<std::size_t>(batch_size_);
    const std::size_t end = std::min(idx.size(), begin + static_cast<std::size_t>(batch_size_));
    const bool aug = split_ == Split::train && augment_.has_value();
    std::vector<Sample> owned;
    owned.reserve(end - begin);
    std::vector<const Sample*> ptrs;
    for (std::size_t k = begin; k < end; ++k) {
        const Sample* s = samples_[idx[k]];
        if (aug) {
            const std::uint64_t epoch_seed = derive_seed(seed_ ^ 0xa5a5a5a5a5a5a5a5ULL, static_cast<std::uint64_t>(epoch));
            owned.push_back(augment(*s, derive_seed(epoch_seed, k), *augment_));
            ptrs.push_back(&owned.back());
        } else {
            ptrs.push_back(s);
        }
    }
    return make_batch(ptrs);
}

Tensor<float> pad_to_multiple(const Tensor<float>& frames, int multiple)
{
    const Shape s = frames.shape();
    const std::int64_t m = multiple;
    const std::int64_t h = (s.h + m - 1) / m * m;
    const std::int64_t w = (s.w + m - 1) / m * m;
    if (h == s.h && w == s.w)
        return frames;
    Tensor<float> out({s.n, s.c, h, w});
    for (std::int64_t n = 0; n < s.n; ++n)
        for (std::int64_t c = 0; c < s.c; ++c)
            for (std::int64_t y = 0; y < s.h; ++y)
                for (std::int64_t x = 0; x < s.w; ++x)
                    out(n, c, y, x) = frames(n, c, y, x);
    return out;
}

} // namespace csdn
