#include "csdn/cli.hpp"

#include "csdn/checkpoint.hpp"
#include "csdn/dataset.hpp"
#include "csdn/errors.hpp"
#include "csdn/gradcheck_suite.hpp"
#include "csdn/metrics.hpp"
#include "csdn/parallel.hpp"
#include "csdn/run_config.hpp"
#include "csdn/train.hpp"

#include <CLI11.hpp>

#include <array>
#include <fstream>
#include <iomanip>
#include <ostream>

namespace csdn {

namespace fs = std::filesystem;

namespace {

struct GenDataArgs {
    std::string out;
    int n_train = 200;
    int n_val = 50;
    int size = 128;
    std::uint64_t seed = 0;
    double spacing = 0.02;
    bool force = false;
};

struct TrainArgs {
    std::string config, data, out, resume;
};

struct EvalArgs {
    std::string weights, data, split = "val", report;
    int batch = 8;
    bool oracle = false;
};

struct InferArgs {
    std::string weights, input, out;
};

struct BenchArgs {
    std::string weights;
    std::string preset = "reference";
    int size = 896;
    int batch = 1;
    int iters = 20;
    int warmup = 2;
};

struct GradcheckArgs {
    std::string config;
    double tol = 1e-4;
    std::uint64_t seed = 7;
    std::int64_t max_entries = 0;
};

// ------------------------------------------------------------- gen-data

int gen_data(const GenDataArgs& a, std::ostream& out)
{
    if (a.size < 64 || a.size % 64 != 0)
        throw UsageError("--size " + std::to_string(a.size) + ": image size must be a positive multiple of 64");
    if (a.n_train < 0 || a.n_val < 0)
        throw UsageError("--n-train and --n-val must be >= 0");
    const fs::path dir(a.out);
    if (fs::exists(dir) && !fs::is_empty(dir)) {
        if (!a.force)
            throw UsageError("output directory " + dir.string() + " is not empty (use --force to overwrite)");
        // Only a previous dataset is cleared; unrelated files stay.
        if (fs::exists(dir / "manifest.txt")) {
            const DatasetManifest old = read_manifest(dir);
            for (const auto& e : old.entries)
                fs::remove_all(dir / e.id);
            fs::remove(dir / "manifest.txt");
        }
    }
    Dataset ds = make_phantom_dataset(a.n_train, a.n_val, a.size, a.seed);
    ds.manifest.spacing_mm = a.spacing;
    for (auto& s : ds.samples)
        s.spacing_mm = a.spacing;
    save_dataset(ds, dir);
    out << "wrote " << ds.samples.size() << " samples (" << a.n_train << " train, " << a.n_val << " val, " << a.size
        << "x" << a.size << ", seed " << a.seed << ") to " << dir.string() << '\n';
    return kExitOk;
}

// ------------------------------------------------------------- train

int train_cmd(const TrainArgs& a, std::ostream& out)
{
    RunConfig cfg = a.config.empty() ? RunConfig{} : load_run_config(a.config);
    if (!a.data.empty())
        cfg.data_dir = a.data;
    if (!a.out.empty())
        cfg.out_dir = a.out;
    if (cfg.data_dir.empty())
        throw UsageError("no dataset: pass --data or set 'data' in the config");
    if (cfg.out_dir.empty())
        throw UsageError("no output directory: pass --out or set 'out' in the config");
    cfg.validate();

    const std::string effective = format_run_config(cfg);
    out << "# effective config\n" << effective << std::flush;
    fs::create_directories(cfg.out_dir);
    std::ofstream(cfg.out_dir / "config.txt") << effective;

    const Dataset ds = load_dataset(cfg.data_dir);
    if (cfg.image_size != 0 && ds.manifest.size != cfg.image_size)
        throw DataError("dataset image size " + std::to_string(ds.manifest.size) + " differs from image_size " +
                        std::to_string(cfg.image_size));
    if (ds.manifest.ids(Split::train).empty())
        throw DataError("dataset " + cfg.data_dir.string() + " has no train samples");

    OptimizerState<float> opt;
    TrainerState state;
    state.seed = cfg.train.seed;
    Network<float> net(cfg.network);
    if (!a.resume.empty()) {
        Checkpoint<float> ck = load_checkpoint<float>(a.resume);
        if (!(ck.config == cfg.network))
            throw UsageError("checkpoint " + a.resume + " was trained with a different network config");
        load_weights(net, ck.parameters);
        if (ck.optimizer)
            opt = std::move(*ck.optimizer);
        else
            out << "warning: " << a.resume << " holds no optimizer state; training starts with fresh moments\n";
        if (ck.trainer)
            state = *ck.trainer;
        out << "resuming at epoch " << state.epoch << " (step " << state.global_step << ")\n";
    } else {
        net.initialize(cfg.init_seed);
    }
    out << "network parameters: " << net.parameter_count() << " (" << thread_count() << " thread"
        << (thread_count() == 1 ? "" : "s") << ")\n";

    TrainOptions o;
    o.out_dir = cfg.out_dir;
    o.log = &out;
    const TrainResult r = train(net, ds, cfg.train, cfg.loss, opt, state, o);
    if (r.last_validation)
        out << summary_text(*r.last_validation);
    out << "wrote " << (cfg.out_dir / "log.csv").string() << ", best.ckpt, last.ckpt\n";
    return kExitOk;
}

// ------------------------------------------------------------- eval

Network<float> network_from(const std::string& weights)
{
    Checkpoint<float> ck = load_checkpoint<float>(weights);
    Network<float> net(ck.config);
    load_weights(net, ck.parameters);
    return net;
}

int eval_cmd(const EvalArgs& a, std::ostream& out)
{
    const Split split = parse_split(a.split);
    const Dataset ds = load_dataset(a.data);
    if (ds.manifest.ids(split).empty())
        throw DataError("split '" + a.split + "' has no samples in " + a.data);
    MetricsReport r;
    if (a.oracle) {
        r = evaluate_oracle(ds, split);
    } else {
        if (a.weights.empty())
            throw UsageError("--weights is required unless --oracle is given");
        Network<float> net = network_from(a.weights);
        r = evaluate(net, ds, split, a.batch);
    }
    const std::string summary = summary_text(r);
    if (!a.report.empty()) {
        std::ofstream f(a.report);
        if (!f)
            throw DataError("cannot write " + a.report);
        write_report_csv(f, r);
        std::ofstream(a.report + ".summary.txt") << summary;
    }
    out << summary;
    return kExitOk;
}

// ------------------------------------------------------------- infer

using Rgb = std::array<std::uint8_t, 3>;

void write_ppm(const fs::path& path, std::int64_t h, std::int64_t w, const std::vector<Rgb>& px)
{
    std::ofstream f(path, std::ios::binary);
    if (!f)
        throw DataError("cannot write " + path.string());
    f << "P6\n" << w << ' ' << h << "\n255\n";
    f.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size() * 3));
}

void draw_contours(std::vector<Rgb>& px, const LabelMap& l, const Rgb& eem, const Rgb& lumen)
{
    const RegionMasks m = region_masks(l);
    for (auto [y, x] : boundary_pixels(m.eem))
        px[static_cast<std::size_t>(y * l.w + x)] = eem;
    for (auto [y, x] : boundary_pixels(m.lumen))
        px[static_cast<std::size_t>(y * l.w + x)] = lumen;
}

int infer_cmd(const InferArgs& a, std::ostream& out)
{
    Network<float> net = network_from(a.weights);
    const Sample s = load_sample_dir(a.input, false);
    if (s.frames.shape().c != net.config().in_frames)
        throw DataError("input has " + std::to_string(s.frames.shape().c) + " frames, network expects " +
                        std::to_string(net.config().in_frames));
    const std::int64_t h = s.frames.shape().h;
    const std::int64_t w = s.frames.shape().w;
    LabelMap pred(1, h, w);
    {
        NoGradGuard g;
        const Tensor<float> x = pad_to_multiple(s.frames, 64);
        const LabelMap full = argmax_labels(net.forward(x, {Mode::eval}).main_logits.value());
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t xx = 0; xx < w; ++xx)
                pred(0, y, xx) = full(0, y, xx);
    }
    const fs::path dir(a.out);
    fs::create_directories(dir);
    write_pgm(dir / "label.pgm", GrayImage{static_cast<int>(h), static_cast<int>(w), pred.values});

    std::vector<Rgb> px(static_cast<std::size_t>(h * w));
    for (std::int64_t i = 0; i < h * w; ++i) {
        const std::uint8_t g = quantize(s.frames[h * w + i]);
        px[static_cast<std::size_t>(i)] = {g, g, g};
    }
    const bool has_truth = s.label.size() > 0;
    if (has_truth)
        draw_contours(px, s.label, {255, 0, 0}, {0, 255, 0});
    draw_contours(px, pred, {255, 255, 0}, {0, 255, 255});
    write_ppm(dir / "overlay.ppm", h, w, px);

    const RegionMasks m = region_masks(pred);
    out << "wrote " << (dir / "label.pgm").string() << " and " << (dir / "overlay.ppm").string() << '\n'
        << "overlay: prediction EEM yellow, lumen cyan";
    if (has_truth)
        out << "; ground truth EEM red, lumen green";
    out << "\npredicted pixels: eem " << m.eem.count() << ", lumen " << m.lumen.count() << '\n';
    if (has_truth) {
        const SampleMetrics sm = sample_metrics(s.id, pred, s.label, s.spacing_mm);
        out << std::fixed << std::setprecision(4) << "dsc lumen " << sm.lumen.dsc << ", eem " << sm.eem.dsc << '\n'
            << std::defaultfloat;
    }
    return kExitOk;
}

// ------------------------------------------------------------- bench

int bench_cmd(const BenchArgs& a, std::ostream& out)
{
    if (a.iters < 10)
        throw UsageError("--iters " + std::to_string(a.iters) + " is below the minimum of 10");
    if (a.size < 64 || a.size % 64 != 0)
        throw UsageError("--size must be a positive multiple of 64");
    Network<float> net = [&] {
        if (!a.weights.empty())
            return network_from(a.weights);
        if (a.preset != "reference" && a.preset != "tiny")
            throw UsageError("--preset must be reference or tiny");
        Network<float> n(a.preset == "tiny" ? NetworkConfig::tiny() : NetworkConfig::reference());
        n.initialize(0);
        return n;
    }();
    const FpsResult r = fps_benchmark(net, a.size, a.batch, a.warmup, a.iters);
    out << "bench: " << a.size << "x" << a.size << " batch " << a.batch << ", " << a.warmup << " warmup + " << a.iters
        << " timed iterations, eval mode, 1 thread\n";
    out << "weights: " << (a.weights.empty() ? "fresh " + a.preset + " initialization" : a.weights) << '\n';
    out << "parameters: " << net.parameter_count() << '\n';
    out << std::fixed << std::setprecision(3) << "fps: " << r.fps << '\n'
        << "latency p50: " << r.p50_ms << " ms\n"
        << "latency p95: " << r.p95_ms << " ms\n"
        << std::defaultfloat;
    out << "published GPU reference (GTX 3090, 900x900 clinical frames; not comparable to this CPU run): "
           "CSDN 1706K params, 151 FPS\n";
    return kExitOk;
}

// ------------------------------------------------------------- gradcheck

int gradcheck_cmd(const GradcheckArgs& a, std::ostream& out, std::ostream& err)
{
    NetworkConfig cfg = NetworkConfig::tiny();
    if (!a.config.empty())
        cfg = load_run_config(a.config).network;
    cfg.validate();
    const std::int64_t params = count_parameters(cfg);
    if (params > 100000)
        throw UsageError("gradcheck refuses a network with " + std::to_string(params) +
                         " parameters (limit 100000); use preset = tiny");
    if (!(a.tol > 0))
        throw UsageError("--tol must be > 0");
    out << "gradcheck: " << params << " parameters, tolerance " << a.tol << ", float64\n";
    out << std::left << std::setw(28) << "block" << std::right << std::setw(8) << "entries" << std::setw(12)
        << "max rel err" << '\n';
    GradCheckSuiteOptions o;
    o.tol = a.tol;
    o.seed = a.seed;
    o.end_to_end_max_entries = a.max_entries;
    o.progress = &out;
    const auto results = run_gradcheck_suite(cfg, o);
    int failed = 0;
    double worst = 0.0;
    for (const auto& r : results) {
        failed += !r.report.passed;
        worst = std::max(worst, r.report.max_rel_error);
    }
    out << "max relative error over all blocks: " << worst << '\n';
    if (failed > 0) {
        err << "error: gradient check failed for " << failed << " block(s)\n";
        return kExitNumeric;
    }
    out << "all " << results.size() << " checks passed\n";
    return kExitOk;
}

std::string one_line(std::string s)
{
    for (char& c : s)
        if (c == '\n' || c == '\r')
            c = ' ';
    return s;
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    retain_heap();
    CLI::App app{"CSDN two-stream IVUS segmentation: data, training, evaluation and checks", "csdn"};
    app.require_subcommand(1);

    GenDataArgs gen;
    auto* g = app.add_subcommand("gen-data", "Generate a synthetic phantom dataset");
    g->add_option("--out", gen.out, "Output directory")->required();
    g->add_option("--n-train", gen.n_train, "Training samples");
    g->add_option("--n-val", gen.n_val, "Validation samples");
    g->add_option("--size", gen.size, "Image size (multiple of 64)");
    g->add_option("--seed", gen.seed, "Generator seed");
    g->add_option("--spacing", gen.spacing, "Pixel spacing in mm");
    g->add_flag("--force", gen.force, "Overwrite a non-empty output directory");

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Train a network");
    t->add_option("--config", tr.config, "key = value config file");
    t->add_option("--data", tr.data, "Dataset directory");
    t->add_option("--out", tr.out, "Output directory for log.csv and checkpoints");
    t->add_option("--resume", tr.resume, "Checkpoint to resume from");

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
    e->add_option("--weights", ev.weights, "Checkpoint");
    e->add_option("--data", ev.data, "Dataset directory")->required();
    e->add_option("--split", ev.split, "train or val");
    e->add_option("--report", ev.report, "Per-sample CSV report path");
    e->add_option("--batch", ev.batch, "Inference batch size");
    e->add_flag("--oracle", ev.oracle, "Score ground truth against itself (harness check)");

    InferArgs in;
    auto* i = app.add_subcommand("infer", "Segment one sample directory");
    i->add_option("--weights", in.weights, "Checkpoint")->required();
    i->add_option("--input", in.input, "Directory with frame1.pgm, frame2.pgm, frame3.pgm")->required();
    i->add_option("--out", in.out, "Output directory")->required();

    BenchArgs be;
    auto* b = app.add_subcommand("bench", "Time eval-mode inference");
    b->add_option("--weights", be.weights, "Checkpoint (default: fresh network)");
    b->add_option("--preset", be.preset, "Network without --weights: reference or tiny");
    b->add_option("--size", be.size, "Input size");
    b->add_option("--batch", be.batch, "Batch size");
    b->add_option("--iters", be.iters, "Timed iterations (>= 10)");
    b->add_option("--warmup", be.warmup, "Warmup iterations");

    GradcheckArgs gc;
    auto* c = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
    c->add_option("--config", gc.config, "Config file (default: tiny preset)");
    c->add_option("--tol", gc.tol, "Relative error tolerance");
    c->add_option("--seed", gc.seed, "Seed of the random inputs");
    c->add_option("--max-entries", gc.max_entries, "End-to-end entries per tensor (0 = all)");

    std::vector<const char*> argv;
    for (const auto& a : args)
        argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& ex) {
        err << "error: " << one_line(ex.what()) << '\n';
        return kExitUsage;
    }

    try {
        if (g->parsed())
            return gen_data(gen, out);
        if (t->parsed())
            return train_cmd(tr, out);
        if (e->parsed())
            return eval_cmd(ev, out);
        if (i->parsed())
            return infer_cmd(in, out);
        if (b->parsed())
            return bench_cmd(be, out);
        if (c->parsed())
            return gradcheck_cmd(gc, out, err);
    } catch (const UsageError& ex) {
        err << "error: " << one_line(ex.what()) << '\n';
        return kExitUsage;
    } catch (const DataError& ex) {
        err << "error: " << one_line(ex.what()) << '\n';
        return kExitData;
    } catch (const ShapeError& ex) {
        err << "error: " << one_line(ex.what()) << '\n';
        return kExitData;
    } catch (const fs::filesystem_error& ex) {
        err << "error: " << one_line(ex.what()) << '\n';
        return kExitData;
    } catch (const std::exception& ex) {
        err << "error: " << one_line(ex.what()) << '\n';
        return kExitNumeric;
    }
    return kExitUsage;
}

} // namespace csdn
