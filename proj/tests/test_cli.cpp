#include "csdn/checkpoint.hpp"
#include "csdn/cli.hpp"
#include "csdn/dataset.hpp"

#include <gtest/gtest.h>

#include <unistd.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace csdn;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir()
    {
        static int counter = 0;
        path = fs::temp_directory_path() / ("csdn-cli-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    [[nodiscard]] std::string operator/(const std::string& s) const { return (path / s).string(); }
};

struct CliRun {
    int code = 0;
    std::string out;
    std::string err;
};

CliRun cli(std::vector<std::string> args)
{
    args.insert(args.begin(), "csdn");
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

void write_file(const std::string& path, const std::string& text) { std::ofstream(path) << text; }

bool single_error_line(const std::string& err)
{
    return err.rfind("error: ", 0) == 0 && err.find('\n') == err.size() - 1;
}

int exit_status(const std::string& command)
{
    const int status = std::system(command.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

} // namespace

TEST(Cli, HelpExitsZero)
{
    const CliRun r = cli({"--help"});
    EXPECT_EQ(r.code, kExitOk);
    EXPECT_NE(r.out.find("gen-data"), std::string::npos);
    EXPECT_NE(r.out.find("gradcheck"), std::string::npos);
}

TEST(Cli, UnknownCommandIsUsageError)
{
    const CliRun r = cli({"frobnicate"});
    EXPECT_EQ(r.code, kExitUsage);
    EXPECT_TRUE(single_error_line(r.err)) << r.err;
}

TEST(Cli, GenDataRejectsSizeNotMultipleOf64)
{
    TempDir t;
    const CliRun r = cli({"gen-data", "--out", t / "d", "--size", "100"});
    EXPECT_EQ(r.code, kExitUsage);
    EXPECT_NE(r.err.find("multiple of 64"), std::string::npos) << r.err;
}

TEST(Cli, GenDataRefusesNonEmptyDirectoryWithoutForce)
{
    TempDir t;
    ASSERT_EQ(cli({"gen-data", "--out", t / "d", "--n-train", "2", "--n-val", "1", "--size", "64"}).code, kExitOk);
    const CliRun again = cli({"gen-data", "--out", t / "d", "--n-train", "2", "--n-val", "1", "--size", "64"});
    EXPECT_EQ(again.code, kExitUsage);
    EXPECT_TRUE(single_error_line(again.err));
}

TEST(Cli, GenDataForceReplacesOnlyOldDataset)
{
    TempDir t;
    ASSERT_EQ(cli({"gen-data", "--out", t / "d", "--n-train", "3", "--n-val", "1", "--size", "64"}).code, kExitOk);
    write_file(t / "d/notes.txt", "keep");
    ASSERT_EQ(cli({"gen-data", "--out", t / "d", "--n-train", "1", "--n-val", "1", "--size", "64", "--force"}).code,
              kExitOk);
    EXPECT_TRUE(fs::exists(t / "d/notes.txt"));
    EXPECT_FALSE(fs::exists(t / "d/train-0002"));
    EXPECT_EQ(load_dataset(t / "d").samples.size(), 2u);
}

TEST(Cli, GenDataMatchesLibraryGenerator)
{
    TempDir t;
    ASSERT_EQ(cli({"gen-data", "--out", t / "d", "--n-train", "2", "--n-val", "1", "--size", "64", "--seed", "9"}).code,
              kExitOk);
    save_dataset(make_phantom_dataset(2, 1, 64, 9), t / "lib");
    for (const std::string f : {"manifest.txt", "train-0001/frame2.pgm", "val-0000/label.pgm"}) {
        std::ifstream a(t / ("d/" + f), std::ios::binary), b(t / ("lib/" + f), std::ios::binary);
        const std::string sa{std::istreambuf_iterator<char>(a), {}};
        const std::string sb{std::istreambuf_iterator<char>(b), {}};
        EXPECT_EQ(sa, sb) << f;
    }
}

TEST(Cli, ConfigErrorNamesLine)
{
    TempDir t;
    ASSERT_EQ(cli({"gen-data", "--out", t / "d", "--n-train", "2", "--n-val", "1", "--size", "64"}).code, kExitOk);
    write_file(t / "c.txt", "preset = tiny\n# comment\nlr = = 3\n");
    const CliRun r = cli({"train", "--config", t / "c.txt", "--data", t / "d", "--out", t / "o"});
    EXPECT_EQ(r.code, kExitUsage);
    EXPECT_NE(r.err.find("line 3"), std::string::npos) << r.err;
    EXPECT_TRUE(single_error_line(r.err));

    write_file(t / "c2.txt", "preset = tiny\nlearning_rate = 0.1\n");
    const CliRun u = cli({"train", "--config", t / "c2.txt", "--data", t / "d", "--out", t / "o"});
    EXPECT_EQ(u.code, kExitUsage);
    EXPECT_NE(u.err.find("line 2"), std::string::npos) << u.err;
    EXPECT_NE(u.err.find("learning_rate"), std::string::npos) << u.err;
}

TEST(Cli, TrainEvalInferRoundTrip)
{
    TempDir t;
    ASSERT_EQ(cli({"gen-data", "--out", t / "d", "--n-train", "4", "--n-val", "2", "--size", "64"}).code, kExitOk);
    write_file(t / "c.txt", "preset = tiny\nepochs = 2\nbatch_size = 2\n");
    const CliRun tr = cli({"train", "--config", t / "c.txt", "--data", t / "d", "--out", t / "o"});
    ASSERT_EQ(tr.code, kExitOk) << tr.err;
    EXPECT_NE(tr.out.find("epochs = 2"), std::string::npos);
    EXPECT_TRUE(fs::exists(t / "o/config.txt"));
    EXPECT_TRUE(fs::exists(t / "o/log.csv"));
    EXPECT_TRUE(fs::exists(t / "o/best.ckpt"));
    EXPECT_TRUE(fs::exists(t / "o/last.ckpt"));

    const CliRun ev = cli({"eval", "--weights", t / "o/best.ckpt", "--data", t / "d", "--report", t / "r.csv"});
    ASSERT_EQ(ev.code, kExitOk) << ev.err;
    std::ifstream csv(t / "r.csv");
    std::string header;
    std::getline(csv, header);
    EXPECT_EQ(header, "sample_id,region,dsc,iou,hd95_mm");
    int rows = 0;
    for (std::string line; std::getline(csv, line);)
        ++rows;
    EXPECT_EQ(rows, 4);
    EXPECT_TRUE(fs::exists(t / "r.csv.summary.txt"));

    const CliRun in = cli({"infer", "--weights", t / "o/best.ckpt", "--input", t / "d/val-0000", "--out", t / "inf"});
    ASSERT_EQ(in.code, kExitOk) << in.err;
    const GrayImage label = read_pgm(t / "inf/label.pgm");
    EXPECT_EQ(label.h, 64);
    for (auto v : label.pixels)
        EXPECT_LE(v, 2);
    std::ifstream ppm(t / "inf/overlay.ppm", std::ios::binary);
    std::string magic;
    ppm >> magic;
    EXPECT_EQ(magic, "P6");
}

TEST(Cli, ResumeContinuesFromCheckpointEpoch)
{
    TempDir t;
    ASSERT_EQ(cli({"gen-data", "--out", t / "d", "--n-train", "4", "--n-val", "2", "--size", "64"}).code, kExitOk);
    write_file(t / "c1.txt", "preset = tiny\nepochs = 1\nbatch_size = 2\n");
    write_file(t / "c3.txt", "preset = tiny\nepochs = 3\nbatch_size = 2\n");
    ASSERT_EQ(cli({"train", "--config", t / "c1.txt", "--data", t / "d", "--out", t / "o"}).code, kExitOk);
    const CliRun r = cli({"train", "--config", t / "c3.txt", "--data", t / "d", "--out", t / "o", "--resume",
                       t / "o/last.ckpt"});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    EXPECT_NE(r.out.find("resuming at epoch 1"), std::string::npos) << r.out;
    EXPECT_EQ(load_checkpoint<float>(t / "o/last.ckpt").trainer->epoch, 3);
}

TEST(Cli, InferPadsOddSizedInput)
{
    TempDir t;
    ASSERT_EQ(cli({"gen-data", "--out", t / "d", "--n-train", "2", "--n-val", "1", "--size", "64"}).code, kExitOk);
    write_file(t / "c.txt", "preset = tiny\nepochs = 1\nbatch_size = 2\n");
    ASSERT_EQ(cli({"train", "--config", t / "c.txt", "--data", t / "d", "--out", t / "o"}).code, kExitOk);
    fs::create_directories(t / "odd");
    GrayImage img{50, 70, std::vector<std::uint8_t>(50 * 70, 90)};
    for (const std::string f : {"frame1.pgm", "frame2.pgm", "frame3.pgm"})
        write_pgm(t / ("odd/" + f), img);
    const CliRun r = cli({"infer", "--weights", t / "o/last.ckpt", "--input", t / "odd", "--out", t / "inf"});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    const GrayImage label = read_pgm(t / "inf/label.pgm");
    EXPECT_EQ(label.h, 50);
    EXPECT_EQ(label.w, 70);
}

TEST(Cli, DataErrorsExitTwo)
{
    TempDir t;
    const CliRun missing = cli({"eval", "--weights", t / "none.ckpt", "--data", t / "nowhere"});
    EXPECT_EQ(missing.code, kExitData);
    EXPECT_TRUE(single_error_line(missing.err)) << missing.err;

    ASSERT_EQ(cli({"gen-data", "--out", t / "d", "--n-train", "2", "--n-val", "0", "--size", "64"}).code, kExitOk);
    const CliRun empty = cli({"eval", "--oracle", "--data", t / "d", "--split", "val"});
    EXPECT_EQ(empty.code, kExitData);
    EXPECT_NE(empty.err.find("no samples"), std::string::npos) << empty.err;

    fs::create_directories(t / "bad");
    write_file(t / "bad/frame1.pgm", "P5\n4 4\n255\n");
    write_file(t / "w.ckpt", "CSDN");
    const CliRun trunc = cli({"infer", "--weights", t / "w.ckpt", "--input", t / "bad", "--out", t / "o"});
    EXPECT_EQ(trunc.code, kExitData);
    EXPECT_TRUE(single_error_line(trunc.err)) << trunc.err;
}

TEST(Cli, OracleEvaluationIsPerfect)
{
    TempDir t;
    ASSERT_EQ(cli({"gen-data", "--out", t / "d", "--n-train", "1", "--n-val", "3", "--size", "64"}).code, kExitOk);
    const CliRun r = cli({"eval", "--oracle", "--data", t / "d", "--report", t / "r.csv"});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    std::ifstream csv(t / "r.csv");
    std::string line;
    std::getline(csv, line);
    while (std::getline(csv, line))
        EXPECT_NE(line.find(",1,1,0"), std::string::npos) << line;
}

TEST(Cli, BenchRejectsTooFewIterations)
{
    const CliRun r = cli({"bench", "--preset", "tiny", "--size", "64", "--iters", "5"});
    EXPECT_EQ(r.code, kExitUsage);
}

TEST(Cli, BenchReportsTimings)
{
    const CliRun r = cli({"bench", "--preset", "tiny", "--size", "64", "--iters", "10", "--warmup", "1"});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    EXPECT_NE(r.out.find("fps: "), std::string::npos);
    EXPECT_NE(r.out.find("latency p95"), std::string::npos);
    EXPECT_NE(r.out.find("parameters: 25940"), std::string::npos);
    EXPECT_NE(r.out.find("not comparable"), std::string::npos);
}

TEST(Cli, GradcheckRefusesLargeNetwork)
{
    TempDir t;
    write_file(t / "ref.txt", "preset = reference\n");
    const CliRun r = cli({"gradcheck", "--config", t / "ref.txt"});
    EXPECT_EQ(r.code, kExitUsage);
    EXPECT_NE(r.err.find("100000"), std::string::npos) << r.err;
}

TEST(Cli, GradcheckPassesOnCorrectBuild)
{
    const std::string cmd = std::string(CSDN_BIN) + " gradcheck --max-entries 2 > /dev/null 2>&1";
    EXPECT_EQ(exit_status(cmd), kExitOk);
}

TEST(Cli, GradcheckCatchesInjectedGradientBug)
{
    const std::string cmd = std::string(CSDN_FAULTY_BIN) + " gradcheck --max-entries 2 > /dev/null 2>&1";
    EXPECT_EQ(exit_status(cmd), kExitNumeric);
}
