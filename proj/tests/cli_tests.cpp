#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "daegan/cli.hpp"

namespace fs = std::filesystem;
using namespace daegan;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag)
      : path(fs::path(::testing::TempDir()) / ("daegan_" + tag)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string str() const { return path.string(); }
  std::string sub(const std::string& name) const {
    return (path / name).string();
  }
};

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

CliResult run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  CliResult r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

// Restores DAEGAN_THREADS (and the in-process cap) when a test returns.
struct ThreadsEnvGuard {
  ~ThreadsEnvGuard() {
    ::unsetenv("DAEGAN_THREADS");
    set_max_threads(0);
  }
};

std::vector<std::string> tiny_train_flags(const std::string& data,
                                          const std::string& run_dir) {
  return {"train",        "--data",      data,
          "--resolution", "16",          "--k",
          "2",            "--d_p",       "16",
          "--batch_size", "2",           "--base_width",
          "8",            "--max_width", "16",
          "--steps_per_epoch", "2",      "--holdout",
          "2",            "--seed",      "11",
          "--epochs",     "1",           "--checkpoint_dir",
          run_dir};
}

std::string gen_tiny_corpus(const TempDir& dir) {
  const std::string data = dir.sub("data");
  gen_dataset(3, 8, 16, 7, data);
  return data;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(f, line)) lines.push_back(line);
  return lines;
}

std::string strip_wall(const std::string& line) {
  return line.substr(0, line.rfind('\t'));
}

std::vector<char> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::vector<char>(std::istreambuf_iterator<char>(f),
                           std::istreambuf_iterator<char>());
}

int64_t count_pngs(const std::string& dir) {
  int64_t n = 0;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".png") ++n;
  return n;
}

}  // namespace

TEST(CliBasicsTest, NoArgumentsPrintsUsageAndFails) {
  const CliResult r = run({});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("usage: daegan"), std::string::npos);
  EXPECT_TRUE(r.out.empty());
}

TEST(CliBasicsTest, HelpSucceedsAndDocumentsPrecedence) {
  for (const std::string& flag : {"--help", "-h", "help"}) {
    const CliResult r = run({flag});
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("usage: daegan"), std::string::npos);
    EXPECT_NE(r.out.find("precedence"), std::string::npos);
    EXPECT_NE(r.out.find("DAEGAN_THREADS"), std::string::npos);
  }
  const CliResult r = run({"gradcheck", "--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("usage: daegan"), std::string::npos);
}

TEST(CliBasicsTest, UnknownCommandAndFlagsFailWithCodeTwo) {
  EXPECT_EQ(run({"frobnicate"}).code, 2);
  EXPECT_EQ(run({"gradcheck", "positional"}).code, 2);
  EXPECT_EQ(run({"gradcheck", "--op"}).code, 2);
}

TEST(CliBasicsTest, ThreadsEnvVarIsValidated) {
  ThreadsEnvGuard guard;
  ::setenv("DAEGAN_THREADS", "not-a-number", 1);
  const CliResult bad = run({"gradcheck", "--op", "add"});
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.err.find("DAEGAN_THREADS"), std::string::npos);
  ::setenv("DAEGAN_THREADS", "-3", 1);
  EXPECT_EQ(run({"gradcheck", "--op", "add"}).code, 2);
  ::setenv("DAEGAN_THREADS", "2", 1);
  EXPECT_EQ(run({"gradcheck", "--op", "add"}).code, 0);
}

TEST(GenDataCmdTest, WritesTheAdvertisedFrameCount) {
  TempDir dir("cli_gen");
  const CliResult r =
      run({"gen-data", "--out", dir.sub("d"), "--videos", "2", "--frames",
           "4", "--res", "16"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_pngs(dir.sub("d") + "/video_000"), 4);
  EXPECT_EQ(count_pngs(dir.sub("d") + "/video_001"), 4);
  EXPECT_NE(r.out.find("video_001\t4"), std::string::npos);
}

TEST(GenDataCmdTest, MissingOutIsAUsageError) {
  const CliResult r = run({"gen-data", "--videos", "2"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--out"), std::string::npos);
}

TEST(GenDataCmdTest, SameSeedReproducesTheCorpusByteForByte) {
  TempDir dir("cli_gen_det");
  const std::vector<std::string> args = {"gen-data", "--videos", "2",
                                         "--frames", "3",        "--res",
                                         "16",       "--seed",   "9"};
  auto with_out = [&](const std::string& out) {
    std::vector<std::string> a = args;
    a.push_back("--out");
    a.push_back(out);
    return a;
  };
  ASSERT_EQ(run(with_out(dir.sub("a"))).code, 0);
  ASSERT_EQ(run(with_out(dir.sub("b"))).code, 0);
  for (const std::string rel :
       {"index.tsv", "video_000/frame_00000.png", "video_001/frame_00002.png",
        "video_001/poses.tsv"})
    EXPECT_EQ(read_file(dir.sub("a") + "/" + rel),
              read_file(dir.sub("b") + "/" + rel))
        << rel;
}

TEST(GenDataCmdTest, RefusesNonEmptyTargetWithoutForce) {
  TempDir dir("cli_gen_force");
  fs::create_directories(dir.sub("d"));
  std::ofstream(dir.sub("d") + "/stale.txt") << "x";
  const std::vector<std::string> args = {"gen-data", "--out",    dir.sub("d"),
                                         "--videos", "1",        "--frames",
                                         "2",        "--res",    "16"};
  const CliResult refused = run(args);
  EXPECT_EQ(refused.code, 2);
  EXPECT_NE(refused.err.find("--force"), std::string::npos);
  std::vector<std::string> forced = args;
  forced.push_back("--force");
  EXPECT_EQ(run(forced).code, 0);
}

TEST(TrainCmdTest, StageOneWritesCheckpointAndOneMetricLine) {
  TempDir dir("cli_train1");
  const std::string data = gen_tiny_corpus(dir);
  const std::vector<char> index_before = read_file(data + "/index.tsv");
  const std::vector<char> frame_before =
      read_file(data + "/video_000/frame_00000.png");

  std::vector<std::string> args = tiny_train_flags(data, dir.sub("run"));
  args.push_back("--stage");
  args.push_back("1");
  const CliResult r = run(args);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir.sub("run") + "/ckpt-s1-e0001.bin"));
  EXPECT_EQ(read_lines(dir.sub("run") + "/metrics.tsv").size(), 1u);
  EXPECT_NE(r.out.find("ckpt-s1-e0001.bin"), std::string::npos);

  EXPECT_EQ(read_file(data + "/index.tsv"), index_before);
  EXPECT_EQ(read_file(data + "/video_000/frame_00000.png"), frame_before);
}

TEST(TrainCmdTest, ResumeContinuesTheLogAtTheNextEpoch) {
  TempDir dir("cli_resume");
  const std::string data = gen_tiny_corpus(dir);
  std::vector<std::string> first = tiny_train_flags(data, dir.sub("run"));
  first.push_back("--stage");
  first.push_back("1");
  ASSERT_EQ(run(first).code, 0);

  std::vector<std::string> second = {
      "train",          "--data",          data,
      "--stage",        "1",               "--resume",
      dir.sub("run") + "/ckpt-s1-e0001.bin", "--epochs_stage1",
      "2",              "--checkpoint_dir", dir.sub("run")};
  ASSERT_EQ(run(second).code, 0);
  const std::vector<std::string> lines =
      read_lines(dir.sub("run") + "/metrics.tsv");
  ASSERT_EQ(lines.size(), 2u);
  EXPECT_EQ(lines[1].substr(0, 2), "2\t");
  EXPECT_TRUE(fs::exists(dir.sub("run") + "/ckpt-s1-e0002.bin"));
}

TEST(TrainCmdTest, StageAutoMatchesSeparateStageRuns) {
  TempDir dir("cli_auto");
  const std::string data = gen_tiny_corpus(dir);

  std::vector<std::string> joint = tiny_train_flags(data, dir.sub("a"));
  joint.push_back("--stage");
  joint.push_back("auto");
  ASSERT_EQ(run(joint).code, 0);

  std::vector<std::string> first = tiny_train_flags(data, dir.sub("b"));
  first.push_back("--stage");
  first.push_back("1");
  ASSERT_EQ(run(first).code, 0);
  const std::vector<std::string> second = {
      "train",  "--data", data,
      "--stage", "2",     "--resume",
      dir.sub("b") + "/ckpt-s1-e0001.bin",  "--checkpoint_dir", dir.sub("b")};
  ASSERT_EQ(run(second).code, 0);

  EXPECT_EQ(read_file(dir.sub("a") + "/ckpt-s2-e0001.bin"),
            read_file(dir.sub("b") + "/ckpt-s2-e0001.bin"));
  const std::vector<std::string> la = read_lines(dir.sub("a") + "/metrics.tsv");
  const std::vector<std::string> lb = read_lines(dir.sub("b") + "/metrics.tsv");
  ASSERT_EQ(la.size(), 2u);
  ASSERT_EQ(lb.size(), 2u);
  for (size_t i = 0; i < la.size(); ++i)
    EXPECT_EQ(strip_wall(la[i]), strip_wall(lb[i]));
}

TEST(TrainCmdTest, StageTwoWithoutACheckpointIsAUsageError) {
  TempDir dir("cli_stage2");
  const std::string data = gen_tiny_corpus(dir);
  std::vector<std::string> args = tiny_train_flags(data, dir.sub("run"));
  args.push_back("--stage");
  args.push_back("2");
  const CliResult r = run(args);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--resume"), std::string::npos);
}

TEST(TrainCmdTest, ConfigFileKeysAreOverriddenByFlags) {
  TempDir dir("cli_cfgfile");
  const std::string data = gen_tiny_corpus(dir);
  {
    std::ofstream cf(dir.sub("run.cfg"));
    cf << "# tiny run\n"
       << "resolution=16\nk=2\nd_p=16\nbatch_size=2\nbase_width=8\n"
       << "max_width=16\nsteps_per_epoch=2\nholdout=2\nseed=11\n"
       << "epochs_stage1=7\nepochs_stage2=0\n"
       << "dataset_dir=" << data << "\n";
  }
  const CliResult r = run({"train", "--config", dir.sub("run.cfg"),
                           "--stage", "1", "--epochs_stage1", "1",
                           "--checkpoint_dir", dir.sub("run")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir.sub("run") + "/ckpt-s1-e0001.bin"));
  EXPECT_FALSE(fs::exists(dir.sub("run") + "/ckpt-s1-e0002.bin"));
}

TEST(TrainCmdTest, UnknownConfigKeyIsAHardError) {
  TempDir dir("cli_badkey");
  const std::string data = gen_tiny_corpus(dir);
  std::vector<std::string> args = tiny_train_flags(data, dir.sub("run"));
  args.push_back("--resolutoin");
  args.push_back("16");
  const CliResult r = run(args);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("resolutoin"), std::string::npos);
}

namespace {

// Shared fixture: one tiny trained checkpoint reused by the inference
// command tests, built once because even tiny training dominates runtime.
struct TrainedFixture {
  TempDir dir;
  std::string data;
  std::string ckpt;

  TrainedFixture() : dir("cli_fixture") {
    data = gen_tiny_corpus(dir);
    std::vector<std::string> args = tiny_train_flags(data, dir.sub("run"));
    args.push_back("--stage");
    args.push_back("auto");
    if (run(args).code != 0) std::abort();
    ckpt = dir.sub("run") + "/ckpt-s2-e0001.bin";
  }

  static TrainedFixture& get() {
    static TrainedFixture fixture;
    return fixture;
  }
};

}  // namespace

TEST(ReenactCmdTest, DirectoryDrivingWritesOnePngPerFrame) {
  TrainedFixture& fx = TrainedFixture::get();
  TempDir dir("cli_reenact");
  const CliResult r =
      run({"reenact", "--ckpt", fx.ckpt, "--source",
           fx.data + "/video_000/frame_00000.png", "--source",
           fx.data + "/video_000/frame_00001.png", "--driving",
           fx.data + "/video_001", "--out", dir.sub("out")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_pngs(dir.sub("out")), 8);
  const Tensor<float> img =
      read_image<float>(dir.sub("out") + "/frame_00003.png");
  EXPECT_EQ(img.shape(), (Shape{3, 16, 16}));
}

TEST(ReenactCmdTest, SingleFrameAndNoGanPathWork) {
  TrainedFixture& fx = TrainedFixture::get();
  TempDir dir("cli_reenact1");
  const CliResult r =
      run({"reenact", "--ckpt", fx.ckpt, "--source",
           fx.data + "/video_000/frame_00000.png", "--driving",
           fx.data + "/video_000/frame_00002.png", "--out", dir.sub("out"),
           "--no-gan"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_pngs(dir.sub("out")), 1);
  const Tensor<float> img =
      read_image<float>(dir.sub("out") + "/frame_00002.png");
  for (int64_t i = 0; i < img.numel(); ++i)
    ASSERT_TRUE(std::isfinite(double(img.data()[i])));
}

TEST(ReenactCmdTest, ResolutionMismatchIsAUsageError) {
  TrainedFixture& fx = TrainedFixture::get();
  TempDir dir("cli_reenact_bad");
  gen_dataset(1, 2, 32, 1, dir.sub("big"));
  const CliResult r =
      run({"reenact", "--ckpt", fx.ckpt, "--source",
           dir.sub("big") + "/video_000/frame_00000.png", "--driving",
           fx.data + "/video_000/frame_00001.png", "--out", dir.sub("out")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("expects 16x16"), std::string::npos);
}

TEST(RetrieveCmdTest, SelfQueryRanksItselfFirst) {
  TrainedFixture& fx = TrainedFixture::get();
  const CliResult r =
      run({"retrieve", "--ckpt", fx.ckpt, "--index-dir",
           fx.data + "/video_000", "--query",
           fx.data + "/video_000/frame_00004.png", "--top", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream is(r.out);
  std::vector<std::string> lines;
  for (std::string l; std::getline(is, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[0], "1\tframe_00004.png\t1.000000");
}

TEST(RetrieveCmdTest, TopIsClampedToTheIndexSize) {
  TrainedFixture& fx = TrainedFixture::get();
  const CliResult r =
      run({"retrieve", "--ckpt", fx.ckpt, "--index-dir",
           fx.data + "/video_001", "--query",
           fx.data + "/video_001/frame_00000.png", "--top", "999"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 8);
}

TEST(RetrieveCmdTest, RepeatedInvocationsPrintIdenticalOutput) {
  TrainedFixture& fx = TrainedFixture::get();
  const std::vector<std::string> args = {
      "retrieve", "--ckpt",  fx.ckpt,
      "--index-dir", fx.data + "/video_000", "--query",
      fx.data + "/video_001/frame_00001.png", "--top", "5"};
  const CliResult a = run(args);
  const CliResult b = run(args);
  ASSERT_EQ(a.code, 0);
  EXPECT_EQ(a.out, b.out);
}

TEST(GradcheckCmdTest, SingleOpFilterPrintsOneRowAndPasses) {
  const CliResult r = run({"gradcheck", "--op", "grid_sample"});
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("grid_sample\t"), std::string::npos);
  EXPECT_NE(r.out.find("1 cases"), std::string::npos);
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
}

TEST(GradcheckCmdTest, ImpossibleToleranceFlipsTheExitCode) {
  const CliResult r = run({"gradcheck", "--op", "linear", "--threshold", "0"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("FAIL"), std::string::npos);
}

TEST(GradcheckCmdTest, UnknownOpIsAUsageError) {
  const CliResult r = run({"gradcheck", "--op", "warp_drive"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("warp_drive"), std::string::npos);
}

TEST(EvalCmdTest, UntrainedCheckpointYieldsAFiniteReport) {
  TempDir dir("cli_eval");
  const std::string data = gen_tiny_corpus(dir);
  std::vector<std::string> init = tiny_train_flags(data, dir.sub("run"));
  for (size_t i = 0; i + 1 < init.size(); ++i)
    if (init[i] == "--epochs") init[i + 1] = "0";
  init.push_back("--stage");
  init.push_back("1");
  ASSERT_EQ(run(init).code, 0);

  const CliResult r =
      run({"eval", "--ckpt", dir.sub("run") + "/ckpt-s1-e0000.bin", "--data",
           data, "--out", dir.sub("out")});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string report = dir.sub("out") + "/eval-report.txt";
  ASSERT_TRUE(fs::exists(report));
  int64_t metric_lines = 0;
  for (const std::string& line : read_lines(report)) {
    if (line.rfind("config.", 0) == 0 || line.rfind("checkpoint=", 0) == 0)
      continue;
    const size_t eq = line.find('=');
    ASSERT_NE(eq, std::string::npos) << line;
    const double v = std::stod(line.substr(eq + 1));
    EXPECT_TRUE(std::isfinite(v)) << line;
    ++metric_lines;
  }
  EXPECT_GE(metric_lines, 4);
  EXPECT_NE(r.out.find("holdout.reenacted_ssim="), std::string::npos);
}

TEST(EvalCmdTest, HoldoutLargerThanEveryVideoIsAUsageError) {
  TrainedFixture& fx = TrainedFixture::get();
  const CliResult r = run({"eval", "--ckpt", fx.ckpt, "--data", fx.data,
                           "--holdout", "50"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("holdout"), std::string::npos);
}
