// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "commands.hpp"
#include "nca/checkpoint.hpp"
#include "nca/dataset.hpp"
#include "nca/tensor_io.hpp"
#include "test_util.hpp"

namespace nca::cli {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "nca");
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::string> small_model() {
  return {"--state-dim", "8", "--hidden", "16", "--t-min", "4", "--t-max", "8",
          "--t-eval",    "6", "--batch-size", "8"};
}

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

std::string slurp(const fs::path& p) {
  const auto bytes = test::read_bytes(p);
  return {bytes.begin(), bytes.end()};
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream f(p);
  f << text;
}

/// 64 samples at 32x32 shared by every test below.
class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / "nca_cli_suite";
    fs::remove_all(root_);
    const Result r = run({"gen-data", "--out", (root_ / "data").string(), "--domains",
                          "mild,moderate", "--n-per-domain", "32", "--rows", "32", "--cols", "32",
                          "--seed", "3"});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static std::string data() { return (root_ / "data").string(); }

  static inline fs::path root_;
};

TEST_F(Cli, HelpAndUnknownCommand) {
  EXPECT_EQ(run({"--help"}).code, 0);
  EXPECT_EQ(run({"train", "--help"}).code, 0);
  EXPECT_EQ(run({"bogus"}).code, static_cast<int>(kConfig));
  EXPECT_EQ(run({}).code, static_cast<int>(kConfig));
  EXPECT_EQ(run({"train", "--no-such-flag", "1"}).code, static_cast<int>(kConfig));
}

TEST_F(Cli, GenDataDefaultsAndDeterminism) {
  test::TempDir dir("cli_gen");
  const fs::path a = dir / "nested/a", b = dir / "b";
  const Result r = run({"gen-data", "--out", a.string(), "--n-per-domain", "4", "--seed", "9"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("wrote 12 samples (64x64)"), std::string::npos) << r.out;
  ASSERT_EQ(run({"gen-data", "--out", b.string(), "--n-per-domain", "4", "--seed", "9"}).code, 0);
  const Manifest m = load_manifest(a / "manifest.json");
  ASSERT_EQ(m.size(), 12u);
  EXPECT_EQ(m.front().rows, 64u);
  EXPECT_EQ(slurp(a / "manifest.json"), slurp(b / "manifest.json"));
  for (const auto& e : m) EXPECT_EQ(slurp(a / e.image_path), slurp(b / e.image_path));
  EXPECT_TRUE(fs::exists(a / "config.toml"));
}

TEST_F(Cli, ConfigFileFlagsWinAndUnknownKeysFail) {
  test::TempDir dir("cli_config");
  write_file(dir / "run.toml", "seed = 5\nn_per_domain = 3\nrows = 32\ncols = 32\n"
                               "[domain.severe]\ngamma = 2.0\n");
  const fs::path out = dir / "g";
  ASSERT_EQ(run({"gen-data", "--config", (dir / "run.toml").string(), "--out", out.string(),
                 "--n-per-domain", "2"})
                .code,
            0);
  EXPECT_EQ(load_manifest(out / "manifest.json").size(), 6u);
  const std::string echo = slurp(out / "config.toml");
  EXPECT_NE(echo.find("seed = 5"), std::string::npos) << echo;
  EXPECT_NE(echo.find("n_per_domain = 2"), std::string::npos) << echo;

  // The echo re-runs to the same bytes.
  const fs::path again = dir / "again";
  ASSERT_EQ(run({"gen-data", "--config", (out / "config.toml").string(), "--out", again.string()})
                .code,
            0);
  for (const auto& e : load_manifest(out / "manifest.json"))
    EXPECT_EQ(slurp(out / e.image_path), slurp(again / e.image_path));

  write_file(dir / "bad.toml", "sead = 5\n");
  EXPECT_EQ(run({"gen-data", "--config", (dir / "bad.toml").string(), "--out",
                 (dir / "x").string()})
                .code,
            static_cast<int>(kConfig));
  EXPECT_EQ(run({"gen-data", "--config", (dir / "missing.toml").string()}).code,
            static_cast<int>(kIo));
  EXPECT_EQ(run({"gen-data", "--rows", "abc", "--out", (dir / "y").string()}).code,
            static_cast<int>(kConfig));
}

TEST_F(Cli, TrainSmokeRunWritesCheckpointsAndLog) {
  test::TempDir dir("cli_train");
  const Result r = run(concat({"train", "--data", data(), "--out", dir.path().string(),
                               "--epochs", "5"},
                              small_model()));
  ASSERT_EQ(r.code, 0) << r.err;
  int ckpts = 0;
  for (const auto& e : fs::directory_iterator(dir.path())) ckpts += e.path().extension() == ".ncat";
  EXPECT_EQ(ckpts, 6);  // five epochs plus best
  EXPECT_NE(r.out.find("epoch 4  train_loss"), std::string::npos) << r.out;
  std::ifstream log(dir / "train_log.csv");
  std::string header;
  std::getline(log, header);
  EXPECT_EQ(header, "epoch,split,metric,value,seed,run_id");
  int rows = 0;
  for (std::string line; std::getline(log, line);) ++rows;
  EXPECT_EQ(rows, 10);
}

TEST_F(Cli, ZeroLearningRateKeepsInitialWeights) {
  test::TempDir a("cli_lr0"), b("cli_lr0_ref");
  const auto args = small_model();
  ASSERT_EQ(run(concat({"train", "--data", data(), "--out", a.path().string(), "--epochs", "2",
                        "--lr", "0", "--weight-decay", "0"},
                       args))
                .code,
            0);
  const Checkpoint last = load_checkpoint(a / "epoch_001.ncat");
  Rng rng = make_rng(0, "init");
  const RuleParams init = RuleParams::init(last.params.config, rng);
  EXPECT_TRUE(bit_equal(last.params.w1, init.w1));
  EXPECT_TRUE(bit_equal(last.params.b1, init.b1));
  EXPECT_TRUE(bit_equal(last.params.w2, init.w2));
}

TEST_F(Cli, ResumeMatchesUnbrokenRun) {
  test::TempDir full("cli_full"), part("cli_part");
  const auto args = small_model();
  ASSERT_EQ(run(concat({"train", "--data", data(), "--out", full.path().string(), "--epochs", "4",
                        "--seed", "2"},
                       args))
                .code,
            0);
  ASSERT_EQ(run(concat({"train", "--data", data(), "--out", part.path().string(), "--epochs", "2",
                        "--seed", "2"},
                       args))
                .code,
            0);
  const Result r = run(concat({"train", "--data", data(), "--out", part.path().string(),
                               "--epochs", "4", "--seed", "2", "--resume",
                               (part / "epoch_001.ncat").string()},
                              args));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.find("epoch 0 "), std::string::npos);
  for (const char* f : {"epoch_003.ncat", "best.ncat", "train_log.csv"})
    EXPECT_EQ(slurp(full / f), slurp(part / f)) << f;

  // Model shape must agree with the checkpoint.
  EXPECT_EQ(run({"train", "--data", data(), "--out", part.path().string(), "--epochs", "4",
                 "--resume", (part / "epoch_001.ncat").string(), "--state-dim", "9",
                 "--hidden", "16"})
                .code,
            static_cast<int>(kCheckpoint));
}

TEST_F(Cli, EvalIsDeterministicAndChecksCompatibility) {
  test::TempDir t("cli_eval_train"), e1("cli_eval1"), e2("cli_eval2");
  ASSERT_EQ(run(concat({"train", "--data", data(), "--out", t.path().string(), "--epochs", "1"},
                       small_model()))
                .code,
            0);
  const std::string ckpt = (t / "best.ncat").string();
  const Result r1 = run({"eval", "--checkpoint", ckpt, "--data", data(), "--out",
                         e1.path().string(), "--seed", "4"});
  ASSERT_EQ(r1.code, 0) << r1.err;
  ASSERT_EQ(run({"eval", "--checkpoint", ckpt, "--data", data(), "--out", e2.path().string(),
                 "--seed", "4"})
                .code,
            0);
  EXPECT_EQ(slurp(e1 / "metrics.csv"), slurp(e2 / "metrics.csv"));
  EXPECT_NE(r1.out.find("t_eval=128"), std::string::npos) << r1.out;
  const std::string csv = slurp(e1 / "metrics.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "sample_id,domain,dice_class1,dice_class2,dice_class3,mean_foreground");
  EXPECT_NE(csv.find("\nmean,all,"), std::string::npos);

  EXPECT_EQ(run({"eval", "--checkpoint", ckpt, "--data", data(), "--out", e1.path().string(),
                 "--eval-domains", "severe"})
                .code,
            static_cast<int>(kConfig));
  EXPECT_EQ(run({"eval", "--checkpoint", (t / "nope.ncat").string(), "--data", data()}).code,
            static_cast<int>(kIo));

  // A checkpoint expecting two image channels cannot read these images.
  RuleParams p = load_checkpoint(ckpt).params;
  NcaConfig two = p.config;
  two.d_img = 2;
  Rng rng(0);
  save_checkpoint(t / "two.ncat", Checkpoint{RuleParams::init(two, rng), {}});
  EXPECT_EQ(run({"eval", "--checkpoint", (t / "two.ncat").string(), "--data", data(), "--out",
                 e1.path().string()})
                .code,
            static_cast<int>(kCheckpoint));
}

TEST_F(Cli, GradcheckPassAndCorruptFail) {
  const Result ok = run({"gradcheck"});
  EXPECT_EQ(ok.code, 0) << ok.out;
  EXPECT_NE(ok.out.find("probed 64 coordinates"), std::string::npos) << ok.out;
  EXPECT_NE(ok.out.find("PASS"), std::string::npos);
  const Result bad = run({"gradcheck", "--corrupt-backward"});
  EXPECT_EQ(bad.code, static_cast<int>(kFailed));
  EXPECT_NE(bad.out.find("FAIL"), std::string::npos);
}

TEST_F(Cli, RolloutFrames) {
  test::TempDir t("cli_roll");
  NcaConfig cfg;
  cfg.state_dim = 8;
  cfg.hidden = 16;
  save_checkpoint(t / "m.ncat", Checkpoint{test::random_params(cfg, 4, 0.05f), {}});
  Rng rng(2);
  io::save_tensor(t / "img.ncat", test::random_tensor({1, 12, 10}, rng, 0, 1));
  auto frames = [&](const fs::path& dir) {
    int n = 0;
    for (const auto& e : fs::directory_iterator(dir)) n += e.path().extension() == ".ppm";
    return n;
  };
  const std::vector<std::string> base = {"rollout", "--checkpoint", (t / "m.ncat").string(),
                                         "--image", (t / "img.ncat").string()};
  ASSERT_EQ(run(concat(base, {"--steps", "0", "--out", (t / "r0").string()})).code, 0);
  EXPECT_EQ(frames(t / "r0"), 1);
  ASSERT_EQ(run(concat(base, {"--steps", "6", "--out", (t / "a").string()})).code, 0);
  ASSERT_EQ(run(concat(base, {"--steps", "6", "--out", (t / "b").string()})).code, 0);
  EXPECT_EQ(frames(t / "a"), 7);
  for (int i = 0; i <= 6; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%04d.ppm", i);
    EXPECT_EQ(slurp(t / "a" / name), slurp(t / "b" / name)) << name;
  }
  EXPECT_EQ(slurp(t / "a/frame_0000.ppm").substr(0, 13), "P6\n10 12\n255\n");
  io::save_tensor(t / "img3.ncat", Tensor({3, 4, 4}));
  EXPECT_EQ(run({"rollout", "--checkpoint", (t / "m.ncat").string(), "--image",
                 (t / "img3.ncat").string(), "--out", (t / "c").string()})
                .code,
            static_cast<int>(kCheckpoint));
}

TEST_F(Cli, LogoWritesReport) {
  test::TempDir t("cli_logo");
  ASSERT_EQ(run({"gen-data", "--out", (t / "d").string(), "--n-per-domain", "6", "--rows", "32",
                 "--cols", "32"})
                .code,
            0);
  const Result r = run(concat({"logo", "--data", (t / "d").string(), "--out",
                               (t / "r").string(), "--n-runs", "1", "--epochs", "1"},
                              small_model()));
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string csv = slurp(t / "r/report.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "target,run,split,dice,excluded");
  int lines = 0;
  for (char c : csv) lines += c == '\n';
  EXPECT_EQ(lines, 7);
  const std::string table = slurp(t / "r/report.txt");
  EXPECT_LT(table.find("mild"), table.find("severe"));
  EXPECT_LT(table.find("severe"), table.find("Mean OOD"));
  EXPECT_TRUE(fs::exists(t / "r/runs/severe/run0/best.ncat"));
}

}  // namespace
}  // namespace nca::cli
