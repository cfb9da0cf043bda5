#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "memefuse/cli.hpp"
#include "test_support.hpp"

namespace memefuse {
namespace {

using nlohmann::json;
using testing::TempDir;

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "memefuse");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

json read_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

std::size_t count_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) n += line.empty() ? 0 : 1;
  return n;
}

// Fixture data, captions and rationales in a temp directory with a run config.
class CliWorkspace : public ::testing::Test {
 protected:
  TempDir dir;
  std::string root() const { return dir.path().string(); }
  std::string path(const std::string& rel) const { return (dir / rel).string(); }

  void write_config(const std::string& extra = {}) {
    std::ofstream(dir / "run.jsonc") << "// test run\n{\n"
                                     << "  \"dataset\": \"fixture\",\n"
                                     << "  \"train\": \"data/train.jsonl\",\n"
                                     << "  \"test\": \"data/test.jsonl\",\n"
                                     << "  \"captions\": \"work/captions.jsonl\",\n"
                                     << "  \"rationales\": \"work/rationales.jsonl\",\n"
                                     << "  \"output_dir\": \"runs\",\n"
                                     << extra << "  \"chat\": {\"transport\": \"template\"}\n}\n";
  }

  void prepare() {
    ASSERT_EQ(run({"fixtures", "--out", path("data"), "-n", "4"}).code, 0);
    ASSERT_EQ(run({"preprocess", "-d", path("data/train.jsonl"), "-c", path("work/captions.jsonl")}).code, 0);
    write_config();
    const Result r = run({"abduce", "--config", path("run.jsonc")});
    ASSERT_EQ(r.code, 0) << r.err;
  }
};

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run({}).code, exit_code::config);
  EXPECT_EQ(run({"frobnicate"}).code, exit_code::config);
  EXPECT_EQ(run({"train"}).code, exit_code::config);
  EXPECT_EQ(run({"--help"}).code, exit_code::ok);
}

TEST(Cli, ExitCodesAreDistinct) {
  const std::set<int> codes{exit_code::config, exit_code::data, exit_code::transport, exit_code::integrity,
                            exit_code::pipeline};
  EXPECT_EQ(codes.size(), 5u);
  EXPECT_FALSE(codes.contains(exit_code::ok));
  EXPECT_EQ(exit_code_for(ErrorKind::integrity), exit_code::integrity);
  EXPECT_EQ(exit_code_for(ErrorKind::transport), exit_code::transport);
}

TEST_F(CliWorkspace, PreprocessIsIdempotent) {
  ASSERT_EQ(run({"fixtures", "--out", path("data"), "-n", "6"}).code, 0);
  const Result first = run({"preprocess", "-d", path("data/train.jsonl"), "-c", path("work/captions.jsonl")});
  ASSERT_EQ(first.code, 0) << first.err;
  EXPECT_NE(first.out.find("6 computed"), std::string::npos);
  const Result second = run({"preprocess", "-d", path("data/train.jsonl"), "-c", path("work/captions.jsonl")});
  EXPECT_NE(second.out.find("0 computed, 6 reused"), std::string::npos);
  EXPECT_EQ(count_lines(dir / "work/captions.jsonl"), 6u);
  EXPECT_TRUE(std::filesystem::exists(dir / "work/manifest.preprocess.json"));
  EXPECT_FALSE(std::filesystem::exists(RunDirLock::lock_path(dir / "work")));
}

TEST_F(CliWorkspace, MissingDatasetIsDataError) {
  const Result r = run({"preprocess", "-d", path("nope.jsonl"), "-c", path("work/c.jsonl")});
  EXPECT_EQ(r.code, exit_code::data);
  EXPECT_NE(r.err.find("nope.jsonl"), std::string::npos);
}

TEST_F(CliWorkspace, LockedDirectoryIsRefused) {
  ASSERT_EQ(run({"fixtures", "--out", path("data"), "-n", "4"}).code, 0);
  std::filesystem::create_directories(dir / "work");
  std::ofstream(RunDirLock::lock_path(dir / "work")) << "123\n";
  const Result r = run({"preprocess", "-d", path("data/train.jsonl"), "-c", path("work/captions.jsonl")});
  EXPECT_EQ(r.code, exit_code::config);
  EXPECT_NE(r.err.find("in use"), std::string::npos);
}

TEST_F(CliWorkspace, AbduceOfflineWithoutCache) {
  ASSERT_EQ(run({"fixtures", "--out", path("data"), "-n", "4"}).code, 0);
  ASSERT_EQ(run({"preprocess", "-d", path("data/train.jsonl"), "-c", path("work/captions.jsonl")}).code, 0);
  const Result r = run({"abduce", "-d", path("data/train.jsonl"), "-c", path("work/captions.jsonl"), "-o",
                        path("work/rationales.jsonl"), "-t", "none"});
  EXPECT_EQ(r.code, exit_code::config);
  EXPECT_NE(r.err.find("configure a chat client"), std::string::npos);
}

TEST_F(CliWorkspace, AbduceRerunMakesNoUpstreamCalls) {
  prepare();
  const json first = read_json(dir / "work/rationales.summary.json");
  EXPECT_EQ(first["upstream_calls"], 4);
  EXPECT_EQ(first["valid"], 4);
  EXPECT_EQ(count_lines(dir / "work/rationales.jsonl"), 4u);
  EXPECT_TRUE(std::filesystem::exists(dir / "work/transcript.jsonl"));
  ASSERT_EQ(run({"abduce", "--config", path("run.jsonc")}).code, 0);
  EXPECT_EQ(read_json(dir / "work/rationales.summary.json")["upstream_calls"], 0);

  // Offline reruns are served from the persistent cache.
  const Result offline = run({"abduce", "--config", path("run.jsonc"), "-t", "none"});
  EXPECT_EQ(offline.code, 0) << offline.err;

  // Replaying the transcript from a fresh cache reproduces the corpus.
  const Result replay = run({"abduce", "--config", path("run.jsonc"), "-t", "replay", "--transcript",
                             path("work/transcript.jsonl"), "-o", path("replay/rationales.jsonl")});
  ASSERT_EQ(replay.code, 0) << replay.err;
  std::ifstream a(dir / "work/rationales.jsonl"), b(dir / "replay/rationales.jsonl");
  std::stringstream sa, sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  EXPECT_EQ(sa.str(), sb.str());
}

TEST_F(CliWorkspace, TrainEvalAndTamper) {
  prepare();
  const Result tr = run({"train", "--config", path("run.jsonc"), "--seed", "1", "--seed", "2"});
  ASSERT_EQ(tr.code, 0) << tr.err;
  for (const char* seed : {"seed-1", "seed-2"}) {
    const auto d = dir / "runs" / seed;
    EXPECT_TRUE(std::filesystem::exists(d / "stage1.ckpt.json"));
    EXPECT_TRUE(std::filesystem::exists(d / "stage2.ckpt.json"));
    EXPECT_TRUE(std::filesystem::exists(d / "config.json"));
    EXPECT_GT(count_lines(d / "train_log.jsonl"), 0u);
    const json m = read_json(d / "manifest.train.json");
    EXPECT_EQ(m["command"], "train");
    EXPECT_EQ(m["stages"].size(), 2u);
  }

  const Result ev = run({"eval", "-k", path("runs/seed-1/stage2.ckpt.json"), "-k", path("runs/seed-2/stage2.ckpt.json"),
                         "-t", path("data/test.jsonl"), "-o", path("eval")});
  ASSERT_EQ(ev.code, 0) << ev.err;
  const json report = read_json(dir / "eval/eval_report.0.json");
  EXPECT_EQ(report["accuracy"], 1.0);
  EXPECT_TRUE(std::filesystem::exists(dir / "eval/eval_report.1.txt"));
  EXPECT_EQ(count_lines(dir / "eval/predictions.0.jsonl"), 4u);
  EXPECT_EQ(read_json(dir / "eval/summary.json")["runs"], 2);
  EXPECT_NE(ev.out.find("mean over 2 runs"), std::string::npos);

  // A distillation checkpoint cannot be scored, but can dump rationales.
  EXPECT_EQ(run({"eval", "-k", path("runs/seed-1/stage1.ckpt.json"), "-t", path("data/test.jsonl"), "-o",
                 path("eval1")})
                .code,
            exit_code::config);
  ASSERT_EQ(run({"eval", "-k", path("runs/seed-1/stage1.ckpt.json"), "-t", path("data/test.jsonl"), "-o",
                 path("eval2"), "--rationales"})
                .code,
            0);
  EXPECT_EQ(count_lines(dir / "eval2/rationales.jsonl"), 4u);

  // Flip one byte of the payload.
  std::string body;
  {
    std::ifstream in(dir / "runs/seed-1/stage2.ckpt.json", std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    body = ss.str();
  }
  body[body.find("fusion.1")] = 'X';
  std::ofstream(dir / "bad.ckpt.json", std::ios::binary) << body;
  EXPECT_EQ(run({"eval", "-k", path("bad.ckpt.json"), "-t", path("data/test.jsonl"), "-o", path("eval3")}).code,
            exit_code::integrity);
}

TEST_F(CliWorkspace, TrainWithoutRationalesIsDataError) {
  ASSERT_EQ(run({"fixtures", "--out", path("data"), "-n", "4"}).code, 0);
  write_config();
  const Result r = run({"train", "--config", path("run.jsonc")});
  EXPECT_EQ(r.code, exit_code::data);
  EXPECT_NE(r.err.find("abduce"), std::string::npos);
  // The label-only schedule needs no rationales.
  EXPECT_EQ(run({"train", "--config", path("run.jsonc"), "--schedule", "infer_only"}).code, 0);
  EXPECT_TRUE(std::filesystem::exists(dir / "runs/seed-1/model.ckpt.json"));
}

TEST_F(CliWorkspace, BadConfigIsConfigError) {
  std::ofstream(dir / "bad.jsonc") << "{\"dataset\": \"fixture\", \"colour\": 1}";
  EXPECT_EQ(run({"train", "--config", path("bad.jsonc")}).code, exit_code::config);
}

TEST_F(CliWorkspace, AblateWritesReport) {
  prepare();
  write_config("  \"stages\": {\"distill\": {\"epochs\": 20}, \"infer\": {\"epochs\": 20}},\n");
  const Result r = run({"ablate", "--config", path("run.jsonc")});
  ASSERT_EQ(r.code, 0) << r.err;
  const json rep = read_json(dir / "runs/ablation/ablation_report.seed-1.json");
  EXPECT_EQ(rep["rows"].size(), 5u);
  EXPECT_EQ(rep["one_stage_variants"].size(), 2u);
  EXPECT_TRUE(std::filesystem::exists(dir / "runs/ablation/ablation_report.seed-1.txt"));
  EXPECT_TRUE(std::filesystem::exists(dir / "runs/ablation/manifest.ablate.json"));
}

}  // namespace
}  // namespace memefuse
