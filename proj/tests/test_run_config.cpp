#include <gtest/gtest.h>

#include <fstream>

#include "memefuse/errors.hpp"
#include "memefuse/run_config.hpp"
#include "test_support.hpp"

namespace memefuse {
namespace {

using testing::TempDir;

TEST(RunConfig, ExampleFileParses) {
  const RunConfig c = load_run_config(std::string(MEMEFUSE_CONFIG_DIR) + "/example.jsonc");
  EXPECT_EQ(c.dataset, "harm-c");
  EXPECT_EQ(c.schedule, Schedule::two_stage);
  EXPECT_EQ(c.mode, AblationMode::full);
  EXPECT_EQ(c.seeds.size(), 10u);
  EXPECT_EQ(c.stages.distill.epochs, 10);
  EXPECT_EQ(c.stages.infer.epochs, 30);
  EXPECT_EQ(c.chat.transport, "http");
  EXPECT_EQ(c.chat.api_key_env, "OPENAI_API_KEY");
  EXPECT_TRUE(c.train.is_absolute());
  EXPECT_EQ(c.train.filename(), "train.jsonl");
}

TEST(RunConfig, FixtureFileParses) {
  const RunConfig c = load_run_config(std::string(MEMEFUSE_CONFIG_DIR) + "/fixture.jsonc");
  EXPECT_EQ(c.dataset, "fixture");
  EXPECT_EQ(c.stages.distill.peak_lr, defaults_for_dataset("fixture").distill.peak_lr);
  EXPECT_EQ(c.chat.transport, "template");
}

TEST(RunConfig, DefaultsFollowDataset) {
  const RunConfig c = run_config_from_json(parse_jsonc(R"({"dataset": "harm-p"})"));
  EXPECT_EQ(c.stages.infer.peak_lr, 5e-4);
  EXPECT_EQ(c.model.preset, SizePreset::tiny);
  EXPECT_EQ(c.seeds, std::vector<std::uint64_t>{1});
}

TEST(RunConfig, StageOverridesKeepOtherDefaults) {
  const RunConfig c =
      run_config_from_json(parse_jsonc(R"({"dataset": "fhm", "stages": {"infer": {"epochs": 2}}})"));
  EXPECT_EQ(c.stages.infer.epochs, 2);
  EXPECT_EQ(c.stages.infer.peak_lr, 1e-4);
}

TEST(RunConfig, RejectsUnknownKeys) {
  EXPECT_THROW(run_config_from_json(parse_jsonc(R"({"datset": "fhm"})")), ConfigError);
  EXPECT_THROW(run_config_from_json(parse_jsonc(R"({"model": {"width": 3}})")), ConfigError);
  EXPECT_THROW(run_config_from_json(parse_jsonc(R"({"chat": {"key": "sk"}})")), ConfigError);
  EXPECT_THROW(run_config_from_json(parse_jsonc(R"({"stages": {"distill": {"lr": 1}}})")), ConfigError);
}

TEST(RunConfig, RejectsBadValues) {
  EXPECT_THROW(run_config_from_json(parse_jsonc(R"({"dataset": "mami"})")), ConfigError);
  EXPECT_THROW(run_config_from_json(parse_jsonc(R"({"mode": "everything"})")), ConfigError);
  EXPECT_THROW(run_config_from_json(parse_jsonc(R"({"schedule": "three_stage"})")), ConfigError);
  EXPECT_THROW(run_config_from_json(parse_jsonc(R"({"chat": {"transport": "carrier-pigeon"}})")), ConfigError);
  EXPECT_THROW(run_config_from_json(parse_jsonc(R"({"seeds": []})")), ConfigError);
  EXPECT_THROW(run_config_from_json(parse_jsonc(R"({"seeds": "one"})")), ConfigError);
  EXPECT_THROW(run_config_from_json(parse_jsonc(R"({"model": {"heads": 3}})")), ConfigError);
  EXPECT_THROW(run_config_from_json(parse_jsonc(R"({"stages": {"infer": {"warmup_fraction": 0}}})")), ConfigError);
  EXPECT_THROW(parse_jsonc("{ not json"), ConfigError);
}

TEST(RunConfig, PathsResolveAgainstConfigDirectory) {
  TempDir dir;
  std::ofstream(dir / "run.jsonc") << "// comment\n{\"train\": \"data/t.jsonl\", \"test\": \"/abs/x.jsonl\"}";
  const RunConfig c = load_run_config(dir / "run.jsonc");
  EXPECT_EQ(c.train, dir / "data/t.jsonl");
  EXPECT_EQ(c.test, "/abs/x.jsonl");
}

TEST(RunConfig, DigestTracksContent) {
  const RunConfig a = run_config_from_json(parse_jsonc(R"({"seeds": [1, 2]})"));
  const RunConfig b = run_config_from_json(parse_jsonc(R"({"seeds": [1, 2]})"));
  const RunConfig c = run_config_from_json(parse_jsonc(R"({"seeds": [1, 3]})"));
  EXPECT_EQ(a.digest(), b.digest());
  EXPECT_NE(a.digest(), c.digest());
  EXPECT_EQ(run_config_from_json(a.to_json()).digest(), a.digest());
}

TEST(RunConfig, MissingFile) { EXPECT_ANY_THROW(load_run_config("/nonexistent/run.jsonc")); }

}  // namespace
}  // namespace memefuse
