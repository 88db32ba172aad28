#include <gtest/gtest.h>

#include "cxr/cli/experiment.hpp"

namespace cxr {
namespace {

TEST(ExperimentConfig, ParsesKeysAndComments) {
  const auto c = ExperimentConfig::parse(
      "# comment\n"
      "synth_n_studies = 120\n"
      "policy = u-ones   # trailing\n"
      "weights = literal\n"
      "resolutions = 64,48\n"
      "initial_lr = 0.001\n\n");
  EXPECT_EQ(c.synth.n_studies, 120);
  EXPECT_EQ(c.policy, PolicyKind::kUOnes);
  EXPECT_EQ(c.weights, WeightMode::kLiteral);
  EXPECT_EQ(c.resolutions, (std::vector<int>{64, 48}));
  EXPECT_EQ(c.train.initial_lr, 0.001);
  EXPECT_TRUE(c.synthetic());
}

TEST(ExperimentConfig, UnknownKeyIsUsageError) {
  EXPECT_THROW(ExperimentConfig::parse("learning_rate = 1\n"), UsageError);
  EXPECT_THROW(ExperimentConfig::parse("no equals sign\n"), UsageError);
}

TEST(ExperimentConfig, TextRoundTrip) {
  ExperimentConfig c;
  c.synth.seed = 99;
  c.policy = PolicyKind::kUIgnore;
  c.train.batch_size = 7;
  c.resolutions = {40, 32, 24};
  const auto back = ExperimentConfig::parse(c.to_text());
  EXPECT_EQ(back.to_text(), c.to_text());
  EXPECT_EQ(back.synth.seed, 99u);
  EXPECT_EQ(back.train.batch_size, 7);
}

TEST(ExperimentConfig, EchoWritesVersion) {
  const auto dir = std::filesystem::temp_directory_path() / "cxr_cli_echo";
  std::filesystem::remove_all(dir);
  write_run_echo(dir, "a = 1\n");
  EXPECT_EQ(read_text_file(dir / "config.txt"), "a = 1\n");
  EXPECT_EQ(read_text_file(dir / "VERSION"), "cxr " + std::string(tool_version()) + "\n");
}

}  // namespace
}  // namespace cxr
