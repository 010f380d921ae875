#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "irismatch/irismatch.hpp"

using namespace irismatch;

namespace {

void merge(RunConfig& c, const std::string& text) {
  std::istringstream in(text);
  c.merge_text(in, "inline");
}

}  // namespace

TEST(RunConfig, DefaultsReproduceLibraryDefaults) {
  const RunConfig c;
  const SynthSpec s = c.synth_spec(), d;
  EXPECT_EQ(s.identities, d.identities);
  EXPECT_EQ(s.height, d.height);
  EXPECT_EQ(s.occlusion_max_height, d.occlusion_max_height);
  EXPECT_DOUBLE_EQ(s.noise_sigma, d.noise_sigma);
  const TrainConfig t = c.train_config(), td;
  EXPECT_DOUBLE_EQ(t.lr, td.lr);
  EXPECT_EQ(t.batch_size, td.batch_size);
  EXPECT_EQ(t.stage1_epochs, td.stage1_epochs);
  EXPECT_EQ(t.total_epochs, td.total_epochs);
  EXPECT_DOUBLE_EQ(t.selection_far, td.selection_far);
  EXPECT_EQ(c.architecture(110, 512), ArchitectureSpec{});
  EXPECT_EQ(c.reals("far"), (std::vector<double>{0.1, 0.01, 0.001, 0.0001}));
  EXPECT_DOUBLE_EQ(c.log_gabor().wavelength, 18.0);
}

TEST(RunConfig, KeysAreUniqueAndDocumented) {
  std::set<std::string> names;
  for (const auto& k : config_keys()) {
    EXPECT_TRUE(names.insert(k.name).second) << k.name;
    EXPECT_FALSE(k.help.empty()) << k.name;
  }
}

TEST(RunConfig, UnknownKeyIsRejected) {
  RunConfig c;
  EXPECT_THROW(c.set("learning_rate", "0.1"), ConfigError);
  EXPECT_THROW(merge(c, "lr = 0.1\ncolour = red\n"), ConfigError);
  EXPECT_THROW(merge(c, "just words\n"), ConfigError);
}

TEST(RunConfig, LaterSourcesOverrideEarlierOnes) {
  RunConfig c;
  merge(c, "# comment\nlr = 0.5\nseed = 3\n\n");
  EXPECT_DOUBLE_EQ(c.real("lr"), 0.5);
  merge(c, "lr=0.25");
  c.set("seed", "9");
  EXPECT_DOUBLE_EQ(c.train_config().lr, 0.25);
  EXPECT_EQ(c.train_config().seed, 9u);
}

TEST(RunConfig, SnapshotRoundTrips) {
  RunConfig c;
  c.set("matcher", "8:3:1:bn:0,16:3:2:nobn:0.2");
  c.set("far", "0.05,0.005");
  c.set("record_wall_time", "false");
  const std::string snap = c.snapshot("train");
  EXPECT_EQ(snap.rfind("# irismatch train configuration\n", 0), 0u);
  RunConfig back;
  merge(back, snap);
  EXPECT_EQ(back.snapshot("train"), snap);
  EXPECT_FALSE(back.train_config().record_wall_time);
}

TEST(RunConfig, BadValuesNameTheKey) {
  RunConfig c;
  c.set("batch_size", "many");
  try {
    c.train_config();
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("batch_size"), std::string::npos);
  }
  c = RunConfig{};
  c.set("record_wall_time", "perhaps");
  EXPECT_THROW(c.train_config(), ConfigError);
  c = RunConfig{};
  c.set("bank_kernels", "3x");
  EXPECT_THROW(c.architecture(32, 128), ConfigError);
  c = RunConfig{};
  c.set("far", "0.1,x");
  EXPECT_THROW(c.reals("far"), ConfigError);
}
