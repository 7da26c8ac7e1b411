#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "advx/cli/commands.hpp"
#include "advx/cli/run_config.hpp"
#include "advx/errors.hpp"
#include "advx/io.hpp"

using namespace advx;
using namespace advx::cli;
namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "advx_cli_tests";

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// Runs the advx binary; returns its exit status.
int run_advx(const std::string& args) {
  const std::string cmd = std::string(ADVX_CLI_PATH) + " " + args + " > " + (kWork / "last.log").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string last_log() { return slurp(kWork / "last.log"); }

// A tiny, fast configuration shared by the end-to-end tests.
fs::path tiny_config() {
  const fs::path p = kWork / "tiny.cfg";
  std::ofstream(p) << "# small synthetic run\n"
                      "data.format=synthetic\n"
                      "data.k_core=2\n"
                      "synthetic.users=60\n"
                      "synthetic.items=30\n"
                      "synthetic.tastes=3\n"
                      "synthetic.min_interactions=5\n"
                      "synthetic.max_interactions=10\n"
                      "model.hidden=8\n"
                      "model.latent=3\n"
                      "model.adv_hidden=4\n"
                      "train.epochs_adversarial=2\n"
                      "train.epochs_attack=2\n"
                      "train.batch_size=16\n"
                      "eval.folds=0\n";
  return p;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::size_t columns(const std::string& line, char sep) {
  return static_cast<std::size_t>(std::count(line.begin(), line.end(), sep)) + 1;
}

class CliRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kWork);
    fs::create_directories(kWork);
  }
  fs::path dir(const std::string& name) const { return kWork / name; }
};

}  // namespace

TEST(RunConfig, DefaultsAndOverrides) {
  RunConfig c;
  EXPECT_EQ(c.count("train.epochs_adversarial"), 200u);
  EXPECT_EQ(c.count("train.epochs_attack"), 50u);
  EXPECT_EQ(c.integers("eval.folds").size(), 5u);
  EXPECT_EQ(c.grid_values().at(0).second, (std::vector<double>{0, 1, 200, 400, 600, 800}));
  c.merge_text("train.batch_size=128\n# comment\n\nlambda.gender=400\n", "test.cfg");
  EXPECT_EQ(c.train_config().batch_size, 128u);
  EXPECT_EQ(c.lambdas().at("gender"), 400.0);
  EXPECT_EQ(c.lambdas().at("age"), 0.0);
}

TEST(RunConfig, ErrorsNameOriginAndLine) {
  RunConfig c;
  try {
    c.merge_text("train.batch_size=64\ntrain.bogus=1\n", "run.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("run.cfg:2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(c.set("train.batch_size", "many"), ConfigError);
  EXPECT_THROW(c.set("model.activation", "relu6"), ConfigError);
  EXPECT_THROW(c.merge_text("no equals sign\n", "x"), ConfigError);
}

TEST(RunConfig, PerAttributeKeysMustNameTrainedAttributes) {
  RunConfig c;
  c.set("attributes.names", "gender");
  c.set("lambda.age", "1");
  EXPECT_THROW(c.validate(), ConfigError);
  RunConfig d;
  d.set("lambda.gender", "-3");
  EXPECT_THROW(d.validate(), ConfigError);
  RunConfig e;
  e.set("attributes.names", "gender,country");
  EXPECT_THROW(e.validate(), ConfigError);
}

TEST(RunConfig, RenderRoundTrips) {
  RunConfig c;
  c.set("train.lr", "0.002");
  c.set("lambda.age", "600");
  RunConfig back;
  back.merge_text(c.render(), "rendered");
  EXPECT_EQ(back.render(), c.render());
  EXPECT_EQ(back.real("train.lr"), 0.002);
}

TEST(Naming, CombinationDirAndNumbers) {
  EXPECT_EQ(combination_dir({{"gender", 400.0}, {"age", 0.0}}, {"gender", "age"}), "gender=400_age=0");
  EXPECT_EQ(format_number(0.1), "0.1");
  EXPECT_EQ(format_number(200), "200");
  EXPECT_EQ(std::stod(format_number(1.0 / 3.0)), 1.0 / 3.0);
}

TEST_F(CliRun, UsageErrors) {
  EXPECT_EQ(run_advx(""), 2);
  EXPECT_EQ(run_advx("train"), 2);  // --out is required
  EXPECT_EQ(run_advx("frobnicate --out " + dir("x").string()), 2);
  EXPECT_EQ(run_advx("train --out " + dir("x").string() + " --set train.nope=1"), 2);
  EXPECT_NE(last_log().find("train.nope"), std::string::npos);
  EXPECT_EQ(run_advx("train --out " + dir("x").string() + " --lambda gender"), 2);
  EXPECT_EQ(run_advx("--version"), 0);
}

TEST_F(CliRun, MissingDemographicsFile) {
  const fs::path inter = dir("inter.tsv");
  std::ofstream(inter) << "user_id\titem_id\na\tx\n";
  EXPECT_EQ(run_advx("preprocess --out " + dir("missing").string() + " --set data.format=tsv --set data.interactions=" +
                 inter.string() + " --set data.demographics=" + dir("absent.tsv").string()),
            1);
  EXPECT_NE(last_log().find("absent.tsv"), std::string::npos) << last_log();
}

TEST_F(CliRun, EvalBeforeTrain) {
  const fs::path out = dir("untrained");
  const std::string common = " --config " + tiny_config().string() + " --out " + out.string();
  ASSERT_EQ(run_advx("preprocess" + common), 0) << last_log();
  EXPECT_EQ(run_advx("eval" + common), 1);
  EXPECT_NE(last_log().find("run train first"), std::string::npos) << last_log();
  EXPECT_EQ(run_advx("attack" + common), 1);
}

TEST_F(CliRun, FullPipeline) {
  const fs::path out = dir("pipeline");
  const std::string common = " --config " + tiny_config().string() + " --out " + out.string() + " --seed 7";
  ASSERT_EQ(run_advx("preprocess" + common), 0) << last_log();
  EXPECT_TRUE(fs::exists(out / "stats.tsv"));
  EXPECT_TRUE(fs::exists(out / "preprocess_manifest.cfg"));
  ASSERT_EQ(run_advx("train" + common + " --lambda gender=200 --lambda age=1"), 0) << last_log();
  EXPECT_TRUE(fs::exists(out / "fold_0" / "model.ckpt"));
  EXPECT_EQ(lines(slurp(out / "fold_0" / "epochs.csv")).size(), 3u);  // header + 2 epochs
  ASSERT_EQ(run_advx("attack" + common), 0) << last_log();
  EXPECT_TRUE(fs::exists(out / "fold_0" / "attacker.ckpt"));
  ASSERT_EQ(run_advx("eval" + common), 0) << last_log();
  const auto metrics = lines(slurp(out / "metrics.csv"));
  ASSERT_GE(metrics.size(), 2u);
  EXPECT_NE(metrics[0].find("bacc_gender"), std::string::npos);
  EXPECT_NE(metrics[1].find("AdvXMultVAE"), std::string::npos);
  ASSERT_EQ(run_advx("export-embeddings" + common), 0) << last_log();
  const auto emb = lines(slurp(out / "fold_0" / "embeddings.tsv"));
  ASSERT_GE(emb.size(), 2u);
  EXPECT_EQ(columns(emb[0], '\t'), 1u + 3u + 4u);
  EXPECT_EQ(columns(emb[1], '\t'), 1u + 3u + 4u);
}

TEST_F(CliRun, TrainingIsReproducible) {
  const std::string cfg = " --config " + tiny_config().string() + " --seed 3";
  for (const std::string run : {"rep_a", "rep_b"}) {
    ASSERT_EQ(run_advx("preprocess --out " + dir(run).string() + cfg), 0) << last_log();
    ASSERT_EQ(run_advx("train --out " + dir(run).string() + cfg + " --lambda gender=400"), 0) << last_log();
  }
  EXPECT_EQ(slurp(dir("rep_a") / "fold_0" / "model.ckpt"), slurp(dir("rep_b") / "fold_0" / "model.ckpt"));
  // Replaying the recorded configuration reproduces the checkpoint.
  const fs::path recorded = dir("rep_a") / "train_manifest.cfg";
  ASSERT_TRUE(fs::exists(recorded));
  ASSERT_EQ(run_advx("preprocess --out " + dir("rep_c").string() + " --config " + recorded.string()), 0) << last_log();
  ASSERT_EQ(run_advx("train --out " + dir("rep_c").string() + " --config " + recorded.string()), 0) << last_log();
  EXPECT_EQ(slurp(dir("rep_a") / "fold_0" / "model.ckpt"), slurp(dir("rep_c") / "fold_0" / "model.ckpt"));
}

TEST_F(CliRun, GridWritesEveryCombination) {
  const fs::path out = dir("grid");
  const std::string common = " --config " + tiny_config().string() + " --out " + out.string() +
                             " --set train.epochs_adversarial=1 --set train.epochs_attack=1 --workers 2";
  ASSERT_EQ(run_advx("preprocess" + common), 0) << last_log();
  ASSERT_EQ(run_advx("grid" + common), 0) << last_log();
  std::size_t combo_dirs = 0;
  for (const auto& e : fs::directory_iterator(out)) {
    if (e.is_directory() && e.path().filename().string().starts_with("gender=")) {
      ++combo_dirs;
      EXPECT_TRUE(fs::exists(e.path() / "metrics.csv"));
    }
  }
  EXPECT_EQ(combo_dirs, 36u);
  EXPECT_TRUE(fs::exists(out / "gender=0_age=0"));
  EXPECT_TRUE(fs::exists(out / "gender=800_age=800"));
  EXPECT_EQ(lines(slurp(out / "results.csv")).size(), 1u + 36u);
  EXPECT_TRUE(fs::exists(out / "summary.csv"));
  EXPECT_TRUE(fs::exists(out / "significance.csv"));
  EXPECT_TRUE(fs::exists(out / "grid_manifest.cfg"));
}
