#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "pgt/cli.hpp"
#include "pgt/config.hpp"

using namespace pgt;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("pgt_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  // Small but complete training run.
  std::string write_config(const std::string& name, const std::string& extra = "",
                           const std::string& layers = "tconv:4:pmco,relu,tconv:4:pmco,relu") const {
    RunConfig c;
    c.set("model.layers", layers);
    c.set("task.train_size", "18");
    c.set("task.val_size", "9");
    c.set("train.epochs", "3");
    c.set("train.warmup_epochs", "1");
    c.set("train.batch_size", "6");
    c.set("io.checkpoint", path(name + ".ckpt"));
    c.set("io.metrics", path(name + ".csv"));
    std::istringstream is(extra);
    for (std::string line; std::getline(is, line);) {
      if (line.find('=') == std::string::npos) continue;
      const auto eq = line.find('=');
      const auto trim = [](std::string v) {
        v.erase(0, v.find_first_not_of(' '));
        v.erase(v.find_last_not_of(' ') + 1);
        return v;
      };
      c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    c.save(path(name));
    return path(name);
  }

  int run(std::vector<std::string> args) {
    args.insert(args.begin(), "pgt");
    out_.str("");
    err_.str("");
    return run_cli(args, out_, err_);
  }

  fs::path dir_;
  std::ostringstream out_, err_;
};

}  // namespace

TEST(Config, SerializeParseRoundTripIsByteIdentical) {
  RunConfig c;
  c.seed = 77;
  c.train.lr = 0.1;
  c.train.weight_decay = 1e-7;
  c.pmco_alpha = 0.3;
  c.schedule.dpr = DprMode::a;
  c.io.data = "some/prefix";
  const std::string text = c.serialize();
  EXPECT_EQ(RunConfig::parse(text).serialize(), text);
  EXPECT_EQ(RunConfig{}.serialize(), RunConfig::parse(RunConfig{}.serialize()).serialize());
  const auto keys = RunConfig::keys();
  EXPECT_TRUE(std::is_sorted(keys.begin(), keys.end()));
  EXPECT_EQ(lines_of(text).size(), keys.size());
}

TEST(Config, DigestIgnoresLineOrder) {
  const std::string a = "model.layers = tconv:8:pmco,relu\nmodel.pmco_alpha = 0.25\ntask.channels = 6\n";
  const std::string b = "task.channels = 6\n# comment\n\nmodel.pmco_alpha = 0.25\nmodel.layers = tconv:8:pmco,relu\n";
  EXPECT_EQ(RunConfig::parse(a).model_spec().digest(), RunConfig::parse(b).model_spec().digest());
  EXPECT_NE(RunConfig::parse(a).model_spec().digest(), RunConfig{}.model_spec().digest());
}

TEST(Config, ErrorsNameTheKey) {
  auto message = [](const std::string& text) {
    try {
      RunConfig::parse(text).validate();
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  EXPECT_NE(message("train.learning_rate = 1\n").find("train.learning_rate"), std::string::npos);
  EXPECT_NE(message("train.lr = fast\n").find("train.lr"), std::string::npos);
  EXPECT_NE(message("seed = 1\nseed = 2\n").find("seed"), std::string::npos);
  EXPECT_NE(message("no equals sign\n"), "");
  EXPECT_NE(message("schedule.P = 0\n").find("schedule.P"), std::string::npos);
  EXPECT_NE(message("dtype = f16\n").find("dtype"), std::string::npos);
  EXPECT_NE(message("model.layers = tconv:4:local\n").find("model.layers"), std::string::npos);
  EXPECT_EQ(message("model.layers = tconv:4:local\nschedule.regime = clip\n"), "");
}

TEST(Config, ModelAndTaskAreLinked) {
  const RunConfig c = RunConfig::parse("task.channels = 5\ntask.markers = 4\nschedule.T_prime = 6\n");
  EXPECT_EQ(c.model_spec().in_channels, 5u);
  EXPECT_EQ(c.model_spec().num_classes, 16u);
  EXPECT_EQ(c.task_spec().clip_length, 6u);
}

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run({}), exit_usage);
  EXPECT_EQ(run({"bogus"}), exit_usage);
  EXPECT_EQ(run({"train"}), exit_usage);
  EXPECT_EQ(run({"train", "--config", path("absent.cfg")}), exit_usage);
  const auto cfg = write_config("bad.cfg");
  std::ofstream(cfg, std::ios::app) << "train.momentun = 0.5\n";
  EXPECT_EQ(run({"train", "--config", cfg}), exit_usage);
  EXPECT_NE(err_.str().find("train.momentun"), std::string::npos) << err_.str();
}

TEST_F(Cli, TrainWritesMetricsAndCheckpoint) {
  const auto cfg = write_config("pg.cfg");
  ASSERT_EQ(run({"train", "--config", cfg}), exit_ok) << err_.str();
  const auto rows = lines_of(read_file(path("pg.cfg.csv")));
  ASSERT_EQ(rows.size(), 7u);
  EXPECT_EQ(rows[0], "epoch,split,loss,accuracy,lr,peak_activations,step_loss_1,step_loss_2,step_loss_3,"
                     "step_loss_4,step_loss_5");
  EXPECT_TRUE(fs::exists(path("pg.cfg.ckpt")));
  EXPECT_EQ(run({"eval", "--config", cfg, "--mode", "pg"}), exit_ok);
  EXPECT_NE(out_.str().find("accuracy"), std::string::npos);
  EXPECT_EQ(run({"eval", "--config", cfg, "--mode", "sideways"}), exit_usage);
}

TEST_F(Cli, BaselineHasNoStepColumns) {
  const auto cfg = write_config("clip.cfg", "schedule.regime = clip\n", "tconv:4:local,relu");
  ASSERT_EQ(run({"train", "--config", cfg}), exit_ok) << err_.str();
  EXPECT_EQ(lines_of(read_file(path("clip.cfg.csv")))[0], "epoch,split,loss,accuracy,lr,peak_activations");
  EXPECT_EQ(run({"eval", "--config", cfg, "--mode", "multiview"}), exit_ok);
}

TEST_F(Cli, DprAddsColumnsForLongestDraw) {
  const auto cfg = write_config("dpr.cfg", "schedule.dpr = B\n");
  ASSERT_EQ(run({"train", "--config", cfg}), exit_ok) << err_.str();
  RunConfig c = RunConfig::load(cfg);
  const auto header = lines_of(read_file(path("dpr.cfg.csv")))[0];
  EXPECT_NE(header.find("step_loss_" + std::to_string(c.schedule.max_steps())), std::string::npos) << header;
  EXPECT_EQ(header.find("step_loss_" + std::to_string(c.schedule.max_steps() + 1)), std::string::npos) << header;
}

TEST_F(Cli, InterruptedRunResumesIdentically) {
  const auto a = write_config("a.cfg");
  const auto b = write_config("b.cfg");
  ASSERT_EQ(run({"train", "--config", a}), exit_ok);
  ASSERT_EQ(run({"train", "--config", b, "--stop-after", "1"}), exit_ok);
  EXPECT_EQ(lines_of(read_file(path("b.cfg.csv"))).size(), 3u);
  ASSERT_EQ(run({"train", "--config", b}), exit_ok);
  EXPECT_NE(out_.str().find("resuming"), std::string::npos);

  const auto ra = lines_of(read_file(path("a.cfg.csv")));
  const auto rb = lines_of(read_file(path("b.cfg.csv")));
  ASSERT_EQ(ra.size(), rb.size());
  for (std::size_t i = 0; i < ra.size(); ++i) {
    std::istringstream sa(ra[i]), sb(rb[i]);
    for (std::string ca, cb; std::getline(sa, ca, ',') && std::getline(sb, cb, ',');) {
      char* end = nullptr;
      const double va = std::strtod(ca.c_str(), &end);
      if (ca.empty() || *end != '\0') {
        EXPECT_EQ(ca, cb);
      } else {
        EXPECT_NEAR(va, std::strtod(cb.c_str(), nullptr), 1e-6) << "row " << i;
      }
    }
  }
  EXPECT_EQ(read_file(path("a.cfg.ckpt")), read_file(path("b.cfg.ckpt")));

  ASSERT_EQ(run({"train", "--config", b, "--fresh", "--stop-after", "1"}), exit_ok);
  EXPECT_EQ(lines_of(read_file(path("b.cfg.csv"))).size(), 3u);
}

TEST_F(Cli, DivergenceExitsWithNumericCode) {
  const auto cfg = write_config("nan.cfg", "train.lr = 1e300\ntrain.grad_clip = 0\n");
  EXPECT_EQ(run({"train", "--config", cfg}), exit_numeric) << out_.str();
}

TEST_F(Cli, VerifyAndFaultInjection) {
  EXPECT_EQ(run({"verify"}), exit_ok) << out_.str();
  EXPECT_NE(out_.str().find("all invariants hold (f64)"), std::string::npos);
  EXPECT_EQ(run({"verify", "--dtype", "f32"}), exit_ok) << out_.str();
  EXPECT_EQ(run({"verify", "--break-truncation"}), exit_verify_failed);
  EXPECT_NE(out_.str().find("V2"), std::string::npos);
}

TEST_F(Cli, ErfWritesProfilesAndRatio) {
  const auto a = write_config("pgt.cfg", "train.epochs = 2\n");
  const auto b = write_config("clip.cfg", "train.epochs = 2\nschedule.regime = clip\n",
                              "tconv:4:local,relu,tconv:4:local,relu");
  ASSERT_EQ(run({"train", "--config", a}), exit_ok);
  ASSERT_EQ(run({"train", "--config", b}), exit_ok);
  ASSERT_EQ(run({"erf", "--config", a, "--config", b, "--out-dir", dir_.string(), "--sequences", "4"}), exit_ok)
      << err_.str();
  EXPECT_NE(out_.str().find("ratio="), std::string::npos);
  for (const char* name : {"pgt.cfg.erf.csv", "clip.cfg.erf.csv"}) {
    const auto rows = lines_of(read_file(path(name)));
    ASSERT_EQ(rows.size(), 37u) << name;
    EXPECT_EQ(rows[0], "frame_index,magnitude");
    EXPECT_EQ(rows[19], "18,1");
  }
  EXPECT_EQ(run({"erf", "--config", a, "--config", b, "--checkpoint", path("none.ckpt"), "--out-dir", dir_.string()}),
            exit_usage);
}

TEST_F(Cli, MembenchSweep) {
  const auto cfg = write_config("mem.cfg");
  ASSERT_EQ(run({"membench", "--config", cfg, "--out", path("mem.csv")}), exit_ok) << err_.str();
  const auto rows = lines_of(read_file(path("mem.csv")));
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[0], "config,peak_elements");
  EXPECT_EQ(rows[4].substr(0, 14), "T'=8 P=8 T=57,");
  ASSERT_EQ(run({"membench", "--config", cfg, "--out", path("mem2.csv"), "--P", "1,3"}), exit_ok);
  EXPECT_EQ(lines_of(read_file(path("mem2.csv"))).size(), 3u);
}

TEST_F(Cli, GendataIsDeterministic) {
  const auto cfg = write_config("gen.cfg");
  ASSERT_EQ(run({"gendata", "--config", cfg, "--seed", "7", "--out", path("one")}), exit_ok);
  ASSERT_EQ(run({"gendata", "--config", cfg, "--seed", "7", "--out", path("two")}), exit_ok);
  ASSERT_EQ(run({"gendata", "--config", cfg, "--seed", "8", "--out", path("three")}), exit_ok);
  EXPECT_EQ(read_file(path("one.train.pgtd")), read_file(path("two.train.pgtd")));
  EXPECT_EQ(read_file(path("one.val.pgtd")), read_file(path("two.val.pgtd")));
  EXPECT_NE(read_file(path("one.train.pgtd")), read_file(path("three.train.pgtd")));

  const auto from_file = write_config("file.cfg", "io.data = " + path("one") + "\nseed = 7\n");
  ASSERT_EQ(run({"train", "--config", from_file, "--stop-after", "1"}), exit_ok) << err_.str();
}

TEST_F(Cli, MissingCheckpointIsReported) {
  const auto cfg = write_config("nock.cfg");
  EXPECT_EQ(run({"eval", "--config", cfg, "--mode", "orig"}), exit_usage);
  EXPECT_NE(err_.str().find("not found"), std::string::npos) << err_.str();
}
