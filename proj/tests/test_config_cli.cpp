// SPDX-License-Identifier: Apache-2.0
#include "doctest_torch.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "diffseg/commands.hpp"
#include "diffseg/config.hpp"
#include "diffseg/errors.hpp"

using namespace diffseg;
namespace fs = std::filesystem;

namespace {
fs::path temp_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("diffseg_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

RunConfig tiny_data_config() {
  RunConfig c;
  c.set("data.count", "12");
  c.set("data.channels", "2");
  c.set("data.height", "16");
  c.set("data.width", "16");
  c.set("data.slices_per_patient", "2");
  c.set("split.train_fraction", "0.67");
  return c;
}

int run_cli(const std::string& args) {
#ifdef DIFFSEG_BIN
  const std::string cmd = std::string(DIFFSEG_BIN) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
#else
  (void)args;
  return -1;
#endif
}
}  // namespace

TEST_CASE("defaults and key access") {
  RunConfig c;
  CHECK(c.get_int("schedule.T") == 100);
  CHECK(c.get_real("train.lr") == doctest::Approx(1e-4));
  CHECK(c.get_int("ensemble.n") == 5);
  CHECK(c.get_bool("run.deterministic"));
  CHECK(c.get_int_list("model.channel_multipliers") == std::vector<int>{1, 2, 2});
  CHECK(!c.was_set("schedule.T"));
}

TEST_CASE("unknown keys are rejected") {
  RunConfig c;
  CHECK_THROWS_AS(c.set("schedule.t", "10"), ConfigError);
  CHECK_THROWS_AS(c.set("nope", "1"), ConfigError);
  CHECK_THROWS_AS(c.get_int("nope"), ConfigError);
}

TEST_CASE("type validation at set time") {
  RunConfig c;
  CHECK_THROWS_AS(c.set("schedule.T", "ten"), ConfigError);
  CHECK_THROWS_AS(c.set("train.lr", "fast"), ConfigError);
  CHECK_THROWS_AS(c.set("model.ema", "maybe"), ConfigError);
  CHECK_THROWS_AS(c.set("model.channel_multipliers", "1,x"), ConfigError);
  CHECK_NOTHROW(c.set("schedule.T", "250"));
  CHECK(c.get_int("schedule.T") == 250);
  CHECK(c.was_set("schedule.T"));
}

TEST_CASE("config file loading and overrides") {
  const auto dir = temp_dir("config");
  {
    std::ofstream f(dir / "cfg.json");
    f << R"({"schedule.T": 40, "train.lr": 0.0005, "model.channel_multipliers": [1,2],
             "model.ema": true, "data.count": 99})";
  }
  RunConfig c;
  c.load_file(dir / "cfg.json");
  CHECK(c.get_int("schedule.T") == 40);
  CHECK(c.get_real("train.lr") == doctest::Approx(5e-4));
  CHECK(c.get_int_list("model.channel_multipliers") == std::vector<int>{1, 2});
  CHECK(c.get_bool("model.ema"));
  c.set("schedule.T", "50");  // later override wins
  CHECK(c.get_int("schedule.T") == 50);

  {
    std::ofstream f(dir / "bad.json");
    f << R"({"schedule.bogus": 1})";
  }
  RunConfig d;
  CHECK_THROWS_AS(d.load_file(dir / "bad.json"), ConfigError);
  CHECK_THROWS_AS(d.load_file(dir / "missing.json"), IoError);
}

TEST_CASE("typed views") {
  RunConfig c;
  SUBCASE("schedule applies auto scaling for short schedules") {
    const auto s = c.make_schedule();
    CHECK(s.T == 100);
    CHECK(s.beta.front() == doctest::Approx(1e-3));  // 1000/T = 10x
    CHECK(s.beta.back() == doctest::Approx(0.2));
  }
  SUBCASE("scaling can be forced off") {
    c.set("schedule.scale_endpoints", "off");
    const auto s = c.make_schedule();
    CHECK(s.beta.front() == doctest::Approx(1e-4));
    CHECK(s.beta.back() == doctest::Approx(0.02));
  }
  SUBCASE("denoiser input channels come from the data channels") {
    CHECK(c.denoiser_config().in_channels == 5);
    c.set("data.channels", "2");
    CHECK(c.denoiser_config().in_channels == 3);
  }
  SUBCASE("non-square input is rejected") {
    c.set("data.height", "64");
    c.set("data.width", "32");
    CHECK_THROWS_AS(c.denoiser_config(), ConfigError);
  }
}

TEST_CASE("resolved config echo") {
  const auto dir = temp_dir("echo");
  RunConfig c;
  c.set("schedule.T", "77");
  c.write_echo(dir, "test-cmd");

  std::ifstream in(dir / "run.json");
  nlohmann::json j;
  in >> j;
  CHECK(j["command"] == "test-cmd");
  CHECK(j["config"]["schedule.T"] == "77");
  CHECK(j["config"].size() == c.resolved().size());
}

TEST_CASE("cmd_generate_data") {
  const auto dir = temp_dir("gen");
  const auto out = dir / "data";
  const auto c = tiny_data_config();

  CHECK(cmd_generate_data(c, out, false) == 12);
  CHECK(fs::exists(out / "manifest.tsv"));
  CHECK(fs::exists(out / "run.json"));

  SUBCASE("refuses to overwrite without force") {
    CHECK_THROWS_AS(cmd_generate_data(c, out, false), IoError);
    CHECK_NOTHROW(cmd_generate_data(c, out, true));
  }
  SUBCASE("regeneration with the same seed matches checksum for checksum") {
    const auto out2 = dir / "data2";
    cmd_generate_data(c, out2, false);
    std::ifstream a(out / "manifest.tsv"), b(out2 / "manifest.tsv");
    std::stringstream sa, sb;
    sa << a.rdbuf();
    sb << b.rdbuf();
    CHECK(sa.str() == sb.str());
  }
  SUBCASE("count override controls the corpus size") {
    auto c10 = tiny_data_config();
    c10.set("data.count", "10");
    const auto out3 = dir / "data3";
    CHECK(cmd_generate_data(c10, out3, false) == 10);
  }
}

#ifdef DIFFSEG_BIN
TEST_CASE("cli end to end: exit codes and outputs") {
  const auto dir = temp_dir("cli");
  const auto data = (dir / "data").string();

  // happy path
  CHECK(run_cli("generate-data --out " + data +
                " --count 12 --data.channels 2 --data.height 16 --data.width 16"
                " --data.slices_per_patient 2 --split.train_fraction 0.67") == 0);
  CHECK(fs::exists(fs::path(data) / "manifest.tsv"));

  // refusing to overwrite is an io error (5)
  CHECK(run_cli("generate-data --out " + data + " --count 12") == 5);

  // unknown config key is a config error (2)
  CHECK(run_cli("generate-data --out " + (dir / "x").string() + " --bogus.key 3") == 2);

  // malformed value is a config error (2)
  CHECK(run_cli("generate-data --out " + (dir / "y").string() + " --data.count many") == 2);

  // missing dataset is an io error (5): manifest cannot be opened
  CHECK(run_cli("train --data " + (dir / "nowhere").string() + " --out " +
                (dir / "t").string() + " --train.iterations 0") == 5);

  // a train smoke run with zero iterations writes the initial checkpoint
  const auto trained = dir / "trained";
  CHECK(run_cli("train --data " + data + " --out " + trained.string() +
                " --train.iterations 0 --model.base_channels 8"
                " --model.channel_multipliers 1,2 --model.attention_resolutions 8"
                " --schedule.T 10 --train.batch_size 2") == 0);
  CHECK(fs::exists(trained / "final.bin"));

  // sampling from that checkpoint by id
  const auto sampled = dir / "sampled";
  CHECK(run_cli("sample --checkpoint " + (trained / "final.bin").string() + " --data " + data +
                " --id p0000_s000 --n 2 --out " + sampled.string()) == 0);
  CHECK(fs::exists(sampled / "sample_001.arr"));
  CHECK(fs::exists(sampled / "mean.pgm"));

  // conflicting explicit model override is a config error (2)
  CHECK(run_cli("sample --checkpoint " + (trained / "final.bin").string() + " --data " + data +
                " --id p0000_s000 --out " + (dir / "s2").string() +
                " --model.base_channels 16") == 2);
}
#endif
