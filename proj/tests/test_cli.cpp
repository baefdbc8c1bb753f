#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "ffsm/binary_io.hpp"
#include "ffsm/data.hpp"
#include "fixtures.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ffsm;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path fresh(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("ffsm_test_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

json read_json(const fs::path& p) { return json::parse(io::read_file(p)); }

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  return lines;
}

// Small synthetic world plus a config using a tiny model.
fs::path small_world(const std::string& name, std::size_t epochs = 2) {
  const auto dir = fresh(name);
  const auto r = invoke({"synth", "--seed", "3", "--out", (dir / "data").string(), "--width", "32", "--height", "32",
                      "--n-flood", "60", "--patch", "16"});
  EXPECT_EQ(r.code, 0) << r.err;
  json cfg = {{"stack", (dir / "data" / "stack.ffstack").string()},
              {"inventory", (dir / "data" / "inventory.csv").string()},
              {"patch", 16},
              {"seed", 5},
              {"model", {{"base_width", 4}, {"depth_scale", 0.1}, {"growth", 4}, {"fc_hidden", {8}}}},
              {"train", {{"max_epochs", epochs}}}};
  std::ofstream(dir / "config.json") << cfg.dump(2);
  return dir;
}

}  // namespace

TEST(Cli, ExitCodeMapping) {
  EXPECT_EQ(cli::exit_code_for(ErrorKind::Usage), 2);
  EXPECT_EQ(cli::exit_code_for(ErrorKind::Config), 2);
  EXPECT_EQ(cli::exit_code_for(ErrorKind::Numeric), 4);
  EXPECT_EQ(cli::exit_code_for(ErrorKind::Graph), 4);
  EXPECT_EQ(cli::exit_code_for(ErrorKind::Format), 3);
  EXPECT_EQ(cli::exit_code_for(ErrorKind::Parse), 3);
  EXPECT_EQ(cli::exit_code_for(ErrorKind::Io), 3);
}

TEST(Cli, SynthIsByteIdenticalForOneSeed) {
  const auto dir = fresh("synth_same");
  ASSERT_EQ(invoke({"synth", "--seed", "11", "--out", (dir / "a").string()}).code, 0);
  ASSERT_EQ(invoke({"synth", "--seed", "11", "--out", (dir / "b").string()}).code, 0);
  for (const char* f : {"stack.ffstack", "inventory.csv", "planted_probability.ffstack"}) {
    EXPECT_EQ(io::read_file(dir / "a" / f), io::read_file(dir / "b" / f)) << f;
  }
}

TEST(Cli, SynthDefaults) {
  const auto dir = fresh("synth_defaults");
  ASSERT_EQ(invoke({"synth", "--seed", "1", "--out", (dir / "o").string()}).code, 0);
  const auto stack = load_stack(dir / "o" / "stack.ffstack");
  EXPECT_EQ(stack.factor_count(), 16u);
  const auto inv = load_inventory(dir / "o" / "inventory.csv", &stack);
  std::size_t flood = 0;
  for (const auto& p : inv) flood += p.label == 1 ? 1 : 0;
  EXPECT_EQ(flood, 261u);
  EXPECT_EQ(inv.size() - flood, 261u);
  EXPECT_TRUE(fs::exists(dir / "o" / "manifest.json"));
}

TEST(Cli, SynthRefusesNonEmptyDirectoryWithoutForce) {
  const auto dir = fresh("synth_force");
  ASSERT_EQ(invoke({"synth", "--seed", "1", "--out", dir.string(), "--width", "16", "--height", "16", "--n-flood",
                 "5", "--patch", "4"})
                .code,
            0);
  EXPECT_EQ(invoke({"synth", "--seed", "1", "--out", dir.string()}).code, 2);
  EXPECT_EQ(invoke({"synth", "--seed", "1", "--out", dir.string(), "--width", "16", "--height", "16", "--n-flood",
                 "5", "--patch", "4", "--force"})
                .code,
            0);
}

TEST(Cli, UsageErrors) {
  const auto dir = fresh("usage");
  const auto zero = invoke({"synth", "--seed", "1", "--out", dir.string(), "--width", "0"});
  EXPECT_EQ(zero.code, 2);
  EXPECT_EQ(zero.err.rfind("error UsageError:", 0), 0u) << zero.err;
  EXPECT_EQ(invoke({"synth", "--out", dir.string()}).code, 2);
  EXPECT_EQ(invoke({"frobnicate"}).code, 2);
  EXPECT_EQ(invoke({}).code, 2);
  EXPECT_EQ(invoke({"--help"}).code, 0);
  EXPECT_EQ(invoke({"--version"}).code, 0);
}

TEST(Cli, ConfigErrors) {
  const auto dir = fresh("config");
  std::ofstream(dir / "bad.json") << R"({"stack": "x", "colour": 3})";
  const auto unknown = invoke({"train", "--config", (dir / "bad.json").string()});
  EXPECT_EQ(unknown.code, 2);
  EXPECT_NE(unknown.err.find("colour"), std::string::npos) << unknown.err;
  std::ofstream(dir / "nested.json") << R"({"train": {"lr": 0.1}})";
  EXPECT_EQ(invoke({"train", "--config", (dir / "nested.json").string()}).code, 2);
  std::ofstream(dir / "broken.json") << "{";
  EXPECT_EQ(invoke({"train", "--config", (dir / "broken.json").string()}).code, 2);
}

TEST(Cli, DataErrorsExitThree) {
  const auto dir = fresh("data_errors");
  std::ofstream(dir / "cfg.json") << json{{"stack", (dir / "missing.ffstack").string()},
                                          {"inventory", (dir / "missing.csv").string()}}
                                         .dump();
  const auto r = invoke({"train", "--config", (dir / "cfg.json").string(), "--out", (dir / "o").string()});
  EXPECT_EQ(r.code, 3) << r.err;
  EXPECT_EQ(r.err.rfind("error ", 0), 0u);
}

TEST(Cli, RoundTripRejectsUnknownKeysOnly) {
  const auto c = cli::RunConfig::from_json(json::object());
  const auto back = cli::RunConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_THROW(cli::RunConfig::from_json(json{{"model", {{"kind", "vgg"}}}}), ConfigError);
}

TEST(Cli, TrainThenEvalWritesMetrics) {
  const auto dir = small_world("train_eval");
  const auto cfg = (dir / "config.json").string();
  const auto t = invoke({"train", "--config", cfg, "--out", (dir / "run").string()});
  ASSERT_EQ(t.code, 0) << t.err;
  EXPECT_TRUE(fs::exists(dir / "run" / "model.ffsm"));
  EXPECT_TRUE(fs::exists(dir / "run" / "config.resolved.json"));
  const auto report = read_json(dir / "run" / "train_report.json");
  EXPECT_EQ(report["epochs"].size(), 2u);

  const auto e = invoke({"eval", "--config", cfg, "--model", (dir / "run" / "model.ffsm").string(), "--out",
                      (dir / "ev").string()});
  ASSERT_EQ(e.code, 0) << e.err;
  const auto ev = read_json(dir / "ev" / "eval.json");
  for (const char* s : {"train", "validation", "test"}) {
    ASSERT_TRUE(ev.contains(s)) << s;
    for (const char* k : {"accuracy", "precision", "recall", "f1"}) EXPECT_TRUE(ev[s]["metrics"].contains(k));
    EXPECT_TRUE(ev[s]["auc"].is_number());
  }
  EXPECT_EQ(read_lines(dir / "ev" / "roc.csv").front(), "threshold,fpr,tpr");
  const auto manifest = read_json(dir / "ev" / "manifest.json");
  EXPECT_EQ(manifest["command"], "eval");

  const auto m = invoke({"map", "--config", cfg, "--model", (dir / "run" / "model.ffsm").string(), "--out",
                      (dir / "map").string()});
  ASSERT_EQ(m.code, 0) << m.err;
  const auto stats = read_json(dir / "map" / "map_stats.json");
  double area = 0.0;
  for (const auto& c : stats["classes"]) area += c["area_pct"].get<double>();
  EXPECT_NEAR(area, 100.0, 1e-6);
  for (const char* f : {"probability.ffstack", "probability.pgm", "classes.csv", "classes.pgm"}) {
    EXPECT_TRUE(fs::exists(dir / "map" / f)) << f;
  }

  // A model trained on a different factor set is refused.
  const auto other = fresh("train_eval_other");
  auto fx = ffsm::testing::half_plane(1, 3, 0, 20, 40, 16);
  save_stack(fx.stack, other / "s.ffstack");
  save_inventory(fx.points, other / "i.csv");
  const auto wrong = invoke({"eval", "--config", cfg, "--model", (dir / "run" / "model.ffsm").string(), "--stack",
                          (other / "s.ffstack").string(), "--inventory", (other / "i.csv").string(), "--out",
                          (dir / "ev2").string()});
  EXPECT_EQ(wrong.code, 2) << wrong.err;
}

TEST(Cli, FactorsWritesPearsonAndVif) {
  const auto dir = small_world("factors");
  const auto r = invoke({"factors", "--config", (dir / "config.json").string(), "--out", (dir / "f").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_lines(dir / "f" / "pearson.csv").size(), 17u);
  EXPECT_EQ(read_json(dir / "f" / "factors.json")["factors"].size(), 16u);
}

TEST(Cli, JackknifeRanksPlantedFactorFirst) {
  const auto dir = fresh("jackknife");
  auto fx = ffsm::testing::half_plane(8, 3, 2, 60, 40, 8);
  save_stack(fx.stack, dir / "s.ffstack");
  save_inventory(fx.points, dir / "i.csv");
  json cfg = {{"stack", (dir / "s.ffstack").string()},
              {"inventory", (dir / "i.csv").string()},
              {"patch", 8},
              {"seed", 2},
              {"model", {{"base_width", 4}, {"depth_scale", 0.1}, {"fc_hidden", {8}}, {"reduction", 2}}},
              {"train", {{"max_epochs", 30}, {"early_stop_patience", 5}}}};
  std::ofstream(dir / "cfg.json") << cfg.dump();
  const auto r = invoke({"jackknife", "--config", (dir / "cfg.json").string(), "--out", (dir / "o").string(),
                      "--jobs", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto lines = read_lines(dir / "o" / "jackknife.csv");
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_EQ(lines[0], "factor,auc,prd,rank");
  const auto j = read_json(dir / "o" / "jackknife.json");
  EXPECT_EQ(j["mode"], "retrain");
  for (const auto& f : j["factors"]) {
    if (f["rank"] == 1) EXPECT_EQ(f["factor"], "f2");
  }
}

TEST(Cli, BenchPlacementsTableShape) {
  const auto dir = small_world("bench", 1);
  const auto r = invoke({"bench-placements", "--config", (dir / "config.json").string(), "--out",
                      (dir / "b").string(), "--max-epochs", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto lines = read_lines(dir / "b" / "bench_placements.csv");
  ASSERT_FALSE(lines.empty());
  std::size_t commas = 0;
  for (char c : lines[0]) commas += c == ',' ? 1 : 0;
  EXPECT_EQ(commas, 12u);
  EXPECT_EQ(lines[0].rfind("Performance metric,ResNet18 Base,ResNet18 +CBAM-In,", 0), 0u) << lines[0];
  EXPECT_EQ(lines[1].rfind("Training set,", 0), 0u);
  EXPECT_EQ(lines.back().rfind("Number of parameters,", 0), 0u) << lines.back();
  const auto j = read_json(dir / "b" / "bench_placements.json");
  ASSERT_EQ(j["models"].size(), 12u);
  for (const auto& m : j["models"]) EXPECT_FALSE(m.contains("error")) << m.dump();
}

#ifdef FFSM_BINARY
TEST(CliBinary, ProcessExitCodes) {
  const auto dir = fresh("binary");
  auto status = [](const std::string& args) {
    const int raw = std::system((std::string(FFSM_BINARY) + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  };
  EXPECT_EQ(status("--version"), 0);
  EXPECT_EQ(status("synth --seed 1 --out " + (dir / "s").string() + " --width 0"), 2);
  EXPECT_EQ(status("synth --seed 1 --out " + (dir / "s").string() + " --width 16 --height 16 --n-flood 5 --patch 4"),
            0);
  EXPECT_EQ(status("train --config " + (dir / "nope.json").string()), 3);
}
#endif
