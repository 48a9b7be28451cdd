#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "htmseq/config.hpp"
#include "htmseq/runner.hpp"

using namespace htmseq;
namespace fs = std::filesystem;

namespace {

std::string field_of(const std::string& text) {
  try {
    parse_run_config_text(text);
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "<accepted>";
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::vector<std::string> out;
  std::ifstream in(p);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("htmseq-cli-" + std::to_string(::getpid()) + "-" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  int cli(const std::string& args, const std::string& env = "") const {
    const std::string cmd = env + " " HTMSEQ_CLI_PATH " " + args + " > " + (dir_ / "stdout.txt").string() +
                            " 2> " + (dir_ / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  fs::path write(const std::string& name, const std::string& text) const {
    std::ofstream(dir_ / name) << text;
    return dir_ / name;
  }

  fs::path dir_;
};

const char* kSmallDiscrete = R"({"task": "discrete", "seed": 7, "elements": 1500})";

}  // namespace

TEST(Config, DefaultsAndDerivedSeeds) {
  const auto c = parse_run_config_text("{}");
  EXPECT_EQ(c.task, TaskKind::discrete);
  EXPECT_EQ(c.elements, 20000u);
  EXPECT_EQ(c.tm, TmParams{.seed = derive_seed(1, kSeedTm)});
  EXPECT_EQ(c.discrete.dataset.orders, (std::vector<std::size_t>{6, 7}));
  EXPECT_EQ(c.discrete.top_k, 1u);
  EXPECT_EQ(c.discrete.dataset.seed, derive_seed(1, kSeedDataset));
  const auto d = parse_run_config_text(R"({"seed": 2})");
  EXPECT_NE(d.discrete.stream.seed, c.discrete.stream.seed);
  EXPECT_EQ(parse_run_config_text(R"({"tm": {"seed": 99}})").tm.seed, 99u);
  const auto t = parse_run_config_text(R"({"task": "taxi"})");
  EXPECT_EQ(t.elements, 0u);
  EXPECT_FALSE(t.taxi_source.csv.has_value());
}

TEST(Config, ErrorsNameTheField) {
  EXPECT_EQ(field_of(R"({"discrete": {"stream": {"swap_pont": 5}}})"), "discrete.stream.swap_pont");
  EXPECT_EQ(field_of(R"({"seed": -1})"), "seed");
  EXPECT_EQ(field_of(R"({"tm": {"activation_threshold": "fifteen"}})"), "tm.activation_threshold");
  EXPECT_EQ(field_of(R"({"discrete": {"dataset": {"endings": 3}}})"), "discrete.dataset.endings");
  EXPECT_EQ(field_of(R"({"discrete": {"dataset": {"orders": [6, 1]}}})"), "discrete.dataset.orders[1]");
  EXPECT_EQ(field_of(R"({"task": "forecast"})"), "task");
  EXPECT_EQ(field_of(R"({"task": "taxi", "discrete": {}})"), "discrete");
  EXPECT_EQ(field_of(R"({"elements": 0})"), "elements");
  EXPECT_EQ(field_of("{not json"), "<root>");
  EXPECT_EQ(field_of(R"({"discrete": {"kill": {"at_element": 30000, "fraction": 0.1}}})"),
            "discrete.kill.at_element");
  EXPECT_EQ(field_of(R"({"task": "taxi", "taxi": {"perturbation": {"start": "2015-03-30", "windows": [
              {"from": "07:00", "to": "11:00", "factor": 0.8},
              {"from": "10:00", "to": "12:00", "factor": 1.2}]}}})"),
            "taxi.perturbation.windows[1]");
  EXPECT_EQ(field_of(R"({"task": "taxi", "taxi": {"perturbation": {"windows": []}}})"), "taxi.perturbation.start");
}

TEST(Config, AcceptsSignedNonnegativeIntegersBuiltInCode) {
  json j = {{"seed", 3}, {"elements", 100}};
  ASSERT_TRUE(j["seed"].is_number_integer());
  EXPECT_EQ(parse_run_config(j).seed, 3u);
  j["seed"] = -3;
  EXPECT_THROW(parse_run_config(j), ConfigError);
  j["seed"] = 3.0;
  EXPECT_THROW(parse_run_config(j), ConfigError);
}

TEST(Config, ResolvedFormRoundTrips) {
  std::size_t seen = 0;
  for (const auto& entry : fs::directory_iterator(fs::path(HTMSEQ_SOURCE_DIR) / "configs")) {
    if (entry.path().extension() != ".json") continue;
    ++seen;
    const auto c = load_run_config(entry.path().string());
    const json once = to_json(c);
    const json twice = to_json(parse_run_config(once));
    EXPECT_EQ(once, twice) << entry.path();
  }
  EXPECT_GE(seen, 5u);
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(cli(""), 2);
  EXPECT_EQ(cli("bogus"), 2);
  EXPECT_EQ(cli("run"), 2);
  EXPECT_EQ(cli("run -c " + (dir_ / "missing.json").string()), 2);
  EXPECT_EQ(cli("run -c " + write("bad.json", R"({"tm": {"cells": 4}})").string()), 2);
  EXPECT_NE(slurp(dir_ / "stderr.txt").find("tm.cells"), std::string::npos);
  const auto csv = write("taxi.json", R"({"task": "taxi", "taxi": {"csv": "/nonexistent/rides.csv"}})");
  EXPECT_EQ(cli("run -c " + csv.string() + " -o " + (dir_ / "out").string()), 3);
  EXPECT_EQ(cli("perturb -i /nonexistent.csv -o " + (dir_ / "p.csv").string() + " --start 2015-01-01"), 3);
  const auto corrupt = write("corrupt.snap", "HTMSEQRN garbage");
  EXPECT_EQ(cli("load --snapshot " + corrupt.string() + " -o " + (dir_ / "out").string()), 3);
}

TEST_F(Cli, RepeatedRunsAreByteIdentical) {
  const auto cfg = write("small.json", kSmallDiscrete);
  ASSERT_EQ(cli("run -c " + cfg.string() + " -o " + (dir_ / "a").string()), 0);
  ASSERT_EQ(cli("run -c " + cfg.string() + " -o " + (dir_ / "b").string()), 0);
  const auto a = slurp(dir_ / "a" / "records.jsonl");
  EXPECT_EQ(lines_of(dir_ / "a" / "records.jsonl").size(), 1501u);
  EXPECT_EQ(a, slurp(dir_ / "b" / "records.jsonl"));
  EXPECT_EQ(slurp(dir_ / "a" / "summary.json"), slurp(dir_ / "b" / "summary.json"));
  const auto header = json::parse(lines_of(dir_ / "a" / "records.jsonl").front());
  EXPECT_EQ(header["config"], to_json(parse_run_config_text(kSmallDiscrete)));
  EXPECT_EQ(header["seed"], 7);
  ASSERT_EQ(cli("run -c " + cfg.string() + " --seed 8 -o " + (dir_ / "c").string()), 0);
  EXPECT_NE(a, slurp(dir_ / "c" / "records.jsonl"));
}

TEST_F(Cli, SaveLoadContinuesTheSameTrajectory) {
  const auto cfg = write("small.json", kSmallDiscrete);
  const auto snap = (dir_ / "mid.snap").string();
  ASSERT_EQ(cli("run -c " + cfg.string() + " -o " + (dir_ / "full").string()), 0);
  ASSERT_EQ(cli("save -c " + cfg.string() + " --at 700 --snapshot " + snap), 0);
  ASSERT_EQ(cli("load --snapshot " + snap + " -o " + (dir_ / "resumed").string()), 0);
  const auto full = lines_of(dir_ / "full" / "records.jsonl");
  const auto resumed = lines_of(dir_ / "resumed" / "records.jsonl");
  ASSERT_EQ(resumed.size(), 1u + 800u);
  EXPECT_EQ(json::parse(resumed[0])["resumed_at"], 700);
  for (std::size_t i = 0; i < 800; ++i) ASSERT_EQ(resumed[1 + i], full[1 + 700 + i]) << i;
  EXPECT_EQ(slurp(dir_ / "full" / "summary.json"), slurp(dir_ / "resumed" / "summary.json"));

  // A flipped byte anywhere must be rejected.
  auto bytes = slurp(snap);
  bytes[bytes.size() / 2] ^= 0x10;
  std::ofstream(snap, std::ios::binary) << bytes;
  EXPECT_EQ(cli("load --snapshot " + snap + " -o " + (dir_ / "bad").string()), 3);
  EXPECT_FALSE(fs::exists(dir_ / "bad" / "records.jsonl"));
}

TEST_F(Cli, OutputDirectoryFromEnvironment) {
  const auto cfg = write("small.json", R"({"elements": 50})");
  const auto target = dir_ / "from-env";
  ASSERT_EQ(cli("run -c " + cfg.string(), "HTMSEQ_OUTPUT_DIR=" + target.string()), 0);
  EXPECT_TRUE(fs::exists(target / "records.jsonl"));
  EXPECT_TRUE(fs::exists(target / "summary.json"));
}

TEST_F(Cli, ReplicasAggregateMeanAndSd) {
  const auto cfg = write("small.json", R"({"elements": 300})");
  ASSERT_EQ(cli("run -c " + cfg.string() + " --replicas 3 -o " + dir_.string()), 0);
  const auto s = json::parse(slurp(dir_ / "summary.json"));
  ASSERT_EQ(s["replicas"].size(), 3u);
  std::vector<double> acc;
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(s["replicas"][i]["seed"], 1 + i);
    acc.push_back(s["replicas"][i]["accuracy_ma100"].get<double>());
    EXPECT_EQ(json::parse(slurp(dir_ / ("replica-" + std::to_string(i)) / "summary.json")), s["replicas"][i]);
  }
  const double mean = (acc[0] + acc[1] + acc[2]) / 3;
  double ss = 0;
  for (double a : acc) ss += (a - mean) * (a - mean);
  EXPECT_NEAR(s["accuracy_ma100"]["mean"].get<double>(), mean, 1e-12);
  EXPECT_NEAR(s["accuracy_ma100"]["sd"].get<double>(), std::sqrt(ss / 2), 1e-12);
}

TEST_F(Cli, GenEmitsDatasetsAndSeries) {
  ASSERT_EQ(cli("gen --order 5 --endings 2 --groups 3 --seed 4 -o " + (dir_ / "ds.json").string()), 0);
  const auto j = json::parse(slurp(dir_ / "ds.json"));
  const auto ds = gen_dataset(5, 2, 3, 4);
  EXPECT_EQ(j["sequences"].get<std::vector<std::vector<std::string>>>(), ds.sequences);

  ASSERT_EQ(cli("gen --kind taxi --weeks 2 --seed 3 -o " + (dir_ / "t.csv").string()), 0);
  SyntheticTaxiSpec spec;
  spec.weeks = 2;
  spec.seed = 3;
  EXPECT_EQ(ingest_csv_file((dir_ / "t.csv").string()).rows, synthetic_taxi(spec));
  EXPECT_EQ(cli("gen --endings 3"), 1);
}

TEST_F(Cli, PerturbMatchesLibrary) {
  ASSERT_EQ(cli("gen --kind taxi --weeks 2 -o " + (dir_ / "t.csv").string()), 0);
  ASSERT_EQ(cli("perturb -i " + (dir_ / "t.csv").string() + " -o " + (dir_ / "p.csv").string() +
                " --start 2015-01-12"),
            0);
  const auto before = ingest_csv_file((dir_ / "t.csv").string()).rows;
  const auto expected = perturb(before, standard_perturbation(make_timestamp(2015, 1, 12, 0, 0)));
  const auto after = ingest_csv_file((dir_ / "p.csv").string()).rows;
  EXPECT_EQ(after, expected);
  EXPECT_NE(after, before);
  for (std::size_t i = 0; i < kBinsPerWeek; ++i) EXPECT_EQ(after[i], before[i]);
}

TEST_F(Cli, BaselineAndTaxiSplit) {
  const auto cfg = write("taxi.json", R"({"task": "taxi", "taxi": {"synthetic": {"weeks": 2}, "eval_start": 400,
      "perturbation": {"start": "2015-01-14", "windows": [{"from": "07:00", "to": "11:00", "factor": 0.8}]}}})");
  ASSERT_EQ(cli("baseline -c " + cfg.string() + " -o " + dir_.string()), 0);
  const auto b = json::parse(slurp(dir_ / "baseline.json"));
  EXPECT_EQ(b["naive"]["count"], 2 * kBinsPerWeek - 400);
  EXPECT_GT(b["seasonal"]["mape"].get<double>(), 0.0);

  ASSERT_EQ(cli("run -c " + cfg.string() + " -o " + (dir_ / "run").string()), 0);
  const auto s = json::parse(slurp(dir_ / "run" / "summary.json"));
  EXPECT_EQ(s["elements"], 2 * kBinsPerWeek);
  EXPECT_EQ(s["pre_perturbation"]["count"].get<std::size_t>() + s["post_perturbation"]["count"].get<std::size_t>(),
            s["evaluated"].get<std::size_t>());
  EXPECT_GT(s["post_perturbation"]["count"].get<std::size_t>(), 0u);

  const auto short_cfg = write("short.json", R"({"task": "taxi", "taxi": {"synthetic": {"weeks": 1}}})");
  EXPECT_EQ(cli("baseline -c " + short_cfg.string() + " -o " + dir_.string()), 3);
}
