// Drives the resablate executable end to end on a tiny configuration.
#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "resablate/ablation.hpp"
#include "resablate/checkpoint.hpp"
#include "resablate/report.hpp"
#include "resablate/train.hpp"

#ifndef RESABLATE_CLI
#error "RESABLATE_CLI must name the command-line executable"
#endif

using namespace resablate;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = -1;
  std::string output;
};

CliRun run(const std::string& args) {
  const std::string cmd = std::string(RESABLATE_CLI) + " " + args + " 2>&1";
  CliRun r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf;
  std::size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.output.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

constexpr const char* kConfig = R"({
  "stage_widths": [4, 8],
  "units_per_stage": [1, 2],
  "input_size": 16,
  "seed": 3,
  "train": {"epochs": 2, "batch_size": 8},
  "data": {"train_count": 60, "test_count": 30}
})";
constexpr const char* kData = "--train-count 60 --test-count 30";

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / "resablate_cli_tests";
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    spit(dir_ / "config.json", kConfig);
    const CliRun t = run("train --quiet --config " + path("config.json") + " --out " + path("model.ckpt"));
    ASSERT_EQ(t.code, 0) << t.output;
  }

  static std::string path(const std::string& name) { return (dir_ / name).string(); }

  static fs::path dir_;
};

fs::path Cli::dir_;

}  // namespace

TEST_F(Cli, HelpListsEveryFlag) {
  const std::vector<std::pair<std::string, std::vector<std::string>>> expected = {
      {"train", {"--config", "--out", "--checkpoint", "--seed", "--epochs", "--lr", "--history", "--task"}},
      {"ablate", {"--checkpoint", "--protocol", "--tau", "--out", "--workers", "--data-seed", "--cifar-dir"}},
      {"report", {"--report", "--format", "--compare", "--out"}},
      {"prune", {"--checkpoint", "--report", "--out"}},
  };
  for (const auto& [cmd, flags] : expected) {
    const CliRun r = run(cmd + " --help");
    EXPECT_EQ(r.code, 0);
    for (const auto& f : flags) EXPECT_NE(r.output.find(f), std::string::npos) << cmd << " " << f;
  }
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
}

TEST_F(Cli, TrainWritesCheckpointAndHistory) {
  EXPECT_TRUE(fs::exists(path("model.ckpt")));
  const std::string history = slurp(path("model.ckpt.history.json"));
  EXPECT_NE(history.find("\"history\""), std::string::npos);
  EXPECT_NE(history.find("\"final_metric\""), std::string::npos);
  const Model m = load_checkpoint(path("model.ckpt"));
  EXPECT_EQ(m.config.units_per_stage, (std::vector<std::size_t>{1, 2}));
}

TEST_F(Cli, TrainIsDeterministic) {
  const CliRun r = run("train --quiet --config " + path("config.json") + " --out " + path("again.ckpt"));
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(slurp(path("again.ckpt")), slurp(path("model.ckpt")));
  EXPECT_EQ(slurp(path("again.ckpt.history.json")), slurp(path("model.ckpt.history.json")));
}

TEST_F(Cli, TrainConfigErrors) {
  CliRun r = run("train --config " + path("missing.json") + " --out " + path("x.ckpt"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find(path("missing.json")), std::string::npos);
  spit(dir_ / "broken.json", "{\"stage_widths\": [8, 4], \"units_per_stage\": [1, 1]}");
  r = run("train --config " + path("broken.json") + " --out " + path("x.ckpt"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("broken.json"), std::string::npos);
  spit(dir_ / "garbage.json", "stage_widths = 8");
  EXPECT_EQ(run("train --config " + path("garbage.json") + " --out " + path("x.ckpt")).code, 2);
  EXPECT_EQ(run("train --quiet --config " + path("config.json") + " --out " + path("no_such_dir/x.ckpt")).code, 3);
  EXPECT_EQ(run("train --out " + path("x.ckpt") + " --batch-size 1").code, 2);
}

TEST_F(Cli, AblateE1ReportMatchesRecomputation) {
  const CliRun r = run("ablate --checkpoint " + path("model.ckpt") + " --protocol e1 --out " + path("e1.json") + " " + kData);
  ASSERT_EQ(r.code, 0) << r.output;
  const ReportSet reports = parse_reports(slurp(path("e1.json")));
  ASSERT_EQ(reports.size(), 1u);
  const TrivialityReport& e1 = reports.at(Protocol::e1);
  const Model m = load_checkpoint(path("model.ckpt"));
  EXPECT_EQ(e1.results.size(), sweepable_addresses(m).size());
  EXPECT_EQ(e1.fingerprint, fingerprint(m));
  const LabeledDataset test = make_datasets(false, 10, 16, {3, 60, 30, {}}).test;
  EXPECT_EQ(e1.baseline, evaluate(m, test));
  for (const AblationResult& res : e1.results) {
    EXPECT_EQ(res.ablated, evaluate(zero_kernels(m, res.spec), test)) << res.label;
    EXPECT_NE(r.output.find(res.label), std::string::npos);
  }
}

TEST_F(Cli, AblateAllWritesThreeProtocols) {
  const CliRun r = run("ablate --checkpoint " + path("model.ckpt") + " --protocol all --out " + path("all.json") + " " + kData);
  ASSERT_EQ(r.code, 0) << r.output;
  const ReportSet reports = parse_reports(slurp(path("all.json")));
  EXPECT_EQ(reports.size(), 3u);
  EXPECT_EQ(reports.at(Protocol::e2).results.size(), 2u);
  EXPECT_EQ(reports.at(Protocol::e3).results.size(), 1u);
  // Same flags, same bytes.
  ASSERT_EQ(run("ablate --checkpoint " + path("model.ckpt") + " --out " + path("all2.json") + " " + kData).code, 0);
  EXPECT_EQ(slurp(path("all.json")), slurp(path("all2.json")));
}

TEST_F(Cli, AblateErrors) {
  EXPECT_EQ(run("ablate --checkpoint " + path("model.ckpt") + " --protocol e7").code, 2);
  EXPECT_EQ(run("ablate --checkpoint " + path("model.ckpt") + " --tau 0").code, 2);
  EXPECT_EQ(run("ablate --checkpoint " + path("nothing.ckpt")).code, 3);
  std::string bytes = slurp(path("model.ckpt"));
  bytes[bytes.size() / 2] ^= 1;
  spit(dir_ / "corrupt.ckpt", bytes);
  EXPECT_EQ(run("ablate --checkpoint " + path("corrupt.ckpt")).code, 3);
}

TEST_F(Cli, ReportFormats) {
  ASSERT_EQ(run("ablate --checkpoint " + path("model.ckpt") + " --out " + path("r.json") + " " + kData).code, 0);
  const ReportSet reports = parse_reports(slurp(path("r.json")));
  std::size_t results = 0;
  for (const auto& [p, r] : reports) results += r.results.size();

  const CliRun csv = run("report " + path("r.json") + " --format csv");
  ASSERT_EQ(csv.code, 0);
  std::size_t lines = 0;
  for (char c : csv.output) lines += c == '\n';
  EXPECT_EQ(lines, results + 1);

  ASSERT_EQ(run("report --report " + path("r.json") + " --format svg --out " + path("r.svg")).code, 0);
  const XmlNode svg = parse_xml(slurp(path("r.svg")));
  EXPECT_EQ(svg.count("rect"), results);

  const CliRun cmp = run("report " + path("r.json") + " --compare cifar10-e3");
  ASSERT_EQ(cmp.code, 0);
  EXPECT_NE(cmp.output.find("0.2800 non-trivial"), std::string::npos) << cmp.output;
  EXPECT_NE(cmp.output.find("qualitative match:"), std::string::npos);

  EXPECT_EQ(run("report " + path("r.json") + " --format pdf").code, 2);
  EXPECT_EQ(run("report " + path("r.json") + " --compare nowhere").code, 2);
  spit(dir_ / "bad.json", "{\"e1\": {\"fingerprint\": 1}}");
  EXPECT_EQ(run("report " + path("bad.json")).code, 2);
  EXPECT_EQ(run("report " + path("absent.json")).code, 3);
}

TEST_F(Cli, PruneFoldsTrivialLayers) {
  ASSERT_EQ(run("ablate --checkpoint " + path("model.ckpt") + " --protocol e1 --tau 0.5 --out " + path("loose.json") + " " + kData).code, 0);
  const CliRun r = run("prune --checkpoint " + path("model.ckpt") + " --report " + path("loose.json") + " --out " +
                    path("pruned.ckpt") + " " + kData);
  ASSERT_EQ(r.code, 0) << r.output;
  const Model m = load_checkpoint(path("model.ckpt"));
  const Model p = load_checkpoint(path("pruned.ckpt"));
  EXPECT_LT(p.parameter_count(), m.parameter_count());
  EXPECT_NE(r.output.find("parameters " + std::to_string(m.parameter_count()) + " -> " + std::to_string(p.parameter_count())),
            std::string::npos)
      << r.output;
}

TEST_F(Cli, PruneWithoutTrivialLayersIsIdentity) {
  ASSERT_EQ(run("ablate --checkpoint " + path("model.ckpt") + " --protocol e3 --out " + path("e3.json") + " " + kData).code, 0);
  ReportSet reports = parse_reports(slurp(path("e3.json")));
  for (auto& res : reports.at(Protocol::e3).results) res.trivial = false;
  spit(dir_ / "none.json", emit_reports(reports));
  const CliRun r = run("prune --checkpoint " + path("model.ckpt") + " --report " + path("none.json") + " --out " +
                    path("same.ckpt") + " " + kData);
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(slurp(path("same.ckpt")), slurp(path("model.ckpt")));
  EXPECT_NE(r.output.find("(-0)"), std::string::npos);
}

TEST_F(Cli, PruneRejectsForeignReport) {
  ASSERT_EQ(run("train --quiet --config " + path("config.json") + " --seed 4 --out " + path("other.ckpt")).code, 0);
  ASSERT_EQ(run("ablate --checkpoint " + path("other.ckpt") + " --protocol e3 --out " + path("other.json") + " " + kData).code, 0);
  const CliRun r = run("prune --checkpoint " + path("model.ckpt") + " --report " + path("other.json") + " --out " + path("p.ckpt"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("model"), std::string::npos);
}
