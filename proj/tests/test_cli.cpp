#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

#include "mdetect/mdetect.hpp"

using namespace mdetect;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag)
      : path(fs::temp_directory_path() / ("mdetect-cli-" + tag + "-" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

int run_cli(const std::string& args) {
  const std::string cmd = std::string(MDETECT_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Config, DefaultsAndRoundTrip) {
  const PipelineConfig c;
  EXPECT_EQ(c.corpus.experiments, 113);
  EXPECT_EQ(c.train.train.batch_size, 64);
  EXPECT_EQ(c.train.train.epochs, 100);
  EXPECT_DOUBLE_EQ(c.train.train.adam.learning_rate, 1e-4);
  const auto back = pipeline_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(config_digest(back), config_digest(c));
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  using nlohmann::json;
  EXPECT_THROW(pipeline_config_from_json(json{{"trian", json::object()}}), ConfigError);
  EXPECT_THROW(pipeline_config_from_json(json{{"train", {{"lr", 0.1}}}}), ConfigError);
  EXPECT_THROW(pipeline_config_from_json(json{{"train", {{"model", "vgg16"}}}}), ConfigError);
  EXPECT_THROW(pipeline_config_from_json(json{{"train", {{"learning_rate", 0.0}}}}), ConfigError);
  EXPECT_THROW(pipeline_config_from_json(json{{"split", {{"train", 1.0}, {"validation", 0.0}, {"test", 0.0}}}}),
               ConfigError);
  EXPECT_THROW(pipeline_config_from_json(json{{"evaluate", {{"latency_repetitions", 10}}}}), ConfigError);
  EXPECT_THROW(pipeline_config_from_json(json{{"corpus", {{"families", {"ransomware"}}}}}), ConfigError);
}

TEST(Config, SampleConfigsLoad) {
  for (const char* name : {"default.json", "desk.json"}) {
    const fs::path p = fs::path(MDETECT_SOURCE_DIR) / "configs" / name;
    EXPECT_NO_THROW(load_pipeline_config(p)) << p;
  }
}

TEST(OutputRoot, FlagThenEnvironmentThenDefault) {
  ::unsetenv(cli::kOutputRootEnv);
  EXPECT_EQ(cli::resolve_output_root(""), fs::path(cli::kDefaultOutputRoot));
  ::setenv(cli::kOutputRootEnv, "/tmp/from-env", 1);
  EXPECT_EQ(cli::resolve_output_root(""), fs::path("/tmp/from-env"));
  EXPECT_EQ(cli::resolve_output_root("flag-root"), fs::path("flag-root"));
  ::unsetenv(cli::kOutputRootEnv);
}

TEST(Digest, WallClockColumnsMasked) {
  TempDir dir("digest");
  write_text_file(dir.path / "a.csv", "epoch,val_acc,cumulative_s\n1,0.9,12.5\n");
  write_text_file(dir.path / "b.csv", "epoch,val_acc,cumulative_s\n1,0.9,99.0\n");
  write_text_file(dir.path / "c.csv", "epoch,val_acc,cumulative_s\n1,0.8,12.5\n");
  EXPECT_EQ(artifact_digest(dir.path / "a.csv"), artifact_digest(dir.path / "b.csv"));
  EXPECT_NE(artifact_digest(dir.path / "a.csv"), artifact_digest(dir.path / "c.csv"));
  write_text_file(dir.path / "a.json", R"({"f1": 0.5, "latency": {"median_ms": 3.0}})");
  write_text_file(dir.path / "b.json", R"({"f1": 0.5, "latency": {"median_ms": 7.0}})");
  EXPECT_EQ(artifact_digest(dir.path / "a.json"), artifact_digest(dir.path / "b.json"));
  write_text_file(dir.path / "a.md", "| Model | F1 | Detection Time (ms) |\n|---|---|---|\n| LeNet-5 | 90.0 | 4.1 |\n");
  write_text_file(dir.path / "b.md", "| Model | F1 | Detection Time (ms) |\n|---|---|---|\n| LeNet-5 | 90.0 | 5.3 |\n");
  EXPECT_EQ(artifact_digest(dir.path / "a.md"), artifact_digest(dir.path / "b.md"));
}

TEST(Report, MissingHistoryWarns) {
  ModelResult r;
  r.report.model = "lenet5";
  r.report.counts = {1, 1, 0, 0};
  r.report.values = metrics(r.report.counts);
  const auto rep = build_comparison({r});
  ASSERT_EQ(rep.warnings.size(), 1u);
  EXPECT_NE(rep.warnings[0].find("LeNet-5"), std::string::npos);
  EXPECT_NE(rep.table1_csv.find("LeNet-5,100.0,100.0,100.0,100.0,"), std::string::npos);
  EXPECT_EQ(rep.table2_csv, std::string(kTable2Header) + "\n");
}

TEST(Report, DisplayNames) {
  EXPECT_EQ(display_name("lenet5"), "LeNet-5");
  EXPECT_EQ(display_name("resnet152"), "ResNet-152");
  EXPECT_EQ(display_name("densenet201"), "DenseNet-201");
}

TEST(Binary, ExitCodes) {
  TempDir dir("exit");
  const std::string root = " -o " + dir.path.string();
  EXPECT_EQ(run_cli(""), cli::kExitValidation);
  EXPECT_EQ(run_cli("frobnicate"), cli::kExitValidation);
  EXPECT_EQ(run_cli(root + " train -m vgg16"), cli::kExitValidation);
  write_text_file(dir.path / "bad.json", R"({"train": {"epochs": 0}})");
  EXPECT_EQ(run_cli("-c " + (dir.path / "bad.json").string() + root + " simulate"), cli::kExitValidation);
  EXPECT_EQ(run_cli(root + " evaluate --run " + (dir.path / "missing").string()), cli::kExitValidation);
  EXPECT_EQ(run_cli("--help"), cli::kExitOk);
}

TEST(Pipeline, SmallCorpusEndToEnd) {
  TempDir dir("pipe");
  std::ostringstream log;
  cli::Context ctx;
  ctx.output_root = dir.path;
  ctx.log = &log;
  ctx.config.corpus.experiments = 5;
  ctx.config.train.train.epochs = 1;

  const auto sim = cli::cmd_simulate(ctx);
  EXPECT_EQ(sim.experiments, 5u);
  EXPECT_EQ(sim.samples, 5u * 360);
  EXPECT_TRUE(fs::exists(dir.path / "corpus" / "exp-000" / "snapshots.csv") ||
              fs::exists(dir.path / "corpus" / "exp-000" / "snapshots"));

  const auto enc = cli::cmd_encode(ctx, sim.corpus_dir);
  EXPECT_EQ(enc.experiments, (std::array<std::size_t, 3>{3, 1, 1}));
  const auto stored = read_dataset(enc.dataset_dir);
  EXPECT_EQ(stored.data.train.size(), 3u * 360);

  const auto trained = cli::cmd_train(ctx, enc.dataset_dir, "lenet5");
  EXPECT_EQ(trained.history.epochs.size(), 1u);
  EXPECT_TRUE(fs::exists(trained.run_dir / cli::kCheckpointFile));
  EXPECT_TRUE(fs::exists(trained.run_dir / cli::kHistoryFile));

  const auto ev = cli::cmd_evaluate(ctx, trained.run_dir, enc.dataset_dir);
  const auto metrics_json = nlohmann::json::parse(read_text_file(ev.eval_dir / "metrics.json"));
  EXPECT_EQ(metrics_json.at("samples").get<std::size_t>(), 360u);
  EXPECT_EQ(metrics_json.at("latency_protocol").at("repetitions").get<int>(), 30);

  const fs::path bare = dir.path / "runs" / "bare";
  fs::create_directories(bare);
  fs::copy_file(trained.run_dir / cli::kCheckpointFile, bare / cli::kCheckpointFile);
  const auto rep = cli::cmd_report(ctx, {trained.run_dir, bare}, enc.dataset_dir);
  EXPECT_EQ(rep.report.warnings.size(), 1u);
  for (const char* f : {"table1.csv", "table2.csv", "metric_bars.csv", "roc_curves.csv", "loss_curves.csv", "report.md"}) {
    EXPECT_TRUE(fs::exists(rep.report_dir / f)) << f;
  }
  const auto manifest = read_manifest(rep.report_dir);
  EXPECT_EQ(manifest.command, "report");
  EXPECT_EQ(manifest.artifacts.size(), 6u);
  EXPECT_EQ(manifest.inputs.at("dataset_dir").get<std::string>(), "dataset");

  // Corpus with an out-of-budget experiment is refused with its name.
  const fs::path broken = dir.path / "broken";
  fs::copy(sim.corpus_dir, broken, fs::copy_options::recursive);
  auto trace = read_trace(broken / "exp-002");
  for (int i = 0; i < 130; ++i) {
    ProcessRecord p;
    p.id = {40000 + i, "extra", binary_hash_of("extra")};
    trace.snapshots[5].processes.push_back(p);
  }
  write_trace(broken / "exp-002", trace);
  try {
    cli::cmd_encode(ctx, broken, dir.path / "broken-ds");
    FAIL() << "expected CapacityError";
  } catch (const CapacityError& e) {
    EXPECT_NE(std::string(e.what()).find("exp-002"), std::string::npos) << e.what();
  }
}
