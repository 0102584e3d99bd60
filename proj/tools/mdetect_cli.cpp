// mdetect: simulate | encode | train | evaluate | benchmark | report
//
// Exit codes: 0 success, 2 invalid input (config, data, usage), 3 runtime failure.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mdetect/cli.hpp"

namespace fs = std::filesystem;
using namespace mdetect;

int main(int argc, char** argv) {
  CLI::App app{"Behavioral malware detection pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::string output_root;
  app.add_option("-c,--config", config_path, "pipeline config (JSON)")->check(CLI::ExistingFile);
  app.add_option("-o,--output-root", output_root, std::string("output root (default: $") + cli::kOutputRootEnv +
                                                      " or " + cli::kDefaultOutputRoot + ")");

  std::optional<std::uint64_t> corpus_seed, split_seed, init_seed, shuffle_seed;
  std::optional<int> experiments, epochs;
  std::string corpus_dir, dataset_dir, model, out_dir;
  std::vector<std::string> runs, models;
  std::string run_dir;

  auto* sim = app.add_subcommand("simulate", "generate the experiment corpus");
  sim->add_option("--seed", corpus_seed, "corpus seed override");
  sim->add_option("-n,--experiments", experiments, "number of experiments");
  sim->add_option("--out", out_dir, "corpus directory (default: <root>/corpus)");

  auto* enc = app.add_subcommand("encode", "encode a corpus into split sample tensors");
  enc->add_option("--corpus", corpus_dir, "corpus directory (default: <root>/corpus)");
  enc->add_option("--seed", split_seed, "split seed override");
  enc->add_option("--out", out_dir, "dataset directory (default: <root>/dataset)");

  auto* trn = app.add_subcommand("train", "train one model");
  trn->add_option("--dataset", dataset_dir, "dataset directory (default: <root>/dataset)");
  trn->add_option("-m,--model", model, "lenet5|resnet50|resnet101|resnet152|densenet121|densenet169|densenet201");
  trn->add_option("--epochs", epochs, "epoch count override");
  trn->add_option("--init-seed", init_seed, "weight init seed override");
  trn->add_option("--shuffle-seed", shuffle_seed, "epoch shuffle seed override");
  trn->add_option("--out", out_dir, "run directory (default: <root>/runs/<model>)");

  auto* evl = app.add_subcommand("evaluate", "evaluate a trained run on the test split");
  evl->add_option("--run", run_dir, "run directory holding checkpoint.bin")->required();
  evl->add_option("--dataset", dataset_dir, "dataset directory (default: <root>/dataset)");
  evl->add_option("--out", out_dir, "output directory (default: <run>/eval)");

  auto* bench = app.add_subcommand("benchmark", "single-sample detection latency per model");
  bench->add_option("--dataset", dataset_dir, "take samples from this dataset's test split (default: random)");
  bench->add_option("--models", models, "models to time (default: all seven)");
  bench->add_option("--init-seed", init_seed, "weight init seed override");
  bench->add_option("--out", out_dir, "output directory (default: <root>/benchmark)");

  auto* rep = app.add_subcommand("report", "compare trained runs");
  rep->add_option("--runs", runs, "run directories")->required();
  rep->add_option("--dataset", dataset_dir, "dataset directory (default: <root>/dataset)");
  rep->add_option("--out", out_dir, "output directory (default: <root>/report)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? cli::kExitOk : cli::kExitValidation;
  }

  try {
    cli::Context ctx;
    ctx.output_root = cli::resolve_output_root(output_root);
    if (!config_path.empty()) ctx.config = load_pipeline_config(config_path);
    auto& c = ctx.config;
    if (corpus_seed) c.corpus.seed = *corpus_seed;
    if (experiments) c.corpus.experiments = *experiments;
    if (split_seed) c.split.seed = *split_seed;
    if (epochs) c.train.train.epochs = *epochs;
    if (shuffle_seed) c.train.train.seed = *shuffle_seed;
    if (init_seed) c.train.init_seed = c.benchmark.init_seed = *init_seed;
    if (!model.empty()) c.train.model = model;
    if (!models.empty()) c.benchmark.models = models;
    c.validate();

    const fs::path root = ctx.output_root;
    const fs::path dataset = dataset_dir.empty() ? root / "dataset" : fs::path(dataset_dir);

    if (*sim) {
      const auto r = cli::cmd_simulate(ctx, out_dir);
      std::cout << "corpus " << r.corpus_dir.string() << ": " << r.experiments << " experiments, " << r.samples
                << " samples\n";
    } else if (*enc) {
      const auto r = cli::cmd_encode(ctx, corpus_dir.empty() ? root / "corpus" : fs::path(corpus_dir), out_dir);
      std::cout << "dataset " << r.dataset_dir.string() << ": experiments " << r.experiments[0] << "/"
                << r.experiments[1] << "/" << r.experiments[2] << ", samples " << r.samples[0] << "/" << r.samples[1]
                << "/" << r.samples[2] << "\n";
    } else if (*trn) {
      const auto r = cli::cmd_train(ctx, dataset, c.train.model, out_dir);
      std::cout << display_name(c.train.model) << " best_val_acc " << fixed(100 * r.best.best_validation_accuracy, 1)
                << " best_epoch " << r.best.best_epoch << " elapsed_s " << fixed(r.best.elapsed_s, 1) << "\n";
    } else if (*evl) {
      const auto r = cli::cmd_evaluate(ctx, run_dir, dataset, out_dir);
      std::cout << "metrics " << (r.eval_dir / "metrics.json").string() << "\n";
    } else if (*bench) {
      const auto rows = cli::cmd_benchmark(ctx, dataset_dir, out_dir);
      for (const auto& row : rows) {
        std::cout << display_name(row.model) << " " << fixed(row.latency.median_ms, 2) << " ms\n";
      }
    } else if (*rep) {
      std::vector<fs::path> run_paths(runs.begin(), runs.end());
      const auto r = cli::cmd_report(ctx, run_paths, dataset, out_dir);
      std::cout << r.report.table1_csv;
    }
    return cli::kExitOk;
  } catch (const ValidationFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return cli::kExitRuntime;
  }
}
