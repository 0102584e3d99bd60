#pragma once

// Pipeline configuration file (JSON). Every section and key is optional;
// absent values keep the protocol defaults. Unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mdetect/digest.hpp"
#include "mdetect/encoder.hpp"
#include "mdetect/evaluator.hpp"
#include "mdetect/error.hpp"
#include "mdetect/nn/model_zoo.hpp"
#include "mdetect/testbed.hpp"
#include "mdetect/trace_io.hpp"
#include "mdetect/trainer.hpp"

namespace mdetect {

struct CorpusConfig {
  int experiments = 113;
  std::uint64_t seed = 1;          // per-experiment simulator seeds
  std::uint64_t profile_seed = 1;  // malware variant generation
  std::vector<MalwareFamily> families = {MalwareFamily::cpu_spinner, MalwareFamily::io_flooder,
                                         MalwareFamily::stealth, MalwareFamily::dormant_bursty};
  ExperimentConfig experiment;  // malware and rng_seed are filled per experiment
};

struct SplitConfig {
  SplitRatios ratios;
  std::uint64_t seed = 1;
};

struct ModelTrainConfig {
  std::string model = "lenet5";
  TrainConfig train;  // train.seed drives the epoch shuffles
  std::uint64_t init_seed = 1;
};

struct EvaluateConfig {
  int latency_repetitions = kMinRepetitions;
  int latency_warmup = kMinWarmup;
};

struct BenchmarkConfig {
  std::vector<std::string> models = {"lenet5",      "resnet50",    "resnet101",  "resnet152",
                                     "densenet121", "densenet169", "densenet201"};
  int repetitions = kMinRepetitions;
  int warmup = kMinWarmup;
  std::uint64_t init_seed = 1;
};

struct PipelineConfig {
  CorpusConfig corpus;
  SplitConfig split;
  ModelTrainConfig train;
  EvaluateConfig evaluate;
  BenchmarkConfig benchmark;

  void validate() const {
    if (corpus.experiments < 1) throw ConfigError("corpus.experiments must be >= 1");
    if (corpus.families.empty()) throw ConfigError("corpus.families must not be empty");
    split_sizes(5, split.ratios);  // ratio sanity
    if (split.ratios.train <= 0.0 || split.ratios.validation <= 0.0 || split.ratios.test <= 0.0) {
      throw ConfigError("split ratios must all be > 0 (training, validation and test parts are required)");
    }
    if (!nn::is_known_model(train.model)) nn::build_model(train.model);  // throws with the list of names
    train.train.validate();
    if (!(train.train.adam.learning_rate > 0.0)) throw ConfigError("train.learning_rate must be > 0");
    if (evaluate.latency_repetitions < kMinRepetitions || evaluate.latency_warmup < kMinWarmup) {
      throw ConfigError("evaluate: latency needs >= " + std::to_string(kMinRepetitions) + " repetitions and >= " +
                        std::to_string(kMinWarmup) + " warm-up runs");
    }
    if (benchmark.repetitions < kMinRepetitions || benchmark.warmup < kMinWarmup) {
      throw ConfigError("benchmark: needs >= " + std::to_string(kMinRepetitions) + " repetitions and >= " +
                        std::to_string(kMinWarmup) + " warm-up runs");
    }
    for (const auto& m : benchmark.models) {
      if (!nn::is_known_model(m)) nn::build_model(m);
    }
  }
};

inline nlohmann::json to_json(const PipelineConfig& c) {
  nlohmann::json families = nlohmann::json::array();
  for (auto f : c.corpus.families) families.push_back(to_string(f));
  nlohmann::json exp = to_json(c.corpus.experiment);
  exp.erase("malware");
  exp.erase("rng_seed");
  return {
      {"corpus",
       {{"experiments", c.corpus.experiments},
        {"seed", c.corpus.seed},
        {"profile_seed", c.corpus.profile_seed},
        {"families", families},
        {"experiment", exp}}},
      {"split",
       {{"train", c.split.ratios.train},
        {"validation", c.split.ratios.validation},
        {"test", c.split.ratios.test},
        {"seed", c.split.seed}}},
      {"train",
       {{"model", c.train.model},
        {"batch_size", c.train.train.batch_size},
        {"epochs", c.train.train.epochs},
        {"learning_rate", c.train.train.adam.learning_rate},
        {"beta1", c.train.train.adam.beta1},
        {"beta2", c.train.train.adam.beta2},
        {"epsilon", c.train.train.adam.epsilon},
        {"shuffle_seed", c.train.train.seed},
        {"init_seed", c.train.init_seed}}},
      {"evaluate", {{"latency_repetitions", c.evaluate.latency_repetitions}, {"latency_warmup", c.evaluate.latency_warmup}}},
      {"benchmark",
       {{"models", c.benchmark.models},
        {"repetitions", c.benchmark.repetitions},
        {"warmup", c.benchmark.warmup},
        {"init_seed", c.benchmark.init_seed}}},
  };
}

inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
  using detail::optional_into;
  using detail::reject_unknown_keys;
  PipelineConfig c;
  reject_unknown_keys(j, {"corpus", "split", "train", "evaluate", "benchmark"}, "config");
  if (j.contains("corpus")) {
    const auto& s = j["corpus"];
    reject_unknown_keys(s, {"experiments", "seed", "profile_seed", "families", "experiment"}, "corpus");
    optional_into(s, "experiments", c.corpus.experiments, "corpus");
    optional_into(s, "seed", c.corpus.seed, "corpus");
    optional_into(s, "profile_seed", c.corpus.profile_seed, "corpus");
    if (s.contains("families")) {
      c.corpus.families.clear();
      for (const auto& f : detail::require<std::vector<std::string>>(s, "families", "corpus")) {
        c.corpus.families.push_back(malware_family_from_string(f));
      }
    }
    if (s.contains("experiment")) {
      if (s["experiment"].contains("malware") || s["experiment"].contains("rng_seed")) {
        throw ConfigError("corpus.experiment: malware and rng_seed are assigned per experiment");
      }
      c.corpus.experiment = experiment_config_from_json(s["experiment"], c.corpus.experiment);
    }
  }
  if (j.contains("split")) {
    const auto& s = j["split"];
    reject_unknown_keys(s, {"train", "validation", "test", "seed"}, "split");
    optional_into(s, "train", c.split.ratios.train, "split");
    optional_into(s, "validation", c.split.ratios.validation, "split");
    optional_into(s, "test", c.split.ratios.test, "split");
    optional_into(s, "seed", c.split.seed, "split");
  }
  if (j.contains("train")) {
    const auto& s = j["train"];
    reject_unknown_keys(s, {"model", "batch_size", "epochs", "learning_rate", "beta1", "beta2", "epsilon",
                            "shuffle_seed", "init_seed"}, "train");
    optional_into(s, "model", c.train.model, "train");
    optional_into(s, "batch_size", c.train.train.batch_size, "train");
    optional_into(s, "epochs", c.train.train.epochs, "train");
    optional_into(s, "learning_rate", c.train.train.adam.learning_rate, "train");
    optional_into(s, "beta1", c.train.train.adam.beta1, "train");
    optional_into(s, "beta2", c.train.train.adam.beta2, "train");
    optional_into(s, "epsilon", c.train.train.adam.epsilon, "train");
    optional_into(s, "shuffle_seed", c.train.train.seed, "train");
    optional_into(s, "init_seed", c.train.init_seed, "train");
  }
  if (j.contains("evaluate")) {
    const auto& s = j["evaluate"];
    reject_unknown_keys(s, {"latency_repetitions", "latency_warmup"}, "evaluate");
    optional_into(s, "latency_repetitions", c.evaluate.latency_repetitions, "evaluate");
    optional_into(s, "latency_warmup", c.evaluate.latency_warmup, "evaluate");
  }
  if (j.contains("benchmark")) {
    const auto& s = j["benchmark"];
    reject_unknown_keys(s, {"models", "repetitions", "warmup", "init_seed"}, "benchmark");
    optional_into(s, "models", c.benchmark.models, "benchmark");
    optional_into(s, "repetitions", c.benchmark.repetitions, "benchmark");
    optional_into(s, "warmup", c.benchmark.warmup, "benchmark");
    optional_into(s, "init_seed", c.benchmark.init_seed, "benchmark");
  }
  c.validate();
  return c;
}

inline PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return pipeline_config_from_json(j);
}

// Digest of the effective (defaults-filled) configuration.
inline std::string config_digest(const PipelineConfig& c) { return digest_bytes(to_json(c).dump()); }

}  // namespace mdetect
