#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fedrec/config.hpp"
#include "fedrec/data.hpp"
#include "fedrec/flengine.hpp"

namespace fedrec {

class IoError : public Error {
 public:
  using Error::Error;
};

// Relative run directories are resolved against this variable when set.
inline constexpr const char* kOutputRootEnv = "FEDSIM_OUTPUT_ROOT";

inline constexpr const char* kHistoryFile = "history.frh";
inline constexpr const char* kTrainCsv = "train_metrics.csv";
inline constexpr const char* kTrainSummary = "summary_train.json";

enum class RecoveryMethod { kScratch, kHistorical, kFedRecover, kFineTune };
std::string to_string(RecoveryMethod method);
RecoveryMethod recovery_method_from_string(const std::string& name);

// Everything derived from a config before any training happens.
struct Scenario {
  ExperimentConfig config;
  ModelSpec spec;
  std::shared_ptr<const Dataset> train;
  Dataset test;
  std::set<int> malicious;
  std::shared_ptr<const Federation> federation;
  ParamVector w0;
};

Scenario build_scenario(const ExperimentConfig& config);

std::filesystem::path run_directory(const ExperimentConfig& config);

struct Evaluation {
  double ter = 0.0;
  std::optional<double> asr;  // backdoor scenarios only
};
Evaluation evaluate(const Scenario& scenario, const ParamVector& w);

// Rounds at which training curves are sampled: every ceil(T/50) rounds and T.
std::vector<std::size_t> eval_rounds(std::size_t total_rounds);

struct CommandOutput {
  std::filesystem::path run_dir;
  std::filesystem::path summary_path;
  std::string summary;  // JSON text as written
};

// Original training: history file, metrics CSV and summary.
CommandOutput cmd_train(const ExperimentConfig& config);

// Recovery from the stored history: per-round CSV and summary for `method`.
CommandOutput cmd_recover(const ExperimentConfig& config, RecoveryMethod method);

// CSV comparison table over the summaries found in `run_dirs`.
std::string cmd_report(const std::vector<std::filesystem::path>& run_dirs);

std::string csv_field(const std::string& text);

}  // namespace fedrec
