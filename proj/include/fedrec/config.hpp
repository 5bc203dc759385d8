#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "fedrec/aggregation.hpp"
#include "fedrec/history.hpp"
#include "fedrec/models.hpp"
#include "fedrec/recovery.hpp"

namespace fedrec {

// A configuration problem tied to one "section.key" field.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& reason);
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

enum class DatasetKind { kSynthetic, kMnist };
enum class AttackKind { kNone, kTrim, kBackdoor };
enum class TriggerKind { kPixelPatch, kEveryKth };

struct DatasetConfig {
  DatasetKind kind = DatasetKind::kSynthetic;
  int classes = 10;
  std::size_t dim = 64;
  std::size_t train_per_class = 500;
  std::size_t test_per_class = 100;
  double separation = 5.0;
  std::string train_images;
  std::string train_labels;
  std::string test_images;
  std::string test_labels;

  friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

struct ModelConfig {
  ModelKind kind = ModelKind::kLogReg;
  std::size_t hidden = 32;
  double l2 = 0.0;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct FederationConfig {
  int clients = 100;
  std::optional<int> malicious;    // m; overrides the fraction
  double malicious_fraction = 0.2;
  double q = 0.5;
  RuleKind rule = RuleKind::kTrimmedMean;
  std::optional<std::size_t> trim_k;  // default n * 20%
  double eta = 3e-4;
  std::size_t batch_size = 32;
  std::size_t local_steps = 1;
  std::size_t rounds = 2000;

  int malicious_count() const;
  std::size_t trim_count() const;

  friend bool operator==(const FederationConfig&, const FederationConfig&) = default;
};

struct AttackSection {
  AttackKind kind = AttackKind::kNone;
  double b = 2.0;
  TriggerKind trigger = TriggerKind::kPixelPatch;
  std::size_t patch_rows = 4;
  std::size_t patch_cols = 4;
  std::size_t every_k = 20;
  std::optional<double> trigger_value;  // 1 for patches, 0 for every_kth
  int target = 0;
  double scale = 10.0;
  bool adaptive = true;

  friend bool operator==(const AttackSection&, const AttackSection&) = default;
};

struct DetectionConfig {
  double fnr = 0.0;
  double fpr = 0.0;

  friend bool operator==(const DetectionConfig&, const DetectionConfig&) = default;
};

struct RecoverySection {
  std::size_t warmup = 20;
  std::size_t correction = 10;
  std::size_t final_tuning = 5;
  std::size_t buffer = 2;
  double tolerance = 1e-6;
  std::optional<double> threshold;
  HvpMode hvp = HvpMode::kLbfgs;
  bool bound_check = false;

  RecoveryParams params() const;

  friend bool operator==(const RecoverySection&, const RecoverySection&) = default;
};

struct FinetuneSection {
  std::size_t epochs = 100;
  std::size_t examples = 1000;
  std::size_t batch_size = 32;
  double eta = 3e-4;
  std::optional<double> beta;

  friend bool operator==(const FinetuneSection&, const FinetuneSection&) = default;
};

struct RunSection {
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";

  friend bool operator==(const RunSection&, const RunSection&) = default;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  ModelConfig model;
  FederationConfig federation;
  AttackSection attack;
  DetectionConfig detection;
  RecoverySection recovery;
  FinetuneSection finetune;
  RunSection run;

  // Cross-field checks; throws ConfigError naming the offending field.
  void validate() const;

  std::optional<AttackConfig> attack_config() const;
  ModelSpec model_spec() const;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig parse_config(const std::filesystem::path& path);

// Every key in a fixed order, numbers in shortest round-trip form.
std::string serialize_config(const ExperimentConfig& config);

// SHA-256 of the canonical text of the sections that determine original
// training (dataset, model, federation, attack, run seed).
ConfigHash training_hash(const ExperimentConfig& config);
std::string to_hex(const ConfigHash& hash);

std::string format_double(double x);

std::string to_string(HvpMode mode);
std::string to_string(AttackKind kind);

}  // namespace fedrec
