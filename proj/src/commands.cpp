#include "fedrec/commands.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "fedrec/attacks.hpp"
#include "fedrec/metrics.hpp"
#include "fedrec/recovery.hpp"

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace fedrec {

std::string to_string(RecoveryMethod method) {
  switch (method) {
    case RecoveryMethod::kScratch: return "scratch";
    case RecoveryMethod::kHistorical: return "historical";
    case RecoveryMethod::kFedRecover: return "fedrecover";
    case RecoveryMethod::kFineTune: return "finetune";
  }
  return "?";
}

RecoveryMethod recovery_method_from_string(const std::string& name) {
  for (auto m : {RecoveryMethod::kScratch, RecoveryMethod::kHistorical,
                 RecoveryMethod::kFedRecover, RecoveryMethod::kFineTune})
    if (to_string(m) == name) return m;
  throw InvalidArgument("unknown recovery method '" + name +
                        "' (expected scratch, historical, fedrecover or finetune)");
}

namespace {

// Exclusive ownership of a run directory for the lifetime of one command.
class RunLock {
 public:
  explicit RunLock(const fs::path& dir) : path_(dir / ".lock") {
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) {
      if (errno == EEXIST)
        throw IoError("run directory " + dir.string() + " is locked by another command (" +
                      path_.string() + ")");
      throw IoError("cannot create lock file " + path_.string() + ": " + std::strerror(errno));
    }
  }
  ~RunLock() {
    ::close(fd_);
    ::unlink(path_.c_str());
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
}

void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
}

std::string scenario_name(const fs::path& dir) {
  fs::path p = dir.lexically_normal();
  if (p.filename().empty()) p = p.parent_path();
  return p.filename().string();
}

std::string metrics_csv(const Scenario& scenario,
                        const std::vector<std::pair<std::size_t, ParamVector>>& models) {
  const bool backdoor = scenario.config.attack.kind == AttackKind::kBackdoor;
  std::string out = backdoor ? "round,ter,asr\n" : "round,ter\n";
  for (const auto& [round, w] : models) {
    const Evaluation e = evaluate(scenario, w);
    out += std::to_string(round) + "," + format_double(e.ter);
    if (backdoor) out += "," + format_double(*e.asr);
    out += "\n";
  }
  return out;
}

std::vector<std::pair<std::size_t, ParamVector>> sample_trace(
    const std::vector<ParamVector>& trace) {
  std::vector<std::pair<std::size_t, ParamVector>> out;
  for (std::size_t r : eval_rounds(trace.size() - 1)) out.emplace_back(r, trace[r]);
  return out;
}

Json int_list(const std::set<int>& ids) {
  Json out = Json::array();
  for (int id : ids) out.push_back(id);
  return out;
}

std::string dump(const Json& j) { return j.dump(2) + "\n"; }

struct BoundCheck {
  double mu = 0.0;
  double smoothness = 0.0;
  double m_measured = 0.0;
  double max_violation = 0.0;
};

}  // namespace

Scenario build_scenario(const ExperimentConfig& config) {
  config.validate();
  Scenario sc;
  sc.config = config;
  sc.spec = config.model_spec();
  const auto& d = config.dataset;
  const std::uint64_t seed = config.run.seed;

  if (d.kind == DatasetKind::kSynthetic) {
    const std::size_t per_class = d.train_per_class + d.test_per_class;
    const Dataset full = gen_synthetic(d.classes, d.dim, per_class, d.separation, seed);
    std::vector<std::size_t> train_rows, test_rows;
    for (std::size_t i = 0; i < full.size(); ++i)
      (i % per_class < d.train_per_class ? train_rows : test_rows).push_back(i);
    sc.train = std::make_shared<const Dataset>(subset(full, train_rows));
    sc.test = subset(full, test_rows);
  } else {
    auto train = load_mnist_idx(d.train_images, d.train_labels);
    sc.test = load_mnist_idx(d.test_images, d.test_labels);
    if (train.dim != d.dim)
      throw ConfigError("dataset.dim", "is " + std::to_string(d.dim) +
                                           " but the training images have " +
                                           std::to_string(train.dim) + " features");
    if (sc.test.dim != train.dim)
      throw ConfigError("dataset.test_images", "feature count differs from the training images");
    if (train.num_classes != d.classes || sc.test.num_classes != d.classes)
      throw ConfigError("dataset.classes", "does not match the label files");
    sc.train = std::make_shared<const Dataset>(std::move(train));
  }

  const auto& f = config.federation;
  auto shards = partition_noniid(*sc.train, f.clients, f.q, seed);

  std::vector<int> ids(static_cast<std::size_t>(f.clients));
  std::iota(ids.begin(), ids.end(), 0);
  RngStream pick(derive_seed(seed, StreamTag::kMalicious, 0, 0));
  pick.shuffle(ids);
  sc.malicious.insert(ids.begin(), ids.begin() + f.malicious_count());

  FlSetup setup;
  setup.spec = sc.spec;
  setup.rule = AggregationRule{f.rule, f.rule == RuleKind::kTrimmedMean ? f.trim_count() : 0};
  setup.eta = f.eta;
  setup.batch_size = f.batch_size;
  setup.local_steps = f.local_steps;
  setup.seed = seed;
  sc.federation = std::make_shared<const Federation>(sc.train, std::move(shards), setup,
                                                     sc.malicious, config.attack_config());
  sc.w0 = init_params(sc.spec, seed);
  return sc;
}

fs::path run_directory(const ExperimentConfig& config) {
  fs::path dir(config.run.output_dir);
  if (dir.is_relative())
    if (const char* root = std::getenv(kOutputRootEnv); root && *root) dir = fs::path(root) / dir;
  return dir;
}

Evaluation evaluate(const Scenario& scenario, const ParamVector& w) {
  Evaluation e;
  e.ter = test_error_rate(scenario.spec, w, scenario.test);
  if (const auto attack = scenario.config.attack_config())
    if (const auto* bd = std::get_if<BackdoorAttack>(&*attack))
      e.asr = attack_success_rate(scenario.spec, w, scenario.test, bd->trigger,
                                  bd->target_label);
  return e;
}

std::vector<std::size_t> eval_rounds(std::size_t total_rounds) {
  std::vector<std::size_t> out;
  if (total_rounds == 0) return out;
  const std::size_t every = (total_rounds + 49) / 50;
  for (std::size_t r = every; r < total_rounds; r += every) out.push_back(r);
  out.push_back(total_rounds);
  return out;
}

CommandOutput cmd_train(const ExperimentConfig& config) {
  const Scenario sc = build_scenario(config);
  const fs::path dir = run_directory(config);
  ensure_directory(dir);
  RunLock lock(dir);

  const std::size_t T = config.federation.rounds;
  HistoryMeta meta;
  meta.dim = sc.w0.dim();
  meta.n_clients = static_cast<std::uint32_t>(config.federation.clients);
  meta.rounds = static_cast<std::uint32_t>(T);
  meta.config_hash = training_hash(config);
  HistoryWriter writer(dir / kHistoryFile, meta);

  const auto cadence = eval_rounds(T);
  std::vector<std::pair<std::size_t, ParamVector>> sampled;
  TrainState state{0, sc.w0};
  for (std::size_t t = 0; t < T; ++t) {
    writer.append(run_round(state, *sc.federation));
    if (std::binary_search(cadence.begin(), cadence.end(), t + 1))
      sampled.emplace_back(t + 1, state.global_model);
  }
  write_file(dir / kTrainCsv, metrics_csv(sc, sampled));

  const Evaluation e = evaluate(sc, state.global_model);
  Json j;
  j["method"] = "train";
  j["scenario"] = scenario_name(dir);
  j["config_hash"] = to_hex(meta.config_hash);
  j["rounds"] = T;
  j["ter"] = e.ter;
  if (e.asr) j["asr"] = *e.asr;
  j["malicious"] = int_list(sc.malicious);
  j["history_file"] = kHistoryFile;

  CommandOutput out{dir, dir / kTrainSummary, dump(j)};
  write_file(out.summary_path, out.summary);
  return out;
}

CommandOutput cmd_recover(const ExperimentConfig& config, RecoveryMethod method) {
  const Scenario sc = build_scenario(config);
  const Federation& fed = *sc.federation;
  const fs::path dir = run_directory(config);
  if (method == RecoveryMethod::kScratch)
    ensure_directory(dir);
  else if (!fs::is_directory(dir))
    throw IoError("run directory " + dir.string() + " does not exist (run train first)");
  RunLock lock(dir);

  const std::size_t T = config.federation.rounds;
  const auto attack = config.attack_config();

  std::set<int> all;
  for (int id : fed.client_ids()) all.insert(id);
  RngStream detect_rng(derive_seed(config.run.seed, StreamTag::kDetection, 0, 0));
  const DetectionOutcome detection = simulate_detection(
      sc.malicious, all, config.detection.fnr, config.detection.fpr, detect_rng);
  const std::set<int> remaining = remaining_clients(fed, detection.detected);

  ResidualAttack residual;
  for (int id : sc.malicious)
    if (!detection.detected.contains(id)) residual.attackers.insert(id);
  if (attack && !residual.attackers.empty())
    if (const auto* bd = std::get_if<BackdoorAttack>(&*attack))
      residual.backdoor_scale =
          bd->adaptive ? adaptive_scale(bd->scale, sc.malicious.size(), residual.attackers.size())
                       : bd->scale;

  std::optional<History> history;
  if (method != RecoveryMethod::kScratch) {
    const fs::path path = dir / kHistoryFile;
    if (!fs::exists(path))
      throw IoError("missing history file " + path.string() + " (run train first)");
    history = history_load(path, training_hash(config));
    if (history->meta.dim != sc.w0.dim() || history->meta.n_clients != fed.n_clients() ||
        history->records.size() != T)
      throw HistoryMetaMismatch("history " + path.string() +
                                " does not match the configured scenario");
  }

  if (config.recovery.bound_check && method != RecoveryMethod::kFedRecover)
    throw ConfigError("recovery.bound_check", "only applies to method fedrecover");

  ParamVector model = sc.w0;
  std::vector<ParamVector> trace;
  std::map<int, std::size_t> exact_rounds;
  std::size_t abnormal = 0;
  std::size_t singular = 0;
  std::optional<double> threshold;
  std::optional<BoundCheck> bound;

  switch (method) {
    case RecoveryMethod::kScratch: {
      auto r = train_from_scratch(fed, remaining, sc.w0, T, residual);
      model = std::move(r.model);
      trace = std::move(r.per_round_models);
      exact_rounds = std::move(r.exact_rounds);
      break;
    }
    case RecoveryMethod::kHistorical: {
      auto r = historical_only(*history, fed, detection.detected);
      model = std::move(r.model);
      trace = std::move(r.per_round_models);
      exact_rounds = std::move(r.exact_rounds);
      break;
    }
    case RecoveryMethod::kFineTune: {
      FineTuneParams p;
      p.epochs = config.finetune.epochs;
      p.examples = config.finetune.examples;
      p.batch_size = config.finetune.batch_size;
      p.eta = config.finetune.eta;
      p.beta = config.finetune.beta;
      p.seed = config.run.seed;
      model = fine_tune(sc.spec, final_model_from_history(*history, fed), *sc.train, p);
      for (int id : remaining) exact_rounds[id] = 0;
      break;
    }
    case RecoveryMethod::kFedRecover: {
      const RecoveryParams params = config.recovery.params();
      EstimateObserver observer;
      double m_measured = 0.0;
      if (config.recovery.bound_check) {
        if (config.federation.rule != RuleKind::kFedAvg)
          throw ConfigError("recovery.bound_check", "requires federation.rule = fedavg");
        if (sc.spec.kind == ModelKind::kMlp || !(sc.spec.l2 > 0.0))
          throw ConfigError("recovery.bound_check",
                            "requires a strongly convex model (logreg or ridge with l2 > 0)");
        if (!params.threshold || !std::isinf(*params.threshold))
          throw ConfigError("recovery.bound_check", "requires recovery.threshold = inf");
        if (!residual.attackers.empty())
          throw ConfigError("recovery.bound_check", "requires every malicious client detected");
        observer = [&](std::uint64_t t, int id, const ParamVector& w, const ParamVector& est) {
          m_measured = std::max(m_measured, l2_norm(est - fed.benign_update(id, w, t)));
        };
      }
      auto r = fedrecover(*history, fed, detection.detected, params, residual, observer);
      if (config.recovery.bound_check) {
        BoundCheck b;
        b.mu = sc.spec.l2;
        b.smoothness = smoothness_bound(sc.spec, BatchView{*sc.train, all_rows(*sc.train)});
        const double eta = config.federation.eta;
        if (eta > std::min(1.0 / b.mu, 1.0 / b.smoothness))
          throw ConfigError("federation.eta", "bound check requires eta <= min(1/mu, 1/L) = " +
                                                  format_double(std::min(1.0 / b.mu,
                                                                         1.0 / b.smoothness)));
        b.m_measured = m_measured;
        const auto scratch = train_from_scratch(fed, remaining, sc.w0, T);
        const double d0 = l2_norm(r.per_round_models[0] - scratch.per_round_models[0]);
        b.max_violation = -std::numeric_limits<double>::infinity();
        for (std::size_t t = 0; t <= T; ++t) {
          const double gap = l2_norm(r.per_round_models[t] - scratch.per_round_models[t]);
          b.max_violation =
              std::max(b.max_violation, gap - theoretical_bound(eta, b.mu, m_measured, t, d0));
        }
        bound = b;
      }
      model = std::move(r.recovered_model);
      trace = std::move(r.per_round_models);
      exact_rounds = std::move(r.exact_rounds);
      abnormal = r.abnormality_count;
      singular = r.singular_fallbacks;
      threshold = r.threshold;
      break;
    }
  }

  const std::string name = to_string(method);
  if (trace.empty())
    write_file(dir / ("recover_" + name + ".csv"), metrics_csv(sc, {{T, model}}));
  else
    write_file(dir / ("recover_" + name + ".csv"), metrics_csv(sc, sample_trace(trace)));

  const Evaluation e = evaluate(sc, model);
  const CostSaving cost = cost_saving(T, exact_rounds);
  Json j;
  j["method"] = name;
  j["scenario"] = scenario_name(dir);
  j["config_hash"] = to_hex(training_hash(config));
  j["rounds"] = T;
  j["ter"] = e.ter;
  if (e.asr) j["asr"] = *e.asr;
  j["acp"] = cost.average;
  j["cp_min"] = cost.min;
  j["cp_max"] = cost.max;
  j["abnormality_count"] = abnormal;
  j["singular_fallbacks"] = singular;
  if (threshold) j["threshold"] = std::isinf(*threshold) ? Json("inf") : Json(*threshold);
  j["detected"] = int_list(detection.detected);
  j["undetected_malicious"] = int_list(residual.attackers);
  Json per_client = Json::object();
  for (const auto& [id, tr] : exact_rounds) per_client[std::to_string(id)] = tr;
  j["exact_rounds"] = per_client;
  if (bound) {
    j["bound_check"] = {{"mu", bound->mu},
                        {"L", bound->smoothness},
                        {"M_measured", bound->m_measured},
                        {"max_violation", bound->max_violation}};
  }

  CommandOutput out{dir, dir / ("summary_" + name + ".json"), dump(j)};
  write_file(out.summary_path, out.summary);
  return out;
}

std::string csv_field(const std::string& text) {
  if (text.find_first_of(",\"\r\n") == std::string::npos) return text;
  std::string out = "\"";
  for (char c : text) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string cmd_report(const std::vector<fs::path>& run_dirs) {
  if (run_dirs.empty()) throw InvalidArgument("report: no run directories given");
  static const char* kColumns[] = {"scenario", "method", "ter",  "asr",
                                   "acp",      "cp_min", "cp_max", "abnormality_count"};
  std::string out;
  for (const char* c : kColumns) out += std::string(out.empty() ? "" : ",") + c;
  out += "\n";

  for (const auto& dir : run_dirs) {
    if (!fs::is_directory(dir)) throw IoError("report: " + dir.string() + " is not a run directory");
    std::vector<fs::path> summaries;
    for (const auto& entry : fs::directory_iterator(dir)) {
      const std::string file = entry.path().filename().string();
      if (entry.is_regular_file() && file.starts_with("summary_") && file.ends_with(".json"))
        summaries.push_back(entry.path());
    }
    if (summaries.empty())
      throw IoError("report: no summary_*.json file in " + dir.string());
    std::sort(summaries.begin(), summaries.end());

    for (const auto& path : summaries) {
      std::ifstream in(path, std::ios::binary);
      Json j;
      try {
        j = Json::parse(in);
      } catch (const Json::exception& e) {
        throw IoError("report: malformed summary " + path.string() + ": " + e.what());
      }
      if (!j.is_object() || !j.contains("method") || !j.contains("ter"))
        throw IoError("report: summary " + path.string() + " lacks method or ter");
      std::string row;
      bool first = true;
      for (const char* c : kColumns) {
        std::string cell;
        if (j.contains(c)) {
          const Json& v = j[c];
          if (v.is_string()) cell = v.get<std::string>();
          else if (v.is_number_integer()) cell = std::to_string(v.get<long long>());
          else if (v.is_number()) cell = format_double(v.get<double>());
        }
        row += (first ? "" : ",") + csv_field(cell);
        first = false;
      }
      out += row + "\n";
    }
  }
  return out;
}

}  // namespace fedrec
