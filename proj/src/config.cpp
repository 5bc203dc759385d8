#include "fedrec/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <openssl/sha.h>

namespace fedrec {

ConfigError::ConfigError(std::string field, const std::string& reason)
    : Error(field + ": " + reason), field_(std::move(field)) {}

std::string format_double(double x) {
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  if (std::isnan(x)) return "nan";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

std::string to_string(HvpMode mode) {
  return mode == HvpMode::kLbfgs ? "lbfgs" : "exact_quadratic";
}

std::string to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::kNone: return "none";
    case AttackKind::kTrim: return "trim";
    case AttackKind::kBackdoor: return "backdoor";
  }
  return "?";
}

namespace {

std::string to_string(DatasetKind kind) {
  return kind == DatasetKind::kSynthetic ? "synthetic" : "mnist";
}

std::string to_string(TriggerKind kind) {
  return kind == TriggerKind::kPixelPatch ? "pixel_patch" : "every_kth";
}

template <class T>
T parse_integer(const std::string& field, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  const auto res = std::from_chars(text.data(), end, value);
  if (res.ec == std::errc::result_out_of_range)
    throw ConfigError(field, "value '" + text + "' is out of range");
  if (res.ec != std::errc() || res.ptr != end)
    throw ConfigError(field, "expected an integer, got '" + text + "'");
  return value;
}

double parse_real(const std::string& field, const std::string& text) {
  double value = 0.0;
  const char* end = text.data() + text.size();
  const auto res = std::from_chars(text.data(), end, value);
  if (res.ec != std::errc() || res.ptr != end || std::isnan(value))
    throw ConfigError(field, "expected a number, got '" + text + "'");
  return value;
}

bool parse_bool(const std::string& field, const std::string& text) {
  if (text == "true") return true;
  if (text == "false") return false;
  throw ConfigError(field, "expected true or false, got '" + text + "'");
}

using Emitted = std::optional<std::string>;

struct Field {
  std::string key;
  std::function<void(ExperimentConfig&, const std::string& field, const std::string& text)> parse;
  std::function<Emitted(const ExperimentConfig&)> emit;
};

struct Section {
  std::string name;
  std::vector<Field> fields;
};

// Accessors are written once as generic lambdas and used for both directions.
template <class T, class Get>
Field integer_field(std::string key, Get get) {
  return {std::move(key),
          [get](ExperimentConfig& c, const std::string& f, const std::string& s) {
            get(c) = parse_integer<T>(f, s);
          },
          [get](const ExperimentConfig& c) -> Emitted { return std::to_string(get(c)); }};
}

template <class T, class Get>
Field optional_integer_field(std::string key, Get get) {
  return {std::move(key),
          [get](ExperimentConfig& c, const std::string& f, const std::string& s) {
            get(c) = parse_integer<T>(f, s);
          },
          [get](const ExperimentConfig& c) -> Emitted {
            if (!get(c)) return std::nullopt;
            return std::to_string(*get(c));
          }};
}

template <class Get>
Field real_field(std::string key, Get get) {
  return {std::move(key),
          [get](ExperimentConfig& c, const std::string& f, const std::string& s) {
            get(c) = parse_real(f, s);
          },
          [get](const ExperimentConfig& c) -> Emitted { return format_double(get(c)); }};
}

template <class Get>
Field optional_real_field(std::string key, Get get) {
  return {std::move(key),
          [get](ExperimentConfig& c, const std::string& f, const std::string& s) {
            get(c) = parse_real(f, s);
          },
          [get](const ExperimentConfig& c) -> Emitted {
            if (!get(c)) return std::nullopt;
            return format_double(*get(c));
          }};
}

template <class Get>
Field bool_field(std::string key, Get get) {
  return {std::move(key),
          [get](ExperimentConfig& c, const std::string& f, const std::string& s) {
            get(c) = parse_bool(f, s);
          },
          [get](const ExperimentConfig& c) -> Emitted { return get(c) ? "true" : "false"; }};
}

template <class Get>
Field string_field(std::string key, Get get) {
  return {std::move(key),
          [get](ExperimentConfig& c, const std::string&, const std::string& s) { get(c) = s; },
          [get](const ExperimentConfig& c) -> Emitted {
            if (get(c).empty()) return std::nullopt;
            return get(c);
          }};
}

template <class E, class Get>
Field choice_field(std::string key, Get get, std::initializer_list<E> options) {
  std::vector<E> opts(options);
  return {std::move(key),
          [get, opts](ExperimentConfig& c, const std::string& f, const std::string& s) {
            for (E o : opts)
              if (to_string(o) == s) {
                get(c) = o;
                return;
              }
            std::string names;
            for (E o : opts) names += (names.empty() ? "" : ", ") + to_string(o);
            throw ConfigError(f, "expected one of {" + names + "}, got '" + s + "'");
          },
          [get](const ExperimentConfig& c) -> Emitted { return to_string(get(c)); }};
}

#define FIELD_REF(path) [](auto& c) -> auto& { return c.path; }

const std::vector<Section>& schema() {
  static const std::vector<Section> sections = {
      {"dataset",
       {choice_field<DatasetKind>("kind", FIELD_REF(dataset.kind),
                                  {DatasetKind::kSynthetic, DatasetKind::kMnist}),
        integer_field<int>("classes", FIELD_REF(dataset.classes)),
        integer_field<std::size_t>("dim", FIELD_REF(dataset.dim)),
        integer_field<std::size_t>("train_per_class", FIELD_REF(dataset.train_per_class)),
        integer_field<std::size_t>("test_per_class", FIELD_REF(dataset.test_per_class)),
        real_field("separation", FIELD_REF(dataset.separation)),
        string_field("train_images", FIELD_REF(dataset.train_images)),
        string_field("train_labels", FIELD_REF(dataset.train_labels)),
        string_field("test_images", FIELD_REF(dataset.test_images)),
        string_field("test_labels", FIELD_REF(dataset.test_labels))}},
      {"model",
       {choice_field<ModelKind>("kind", FIELD_REF(model.kind),
                                {ModelKind::kLogReg, ModelKind::kMlp, ModelKind::kRidge}),
        integer_field<std::size_t>("hidden", FIELD_REF(model.hidden)),
        real_field("l2", FIELD_REF(model.l2))}},
      {"federation",
       {integer_field<int>("clients", FIELD_REF(federation.clients)),
        optional_integer_field<int>("malicious", FIELD_REF(federation.malicious)),
        real_field("malicious_fraction", FIELD_REF(federation.malicious_fraction)),
        real_field("q", FIELD_REF(federation.q)),
        choice_field<RuleKind>("rule", FIELD_REF(federation.rule),
                               {RuleKind::kFedAvg, RuleKind::kMedian,
                                RuleKind::kTrimmedMean}),
        optional_integer_field<std::size_t>("trim_k", FIELD_REF(federation.trim_k)),
        real_field("eta", FIELD_REF(federation.eta)),
        integer_field<std::size_t>("batch_size", FIELD_REF(federation.batch_size)),
        integer_field<std::size_t>("local_steps", FIELD_REF(federation.local_steps)),
        integer_field<std::size_t>("rounds", FIELD_REF(federation.rounds))}},
      {"attack",
       {choice_field<AttackKind>("kind", FIELD_REF(attack.kind),
                                 {AttackKind::kNone, AttackKind::kTrim,
                                  AttackKind::kBackdoor}),
        real_field("b", FIELD_REF(attack.b)),
        choice_field<TriggerKind>("trigger", FIELD_REF(attack.trigger),
                                  {TriggerKind::kPixelPatch, TriggerKind::kEveryKth}),
        integer_field<std::size_t>("patch_rows", FIELD_REF(attack.patch_rows)),
        integer_field<std::size_t>("patch_cols", FIELD_REF(attack.patch_cols)),
        integer_field<std::size_t>("every_k", FIELD_REF(attack.every_k)),
        optional_real_field("trigger_value", FIELD_REF(attack.trigger_value)),
        integer_field<int>("target", FIELD_REF(attack.target)),
        real_field("scale", FIELD_REF(attack.scale)),
        bool_field("adaptive", FIELD_REF(attack.adaptive))}},
      {"detection",
       {real_field("fnr", FIELD_REF(detection.fnr)),
        real_field("fpr", FIELD_REF(detection.fpr))}},
      {"recovery",
       {integer_field<std::size_t>("warmup", FIELD_REF(recovery.warmup)),
        integer_field<std::size_t>("correction", FIELD_REF(recovery.correction)),
        integer_field<std::size_t>("final_tuning", FIELD_REF(recovery.final_tuning)),
        integer_field<std::size_t>("buffer", FIELD_REF(recovery.buffer)),
        real_field("tolerance", FIELD_REF(recovery.tolerance)),
        optional_real_field("threshold", FIELD_REF(recovery.threshold)),
        choice_field<HvpMode>("hvp", FIELD_REF(recovery.hvp),
                              {HvpMode::kLbfgs, HvpMode::kExactQuadratic}),
        bool_field("bound_check", FIELD_REF(recovery.bound_check))}},
      {"finetune",
       {integer_field<std::size_t>("epochs", FIELD_REF(finetune.epochs)),
        integer_field<std::size_t>("examples", FIELD_REF(finetune.examples)),
        integer_field<std::size_t>("batch_size", FIELD_REF(finetune.batch_size)),
        real_field("eta", FIELD_REF(finetune.eta)),
        optional_real_field("beta", FIELD_REF(finetune.beta))}},
      {"run",
       {integer_field<std::uint64_t>("seed", FIELD_REF(run.seed)),
        string_field("output_dir", FIELD_REF(run.output_dir))}},
  };
  return sections;
}

#undef FIELD_REF

std::string render(const ExperimentConfig& config, const std::set<std::string>& sections,
                   bool include_output_dir) {
  std::ostringstream out;
  bool first = true;
  for (const auto& section : schema()) {
    if (!sections.contains(section.name)) continue;
    if (!first) out << '\n';
    first = false;
    out << '[' << section.name << "]\n";
    for (const auto& field : section.fields) {
      if (!include_output_dir && section.name == "run" && field.key == "output_dir") continue;
      if (auto value = field.emit(config)) out << field.key << " = " << *value << '\n';
    }
  }
  return out.str();
}

void require(bool ok, const char* field, const std::string& reason) {
  if (!ok) throw ConfigError(field, reason);
}

bool is_finite(double x) { return std::isfinite(x); }

}  // namespace

int FederationConfig::malicious_count() const {
  if (malicious) return *malicious;
  return static_cast<int>(round_half_up(malicious_fraction * clients));
}

std::size_t FederationConfig::trim_count() const {
  if (trim_k) return *trim_k;
  return round_half_up(0.2 * clients);
}

RecoveryParams RecoverySection::params() const {
  RecoveryParams p;
  p.warmup = warmup;
  p.correction = correction;
  p.final_tuning = final_tuning;
  p.buffer = buffer;
  p.tolerance = tolerance;
  p.threshold = threshold;
  p.hvp_mode = hvp;
  return p;
}

ModelSpec ExperimentConfig::model_spec() const {
  ModelSpec spec;
  spec.kind = model.kind;
  spec.input_dim = dataset.dim;
  spec.num_classes = dataset.classes;
  spec.hidden = model.kind == ModelKind::kMlp ? model.hidden : 0;
  spec.l2 = model.l2;
  return spec;
}

std::optional<AttackConfig> ExperimentConfig::attack_config() const {
  switch (attack.kind) {
    case AttackKind::kNone: return std::nullopt;
    case AttackKind::kTrim: return AttackConfig{TrimAttack{attack.b}};
    case AttackKind::kBackdoor: {
      BackdoorAttack bd;
      if (attack.trigger == TriggerKind::kPixelPatch)
        bd.trigger = PixelPatch{attack.patch_rows, attack.patch_cols,
                                attack.trigger_value.value_or(1.0)};
      else
        bd.trigger = EveryKth{attack.every_k, attack.trigger_value.value_or(0.0)};
      bd.target_label = attack.target;
      bd.scale = attack.scale;
      bd.adaptive = attack.adaptive;
      return AttackConfig{bd};
    }
  }
  return std::nullopt;
}

void ExperimentConfig::validate() const {
  const auto& d = dataset;
  require(d.classes >= 2, "dataset.classes", "must be >= 2");
  if (d.kind == DatasetKind::kSynthetic) {
    require(d.dim >= 1, "dataset.dim", "must be >= 1");
    require(d.train_per_class >= 1, "dataset.train_per_class", "must be >= 1");
    require(d.test_per_class >= 1, "dataset.test_per_class", "must be >= 1");
    require(is_finite(d.separation) && d.separation >= 0.0, "dataset.separation",
            "must be a finite non-negative number");
  } else {
    require(!d.train_images.empty(), "dataset.train_images", "required for mnist");
    require(!d.train_labels.empty(), "dataset.train_labels", "required for mnist");
    require(!d.test_images.empty(), "dataset.test_images", "required for mnist");
    require(!d.test_labels.empty(), "dataset.test_labels", "required for mnist");
    require(d.dim >= 1, "dataset.dim", "must be >= 1");
  }

  require(model.kind != ModelKind::kMlp || model.hidden >= 1, "model.hidden",
          "must be >= 1 for mlp");
  require(is_finite(model.l2) && model.l2 >= 0.0, "model.l2",
          "must be a finite non-negative number");

  const auto& f = federation;
  require(f.clients >= 1, "federation.clients", "must be >= 1");
  require(f.clients >= d.classes, "federation.clients",
          "must be >= dataset.classes for the non-iid partition");
  if (f.malicious) {
    require(*f.malicious >= 0, "federation.malicious", "must be >= 0");
  } else {
    require(f.malicious_fraction >= 0.0 && f.malicious_fraction < 1.0,
            "federation.malicious_fraction", "must lie in [0, 1)");
  }
  const int m = f.malicious_count();
  require(m < f.clients, f.malicious ? "federation.malicious" : "federation.malicious_fraction",
          "constraint m < n violated (m=" + std::to_string(m) +
              ", n=" + std::to_string(f.clients) + ")");
  require(f.q >= 1.0 / d.classes && f.q <= 1.0, "federation.q",
          "must lie in [1/classes, 1]");
  if (f.rule == RuleKind::kTrimmedMean) {
    const std::size_t k = f.trim_count();
    require(2 * k < static_cast<std::size_t>(f.clients), "federation.trim_k",
            "constraint k < n/2 violated (k=" + std::to_string(k) +
                ", n=" + std::to_string(f.clients) + ")");
  }
  require(is_finite(f.eta) && f.eta > 0.0, "federation.eta", "must be positive");
  require(f.batch_size >= 1, "federation.batch_size", "must be >= 1");
  require(f.local_steps >= 1, "federation.local_steps", "must be >= 1");
  require(f.rounds >= 1, "federation.rounds", "must be >= 1");

  const auto& a = attack;
  if (a.kind == AttackKind::kTrim)
    require(is_finite(a.b) && a.b > 1.0, "attack.b", "must be > 1");
  if (a.kind == AttackKind::kBackdoor) {
    require(a.target >= 0 && a.target < d.classes, "attack.target",
            "must be a valid class label");
    require(is_finite(a.scale) && a.scale > 0.0, "attack.scale", "must be positive");
    if (a.trigger_value)
      require(is_finite(*a.trigger_value), "attack.trigger_value", "must be finite");
    try {
      validate_trigger(std::get<BackdoorAttack>(*attack_config()).trigger, d.dim);
    } catch (const InvalidArgument& e) {
      throw ConfigError("attack.trigger", e.what());
    }
  }

  require(detection.fnr >= 0.0 && detection.fnr <= 1.0, "detection.fnr",
          "must lie in [0, 1]");
  require(detection.fpr >= 0.0 && detection.fpr <= 1.0, "detection.fpr",
          "must lie in [0, 1]");

  const auto& r = recovery;
  require(r.buffer >= 1, "recovery.buffer", "must be >= 1");
  require(r.warmup > r.buffer, "recovery.warmup", "must exceed recovery.buffer");
  require(r.correction >= 1, "recovery.correction", "must be >= 1");
  require(r.warmup + r.final_tuning <= f.rounds, "recovery.warmup",
          "constraint T_w + T_f <= T violated (T_w=" + std::to_string(r.warmup) +
              ", T_f=" + std::to_string(r.final_tuning) +
              ", T=" + std::to_string(f.rounds) + ")");
  require(r.tolerance > 0.0 && r.tolerance <= 1.0, "recovery.tolerance",
          "must lie in (0, 1]");
  if (r.threshold)
    require(*r.threshold >= 0.0, "recovery.threshold", "must be non-negative");
  require(r.hvp != HvpMode::kExactQuadratic || model.kind == ModelKind::kRidge,
          "recovery.hvp", "exact_quadratic requires model.kind = ridge");
  require(r.hvp != HvpMode::kExactQuadratic || f.local_steps == 1, "recovery.hvp",
          "exact_quadratic requires federation.local_steps = 1");

  const auto& t = finetune;
  require(t.batch_size >= 1, "finetune.batch_size", "must be >= 1");
  require(is_finite(t.eta) && t.eta > 0.0, "finetune.eta", "must be positive");
  if (t.beta) require(is_finite(*t.beta) && *t.beta > 0.0, "finetune.beta", "must be positive");

  require(!run.output_dir.empty(), "run.output_dir", "must not be empty");
}

ExperimentConfig parse_config_text(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("<syntax>", "line " + std::to_string(e.line()) + ": " + e.message());
  }

  ExperimentConfig config;
  for (const auto& [section_name, section_tree] : tree) {
    if (section_tree.empty() && !section_tree.data().empty())
      throw ConfigError(section_name, "key outside of any section");
    const auto section = std::find_if(schema().begin(), schema().end(),
                                      [&](const Section& s) { return s.name == section_name; });
    if (section == schema().end()) throw ConfigError(section_name, "unknown section");
    for (const auto& [key, value] : section_tree) {
      const std::string field = section_name + "." + key;
      const auto it = std::find_if(section->fields.begin(), section->fields.end(),
                                   [&](const Field& f) { return f.key == key; });
      if (it == section->fields.end()) throw ConfigError(field, "unknown key");
      it->parse(config, field, value.data());
    }
  }
  config.validate();
  return config;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config_text(text.str());
}

std::string serialize_config(const ExperimentConfig& config) {
  std::set<std::string> all;
  for (const auto& s : schema()) all.insert(s.name);
  return render(config, all, true);
}

ConfigHash training_hash(const ExperimentConfig& config) {
  const std::string text =
      render(config, {"dataset", "model", "federation", "attack", "run"}, false);
  ConfigHash hash{};
  SHA256(reinterpret_cast<const unsigned char*>(text.data()), text.size(), hash.data());
  return hash;
}

std::string to_hex(const ConfigHash& hash) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(hash.size() * 2);
  for (auto byte : hash) {
    out.push_back(digits[byte >> 4]);
    out.push_back(digits[byte & 0xF]);
  }
  return out;
}

}  // namespace fedrec
