#pragma once

#include <cstddef>
#include <map>
#include <optional>

#include "fedrec/attacks.hpp"
#include "fedrec/data.hpp"
#include "fedrec/models.hpp"

namespace fedrec {

// Fraction of test inputs the model mislabels.
double test_error_rate(const ModelSpec& spec, const ParamVector& w, const Dataset& test);

// Among test inputs whose true label is not the target, the fraction that the
// model assigns to the target once the trigger is embedded.
double attack_success_rate(const ModelSpec& spec, const ParamVector& w,
                           const Dataset& test, const Trigger& trigger,
                           int target_label);

struct CostSaving {
  std::map<int, double> per_client;  // CP in percent
  double average = 0.0;              // ACP
  double min = 0.0;
  double max = 0.0;
};

// CP_i = (T - T_r,i) / T * 100.
CostSaving cost_saving(std::size_t rounds, const std::map<int, std::size_t>& exact_rounds);

struct MetricsReport {
  double ter = 0.0;
  std::optional<double> asr;  // backdoor runs only
  CostSaving cost;
};

}  // namespace fedrec
