#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fedrec/numcore.hpp"

namespace fedrec {

enum class RuleKind { kFedAvg, kMedian, kTrimmedMean };

struct AggregationRule {
  RuleKind kind = RuleKind::kFedAvg;
  std::size_t trim_k = 0;  // trimmed mean only

  // Dispatches to the rule. `sizes` are the |D_i| weights (FedAvg only).
  ParamVector aggregate(std::span<const ParamVector> updates,
                        std::span<const std::size_t> sizes) const;
};

std::string to_string(RuleKind kind);
RuleKind rule_kind_from_string(const std::string& name);

// Sum of (|D_i| / sum |D_j|) * g_i.
ParamVector fedavg(std::span<const ParamVector> updates,
                   std::span<const std::size_t> sizes);

// Coordinate-wise median; even counts average the two middle values.
ParamVector coord_median(std::span<const ParamVector> updates);

// Coordinate-wise mean after dropping the k largest and k smallest values.
ParamVector trimmed_mean(std::span<const ParamVector> updates, std::size_t k);

// w - eta * aggregated
ParamVector apply_update(const ParamVector& w, const ParamVector& aggregated,
                         double eta);

}  // namespace fedrec
