#include "fedrec/aggregation.hpp"

#include <algorithm>

namespace fedrec {

std::string to_string(RuleKind kind) {
  switch (kind) {
    case RuleKind::kFedAvg: return "fedavg";
    case RuleKind::kMedian: return "median";
    case RuleKind::kTrimmedMean: return "trimmed_mean";
  }
  return "?";
}

RuleKind rule_kind_from_string(const std::string& name) {
  if (name == "fedavg") return RuleKind::kFedAvg;
  if (name == "median") return RuleKind::kMedian;
  if (name == "trimmed_mean") return RuleKind::kTrimmedMean;
  throw InvalidArgument("unknown aggregation rule '" + name + "'");
}

namespace {

std::size_t check_updates(std::span<const ParamVector> updates) {
  if (updates.empty()) throw InvalidArgument("aggregation: no updates");
  const std::size_t d = updates.front().dim();
  for (const auto& u : updates)
    if (u.dim() != d) throw DimensionMismatch(d, u.dim());
  return d;
}

}  // namespace

ParamVector AggregationRule::aggregate(std::span<const ParamVector> updates,
                                       std::span<const std::size_t> sizes) const {
  switch (kind) {
    case RuleKind::kFedAvg: return fedavg(updates, sizes);
    case RuleKind::kMedian: return coord_median(updates);
    case RuleKind::kTrimmedMean: return trimmed_mean(updates, trim_k);
  }
  throw InvalidArgument("aggregation: unknown rule");
}

ParamVector fedavg(std::span<const ParamVector> updates,
                   std::span<const std::size_t> sizes) {
  const std::size_t d = check_updates(updates);
  if (sizes.size() != updates.size())
    throw InvalidArgument("fedavg: sizes and updates differ in length");
  double total = 0.0;
  for (std::size_t s : sizes) {
    if (s == 0) throw InvalidArgument("fedavg: client size must be positive");
    total += static_cast<double>(s);
  }
  ParamVector out(d);
  for (std::size_t i = 0; i < updates.size(); ++i)
    out.axpy(static_cast<double>(sizes[i]) / total, updates[i]);
  return out;
}

ParamVector coord_median(std::span<const ParamVector> updates) {
  const std::size_t d = check_updates(updates);
  const std::size_t n = updates.size();
  const std::size_t mid = n / 2;
  ParamVector out(d);
  std::vector<double> column(n);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t i = 0; i < n; ++i) column[i] = updates[i][j];
    std::nth_element(column.begin(), column.begin() + mid, column.end());
    const double upper = column[mid];
    if (n % 2 == 1) {
      out[j] = upper;
    } else {
      const double lower = *std::max_element(column.begin(), column.begin() + mid);
      out[j] = 0.5 * (lower + upper);
    }
  }
  return out;
}

ParamVector trimmed_mean(std::span<const ParamVector> updates, std::size_t k) {
  const std::size_t d = check_updates(updates);
  const std::size_t n = updates.size();
  if (n <= 2 * k)
    throw InvalidArgument("trimmed_mean: need more than 2k updates (n=" +
                          std::to_string(n) + ", k=" + std::to_string(k) + ")");
  ParamVector out(d);
  std::vector<double> column(n);
  const double keep = static_cast<double>(n - 2 * k);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t i = 0; i < n; ++i) column[i] = updates[i][j];
    if (k > 0) {
      // Partition so [k, n - k) holds the kept order statistics.
      std::nth_element(column.begin(), column.begin() + k, column.end());
      std::nth_element(column.begin() + k, column.begin() + (n - k), column.end());
    }
    // Summing in sorted order makes the result independent of input order.
    std::sort(column.begin() + k, column.begin() + (n - k));
    double sum = 0.0;
    for (std::size_t i = k; i < n - k; ++i) sum += column[i];
    out[j] = sum / keep;
  }
  return out;
}

ParamVector apply_update(const ParamVector& w, const ParamVector& aggregated,
                         double eta) {
  if (!(eta > 0.0)) throw InvalidArgument("apply_update: eta must be positive");
  require_same_dim(w, aggregated);
  ParamVector out = w;
  out.axpy(-eta, aggregated);
  return out;
}

}  // namespace fedrec
