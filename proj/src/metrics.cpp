#include "fedrec/metrics.hpp"

#include <algorithm>
#include <vector>

namespace fedrec {

double test_error_rate(const ModelSpec& spec, const ParamVector& w, const Dataset& test) {
  if (test.size() == 0) throw InvalidArgument("test_error_rate: empty test set");
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < test.size(); ++i)
    if (predict(spec, w, test.row(i)) != test.labels[i]) ++wrong;
  return static_cast<double>(wrong) / static_cast<double>(test.size());
}

double attack_success_rate(const ModelSpec& spec, const ParamVector& w,
                           const Dataset& test, const Trigger& trigger,
                           int target_label) {
  std::size_t total = 0;
  std::size_t hits = 0;
  std::vector<double> x(test.dim);
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (test.labels[i] == target_label) continue;
    const auto row = test.row(i);
    std::copy(row.begin(), row.end(), x.begin());
    embed_trigger(x, trigger);
    ++total;
    if (predict(spec, w, x) == target_label) ++hits;
  }
  if (total == 0)
    throw InvalidArgument("attack_success_rate: every test input has the target label");
  return static_cast<double>(hits) / static_cast<double>(total);
}

CostSaving cost_saving(std::size_t rounds, const std::map<int, std::size_t>& exact_rounds) {
  if (rounds == 0) throw InvalidArgument("cost_saving: T must be positive");
  if (exact_rounds.empty()) throw InvalidArgument("cost_saving: no clients");
  CostSaving out;
  double sum = 0.0;
  bool first = true;
  for (const auto& [id, tr] : exact_rounds) {
    if (tr > rounds) throw InvalidArgument("cost_saving: T_r exceeds T");
    const double cp = static_cast<double>(rounds - tr) / static_cast<double>(rounds) * 100.0;
    out.per_client[id] = cp;
    sum += cp;
    out.min = first ? cp : std::min(out.min, cp);
    out.max = first ? cp : std::max(out.max, cp);
    first = false;
  }
  out.average = sum / static_cast<double>(exact_rounds.size());
  return out;
}

}  // namespace fedrec
