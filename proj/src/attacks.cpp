#include "fedrec/attacks.hpp"

#include <algorithm>
#include <cmath>

namespace fedrec {

namespace {

std::size_t square_side(std::size_t dim) {
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(dim))));
  if (side * side != dim)
    throw InvalidArgument("pixel-patch trigger needs a square input, dim=" +
                          std::to_string(dim));
  return side;
}

}  // namespace

void validate_trigger(const Trigger& trigger, std::size_t dim) {
  if (const auto* patch = std::get_if<PixelPatch>(&trigger)) {
    const std::size_t side = square_side(dim);
    if (patch->rows == 0 || patch->cols == 0 || patch->rows > side || patch->cols > side)
      throw InvalidArgument("pixel-patch trigger does not fit the image");
  } else {
    const auto& kth = std::get<EveryKth>(trigger);
    if (kth.k == 0) throw InvalidArgument("every-kth trigger needs k >= 1");
  }
}

void embed_trigger(std::span<double> input, const Trigger& trigger) {
  validate_trigger(trigger, input.size());
  if (const auto* patch = std::get_if<PixelPatch>(&trigger)) {
    const std::size_t side = square_side(input.size());
    for (std::size_t r = side - patch->rows; r < side; ++r)
      for (std::size_t c = side - patch->cols; c < side; ++c)
        input[r * side + c] = patch->value;
    return;
  }
  const auto& kth = std::get<EveryKth>(trigger);
  for (std::size_t j = kth.k - 1; j < input.size(); j += kth.k) input[j] = kth.value;
}

Dataset poison_shard_backdoor(const Dataset& data,
                              std::span<const std::size_t> rows,
                              const Trigger& trigger, int target_label) {
  if (rows.empty()) throw InvalidArgument("poison_shard_backdoor: empty shard");
  if (target_label < 0 || target_label >= data.num_classes)
    throw InvalidArgument("poison_shard_backdoor: target label out of range");
  Dataset out = subset(data, rows);
  std::vector<double> copy(data.dim);
  for (std::size_t r : rows) {
    const auto src = data.row(r);
    std::copy(src.begin(), src.end(), copy.begin());
    embed_trigger(copy, trigger);
    out.push_back(copy, target_label);
  }
  return out;
}

double adaptive_scale(double lambda, std::size_t m, std::size_t m_surviving) {
  if (m_surviving == 0)
    throw InvalidArgument("adaptive_scale: no surviving malicious clients");
  if (m_surviving > m) throw InvalidArgument("adaptive_scale: m' must not exceed m");
  return lambda * static_cast<double>(m) / static_cast<double>(m_surviving);
}

std::vector<ParamVector> trim_attack_updates(
    std::span<const ParamVector> benign_updates, double b,
    std::size_t n_malicious, RngStream& rng) {
  if (benign_updates.empty()) throw InvalidArgument("trim attack: no benign updates");
  if (!(b > 1.0)) throw InvalidArgument("trim attack: b must exceed 1");
  const std::size_t d = benign_updates.front().dim();
  for (const auto& u : benign_updates)
    if (u.dim() != d) throw DimensionMismatch(d, u.dim());

  std::vector<ParamVector> out(n_malicious, ParamVector(d));
  for (std::size_t j = 0; j < d; ++j) {
    double sum = 0.0;
    double lo = benign_updates.front()[j];
    double hi = lo;
    for (const auto& u : benign_updates) {
      sum += u[j];
      lo = std::min(lo, u[j]);
      hi = std::max(hi, u[j]);
    }
    const double mean = sum / static_cast<double>(benign_updates.size());
    // Push past the benign extreme that opposes the benign direction.
    double a, c;
    if (mean > 0.0) {
      a = lo > 0.0 ? lo / b : b * lo;
      c = lo;
    } else {
      a = hi;
      c = hi > 0.0 ? b * hi : hi / b;
    }
    for (auto& u : out) u[j] = rng.uniform(a, c);
  }
  return out;
}

std::size_t round_half_up(double x) {
  return static_cast<std::size_t>(std::floor(x + 0.5));
}

DetectionOutcome simulate_detection(const std::set<int>& truth_malicious,
                                    const std::set<int>& all_clients,
                                    double fnr, double fpr, RngStream& rng) {
  if (!(fnr >= 0.0 && fnr <= 1.0) || !(fpr >= 0.0 && fpr <= 1.0))
    throw InvalidArgument("simulate_detection: rates must lie in [0, 1]");
  std::vector<int> malicious(truth_malicious.begin(), truth_malicious.end());
  std::vector<int> benign;
  for (int c : all_clients)
    if (!truth_malicious.contains(c)) benign.push_back(c);
  if (malicious.size() + benign.size() != all_clients.size())
    throw InvalidArgument("simulate_detection: malicious set is not a subset of clients");

  const std::size_t missed = round_half_up(fnr * static_cast<double>(malicious.size()));
  const std::size_t false_pos = round_half_up(fpr * static_cast<double>(benign.size()));

  rng.shuffle(malicious);
  rng.shuffle(benign);
  DetectionOutcome out;
  out.detected.insert(malicious.begin() + static_cast<std::ptrdiff_t>(missed), malicious.end());
  out.detected.insert(benign.begin(), benign.begin() + static_cast<std::ptrdiff_t>(false_pos));
  out.fnr = fnr;
  out.fpr = fpr;
  return out;
}

}  // namespace fedrec
