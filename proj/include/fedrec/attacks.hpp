#pragma once

#include <cstddef>
#include <set>
#include <span>
#include <variant>
#include <vector>

#include "fedrec/data.hpp"
#include "fedrec/numcore.hpp"

namespace fedrec {

// Overwrites the bottom-right rows x cols block of a square image.
struct PixelPatch {
  std::size_t rows = 4;
  std::size_t cols = 4;
  double value = 1.0;
};

// Sets coordinates k-1, 2k-1, ... to value.
struct EveryKth {
  std::size_t k = 20;
  double value = 0.0;
};

using Trigger = std::variant<PixelPatch, EveryKth>;

void validate_trigger(const Trigger& trigger, std::size_t dim);
void embed_trigger(std::span<double> input, const Trigger& trigger);

struct TrimAttack {
  double b = 2.0;
};

struct BackdoorAttack {
  Trigger trigger = PixelPatch{};
  int target_label = 0;
  double scale = 10.0;  // lambda
  bool adaptive = false;
};

using AttackConfig = std::variant<TrimAttack, BackdoorAttack>;

// Appends a trigger-embedded copy, relabelled to target_label, of every row.
Dataset poison_shard_backdoor(const Dataset& data,
                              std::span<const std::size_t> rows,
                              const Trigger& trigger, int target_label);

// lambda * m / m_surviving. Throws when no attacker survives.
double adaptive_scale(double lambda, std::size_t m, std::size_t m_surviving);

// Directed-deviation Trim attack against coordinate-wise robust rules.
// Returns one crafted update per malicious client.
std::vector<ParamVector> trim_attack_updates(
    std::span<const ParamVector> benign_updates, double b,
    std::size_t n_malicious, RngStream& rng);

struct DetectionOutcome {
  std::set<int> detected;
  double fnr = 0.0;
  double fpr = 0.0;
};

// Nearest integer, halves rounded up.
std::size_t round_half_up(double x);

// Removes round(fnr * m) malicious clients from the truth and adds
// round(fpr * (n - m)) benign clients, both chosen uniformly.
DetectionOutcome simulate_detection(const std::set<int>& truth_malicious,
                                    const std::set<int>& all_clients,
                                    double fnr, double fpr, RngStream& rng);

}  // namespace fedrec
