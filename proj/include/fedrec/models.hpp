#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fedrec/data.hpp"
#include "fedrec/numcore.hpp"

namespace fedrec {

enum class ModelKind {
  kLogReg,  // multinomial logistic regression
  kMlp,     // one ReLU hidden layer, softmax output
  kRidge,   // linear least squares against one-hot targets (quadratic loss)
};

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& name);

struct ModelSpec {
  ModelKind kind = ModelKind::kLogReg;
  std::size_t input_dim = 0;
  int num_classes = 0;
  std::size_t hidden = 0;  // mlp only
  double l2 = 0.0;

  // Number of parameters d.
  std::size_t param_dim() const;
  void validate() const;
};

// Rows of a dataset forming one mini-batch.
struct BatchView {
  const Dataset& data;
  std::span<const std::size_t> rows;
};

std::vector<std::size_t> all_rows(const Dataset& data);

// Mean per-example loss (cross-entropy, or half squared error for ridge)
// plus (l2 / 2) * ||w||^2.
double loss(const ModelSpec& spec, const ParamVector& w, const BatchView& batch);

// Exact gradient of loss().
ParamVector gradient(const ModelSpec& spec, const ParamVector& w,
                     const BatchView& batch);

// Class scores (logits) for one input.
std::vector<double> scores(const ModelSpec& spec, const ParamVector& w,
                           std::span<const double> input);

// Argmax of the scores; ties go to the lowest class index.
int predict(const ModelSpec& spec, const ParamVector& w,
            std::span<const double> input);

// logreg / ridge: zeros. mlp: per-layer uniform(-a, a) weights with
// a = sqrt(6 / (fan_in + fan_out)) and zero biases.
ParamVector init_params(const ModelSpec& spec, std::uint64_t seed);

// Hessian of the ridge loss on `batch` (constant in w). Only valid for kRidge.
Eigen::MatrixXd ridge_hessian(const ModelSpec& spec, const BatchView& batch);

// Upper bound on the smoothness constant of the logreg / ridge batch loss,
// using max ||[x, 1]||^2 over the batch.
double smoothness_bound(const ModelSpec& spec, const BatchView& batch);

}  // namespace fedrec
