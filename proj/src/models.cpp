#include "fedrec/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fedrec {

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kLogReg: return "logreg";
    case ModelKind::kMlp: return "mlp";
    case ModelKind::kRidge: return "ridge";
  }
  return "?";
}

ModelKind model_kind_from_string(const std::string& name) {
  if (name == "logreg") return ModelKind::kLogReg;
  if (name == "mlp") return ModelKind::kMlp;
  if (name == "ridge") return ModelKind::kRidge;
  throw InvalidArgument("unknown model kind '" + name + "'");
}

std::size_t ModelSpec::param_dim() const {
  const auto classes = static_cast<std::size_t>(num_classes);
  if (kind == ModelKind::kMlp)
    return (input_dim + 1) * hidden + (hidden + 1) * classes;
  return (input_dim + 1) * classes;
}

void ModelSpec::validate() const {
  if (input_dim == 0) throw InvalidArgument("model: input_dim must be positive");
  if (num_classes < 2) throw InvalidArgument("model: num_classes must be >= 2");
  if (kind == ModelKind::kMlp && hidden == 0)
    throw InvalidArgument("model: mlp requires hidden > 0");
  if (!(l2 >= 0.0)) throw InvalidArgument("model: l2 must be >= 0");
}

std::vector<std::size_t> all_rows(const Dataset& data) {
  std::vector<std::size_t> rows(data.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return rows;
}

namespace {

void check_args(const ModelSpec& spec, const ParamVector& w,
                const BatchView& batch) {
  if (w.dim() != spec.param_dim()) throw DimensionMismatch(spec.param_dim(), w.dim());
  if (batch.data.dim != spec.input_dim)
    throw DimensionMismatch(spec.input_dim, batch.data.dim);
  if (batch.rows.empty()) throw InvalidArgument("empty batch");
}

// out[c] = W[c, :in] . x + W[c, in] for a row-major (rows x (in + 1)) block.
void affine(const double* weights, std::size_t out_rows, std::span<const double> x,
            double* out) {
  const std::size_t stride = x.size() + 1;
  for (std::size_t c = 0; c < out_rows; ++c) {
    const double* row = weights + c * stride;
    double z = row[x.size()];
    for (std::size_t j = 0; j < x.size(); ++j) z += row[j] * x[j];
    out[c] = z;
  }
}

// Softmax in place; returns log-sum-exp of the input logits.
double softmax_inplace(std::span<double> z) {
  const double zmax = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double& v : z) {
    v = std::exp(v - zmax);
    sum += v;
  }
  for (double& v : z) v /= sum;
  return zmax + std::log(sum);
}

double half_sq_norm(const ParamVector& w) {
  double s = 0.0;
  for (double x : w) s += x * x;
  return 0.5 * s;
}

struct MlpForward {
  std::vector<double> pre;     // hidden pre-activations
  std::vector<double> hidden;  // ReLU outputs
  std::vector<double> logits;
};

MlpForward mlp_forward(const ModelSpec& spec, const ParamVector& w,
                       std::span<const double> x) {
  const auto classes = static_cast<std::size_t>(spec.num_classes);
  MlpForward f;
  f.pre.resize(spec.hidden);
  f.hidden.resize(spec.hidden);
  f.logits.resize(classes);
  affine(w.data(), spec.hidden, x, f.pre.data());
  for (std::size_t h = 0; h < spec.hidden; ++h) f.hidden[h] = std::max(0.0, f.pre[h]);
  const double* second = w.data() + (spec.input_dim + 1) * spec.hidden;
  affine(second, classes, f.hidden, f.logits.data());
  return f;
}

}  // namespace

std::vector<double> scores(const ModelSpec& spec, const ParamVector& w,
                           std::span<const double> input) {
  if (w.dim() != spec.param_dim()) throw DimensionMismatch(spec.param_dim(), w.dim());
  if (input.size() != spec.input_dim) throw DimensionMismatch(spec.input_dim, input.size());
  if (spec.kind == ModelKind::kMlp) return mlp_forward(spec, w, input).logits;
  std::vector<double> z(static_cast<std::size_t>(spec.num_classes));
  affine(w.data(), z.size(), input, z.data());
  return z;
}

int predict(const ModelSpec& spec, const ParamVector& w,
            std::span<const double> input) {
  const auto z = scores(spec, w, input);
  std::size_t best = 0;
  for (std::size_t c = 1; c < z.size(); ++c)
    if (z[c] > z[best]) best = c;
  return static_cast<int>(best);
}

double loss(const ModelSpec& spec, const ParamVector& w, const BatchView& batch) {
  check_args(spec, w, batch);
  const auto classes = static_cast<std::size_t>(spec.num_classes);
  double total = 0.0;
  std::vector<double> z(classes);
  for (std::size_t r : batch.rows) {
    const auto x = batch.data.row(r);
    const auto y = static_cast<std::size_t>(batch.data.labels[r]);
    if (spec.kind == ModelKind::kMlp) {
      z = mlp_forward(spec, w, x).logits;
    } else {
      affine(w.data(), classes, x, z.data());
    }
    if (spec.kind == ModelKind::kRidge) {
      for (std::size_t c = 0; c < classes; ++c) {
        const double e = z[c] - (c == y ? 1.0 : 0.0);
        total += 0.5 * e * e;
      }
    } else {
      const double zy = z[y];
      total += softmax_inplace(z) - zy;
    }
  }
  return total / static_cast<double>(batch.rows.size()) + spec.l2 * half_sq_norm(w);
}

ParamVector gradient(const ModelSpec& spec, const ParamVector& w,
                     const BatchView& batch) {
  check_args(spec, w, batch);
  const auto classes = static_cast<std::size_t>(spec.num_classes);
  const std::size_t in = spec.input_dim;
  const double inv_b = 1.0 / static_cast<double>(batch.rows.size());
  ParamVector g(w.dim());
  std::vector<double> z(classes);

  for (std::size_t r : batch.rows) {
    const auto x = batch.data.row(r);
    const auto y = static_cast<std::size_t>(batch.data.labels[r]);
    if (spec.kind == ModelKind::kMlp) {
      MlpForward f = mlp_forward(spec, w, x);
      softmax_inplace(f.logits);
      f.logits[y] -= 1.0;  // dL/dz
      const std::size_t h_stride = spec.hidden + 1;
      const std::size_t offset2 = (in + 1) * spec.hidden;
      std::vector<double> dh(spec.hidden, 0.0);
      for (std::size_t c = 0; c < classes; ++c) {
        const double dz = f.logits[c] * inv_b;
        double* grow = g.data() + offset2 + c * h_stride;
        const double* wrow = w.data() + offset2 + c * h_stride;
        for (std::size_t h = 0; h < spec.hidden; ++h) {
          grow[h] += dz * f.hidden[h];
          dh[h] += f.logits[c] * wrow[h];
        }
        grow[spec.hidden] += dz;
      }
      for (std::size_t h = 0; h < spec.hidden; ++h) {
        if (f.pre[h] <= 0.0) continue;
        const double d = dh[h] * inv_b;
        double* grow = g.data() + h * (in + 1);
        for (std::size_t j = 0; j < in; ++j) grow[j] += d * x[j];
        grow[in] += d;
      }
      continue;
    }

    affine(w.data(), classes, x, z.data());
    if (spec.kind == ModelKind::kRidge) {
      z[y] -= 1.0;
    } else {
      softmax_inplace(z);
      z[y] -= 1.0;
    }
    for (std::size_t c = 0; c < classes; ++c) {
      const double dz = z[c] * inv_b;
      double* grow = g.data() + c * (in + 1);
      for (std::size_t j = 0; j < in; ++j) grow[j] += dz * x[j];
      grow[in] += dz;
    }
  }
  if (spec.l2 != 0.0) g.axpy(spec.l2, w);
  return g;
}

ParamVector init_params(const ModelSpec& spec, std::uint64_t seed) {
  ParamVector w(spec.param_dim());
  if (spec.kind != ModelKind::kMlp) return w;

  RngStream rng(derive_seed(seed, StreamTag::kInit, 0, 0));
  const std::size_t in = spec.input_dim;
  const auto classes = static_cast<std::size_t>(spec.num_classes);
  const double a1 = std::sqrt(6.0 / static_cast<double>(in + spec.hidden));
  const double a2 = std::sqrt(6.0 / static_cast<double>(spec.hidden + classes));
  for (std::size_t h = 0; h < spec.hidden; ++h)
    for (std::size_t j = 0; j < in; ++j) w[h * (in + 1) + j] = rng.uniform(-a1, a1);
  const std::size_t offset2 = (in + 1) * spec.hidden;
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t h = 0; h < spec.hidden; ++h)
      w[offset2 + c * (spec.hidden + 1) + h] = rng.uniform(-a2, a2);
  return w;
}

Eigen::MatrixXd ridge_hessian(const ModelSpec& spec, const BatchView& batch) {
  if (spec.kind != ModelKind::kRidge)
    throw InvalidArgument("ridge_hessian: model is not quadratic");
  if (batch.rows.empty()) throw InvalidArgument("empty batch");
  const std::size_t in = spec.input_dim;
  const std::size_t block = in + 1;
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(block, block);
  Eigen::VectorXd xt(block);
  for (std::size_t r : batch.rows) {
    const auto x = batch.data.row(r);
    for (std::size_t j = 0; j < in; ++j) xt[j] = x[j];
    xt[in] = 1.0;
    gram.noalias() += xt * xt.transpose();
  }
  gram /= static_cast<double>(batch.rows.size());

  const std::size_t d = spec.param_dim();
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(d, d);
  for (int c = 0; c < spec.num_classes; ++c) {
    const auto at = static_cast<Eigen::Index>(c * block);
    h.block(at, at, block, block) = gram;
  }
  h.diagonal().array() += spec.l2;
  return h;
}

double smoothness_bound(const ModelSpec& spec, const BatchView& batch) {
  double max_sq = 0.0;
  for (std::size_t r : batch.rows) {
    double s = 1.0;
    for (double x : batch.data.row(r)) s += x * x;
    max_sq = std::max(max_sq, s);
  }
  switch (spec.kind) {
    case ModelKind::kRidge: return spec.l2 + max_sq;
    // Softmax cross-entropy Hessian w.r.t. logits has spectral norm <= 1/2.
    case ModelKind::kLogReg: return spec.l2 + 0.5 * max_sq;
    case ModelKind::kMlp: break;
  }
  throw InvalidArgument("smoothness_bound: not available for mlp");
}

}  // namespace fedrec
