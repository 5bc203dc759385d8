#include <doctest.h>

#include <cmath>

#include "fedrec/models.hpp"
#include "oracles.hpp"

using namespace fedrec;

namespace {

Dataset blob_data(std::size_t dim, int classes, std::size_t n, RngStream& rng) {
  Dataset data;
  data.dim = dim;
  data.num_classes = classes;
  std::vector<double> x(dim);
  for (std::size_t i = 0; i < n; ++i) {
    for (double& v : x) v = rng.uniform();
    data.push_back(x, static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(classes))));
  }
  return data;
}

// Hand-coded forward pass for the MLP layout: layer 1 is hidden x (in + 1),
// then layer 2 is classes x (hidden + 1), biases last in each row.
double mlp_loss_by_hand(const ModelSpec& spec, const ParamVector& w, const Dataset& data) {
  const std::size_t in = spec.input_dim, h = spec.hidden;
  const auto c = static_cast<std::size_t>(spec.num_classes);
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto x = data.row(i);
    std::vector<double> a(h);
    for (std::size_t u = 0; u < h; ++u) {
      double z = w[u * (in + 1) + in];
      for (std::size_t j = 0; j < in; ++j) z += w[u * (in + 1) + j] * x[j];
      a[u] = z > 0.0 ? z : 0.0;
    }
    const std::size_t off = h * (in + 1);
    std::vector<double> logits(c);
    for (std::size_t k = 0; k < c; ++k) {
      double z = w[off + k * (h + 1) + h];
      for (std::size_t u = 0; u < h; ++u) z += w[off + k * (h + 1) + u] * a[u];
      logits[k] = z;
    }
    double mx = logits[0];
    for (double z : logits) mx = std::max(mx, z);
    double norm = 0.0;
    for (double z : logits) norm += std::exp(z - mx);
    total += -(logits[static_cast<std::size_t>(data.labels[i])] - mx - std::log(norm));
  }
  double sq = 0.0;
  for (double v : w) sq += v * v;
  return total / static_cast<double>(data.size()) + 0.5 * spec.l2 * sq;
}

}  // namespace

TEST_CASE("parameter dimensions") {
  CHECK(ModelSpec{ModelKind::kLogReg, 784, 10, 0, 0.0}.param_dim() == 7850);
  CHECK(ModelSpec{ModelKind::kMlp, 4, 3, 5, 0.0}.param_dim() == 5 * 5 + 3 * 6);
  CHECK(ModelSpec{ModelKind::kRidge, 3, 2, 0, 0.0}.param_dim() == 8);
  CHECK_THROWS_AS((ModelSpec{ModelKind::kMlp, 4, 3, 0, 0.0}.validate()), InvalidArgument);
  CHECK_THROWS_AS((ModelSpec{ModelKind::kLogReg, 4, 3, 0, -1.0}.validate()), InvalidArgument);
}

TEST_CASE("logreg loss at the origin is ln C") {
  RngStream rng(1);
  const Dataset data = blob_data(5, 7, 20, rng);
  const auto rows = all_rows(data);
  ModelSpec spec{ModelKind::kLogReg, 5, 7, 0, 0.0};
  const ParamVector w0 = init_params(spec, 0);
  CHECK(loss(spec, w0, BatchView{data, rows}) == doctest::Approx(std::log(7.0)));
  spec.l2 = 1.0;
  CHECK(loss(spec, w0, BatchView{data, rows}) == doctest::Approx(std::log(7.0)));
}

TEST_CASE("symmetric two-class batch has zero gradient at the origin") {
  Dataset data;
  data.dim = 3;
  data.num_classes = 2;
  const std::vector<double> x{0.3, -1.2, 2.0}, neg{-0.3, 1.2, -2.0};
  data.push_back(x, 0);
  data.push_back(neg, 0);
  data.push_back(x, 1);
  data.push_back(neg, 1);
  const ModelSpec spec{ModelKind::kLogReg, 3, 2, 0, 0.0};
  const auto rows = all_rows(data);
  const ParamVector g = gradient(spec, ParamVector(spec.param_dim()), BatchView{data, rows});
  CHECK(linf_norm(g) < 1e-15);
}

TEST_CASE("penalty gradient includes l2 * w") {
  Dataset data;
  data.dim = 2;
  data.num_classes = 2;
  const std::vector<double> zero{0.0, 0.0};
  data.push_back(zero, 0);
  data.push_back(zero, 1);
  const ModelSpec spec{ModelKind::kLogReg, 2, 2, 0, 1.0};
  const auto rows = all_rows(data);
  const ParamVector w(spec.param_dim(), 1.0);
  const ParamVector g = gradient(spec, w, BatchView{data, rows});
  const auto fd = oracle::central_difference(
      [&](const ParamVector& v) { return loss(spec, v, BatchView{data, rows}); }, w, 1e-5);
  CHECK(oracle::relative_linf_error(g, fd) <= 1e-5);
  // Inputs are zero and both classes tie, so only the penalty acts on weights.
  CHECK(g[0] == doctest::Approx(1.0));
}

TEST_CASE("mlp loss matches a hand-coded forward pass on an XOR fixture") {
  Dataset data;
  data.dim = 2;
  data.num_classes = 2;
  data.push_back(std::vector<double>{0, 0}, 0);
  data.push_back(std::vector<double>{0, 1}, 1);
  data.push_back(std::vector<double>{1, 0}, 1);
  data.push_back(std::vector<double>{1, 1}, 0);
  const ModelSpec spec{ModelKind::kMlp, 2, 2, 3, 0.01};
  RngStream rng(4);
  const ParamVector w = oracle::random_vector(spec.param_dim(), rng);
  const auto rows = all_rows(data);
  CHECK(loss(spec, w, BatchView{data, rows}) ==
        doctest::Approx(mlp_loss_by_hand(spec, w, data)).epsilon(1e-12));
}

TEST_CASE("analytic gradients agree with central differences") {
  RngStream rng(77);
  for (auto kind : {ModelKind::kLogReg, ModelKind::kMlp, ModelKind::kRidge}) {
    CAPTURE(to_string(kind));
    const ModelSpec spec{kind, 6, 4, kind == ModelKind::kMlp ? 5u : 0u, 0.05};
    const Dataset data = blob_data(6, 4, 40, rng);
    for (int trial = 0; trial < 10; ++trial) {
      const ParamVector w = oracle::random_vector(spec.param_dim(), rng, 0.5);
      std::vector<std::size_t> rows;
      for (int k = 0; k < 8; ++k) rows.push_back(rng.uniform_index(data.size()));
      const BatchView batch{data, rows};
      const auto fd = oracle::central_difference(
          [&](const ParamVector& v) { return loss(spec, v, batch); }, w, 1e-5);
      CHECK(oracle::relative_linf_error(gradient(spec, w, batch), fd) <= 1e-5);
    }
  }
}

TEST_CASE("logreg with l2 = mu is mu-strongly convex") {
  RngStream rng(8);
  const Dataset data = blob_data(4, 3, 30, rng);
  const auto rows = all_rows(data);
  const double mu = 0.3;
  const ModelSpec spec{ModelKind::kLogReg, 4, 3, 0, mu};
  for (int trial = 0; trial < 50; ++trial) {
    const ParamVector a = oracle::random_vector(spec.param_dim(), rng);
    const ParamVector b = oracle::random_vector(spec.param_dim(), rng);
    const ParamVector diff = a - b;
    const double lhs = dot(diff, gradient(spec, a, {data, rows}) - gradient(spec, b, {data, rows}));
    CHECK(lhs >= mu * dot(diff, diff) - 1e-9);
    CHECK(loss(spec, a, {data, rows}) >= 0.5 * mu * dot(a, a));
  }
}

TEST_CASE("smoothness bound dominates observed curvature") {
  RngStream rng(9);
  const Dataset data = blob_data(4, 3, 30, rng);
  const auto rows = all_rows(data);
  for (auto kind : {ModelKind::kLogReg, ModelKind::kRidge}) {
    const ModelSpec spec{kind, 4, 3, 0, 0.1};
    const double L = smoothness_bound(spec, {data, rows});
    for (int trial = 0; trial < 50; ++trial) {
      const ParamVector a = oracle::random_vector(spec.param_dim(), rng);
      const ParamVector b = oracle::random_vector(spec.param_dim(), rng);
      const double num =
          l2_norm(gradient(spec, a, {data, rows}) - gradient(spec, b, {data, rows}));
      CHECK(num <= L * l2_norm(a - b) + 1e-12);
    }
  }
}

TEST_CASE("ridge Hessian matches differences of gradients") {
  RngStream rng(10);
  const Dataset data = blob_data(3, 2, 12, rng);
  const auto rows = all_rows(data);
  const ModelSpec spec{ModelKind::kRidge, 3, 2, 0, 0.2};
  const Eigen::MatrixXd H = ridge_hessian(spec, {data, rows});
  const ParamVector a = oracle::random_vector(spec.param_dim(), rng);
  const ParamVector b = oracle::random_vector(spec.param_dim(), rng);
  const ParamVector want = gradient(spec, a, {data, rows}) - gradient(spec, b, {data, rows});
  const ParamVector got = oracle::times(H, a - b);
  for (std::size_t j = 0; j < want.dim(); ++j) CHECK(got[j] == doctest::Approx(want[j]));
  CHECK_THROWS_AS(ridge_hessian(ModelSpec{ModelKind::kLogReg, 3, 2, 0, 0.0}, {data, rows}),
                  InvalidArgument);
}

TEST_CASE("predict breaks ties toward the lowest class") {
  const ModelSpec spec{ModelKind::kLogReg, 3, 4, 0, 0.0};
  ParamVector w(spec.param_dim());
  const std::vector<double> x{0.5, 0.25, 1.0};
  CHECK(predict(spec, w, x) == 0);
  // Row of class 2 is (w0, w1, w2, bias) at offset 2 * 4.
  w[8 + 2] = 1.0;
  CHECK(predict(spec, w, x) == 2);
  for (int c = 0; c < 4; ++c) w[static_cast<std::size_t>(c) * 4 + 3] += 5.0;
  CHECK(predict(spec, w, x) == 2);
}

TEST_CASE("dimension mismatches are rejected") {
  RngStream rng(2);
  const Dataset data = blob_data(3, 2, 4, rng);
  const auto rows = all_rows(data);
  const ModelSpec spec{ModelKind::kLogReg, 3, 2, 0, 0.0};
  CHECK_THROWS_AS(loss(spec, ParamVector(5), {data, rows}), DimensionMismatch);
  CHECK_THROWS_AS(gradient(spec, ParamVector(5), {data, rows}), DimensionMismatch);
  CHECK_THROWS_AS(predict(spec, ParamVector(8), std::vector<double>{1.0}), DimensionMismatch);
}

TEST_CASE("initialisation") {
  const ModelSpec lr{ModelKind::kLogReg, 5, 3, 0, 0.0};
  CHECK(init_params(lr, 9) == ParamVector(lr.param_dim()));
  const ModelSpec mlp{ModelKind::kMlp, 5, 3, 4, 0.0};
  const ParamVector a = init_params(mlp, 9);
  CHECK(a == init_params(mlp, 9));
  CHECK(a != init_params(mlp, 10));
  const double a1 = std::sqrt(6.0 / (5 + 4)), a2 = std::sqrt(6.0 / (4 + 3));
  for (std::size_t u = 0; u < 4; ++u) {
    for (std::size_t j = 0; j < 5; ++j) CHECK(std::abs(a[u * 6 + j]) < a1);
    CHECK(a[u * 6 + 5] == 0.0);
  }
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t u = 0; u < 4; ++u) CHECK(std::abs(a[24 + k * 5 + u]) < a2);
    CHECK(a[24 + k * 5 + 4] == 0.0);
  }
}
