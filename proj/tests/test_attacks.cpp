#include <doctest.h>

#include <cmath>

#include "fedrec/aggregation.hpp"
#include "fedrec/attacks.hpp"
#include "oracles.hpp"

using namespace fedrec;

TEST_CASE("pixel patch lands in the bottom-right block") {
  std::vector<double> img(28 * 28, 0.0);
  embed_trigger(img, PixelPatch{4, 4, 1.0});
  int ones = 0;
  for (std::size_t r = 0; r < 28; ++r)
    for (std::size_t c = 0; c < 28; ++c)
      if (img[r * 28 + c] == 1.0) {
        ++ones;
        CHECK(r >= 24);
        CHECK(c >= 24);
      }
  CHECK(ones == 16);
  const auto once = img;
  embed_trigger(img, PixelPatch{4, 4, 1.0});
  CHECK(img == once);
}

TEST_CASE("every k-th feature trigger") {
  std::vector<double> x(600, 1.0);
  embed_trigger(x, EveryKth{20, 0.0});
  int zeros = 0;
  for (std::size_t j = 0; j < x.size(); ++j)
    if (x[j] == 0.0) {
      ++zeros;
      CHECK((j + 1) % 20 == 0);
    }
  CHECK(zeros == 30);
}

TEST_CASE("trigger validation") {
  CHECK_THROWS_AS(validate_trigger(PixelPatch{2, 2, 1.0}, 10), InvalidArgument);
  CHECK_THROWS_AS(validate_trigger(PixelPatch{5, 2, 1.0}, 16), InvalidArgument);
  CHECK_THROWS_AS(validate_trigger(EveryKth{0, 0.0}, 16), InvalidArgument);
  CHECK_NOTHROW(validate_trigger(PixelPatch{4, 4, 1.0}, 16));
}

TEST_CASE("backdoor poisoning appends relabelled triggered copies") {
  Dataset d;
  d.dim = 4;
  d.num_classes = 3;
  for (int i = 0; i < 12; ++i)
    d.push_back(std::vector<double>{0.1, 0.2, 0.3, 0.4}, i % 3);
  std::vector<std::size_t> rows{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  const Dataset p = poison_shard_backdoor(d, rows, PixelPatch{1, 1, 1.0}, 2);
  CHECK(p.size() == 20);
  int target = 0;
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(std::equal(p.row(i).begin(), p.row(i).end(), d.row(rows[i]).begin()));
    CHECK(p.labels[i] == d.labels[rows[i]]);
  }
  for (std::size_t i = 10; i < 20; ++i) {
    CHECK(p.labels[i] == 2);
    CHECK(p.row(i)[3] == 1.0);
    CHECK(p.row(i)[0] == 0.1);
  }
  for (int l : p.labels) target += l == 2;
  CHECK(target >= 10);
}

TEST_CASE("adaptive scale") {
  CHECK(adaptive_scale(10, 20, 10) == 20.0);
  CHECK(adaptive_scale(10, 4, 4) == 10.0);
  CHECK(adaptive_scale(5, 6, 2) == 15.0);
  CHECK(adaptive_scale(10, 4, 1) == 40.0);
  CHECK_THROWS_AS(adaptive_scale(10, 4, 0), InvalidArgument);
}

TEST_CASE("trim attack interval examples") {
  RngStream rng(1);
  const auto pos = trim_attack_updates(
      std::vector<ParamVector>{{1.0}, {2.0}, {3.0}}, 2.0, 50, rng);
  for (const auto& u : pos) {
    CHECK(u[0] >= 0.5);
    CHECK(u[0] <= 1.0);
  }
  const auto neg = trim_attack_updates(std::vector<ParamVector>{{-3.0}, {-1.0}}, 2.0, 50, rng);
  for (const auto& u : neg) {
    CHECK(u[0] >= -1.0);
    CHECK(u[0] <= -0.5);
  }
}

TEST_CASE("trim attack membership and direction on random instances") {
  RngStream rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 6 + rng.uniform_index(10);
    const std::size_t m = 1 + rng.uniform_index(n / 3);
    std::vector<ParamVector> benign;
    for (std::size_t i = 0; i < n; ++i) benign.push_back(oracle::random_vector(5, rng));
    const auto bad = trim_attack_updates(benign, 2.0, m, rng);
    REQUIRE(bad.size() == m);
    for (std::size_t j = 0; j < 5; ++j) {
      double mean = 0.0, lo = benign[0][j], hi = benign[0][j];
      for (const auto& b : benign) {
        mean += b[j] / static_cast<double>(n);
        lo = std::min(lo, b[j]);
        hi = std::max(hi, b[j]);
      }
      for (const auto& u : bad) {
        if (mean > 0) {
          CHECK(u[j] >= (lo > 0 ? lo / 2 : 2 * lo));
          CHECK(u[j] <= lo);
        } else {
          CHECK(u[j] >= hi);
          CHECK(u[j] <= (hi > 0 ? 2 * hi : hi / 2));
        }
      }
      // Replacing m benign updates with crafted ones pushes the trimmed mean
      // against the benign direction.
      std::vector<ParamVector> mixed(benign.begin(), benign.end() - static_cast<std::ptrdiff_t>(m));
      mixed.insert(mixed.end(), bad.begin(), bad.end());
      const double before = oracle::trimmed_mean(benign, 1)[j];
      const double after = oracle::trimmed_mean(mixed, 1)[j];
      if (mean > 0) CHECK(after <= before + 1e-12);
      else CHECK(after >= before - 1e-12);
    }
  }
}

TEST_CASE("detection simulator cardinalities") {
  std::set<int> all, truth;
  for (int i = 0; i < 100; ++i) all.insert(i);
  for (int i = 0; i < 20; ++i) truth.insert(i * 5);
  RngStream rng(3);
  CHECK(simulate_detection(truth, all, 0.0, 0.0, rng).detected == truth);
  for (int id : simulate_detection(truth, all, 1.0, 0.0, rng).detected) CHECK(!truth.contains(id));
  for (double fnr : {0.0, 0.1, 0.25, 0.4, 0.5})
    for (double fpr : {0.0, 0.05, 0.3}) {
      const auto out = simulate_detection(truth, all, fnr, fpr, rng);
      std::size_t kept = 0, added = 0;
      for (int id : out.detected) (truth.contains(id) ? kept : added)++;
      CHECK(20 - kept == round_half_up(fnr * 20));
      CHECK(added == round_half_up(fpr * 80));
    }
  const auto out = simulate_detection(truth, all, 0.4, 0.0, rng);
  CHECK(out.detected.size() == 12);
  CHECK(round_half_up(2.5) == 3);
  CHECK(round_half_up(2.4999) == 2);
}
