#include "fedrec/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

namespace fedrec {

void Dataset::push_back(std::span<const double> input, int label) {
  if (input.size() != dim) throw DimensionMismatch(dim, input.size());
  inputs.insert(inputs.end(), input.begin(), input.end());
  labels.push_back(label);
}

void Dataset::validate() const {
  if (labels.empty()) throw InvalidArgument("dataset is empty");
  if (inputs.size() != labels.size() * dim)
    throw InvalidArgument("dataset input buffer does not match N * dim");
  for (int l : labels)
    if (l < 0 || l >= num_classes)
      throw InvalidArgument("dataset label out of range: " + std::to_string(l));
  for (double x : inputs)
    if (!(x >= 0.0 && x <= 1.0))
      throw InvalidArgument("dataset feature outside [0, 1]");
}

std::vector<std::size_t> Dataset::label_histogram() const {
  std::vector<std::size_t> hist(static_cast<std::size_t>(num_classes), 0);
  for (int l : labels) ++hist[static_cast<std::size_t>(l)];
  return hist;
}

Dataset subset(const Dataset& data, std::span<const std::size_t> rows) {
  Dataset out;
  out.dim = data.dim;
  out.num_classes = data.num_classes;
  out.inputs.reserve(rows.size() * data.dim);
  out.labels.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(data.row(r), data.labels[r]);
  return out;
}

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t at,
                        const std::filesystem::path& path) {
  if (bytes.size() < at + 4)
    throw IdxTruncated("truncated IDX header in " + path.string());
  return (std::uint32_t{bytes[at]} << 24) | (std::uint32_t{bytes[at + 1]} << 16) |
         (std::uint32_t{bytes[at + 2]} << 8) | std::uint32_t{bytes[at + 3]};
}

}  // namespace

Dataset load_mnist_idx(const std::filesystem::path& images_path,
                       const std::filesystem::path& labels_path) {
  const auto images = read_file(images_path);
  const auto labels = read_file(labels_path);

  const std::uint32_t image_magic = read_be32(images, 0, images_path);
  if (image_magic != kIdxImageMagic)
    throw IdxMagicMismatch("bad image magic in " + images_path.string());
  const std::uint32_t label_magic = read_be32(labels, 0, labels_path);
  if (label_magic != kIdxLabelMagic)
    throw IdxMagicMismatch("bad label magic in " + labels_path.string());

  const std::size_t n_images = read_be32(images, 4, images_path);
  const std::size_t rows = read_be32(images, 8, images_path);
  const std::size_t cols = read_be32(images, 12, images_path);
  const std::size_t n_labels = read_be32(labels, 4, labels_path);

  const std::size_t dim = rows * cols;
  if (images.size() < 16 + n_images * dim)
    throw IdxTruncated("truncated image payload in " + images_path.string());
  if (labels.size() < 8 + n_labels)
    throw IdxTruncated("truncated label payload in " + labels_path.string());
  if (n_images != n_labels)
    throw IdxCountMismatch("image count " + std::to_string(n_images) +
                           " != label count " + std::to_string(n_labels));

  Dataset out;
  out.dim = dim;
  out.inputs.resize(n_images * dim);
  out.labels.resize(n_labels);
  for (std::size_t i = 0; i < n_images * dim; ++i)
    out.inputs[i] = static_cast<double>(images[16 + i]) / 255.0;
  int max_label = 0;
  for (std::size_t i = 0; i < n_labels; ++i) {
    out.labels[i] = labels[8 + i];
    max_label = std::max(max_label, out.labels[i]);
  }
  out.num_classes = max_label < 10 ? 10 : max_label + 1;
  return out;
}

Dataset gen_synthetic(int num_classes, std::size_t dim, std::size_t n_per_class,
                      double separation, std::uint64_t seed) {
  if (num_classes <= 0 || dim == 0 || n_per_class == 0 || !(separation > 0.0))
    throw InvalidArgument("gen_synthetic: all parameters must be positive");

  const auto classes = static_cast<std::size_t>(num_classes);
  // Random unit-norm centers; orthonormalized when the dimension allows it.
  RngStream center_rng(derive_seed(seed, StreamTag::kSynthetic, -1, 0));
  std::vector<std::vector<double>> centers(classes, std::vector<double>(dim));
  for (std::size_t c = 0; c < classes; ++c) {
    auto& v = centers[c];
    for (;;) {
      for (double& x : v) x = center_rng.normal();
      if (dim >= classes) {
        for (std::size_t p = 0; p < c; ++p) {
          double proj = 0.0;
          for (std::size_t j = 0; j < dim; ++j) proj += v[j] * centers[p][j];
          for (std::size_t j = 0; j < dim; ++j) v[j] -= proj * centers[p][j];
        }
      }
      double norm = 0.0;
      for (double x : v) norm += x * x;
      norm = std::sqrt(norm);
      if (norm > 1e-6) {
        for (double& x : v) x /= norm;
        break;
      }
    }
  }

  // Affine map x -> 0.5 + x / (2R), clipped, with R covering ~4 sigma.
  const double radius = separation + 4.0;
  Dataset out;
  out.dim = dim;
  out.num_classes = num_classes;
  out.inputs.reserve(classes * n_per_class * dim);
  out.labels.reserve(classes * n_per_class);
  std::vector<double> x(dim);
  for (std::size_t c = 0; c < classes; ++c) {
    RngStream rng(derive_seed(seed, StreamTag::kSynthetic, static_cast<std::int64_t>(c), 1));
    for (std::size_t i = 0; i < n_per_class; ++i) {
      for (std::size_t j = 0; j < dim; ++j) {
        const double raw = separation * centers[c][j] + rng.normal();
        x[j] = std::clamp(0.5 + raw / (2.0 * radius), 0.0, 1.0);
      }
      out.push_back(x, static_cast<int>(c));
    }
  }
  return out;
}

std::vector<ClientShard> partition_noniid(const Dataset& data, int n_clients,
                                          double q, std::uint64_t seed) {
  const int groups = data.num_classes;
  if (groups < 1) throw InvalidArgument("partition_noniid: no classes");
  if (n_clients < groups)
    throw InvalidArgument("partition_noniid: n_clients (" + std::to_string(n_clients) +
                          ") < num_classes (" + std::to_string(groups) + ")");
  if (groups > 1 && !(q >= 1.0 / groups - 1e-12 && q <= 1.0))
    throw InvalidArgument("partition_noniid: q must lie in [1/num_classes, 1]");

  // Group g owns clients [first[g], first[g + 1]).
  std::vector<int> first(static_cast<std::size_t>(groups) + 1, 0);
  const int base = n_clients / groups;
  const int extra = n_clients % groups;
  for (int g = 0; g < groups; ++g)
    first[g + 1] = first[g] + base + (g < extra ? 1 : 0);

  std::vector<ClientShard> shards(static_cast<std::size_t>(n_clients));
  for (int c = 0; c < n_clients; ++c) shards[c].client_id = c;

  RngStream rng(derive_seed(seed, StreamTag::kPartition, 0, 0));
  for (std::size_t i = 0; i < data.size(); ++i) {
    const int label = data.labels[i];
    int group = label;
    if (groups > 1 && rng.uniform() >= q) {
      // Uniform over the other groups.
      int other = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(groups - 1)));
      group = other < label ? other : other + 1;
    }
    const int width = first[group + 1] - first[group];
    const int client =
        first[group] + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(width)));
    shards[client].indices.push_back(i);
  }
  return shards;
}

}  // namespace fedrec
