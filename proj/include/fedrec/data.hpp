#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fedrec/numcore.hpp"

namespace fedrec {

// Row-major labelled examples with features normalized into [0, 1].
struct Dataset {
  std::size_t dim = 0;
  int num_classes = 0;
  std::vector<double> inputs;  // size() * dim
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::span<const double> row(std::size_t i) const {
    return {inputs.data() + i * dim, dim};
  }
  std::span<double> row(std::size_t i) { return {inputs.data() + i * dim, dim}; }

  void push_back(std::span<const double> input, int label);
  // Validates the documented invariants; throws InvalidArgument.
  void validate() const;
  std::vector<std::size_t> label_histogram() const;
};

// Selected rows of a dataset.
Dataset subset(const Dataset& data, std::span<const std::size_t> rows);

struct ClientShard {
  int client_id = 0;
  std::vector<std::size_t> indices;
};

class IdxFormatError : public Error {
 public:
  using Error::Error;
};
class IdxMagicMismatch : public IdxFormatError {
 public:
  using IdxFormatError::IdxFormatError;
};
class IdxTruncated : public IdxFormatError {
 public:
  using IdxFormatError::IdxFormatError;
};
class IdxCountMismatch : public IdxFormatError {
 public:
  using IdxFormatError::IdxFormatError;
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

// Reads an MNIST-style image/label IDX pair. Pixels are scaled by 1/255.
// `num_classes` is taken as max label + 1, but never less than 10 when the
// labels fit the digit range.
Dataset load_mnist_idx(const std::filesystem::path& images_path,
                       const std::filesystem::path& labels_path);

// Gaussian blobs around separation * center_c (unit-norm centers), mapped into
// [0, 1]. Labels are emitted class-major: n_per_class of class 0, then 1, ...
Dataset gen_synthetic(int num_classes, std::size_t dim, std::size_t n_per_class,
                      double separation, std::uint64_t seed);

// Degree-of-non-iid partition. Clients are split into num_classes groups as
// evenly as possible; an example of label l goes to group l with probability
// q and to each other group with probability (1 - q) / (num_classes - 1), then
// to a uniformly chosen client of that group.
std::vector<ClientShard> partition_noniid(const Dataset& data, int n_clients,
                                          double q, std::uint64_t seed);

}  // namespace fedrec
