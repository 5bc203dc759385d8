#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <vector>

#include "fedrec/numcore.hpp"

namespace fedrec {

// Original global model and the updates reported in one round.
struct RoundRecord {
  std::uint32_t round = 0;
  ParamVector global_model;
  std::map<int, ParamVector> updates;  // client id -> update
};

using ConfigHash = std::array<std::uint8_t, 32>;

struct HistoryMeta {
  std::uint64_t dim = 0;
  std::uint32_t n_clients = 0;
  std::uint32_t rounds = 0;  // planned T
  ConfigHash config_hash{};
};

struct History {
  HistoryMeta meta;
  std::vector<RoundRecord> records;
};

class HistoryError : public Error {
 public:
  using Error::Error;
};
class HistoryOutOfOrder : public HistoryError {
 public:
  using HistoryError::HistoryError;
};
class HistoryCorrupt : public HistoryError {
 public:
  using HistoryError::HistoryError;
};
class HistoryMetaMismatch : public HistoryError {
 public:
  using HistoryError::HistoryError;
};

inline constexpr std::uint32_t kHistoryVersion = 1;

// 64-bit FNV-1a, used as the per-record checksum.
std::uint64_t fnv1a64(const std::uint8_t* bytes, std::size_t size);

// Append-only writer for the "FRH1" history layout:
//   header  magic "FRH1" | version u32 | d u64 | n u32 | T u32 | hash[32]
//   record  round u32 | w (d x f64) | count u32 | {client u32 | g (d x f64)}*
//           followed by the FNV-1a 64 checksum (u64) of the record bytes.
// All integers and floats are little-endian.
class HistoryWriter {
 public:
  HistoryWriter(const std::filesystem::path& path, const HistoryMeta& meta);

  void append(const RoundRecord& record);
  std::size_t records_written() const { return written_; }

 private:
  std::filesystem::path path_;
  HistoryMeta meta_;
  std::ofstream out_;
  std::size_t written_ = 0;
};

// Loads and verifies a history file. When `expected_hash` is given, the stored
// config hash must match it.
History history_load(const std::filesystem::path& path,
                     const std::optional<ConfigHash>& expected_hash = std::nullopt);

}  // namespace fedrec
