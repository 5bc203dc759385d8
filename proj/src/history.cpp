#include "fedrec/history.hpp"

#include <bit>
#include <cstring>
#include <iterator>

namespace fedrec {

namespace {

constexpr char kMagic[4] = {'F', 'R', 'H', '1'};
constexpr std::size_t kHeaderSize = 4 + 4 + 8 + 4 + 4 + 32;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_vector(std::vector<std::uint8_t>& out, const ParamVector& v) {
  for (double x : v) put_u64(out, std::bit_cast<std::uint64_t>(x));
}

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path)
      : bytes_(bytes), path_(path) {}

  std::size_t pos() const { return pos_; }
  bool at_end() const { return pos_ == bytes_.size(); }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes_[pos_++]} << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{bytes_[pos_++]} << (8 * i);
    return v;
  }
  ParamVector vec(std::uint64_t d) {
    need(d * 8);
    ParamVector v(d);
    for (std::uint64_t j = 0; j < d; ++j) v[j] = std::bit_cast<double>(u64());
    return v;
  }
  void raw(std::uint8_t* out, std::size_t n) {
    need(n);
    std::memcpy(out, bytes_.data() + pos_, n);
    pos_ += n;
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n)
      throw HistoryCorrupt("history file truncated: " + path_.string());
  }
  const std::vector<std::uint8_t>& bytes_;
  const std::filesystem::path& path_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint64_t fnv1a64(const std::uint8_t* bytes, std::size_t size) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

HistoryWriter::HistoryWriter(const std::filesystem::path& path,
                             const HistoryMeta& meta)
    : path_(path), meta_(meta) {
  out_.open(path, std::ios::binary | std::ios::trunc);
  if (!out_) throw HistoryError("cannot open history file for writing: " + path.string());
  std::vector<std::uint8_t> header(kMagic, kMagic + 4);
  put_u32(header, kHistoryVersion);
  put_u64(header, meta.dim);
  put_u32(header, meta.n_clients);
  put_u32(header, meta.rounds);
  header.insert(header.end(), meta.config_hash.begin(), meta.config_hash.end());
  out_.write(reinterpret_cast<const char*>(header.data()),
             static_cast<std::streamsize>(header.size()));
  out_.flush();
  if (!out_) throw HistoryError("failed writing history header: " + path.string());
}

void HistoryWriter::append(const RoundRecord& record) {
  if (record.round != written_)
    throw HistoryOutOfOrder("history append out of order: expected round " +
                            std::to_string(written_) + ", got " +
                            std::to_string(record.round));
  if (written_ >= meta_.rounds)
    throw HistoryOutOfOrder("history already holds all " + std::to_string(meta_.rounds) +
                            " rounds");
  if (record.global_model.dim() != meta_.dim)
    throw DimensionMismatch(meta_.dim, record.global_model.dim());

  std::vector<std::uint8_t> buf;
  buf.reserve(8 + meta_.dim * 8 * (record.updates.size() + 1) + 4 * record.updates.size());
  put_u32(buf, record.round);
  put_vector(buf, record.global_model);
  put_u32(buf, static_cast<std::uint32_t>(record.updates.size()));
  for (const auto& [client, update] : record.updates) {
    if (update.dim() != meta_.dim) throw DimensionMismatch(meta_.dim, update.dim());
    put_u32(buf, static_cast<std::uint32_t>(client));
    put_vector(buf, update);
  }
  put_u64(buf, fnv1a64(buf.data(), buf.size()));
  out_.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size()));
  out_.flush();
  if (!out_) throw HistoryError("failed writing history record: " + path_.string());
  ++written_;
}

History history_load(const std::filesystem::path& path,
                     const std::optional<ConfigHash>& expected_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw HistoryError("cannot open history file: " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in),
                                        std::istreambuf_iterator<char>()};
  if (bytes.size() < kHeaderSize || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw HistoryCorrupt("not a history file: " + path.string());

  Reader reader(bytes, path);
  std::uint8_t magic[4];
  reader.raw(magic, 4);
  History history;
  if (const auto version = reader.u32(); version != kHistoryVersion)
    throw HistoryCorrupt("unsupported history version " + std::to_string(version));
  history.meta.dim = reader.u64();
  history.meta.n_clients = reader.u32();
  history.meta.rounds = reader.u32();
  reader.raw(history.meta.config_hash.data(), history.meta.config_hash.size());
  if (expected_hash && *expected_hash != history.meta.config_hash)
    throw HistoryMetaMismatch("history config hash does not match the configuration");

  const std::uint64_t d = history.meta.dim;
  while (!reader.at_end()) {
    const std::size_t start = reader.pos();
    RoundRecord record;
    record.round = reader.u32();
    record.global_model = reader.vec(d);
    const std::uint32_t count = reader.u32();
    if (count > history.meta.n_clients)
      throw HistoryCorrupt("record lists more clients than the header allows");
    for (std::uint32_t k = 0; k < count; ++k) {
      const auto client = static_cast<int>(reader.u32());
      record.updates.emplace(client, reader.vec(d));
    }
    const std::size_t end = reader.pos();
    const std::uint64_t checksum = reader.u64();
    if (checksum != fnv1a64(bytes.data() + start, end - start))
      throw HistoryCorrupt("checksum mismatch in round " + std::to_string(record.round));
    if (record.round != history.records.size())
      throw HistoryCorrupt("records out of order in " + path.string());
    if (record.updates.size() != count)
      throw HistoryCorrupt("duplicate client id in round " + std::to_string(record.round));
    history.records.push_back(std::move(record));
  }
  if (history.records.size() > history.meta.rounds)
    throw HistoryCorrupt("history holds more records than planned rounds");
  return history;
}

}  // namespace fedrec
