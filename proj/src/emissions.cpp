#include "adetag/emissions.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "adetag/errors.hpp"

namespace adetag {

namespace {

constexpr char kStoreMagic[8] = {'A', 'D', 'T', 'E', 'M', 'I', 'S', '1'};
constexpr std::uint32_t kStoreVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::filesystem::path& path) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw ParseError(path.string() + ": truncated emission store");
  }
  return value;
}

}  // namespace

EmissionMatrix log_softmax_rows(const Matrix& scores) {
  EmissionMatrix out(scores.rows(), scores.cols());
  for (Eigen::Index t = 0; t < scores.rows(); ++t) {
    const double best = scores.row(t).maxCoeff();
    const double lse = best + std::log((scores.row(t).array() - best).exp().sum());
    out.row(t) = scores.row(t).array() - lse;
  }
  return out;
}

EmissionMatrix ToyEncoderProvider::emissions(const std::string&, const TokenizedSample& sample, bool train_mode,
                                             std::mt19937_64* rng) const {
  const std::span<const std::size_t> ids(sample.ids.data(), sample.length());
  return encoder_.forward(ids, train_mode ? dropout_ : 0.0, train_mode ? rng : nullptr);
}

EmissionMatrix EmissionStore::emissions(const std::string& sample_id, const TokenizedSample& sample, bool,
                                        std::mt19937_64*) const {
  const auto& matrix = at(sample_id);
  if (static_cast<std::size_t>(matrix.rows()) != sample.length()) {
    throw ValidationError("emission store: sample '" + sample_id + "' has " + std::to_string(matrix.rows()) +
                          " rows but the tokenized sample has " + std::to_string(sample.length()) +
                          " unmasked positions");
  }
  return matrix;
}

const EmissionMatrix& EmissionStore::at(const std::string& sample_id) const {
  auto it = entries_.find(sample_id);
  if (it == entries_.end()) throw LookupError("emission store has no entry for sample id '" + sample_id + "'");
  return it->second;
}

void EmissionStore::insert(const std::string& sample_id, EmissionMatrix matrix) {
  if (matrix.rows() < 1 || matrix.cols() != static_cast<Eigen::Index>(kNumLabels)) {
    throw ValidationError("emission store: sample '" + sample_id + "' must be L x 3 with L >= 1");
  }
  if (!matrix.allFinite()) throw ValidationError("emission store: sample '" + sample_id + "' has non-finite entries");
  for (Eigen::Index t = 0; t < matrix.rows(); ++t) {
    const double lse = std::log(matrix.row(t).array().exp().sum());
    if (std::abs(lse) > kRowTolerance) {
      throw ValidationError("emission store: sample '" + sample_id + "' row " + std::to_string(t) +
                            " is not log-normalized (log-sum-exp " + std::to_string(lse) + ")");
    }
  }
  entries_[sample_id] = std::move(matrix);
}

void EmissionStore::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string() + ": cannot open for writing");
  out.write(kStoreMagic, sizeof(kStoreMagic));
  write_pod<std::uint32_t>(out, kStoreVersion);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(kNumLabels));
  write_pod<std::uint64_t>(out, entries_.size());
  for (const auto& [id, matrix] : entries_) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(id.size()));
    out.write(id.data(), static_cast<std::streamsize>(id.size()));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(matrix.rows()));
    out.write(reinterpret_cast<const char*>(matrix.data()), static_cast<std::streamsize>(matrix.size() * sizeof(double)));
  }
  if (!out) throw IoError(path.string() + ": write failed");
}

EmissionStore EmissionStore::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": no such file or unreadable");
  char magic[8] = {};
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kStoreMagic, sizeof(magic)) != 0) {
    throw ParseError(path.string() + ": not an emission store");
  }
  if (read_pod<std::uint32_t>(in, path) != kStoreVersion) throw ParseError(path.string() + ": unsupported store version");
  if (read_pod<std::uint32_t>(in, path) != kNumLabels) throw ParseError(path.string() + ": store K must be 3");
  const auto count = read_pod<std::uint64_t>(in, path);
  EmissionStore store;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto id_len = read_pod<std::uint32_t>(in, path);
    std::string id(id_len, '\0');
    if (!in.read(id.data(), id_len)) throw ParseError(path.string() + ": truncated emission store");
    const auto rows = read_pod<std::uint32_t>(in, path);
    EmissionMatrix matrix(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(kNumLabels));
    if (!in.read(reinterpret_cast<char*>(matrix.data()), static_cast<std::streamsize>(matrix.size() * sizeof(double)))) {
      throw ParseError(path.string() + ": truncated emission store");
    }
    if (store.contains(id)) throw ValidationError(path.string() + ": duplicate sample id '" + id + "'");
    store.insert(id, std::move(matrix));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw ParseError(path.string() + ": trailing bytes after last record");
  return store;
}

}  // namespace adetag
