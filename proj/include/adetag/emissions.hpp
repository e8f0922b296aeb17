#pragma once

#include <filesystem>
#include <map>
#include <random>
#include <string>

#include "adetag/crf.hpp"
#include "adetag/encoder.hpp"
#include "adetag/tokenizer.hpp"

namespace adetag {

enum class ProviderKind { toy_encoder, file_backed };

/// Source of per-position log-probability emissions for a tokenized sample.
/// Returned matrices have one row per unmasked position (cls, pieces, sep).
class EmissionProvider {
 public:
  virtual ~EmissionProvider() = default;
  virtual ProviderKind kind() const = 0;
  /// `rng` is only consulted in train mode (dropout).
  virtual EmissionMatrix emissions(const std::string& sample_id, const TokenizedSample& sample,
                                   bool train_mode = false, std::mt19937_64* rng = nullptr) const = 0;
};

class ToyEncoderProvider final : public EmissionProvider {
 public:
  ToyEncoderProvider(const ToyEncoder& encoder, double dropout = 0.0) : encoder_(encoder), dropout_(dropout) {}

  ProviderKind kind() const override { return ProviderKind::toy_encoder; }
  EmissionMatrix emissions(const std::string& sample_id, const TokenizedSample& sample, bool train_mode = false,
                           std::mt19937_64* rng = nullptr) const override;

 private:
  const ToyEncoder& encoder_;
  double dropout_;
};

/// Emissions computed elsewhere, keyed by sample id.
///
/// On-disk layout (little-endian):
///   magic "ADTEMIS1", u32 version (1), u32 K (3), u64 count,
///   then per sample: u32 id byte length, id bytes (UTF-8), u32 L,
///   L*K float64 row-major log-probabilities.
class EmissionStore final : public EmissionProvider {
 public:
  static constexpr double kRowTolerance = 1e-9;

  EmissionStore() = default;

  ProviderKind kind() const override { return ProviderKind::file_backed; }
  /// Throws LookupError for unknown ids and ValidationError when the stored
  /// row count differs from the sample's unmasked length.
  EmissionMatrix emissions(const std::string& sample_id, const TokenizedSample& sample, bool train_mode = false,
                           std::mt19937_64* rng = nullptr) const override;

  /// Validates shape, finiteness and row normalization; replaces any existing entry.
  void insert(const std::string& sample_id, EmissionMatrix matrix);
  bool contains(const std::string& sample_id) const { return entries_.contains(sample_id); }
  const EmissionMatrix& at(const std::string& sample_id) const;
  std::size_t size() const { return entries_.size(); }
  const std::map<std::string, EmissionMatrix>& entries() const { return entries_; }

  /// Entries are written in id order, so equal stores produce identical bytes.
  void save(const std::filesystem::path& path) const;
  /// Reads and validates every entry.
  static EmissionStore load(const std::filesystem::path& path);

 private:
  std::map<std::string, EmissionMatrix> entries_;
};

/// Row-wise log-softmax.
EmissionMatrix log_softmax_rows(const Matrix& scores);

}  // namespace adetag
