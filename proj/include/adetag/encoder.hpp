#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include "adetag/crf.hpp"

namespace adetag {

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t max_len = 128;
  std::size_t dim = 32;
  std::size_t heads = 2;
  std::size_t ffn_dim = 64;

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

/// Weights of the desk-scale encoder: token + position embeddings, one
/// multi-head self-attention block with residual, a ReLU feed-forward layer
/// with residual, and a projection to the three IOB classes.
struct EncoderWeights {
  Matrix token_embedding;     // V x d
  Matrix position_embedding;  // max_len x d
  Matrix query;               // d x d
  Matrix key;
  Matrix value;
  Matrix attn_out;
  Matrix ffn_in;        // d x f
  Matrix ffn_in_bias;   // 1 x f
  Matrix ffn_out;       // f x d
  Matrix ffn_out_bias;  // 1 x d
  Matrix proj;          // d x 3
  Matrix proj_bias;     // 1 x 3

  /// Every tensor, in a fixed order (serialization, optimizer, gradient checks).
  std::vector<Matrix*> tensors();
  std::vector<const Matrix*> tensors() const;

  /// Same shapes, all zero.
  EncoderWeights zeros_like() const;

  friend bool operator==(const EncoderWeights& a, const EncoderWeights& b);
};

/// Activations kept from the forward pass for backpropagation.
struct EncoderTrace {
  std::vector<std::size_t> ids;
  Matrix x;
  Matrix q, k, v;
  std::vector<Matrix> attention;  // per head, L x L
  Matrix context;
  Matrix attn_dropout_mask;  // scaled keep mask, empty when no dropout
  Matrix h1;
  Matrix pre_relu;
  Matrix relu_dropout_mask;
  Matrix relu;  // after dropout
  Matrix h2;
  Matrix probs;  // softmax of logits
};

class ToyEncoder {
 public:
  ToyEncoder(EncoderConfig config, std::uint64_t seed);
  ToyEncoder(EncoderConfig config, EncoderWeights weights);

  const EncoderConfig& config() const { return config_; }
  const EncoderWeights& weights() const { return weights_; }
  EncoderWeights& weights() { return weights_; }

  /// L x 3 log-softmax emissions for token ids (the unmasked positions of a
  /// sample). Dropout is applied to the attention output and the feed-forward
  /// hidden layer only when `dropout > 0` and `rng` is given.
  EmissionMatrix forward(std::span<const std::size_t> ids, double dropout = 0.0,
                         std::mt19937_64* rng = nullptr, EncoderTrace* trace = nullptr) const;

  /// Accumulates d loss / d weights into `grads` given d loss / d emissions.
  void backward(const EncoderTrace& trace, const EmissionMatrix& d_emissions, EncoderWeights& grads) const;

  /// As backward, but leaves both embedding tables of `grads` untouched (they
  /// may be empty) and returns d loss / d input rows instead. Row t belongs to
  /// token trace.ids[t] at position t.
  Matrix backward_to_input(const EncoderTrace& trace, const EmissionMatrix& d_emissions,
                           EncoderWeights& grads) const;

  /// Zero gradient buffers; embedding tables are left empty when `with_embeddings` is false.
  EncoderWeights zero_gradients(bool with_embeddings = true) const;

  void save(const std::filesystem::path& path) const;
  static ToyEncoder load(const std::filesystem::path& path);

 private:
  EncoderConfig config_;
  EncoderWeights weights_;
};

}  // namespace adetag
