#include "adetag/encoder.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "adetag/errors.hpp"

namespace adetag {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

constexpr char kEncoderMagic[8] = {'A', 'D', 'T', 'E', 'N', 'C', '0', '1'};
constexpr std::uint32_t kEncoderVersion = 1;

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, std::mt19937_64& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = (2.0 * uniform01(rng) - 1.0) * bound;
  return m;
}

double xavier(Eigen::Index fan_in, Eigen::Index fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, std::mt19937_64& rng) {
  Matrix mask(rows, cols);
  const double keep = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = uniform01(rng) < rate ? 0.0 : keep;
  return mask;
}

void softmax_rows(Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double best = m.row(r).maxCoeff();
    m.row(r) = (m.row(r).array() - best).exp().matrix();
    m.row(r) /= m.row(r).sum();
  }
}

template <typename T>
void write_pod(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::filesystem::path& path) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw ParseError(path.string() + ": truncated encoder file");
  }
  return value;
}

}  // namespace

std::vector<Matrix*> EncoderWeights::tensors() {
  return {&token_embedding, &position_embedding, &query,   &key,          &value,
          &attn_out,        &ffn_in,             &ffn_in_bias, &ffn_out, &ffn_out_bias,
          &proj,            &proj_bias};
}

std::vector<const Matrix*> EncoderWeights::tensors() const {
  auto mutable_list = const_cast<EncoderWeights*>(this)->tensors();
  return {mutable_list.begin(), mutable_list.end()};
}

EncoderWeights EncoderWeights::zeros_like() const {
  EncoderWeights out = *this;
  for (auto* t : out.tensors()) t->setZero();
  return out;
}

bool operator==(const EncoderWeights& a, const EncoderWeights& b) {
  const auto ta = a.tensors();
  const auto tb = b.tensors();
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (ta[i]->rows() != tb[i]->rows() || ta[i]->cols() != tb[i]->cols() || *ta[i] != *tb[i]) return false;
  }
  return true;
}

ToyEncoder::ToyEncoder(EncoderConfig config, std::uint64_t seed) : config_(config) {
  if (config_.vocab_size == 0 || config_.dim == 0 || config_.heads == 0 || config_.dim % config_.heads != 0) {
    throw ArgumentError("encoder: vocab_size and dim must be positive and dim divisible by heads");
  }
  std::mt19937_64 rng(seed);
  const auto v = static_cast<Eigen::Index>(config_.vocab_size);
  const auto d = static_cast<Eigen::Index>(config_.dim);
  const auto f = static_cast<Eigen::Index>(config_.ffn_dim);
  const auto len = static_cast<Eigen::Index>(config_.max_len);
  const double embed_bound = std::sqrt(3.0 / static_cast<double>(d));
  weights_.token_embedding = uniform_matrix(v, d, embed_bound, rng);
  weights_.position_embedding = uniform_matrix(len, d, 0.1 * embed_bound, rng);
  weights_.query = uniform_matrix(d, d, xavier(d, d), rng);
  weights_.key = uniform_matrix(d, d, xavier(d, d), rng);
  weights_.value = uniform_matrix(d, d, xavier(d, d), rng);
  weights_.attn_out = uniform_matrix(d, d, xavier(d, d), rng);
  weights_.ffn_in = uniform_matrix(d, f, xavier(d, f), rng);
  weights_.ffn_in_bias = Matrix::Zero(1, f);
  weights_.ffn_out = uniform_matrix(f, d, xavier(f, d), rng);
  weights_.ffn_out_bias = Matrix::Zero(1, d);
  weights_.proj = uniform_matrix(d, static_cast<Eigen::Index>(kNumLabels), xavier(d, 3), rng);
  weights_.proj_bias = Matrix::Zero(1, static_cast<Eigen::Index>(kNumLabels));
}

ToyEncoder::ToyEncoder(EncoderConfig config, EncoderWeights weights)
    : config_(config), weights_(std::move(weights)) {
  const auto v = static_cast<Eigen::Index>(config_.vocab_size);
  const auto d = static_cast<Eigen::Index>(config_.dim);
  const auto f = static_cast<Eigen::Index>(config_.ffn_dim);
  const auto len = static_cast<Eigen::Index>(config_.max_len);
  const auto k = static_cast<Eigen::Index>(kNumLabels);
  const auto& w = weights_;
  const auto shaped = [](const Matrix& m, Eigen::Index rows, Eigen::Index cols) {
    return m.rows() == rows && m.cols() == cols;
  };
  if (config_.heads == 0 || config_.dim % config_.heads != 0) {
    throw ValidationError("encoder: dim must be divisible by heads");
  }
  if (!shaped(w.proj, d, k) || !shaped(w.proj_bias, 1, k)) {
    throw ValidationError("encoder: output projection must map to exactly 3 classes");
  }
  if (!shaped(w.token_embedding, v, d) || !shaped(w.position_embedding, len, d) || !shaped(w.query, d, d) ||
      !shaped(w.key, d, d) || !shaped(w.value, d, d) || !shaped(w.attn_out, d, d) || !shaped(w.ffn_in, d, f) ||
      !shaped(w.ffn_in_bias, 1, f) || !shaped(w.ffn_out, f, d) || !shaped(w.ffn_out_bias, 1, d)) {
    throw ValidationError("encoder: weight shapes do not match the configuration");
  }
}

EmissionMatrix ToyEncoder::forward(std::span<const std::size_t> ids, double dropout, std::mt19937_64* rng,
                                   EncoderTrace* trace) const {
  const auto len = static_cast<Eigen::Index>(ids.size());
  if (len == 0) throw ArgumentError("encoder: empty input");
  if (ids.size() > config_.max_len) throw ArgumentError("encoder: input longer than max_len");
  const auto d = static_cast<Eigen::Index>(config_.dim);
  const auto heads = static_cast<Eigen::Index>(config_.heads);
  const Eigen::Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool use_dropout = dropout > 0.0 && rng != nullptr;
  const auto& w = weights_;

  Matrix x(len, d);
  for (Eigen::Index t = 0; t < len; ++t) {
    const auto id = ids[static_cast<std::size_t>(t)];
    if (id >= config_.vocab_size) throw ArgumentError("encoder: token id out of range");
    x.row(t) = w.token_embedding.row(static_cast<Eigen::Index>(id)) + w.position_embedding.row(t);
  }
  Matrix q = x * w.query;
  Matrix k = x * w.key;
  Matrix v = x * w.value;
  Matrix context(len, d);
  std::vector<Matrix> attention;
  attention.reserve(static_cast<std::size_t>(heads));
  for (Eigen::Index h = 0; h < heads; ++h) {
    Matrix scores = q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose() * scale;
    softmax_rows(scores);
    context.middleCols(h * dh, dh) = scores * v.middleCols(h * dh, dh);
    attention.push_back(std::move(scores));
  }
  Matrix attn = context * w.attn_out;
  Matrix attn_mask;
  if (use_dropout) {
    attn_mask = dropout_mask(len, d, dropout, *rng);
    attn = attn.cwiseProduct(attn_mask);
  }
  Matrix h1 = x + attn;
  Matrix pre_relu = (h1 * w.ffn_in).rowwise() + w.ffn_in_bias.row(0);
  Matrix relu = pre_relu.cwiseMax(0.0);
  Matrix relu_mask;
  if (use_dropout) {
    relu_mask = dropout_mask(len, relu.cols(), dropout, *rng);
    relu = relu.cwiseProduct(relu_mask);
  }
  Matrix h2 = h1 + ((relu * w.ffn_out).rowwise() + w.ffn_out_bias.row(0));
  Matrix logits = (h2 * w.proj).rowwise() + w.proj_bias.row(0);

  EmissionMatrix out(len, logits.cols());
  for (Eigen::Index t = 0; t < len; ++t) {
    const double best = logits.row(t).maxCoeff();
    const double lse = best + std::log((logits.row(t).array() - best).exp().sum());
    out.row(t) = logits.row(t).array() - lse;
  }
  if (trace != nullptr) {
    trace->ids.assign(ids.begin(), ids.end());
    trace->x = std::move(x);
    trace->q = std::move(q);
    trace->k = std::move(k);
    trace->v = std::move(v);
    trace->attention = std::move(attention);
    trace->context = std::move(context);
    trace->attn_dropout_mask = std::move(attn_mask);
    trace->h1 = std::move(h1);
    trace->pre_relu = std::move(pre_relu);
    trace->relu_dropout_mask = std::move(relu_mask);
    trace->relu = std::move(relu);
    trace->h2 = std::move(h2);
    trace->probs = out.array().exp().matrix();
  }
  return out;
}

EncoderWeights ToyEncoder::zero_gradients(bool with_embeddings) const {
  EncoderWeights g = weights_.zeros_like();
  if (!with_embeddings) {
    g.token_embedding.resize(0, 0);
    g.position_embedding.resize(0, 0);
  }
  return g;
}

void ToyEncoder::backward(const EncoderTrace& tr, const EmissionMatrix& d_emissions, EncoderWeights& g) const {
  const Matrix d_x = backward_to_input(tr, d_emissions, g);
  for (Eigen::Index t = 0; t < d_x.rows(); ++t) {
    g.token_embedding.row(static_cast<Eigen::Index>(tr.ids[static_cast<std::size_t>(t)])) += d_x.row(t);
    g.position_embedding.row(t) += d_x.row(t);
  }
}

Matrix ToyEncoder::backward_to_input(const EncoderTrace& tr, const EmissionMatrix& d_emissions,
                                     EncoderWeights& g) const {
  const auto& w = weights_;
  const auto len = tr.x.rows();
  const auto d = static_cast<Eigen::Index>(config_.dim);
  const auto heads = static_cast<Eigen::Index>(config_.heads);
  const Eigen::Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  // Through log-softmax: d logits = dE - softmax * rowsum(dE).
  const Vector row_sums = d_emissions.rowwise().sum();
  Matrix d_logits = d_emissions - (tr.probs.array().colwise() * row_sums.array()).matrix();

  g.proj.noalias() += tr.h2.transpose() * d_logits;
  g.proj_bias += d_logits.colwise().sum();
  Matrix d_h2 = d_logits * w.proj.transpose();

  // h2 = h1 + relu * W2 + b2
  g.ffn_out.noalias() += tr.relu.transpose() * d_h2;
  g.ffn_out_bias += d_h2.colwise().sum();
  Matrix d_relu = d_h2 * w.ffn_out.transpose();
  if (tr.relu_dropout_mask.size() > 0) d_relu = d_relu.cwiseProduct(tr.relu_dropout_mask);
  Matrix d_pre = d_relu.cwiseProduct((tr.pre_relu.array() > 0.0).cast<double>().matrix());
  g.ffn_in.noalias() += tr.h1.transpose() * d_pre;
  g.ffn_in_bias += d_pre.colwise().sum();
  Matrix d_h1 = d_h2 + d_pre * w.ffn_in.transpose();

  // h1 = x + dropout(context * Wo)
  Matrix d_attn = d_h1;
  if (tr.attn_dropout_mask.size() > 0) d_attn = d_attn.cwiseProduct(tr.attn_dropout_mask);
  g.attn_out.noalias() += tr.context.transpose() * d_attn;
  Matrix d_context = d_attn * w.attn_out.transpose();

  Matrix d_q(len, d);
  Matrix d_k(len, d);
  Matrix d_v(len, d);
  for (Eigen::Index h = 0; h < heads; ++h) {
    const Matrix& a = tr.attention[static_cast<std::size_t>(h)];
    const auto dc = d_context.middleCols(h * dh, dh);
    Matrix d_a = dc * tr.v.middleCols(h * dh, dh).transpose();
    d_v.middleCols(h * dh, dh) = a.transpose() * dc;
    // Softmax Jacobian per row.
    const Vector inner = a.cwiseProduct(d_a).rowwise().sum();
    Matrix d_scores = a.cwiseProduct((d_a.colwise() - inner));
    d_scores *= scale;
    d_q.middleCols(h * dh, dh) = d_scores * tr.k.middleCols(h * dh, dh);
    d_k.middleCols(h * dh, dh) = d_scores.transpose() * tr.q.middleCols(h * dh, dh);
  }
  g.query.noalias() += tr.x.transpose() * d_q;
  g.key.noalias() += tr.x.transpose() * d_k;
  g.value.noalias() += tr.x.transpose() * d_v;
  return d_h1 + d_q * w.query.transpose() + d_k * w.key.transpose() + d_v * w.value.transpose();
}

void ToyEncoder::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string() + ": cannot open for writing");
  out.write(kEncoderMagic, sizeof(kEncoderMagic));
  write_pod<std::uint32_t>(out, kEncoderVersion);
  for (std::uint64_t field : {config_.vocab_size, config_.max_len, config_.dim, config_.heads, config_.ffn_dim}) {
    write_pod<std::uint64_t>(out, field);
  }
  for (const Matrix* t : weights_.tensors()) {
    write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(t->rows()));
    write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(t->cols()));
    out.write(reinterpret_cast<const char*>(t->data()), static_cast<std::streamsize>(t->size() * sizeof(double)));
  }
  if (!out) throw IoError(path.string() + ": write failed");
}

ToyEncoder ToyEncoder::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": no such file or unreadable");
  char magic[8] = {};
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kEncoderMagic, sizeof(magic)) != 0) {
    throw ParseError(path.string() + ": not an encoder file");
  }
  if (read_pod<std::uint32_t>(in, path) != kEncoderVersion) {
    throw ParseError(path.string() + ": unsupported encoder version");
  }
  EncoderConfig config;
  config.vocab_size = read_pod<std::uint64_t>(in, path);
  config.max_len = read_pod<std::uint64_t>(in, path);
  config.dim = read_pod<std::uint64_t>(in, path);
  config.heads = read_pod<std::uint64_t>(in, path);
  config.ffn_dim = read_pod<std::uint64_t>(in, path);
  EncoderWeights weights;
  for (Matrix* t : weights.tensors()) {
    const auto rows = read_pod<std::uint64_t>(in, path);
    const auto cols = read_pod<std::uint64_t>(in, path);
    if (rows > (1u << 24) || cols > (1u << 24)) throw ParseError(path.string() + ": implausible tensor shape");
    t->resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    if (!in.read(reinterpret_cast<char*>(t->data()), static_cast<std::streamsize>(t->size() * sizeof(double)))) {
      throw ParseError(path.string() + ": truncated encoder file");
    }
  }
  for (const Matrix* t : weights.tensors()) {
    if (!t->allFinite()) throw ValidationError(path.string() + ": non-finite encoder weight");
  }
  return ToyEncoder(config, std::move(weights));
}

}  // namespace adetag
