#pragma once

#include "btts/decoding.hpp"
#include "btts/rng.hpp"
#include "btts/transformer.hpp"
#include "btts/types.hpp"

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace btts {

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Architecture of the three towers. Defaults are the desk-scale toy model.
struct ModelConfig {
  int d_model = 64;
  int n_layers_enc = 2;
  int n_layers_dec = 2;
  int n_layers_ext = 2;
  int n_heads = 4;
  int d_ff = 128;
  int vocab_size = 0;
  int max_len = 64;
  double dropout = 0.0;
  int style_dim = 64;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Encoder, decoder and style extractor sharing one embedding table, which also
/// serves as the tied output projection.
template <typename Scalar>
struct ModelParams {
  ModelConfig config;
  Matrix<Scalar> embedding;  // V x d_model
  EncoderStackParams<Scalar> encoder;
  DecoderStackParams<Scalar> decoder;
  EncoderStackParams<Scalar> extractor;
  // Normalises the style vector before it reaches the decoder, so restyling
  // with a large beta turns the offset instead of lengthening it.
  LayerNormParams<Scalar> style_norm;
};

template <typename P, typename F>
void visit_tensors(P& params, F&& f) {
  f(std::string("embedding"), params.embedding);
  visit_encoder_stack(params.encoder, "encoder", f);
  visit_decoder_stack(params.decoder, "decoder", f);
  visit_encoder_stack(params.extractor, "extractor", f);
  visit_layer_norm(params.style_norm, "style_norm", f);
}

template <typename Scalar>
std::size_t parameter_count(const ModelParams<Scalar>& params) {
  std::size_t n = 0;
  visit_tensors(params, [&](const std::string&, const Matrix<Scalar>& t) { n += static_cast<std::size_t>(t.size()); });
  return n;
}

/// Shapes only, all zeros.
template <typename Scalar>
ModelParams<Scalar> zero_model(const ModelConfig& cfg) {
  cfg.validate();
  const Eigen::Index d = cfg.d_model, ff = cfg.d_ff;
  auto zeros = [](Eigen::Index r, Eigen::Index c) { return Matrix<Scalar>::Zero(r, c).eval(); };
  auto norm = [&] { return LayerNormParams<Scalar>{zeros(1, d), zeros(1, d)}; };
  auto attn = [&] {
    return AttentionParams<Scalar>{zeros(d, d), zeros(1, d), zeros(d, d), zeros(1, d),
                                   zeros(d, d), zeros(1, d), zeros(d, d), zeros(1, d)};
  };
  auto ffn = [&] { return FeedForwardParams<Scalar>{zeros(d, ff), zeros(1, ff), zeros(ff, d), zeros(1, d)}; };
  auto enc_stack = [&](int layers) {
    EncoderStackParams<Scalar> s;
    for (int i = 0; i < layers; ++i) s.layers.push_back({norm(), attn(), norm(), ffn()});
    s.final_norm = norm();
    return s;
  };
  ModelParams<Scalar> p;
  p.config = cfg;
  p.embedding = zeros(cfg.vocab_size, d);
  p.encoder = enc_stack(cfg.n_layers_enc);
  p.extractor = enc_stack(cfg.n_layers_ext);
  p.decoder.memory_norm = norm();
  for (int i = 0; i < cfg.n_layers_dec; ++i)
    p.decoder.layers.push_back({norm(), attn(), norm(), attn(), norm(), ffn()});
  p.decoder.final_norm = norm();
  p.style_norm = norm();
  return p;
}

template <typename Scalar>
ModelParams<Scalar> zeros_like(const ModelParams<Scalar>& params) {
  return zero_model<Scalar>(params.config);
}

/// Rounds every weight to float32 precision (the checkpoint storage format).
template <typename Scalar>
void round_to_storage(ModelParams<Scalar>& params) {
  visit_tensors(params, [](const std::string&, Matrix<Scalar>& t) {
    t = t.unaryExpr([](Scalar v) { return Scalar(static_cast<float>(v)); });
  });
}

/// Weights ~ N(0, 1/fan_in) (1/d_model for the embedding), biases zero,
/// layer-norm gains one. Values are rounded to float32 precision.
template <typename Scalar>
ModelParams<Scalar> init_model(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams<Scalar> p = zero_model<Scalar>(cfg);
  Rng rng(seed);
  const double emb_std = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
  visit_tensors(p, [&](const std::string& name, Matrix<Scalar>& t) {
    const auto leaf = name.substr(name.rfind('.') + 1);
    if (leaf == "gain") {
      t.setOnes();
    } else if (leaf == "bias" || leaf.front() == 'b') {
      t.setZero();
    } else {
      const double sd = name == "embedding" ? emb_std : 1.0 / std::sqrt(static_cast<double>(t.rows()));
      for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = Scalar(sd * rng.normal());
    }
  });
  round_to_storage(p);
  return p;
}

template <typename To, typename From>
ModelParams<To> cast_model(const ModelParams<From>& src) {
  ModelParams<To> dst = zero_model<To>(src.config);
  std::vector<const Matrix<From>*> from;
  visit_tensors(src, [&](const std::string&, const Matrix<From>& t) { from.push_back(&t); });
  std::size_t i = 0;
  visit_tensors(dst, [&](const std::string&, Matrix<To>& t) { t = from[i++]->template cast<To>(); });
  return dst;
}

// ---------------------------------------------------------------------------
// Forward passes (eval mode unless a cache/dropout is supplied)

void check_sequence_length(const ModelConfig& cfg, std::size_t length, const char* what);

template <typename Scalar>
Matrix<Scalar> encode_seq(const ModelParams<Scalar>& params, std::span<const TokenId> ids) {
  check_sequence_length(params.config, ids.size(), "encoder input");
  return encoder_stack_forward<Scalar>(params.encoder, params.embedding, ids, params.config.n_heads, nullptr);
}

/// Extractor tower output before pooling (len x D).
template <typename Scalar>
Matrix<Scalar> extract_rows(const ModelParams<Scalar>& params, std::span<const TokenId> ids) {
  check_sequence_length(params.config, ids.size(), "extractor input");
  return encoder_stack_forward<Scalar>(params.extractor, params.embedding, ids, params.config.n_heads, nullptr);
}

/// Mean of the extractor rows.
template <typename Scalar>
Vector<Scalar> extract_style(const ModelParams<Scalar>& params, std::span<const TokenId> ids) {
  return extract_rows(params, ids).colwise().mean().transpose();
}

/// Adds the style vector to every encoder position.
template <typename Derived, typename VDerived>
auto condition(const Eigen::MatrixBase<Derived>& memory, const Eigen::MatrixBase<VDerived>& style) {
  using Scalar = typename Derived::Scalar;
  if (memory.cols() != style.size()) {
    throw ModelError("condition: memory width " + std::to_string(memory.cols()) + " != style dim " +
                     std::to_string(style.size()));
  }
  Matrix<Scalar> out = memory;
  out.rowwise() += style.derived().transpose();
  return out;
}

/// The offset the decoder adds to its memory for a raw style vector.
template <typename Scalar, typename VDerived>
Vector<Scalar> style_offset(const ModelParams<Scalar>& params, const Eigen::MatrixBase<VDerived>& style) {
  const Matrix<Scalar> row = style.derived().transpose();
  return layer_norm_forward<Scalar>(params.style_norm, row, nullptr).transpose();
}

template <typename Scalar, typename Derived, typename VDerived>
Matrix<Scalar> conditioned_memory(const ModelParams<Scalar>& params, const Eigen::MatrixBase<Derived>& memory,
                                  const Eigen::MatrixBase<VDerived>& style) {
  return condition(memory, style_offset(params, style));
}

template <typename Scalar>
Matrix<Scalar> decode_logits(const ModelParams<Scalar>& params, const Matrix<Scalar>& memory,
                             std::span<const TokenId> decoder_input) {
  check_sequence_length(params.config, decoder_input.size(), "decoder input");
  if (decoder_input.front() != kBosId) throw ModelError("decoder input must begin with BOS");
  if (memory.rows() < 1 || memory.cols() != params.config.d_model) throw ModelError("decode_logits: bad memory shape");
  Matrix<Scalar> hidden = decoder_stack_forward<Scalar>(params.decoder, params.embedding, decoder_input, memory,
                                                        params.config.n_heads, nullptr);
  return hidden * params.embedding.transpose();
}

/// Row-wise log-softmax.
template <typename Derived>
auto log_softmax_rows(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  Matrix<Scalar> out = logits;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const Scalar mx = out.row(i).maxCoeff();
    const Scalar lse = mx + std::log((out.row(i).array() - mx).exp().sum());
    out.row(i).array() -= lse;
  }
  return out;
}

/// Decodes from a conditioned memory. Returns content tokens (no BOS/prefix/EOS).
template <typename Scalar>
TokenIds generate(const ModelParams<Scalar>& params, const Matrix<Scalar>& memory, const DecodeConfig& cfg) {
  const auto budget = static_cast<int>(params.config.max_len) - 1 - static_cast<int>(cfg.prefix.size());
  if (budget < 1) throw ModelError("generate: prefix leaves no room below max_len");
  DecodeConfig bounded = cfg;
  bounded.max_new_tokens = std::min(cfg.max_new_tokens, budget);
  auto step = [&](std::span<const TokenId> input) -> VectorXr {
    Matrix<Scalar> logits = decode_logits(params, memory, input);
    return log_softmax_rows(logits.bottomRows(1)).row(0).transpose().template cast<double>();
  };
  return run_search(step, kBosId, kEosId, bounded);
}

}  // namespace btts
