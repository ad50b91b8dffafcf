#pragma once

// Pre-norm transformer blocks with explicit forward caches and reverse-mode
// gradients. Every forward takes an optional cache pointer; passing nullptr runs
// in inference mode and stores nothing.

#include "btts/rng.hpp"
#include "btts/types.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

namespace btts {

template <typename Scalar>
struct LayerNormParams {
  Matrix<Scalar> gain;  // 1 x d
  Matrix<Scalar> bias;  // 1 x d
};

template <typename Scalar>
struct AttentionParams {
  Matrix<Scalar> wq, bq, wk, bk, wv, bv, wo, bo;
};

template <typename Scalar>
struct FeedForwardParams {
  Matrix<Scalar> w1, b1, w2, b2;
};

template <typename Scalar>
struct EncoderLayerParams {
  LayerNormParams<Scalar> norm1;
  AttentionParams<Scalar> attn;
  LayerNormParams<Scalar> norm2;
  FeedForwardParams<Scalar> ffn;
};

template <typename Scalar>
struct DecoderLayerParams {
  LayerNormParams<Scalar> norm1;
  AttentionParams<Scalar> self_attn;
  LayerNormParams<Scalar> norm2;
  AttentionParams<Scalar> cross_attn;
  LayerNormParams<Scalar> norm3;
  FeedForwardParams<Scalar> ffn;
};

template <typename Scalar>
struct EncoderStackParams {
  std::vector<EncoderLayerParams<Scalar>> layers;
  LayerNormParams<Scalar> final_norm;
};

template <typename Scalar>
struct DecoderStackParams {
  // Applied to the conditioned memory, so cross-attention sees content and
  // style offset on one scale.
  LayerNormParams<Scalar> memory_norm;
  std::vector<DecoderLayerParams<Scalar>> layers;
  LayerNormParams<Scalar> final_norm;
};

// ---------------------------------------------------------------------------
// Tensor visitation. `P` may be const or mutable; `f(name, tensor)`.

template <typename P, typename F>
void visit_layer_norm(P& p, const std::string& prefix, F& f) {
  f(prefix + ".gain", p.gain);
  f(prefix + ".bias", p.bias);
}

template <typename P, typename F>
void visit_attention(P& p, const std::string& prefix, F& f) {
  f(prefix + ".wq", p.wq);
  f(prefix + ".bq", p.bq);
  f(prefix + ".wk", p.wk);
  f(prefix + ".bk", p.bk);
  f(prefix + ".wv", p.wv);
  f(prefix + ".bv", p.bv);
  f(prefix + ".wo", p.wo);
  f(prefix + ".bo", p.bo);
}

template <typename P, typename F>
void visit_feed_forward(P& p, const std::string& prefix, F& f) {
  f(prefix + ".w1", p.w1);
  f(prefix + ".b1", p.b1);
  f(prefix + ".w2", p.w2);
  f(prefix + ".b2", p.b2);
}

template <typename P, typename F>
void visit_encoder_stack(P& p, const std::string& prefix, F& f) {
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    const auto base = prefix + ".layers." + std::to_string(i);
    visit_layer_norm(p.layers[i].norm1, base + ".norm1", f);
    visit_attention(p.layers[i].attn, base + ".attn", f);
    visit_layer_norm(p.layers[i].norm2, base + ".norm2", f);
    visit_feed_forward(p.layers[i].ffn, base + ".ffn", f);
  }
  visit_layer_norm(p.final_norm, prefix + ".final_norm", f);
}

template <typename P, typename F>
void visit_decoder_stack(P& p, const std::string& prefix, F& f) {
  visit_layer_norm(p.memory_norm, prefix + ".memory_norm", f);
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    const auto base = prefix + ".layers." + std::to_string(i);
    visit_layer_norm(p.layers[i].norm1, base + ".norm1", f);
    visit_attention(p.layers[i].self_attn, base + ".self_attn", f);
    visit_layer_norm(p.layers[i].norm2, base + ".norm2", f);
    visit_attention(p.layers[i].cross_attn, base + ".cross_attn", f);
    visit_layer_norm(p.layers[i].norm3, base + ".norm3", f);
    visit_feed_forward(p.layers[i].ffn, base + ".ffn", f);
  }
  visit_layer_norm(p.final_norm, prefix + ".final_norm", f);
}

// ---------------------------------------------------------------------------
// Dropout

/// Training-mode dropout source; a null pointer means eval mode.
struct Dropout {
  double rate = 0.0;
  Rng* rng = nullptr;
};

template <typename Scalar>
Matrix<Scalar> dropout_mask(Eigen::Index rows, Eigen::Index cols, Dropout* dropout) {
  if (dropout == nullptr || dropout->rate <= 0.0) return {};
  Matrix<Scalar> mask(rows, cols);
  const Scalar keep = Scalar(1.0 / (1.0 - dropout->rate));
  for (Eigen::Index i = 0; i < mask.size(); ++i)
    mask.data()[i] = dropout->rng->uniform() < dropout->rate ? Scalar(0) : keep;
  return mask;
}

template <typename Scalar>
void apply_mask(Matrix<Scalar>& x, const Matrix<Scalar>& mask) {
  if (mask.size() != 0) x.array() *= mask.array();
}

// ---------------------------------------------------------------------------
// Layer norm

inline constexpr double kLayerNormEps = 1e-5;

template <typename Scalar>
struct LayerNormCache {
  Matrix<Scalar> xhat;
  Vector<Scalar> rstd;
};

template <typename Scalar>
Matrix<Scalar> layer_norm_forward(const LayerNormParams<Scalar>& p, const Matrix<Scalar>& x,
                                  LayerNormCache<Scalar>* cache) {
  const auto d = x.cols();
  Vector<Scalar> mean = x.rowwise().mean();
  Matrix<Scalar> centered = x.colwise() - mean;
  Vector<Scalar> var = centered.array().square().rowwise().sum() / Scalar(d);
  Vector<Scalar> rstd = (var.array() + Scalar(kLayerNormEps)).rsqrt();
  Matrix<Scalar> xhat = centered.array().colwise() * rstd.array();
  Matrix<Scalar> y = (xhat.array().rowwise() * p.gain.row(0).array()).rowwise() + p.bias.row(0).array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

template <typename Scalar>
Matrix<Scalar> layer_norm_backward(const LayerNormParams<Scalar>& p, const LayerNormCache<Scalar>& cache,
                                   const Matrix<Scalar>& dy, LayerNormParams<Scalar>& grad) {
  grad.gain.row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  grad.bias.row(0) += dy.colwise().sum();
  Matrix<Scalar> dxhat = dy.array().rowwise() * p.gain.row(0).array();
  Vector<Scalar> mean_dxhat = dxhat.rowwise().mean();
  Vector<Scalar> mean_dxhat_xhat = (dxhat.array() * cache.xhat.array()).rowwise().mean();
  Matrix<Scalar> dx = dxhat.colwise() - mean_dxhat;
  dx -= (cache.xhat.array().colwise() * mean_dxhat_xhat.array()).matrix();
  dx = dx.array().colwise() * cache.rstd.array();
  return dx;
}

// ---------------------------------------------------------------------------
// Linear maps: y = x W + b with W stored fan_in x fan_out.

template <typename Scalar>
Matrix<Scalar> linear(const Matrix<Scalar>& x, const Matrix<Scalar>& w, const Matrix<Scalar>& b) {
  Matrix<Scalar> y = x * w;
  y.rowwise() += b.row(0);
  return y;
}

template <typename Scalar>
Matrix<Scalar> linear_backward(const Matrix<Scalar>& x, const Matrix<Scalar>& w, const Matrix<Scalar>& dy,
                               Matrix<Scalar>& grad_w, Matrix<Scalar>& grad_b) {
  grad_w.noalias() += x.transpose() * dy;
  grad_b.row(0) += dy.colwise().sum();
  return dy * w.transpose();
}

// ---------------------------------------------------------------------------
// Multi-head attention

template <typename Scalar>
struct AttentionCache {
  Matrix<Scalar> xq, xkv, q, k, v, concat;
  std::vector<Matrix<Scalar>> probs;
};

template <typename Scalar>
Matrix<Scalar> attention_forward(const AttentionParams<Scalar>& p, const Matrix<Scalar>& xq,
                                 const Matrix<Scalar>& xkv, int n_heads, bool causal,
                                 AttentionCache<Scalar>* cache) {
  const auto d = p.wq.cols();
  const auto dh = d / n_heads;
  const Scalar scale = Scalar(1) / std::sqrt(Scalar(dh));
  Matrix<Scalar> q = linear(xq, p.wq, p.bq);
  Matrix<Scalar> k = linear(xkv, p.wk, p.bk);
  Matrix<Scalar> v = linear(xkv, p.wv, p.bv);
  Matrix<Scalar> concat(xq.rows(), d);
  std::vector<Matrix<Scalar>> probs;
  if (cache) probs.reserve(static_cast<std::size_t>(n_heads));
  for (int h = 0; h < n_heads; ++h) {
    Matrix<Scalar> s = (q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose()) * scale;
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      const Eigen::Index visible = causal ? std::min<Eigen::Index>(i + 1, s.cols()) : s.cols();
      const Scalar mx = s.row(i).head(visible).maxCoeff();
      s.row(i).head(visible) = (s.row(i).head(visible).array() - mx).exp();
      s.row(i).tail(s.cols() - visible).setZero();
      s.row(i) /= s.row(i).sum();
    }
    concat.middleCols(h * dh, dh).noalias() = s * v.middleCols(h * dh, dh);
    if (cache) probs.push_back(std::move(s));
  }
  Matrix<Scalar> y = linear(concat, p.wo, p.bo);
  if (cache) {
    cache->xq = xq;
    cache->xkv = xkv;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->concat = std::move(concat);
    cache->probs = std::move(probs);
  }
  return y;
}

/// Accumulates parameter gradients; writes input gradients into dxq and dxkv.
template <typename Scalar>
void attention_backward(const AttentionParams<Scalar>& p, const AttentionCache<Scalar>& c, int n_heads,
                        const Matrix<Scalar>& dy, AttentionParams<Scalar>& grad, Matrix<Scalar>& dxq,
                        Matrix<Scalar>& dxkv) {
  const auto d = p.wq.cols();
  const auto dh = d / n_heads;
  const Scalar scale = Scalar(1) / std::sqrt(Scalar(dh));
  Matrix<Scalar> dconcat = linear_backward(c.concat, p.wo, dy, grad.wo, grad.bo);
  Matrix<Scalar> dq = Matrix<Scalar>::Zero(c.q.rows(), d);
  Matrix<Scalar> dk = Matrix<Scalar>::Zero(c.k.rows(), d);
  Matrix<Scalar> dv = Matrix<Scalar>::Zero(c.v.rows(), d);
  for (int h = 0; h < n_heads; ++h) {
    const auto& prob = c.probs[static_cast<std::size_t>(h)];
    auto dout = dconcat.middleCols(h * dh, dh);
    Matrix<Scalar> dprob = dout * c.v.middleCols(h * dh, dh).transpose();
    dv.middleCols(h * dh, dh).noalias() += prob.transpose() * dout;
    Vector<Scalar> row_dot = (dprob.array() * prob.array()).rowwise().sum();
    Matrix<Scalar> ds = prob.array() * (dprob.colwise() - row_dot).array();
    ds *= scale;
    dq.middleCols(h * dh, dh).noalias() += ds * c.k.middleCols(h * dh, dh);
    dk.middleCols(h * dh, dh).noalias() += ds.transpose() * c.q.middleCols(h * dh, dh);
  }
  dxq = linear_backward(c.xq, p.wq, dq, grad.wq, grad.bq);
  dxkv = linear_backward(c.xkv, p.wk, dk, grad.wk, grad.bk);
  dxkv += linear_backward(c.xkv, p.wv, dv, grad.wv, grad.bv);
}

// ---------------------------------------------------------------------------
// Feed-forward with tanh-approximated GELU (smooth, so finite differences agree).

template <typename Scalar>
struct FeedForwardCache {
  Matrix<Scalar> x, pre, hidden;
};

namespace detail {
inline constexpr double kGeluC = 0.044715;
inline const double kGeluK = std::sqrt(2.0 / std::numbers::pi);
}  // namespace detail

template <typename Scalar>
Matrix<Scalar> feed_forward_forward(const FeedForwardParams<Scalar>& p, const Matrix<Scalar>& x,
                                    FeedForwardCache<Scalar>* cache) {
  Matrix<Scalar> pre = linear(x, p.w1, p.b1);
  const Scalar k = Scalar(detail::kGeluK), c = Scalar(detail::kGeluC);
  Matrix<Scalar> hidden =
      pre.unaryExpr([&](Scalar u) { return Scalar(0.5) * u * (Scalar(1) + std::tanh(k * (u + c * u * u * u))); });
  Matrix<Scalar> y = linear(hidden, p.w2, p.b2);
  if (cache) {
    cache->x = x;
    cache->pre = std::move(pre);
    cache->hidden = std::move(hidden);
  }
  return y;
}

template <typename Scalar>
Matrix<Scalar> feed_forward_backward(const FeedForwardParams<Scalar>& p, const FeedForwardCache<Scalar>& cache,
                                     const Matrix<Scalar>& dy, FeedForwardParams<Scalar>& grad) {
  Matrix<Scalar> dhidden = linear_backward(cache.hidden, p.w2, dy, grad.w2, grad.b2);
  const Scalar k = Scalar(detail::kGeluK), c = Scalar(detail::kGeluC);
  Matrix<Scalar> dgelu = cache.pre.unaryExpr([&](Scalar u) {
    const Scalar t = std::tanh(k * (u + c * u * u * u));
    return Scalar(0.5) * (Scalar(1) + t) + Scalar(0.5) * u * (Scalar(1) - t * t) * k * (Scalar(1) + Scalar(3) * c * u * u);
  });
  Matrix<Scalar> dpre = dhidden.array() * dgelu.array();
  return linear_backward(cache.x, p.w1, dpre, grad.w1, grad.b1);
}

// ---------------------------------------------------------------------------
// Embedding with fixed sinusoidal positions: x_t = sqrt(d) * E[id_t] + PE_t.

template <typename Scalar>
Matrix<Scalar> positional_encoding(Eigen::Index length, Eigen::Index d) {
  Matrix<Scalar> pe(length, d);
  for (Eigen::Index t = 0; t < length; ++t) {
    for (Eigen::Index i = 0; i < d; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(d));
      const double angle = static_cast<double>(t) * freq;
      pe(t, i) = Scalar(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return pe;
}

template <typename Scalar>
Matrix<Scalar> embed(const Matrix<Scalar>& embedding, std::span<const TokenId> ids) {
  const auto d = embedding.cols();
  const Scalar scale = std::sqrt(Scalar(d));
  Matrix<Scalar> x = positional_encoding<Scalar>(static_cast<Eigen::Index>(ids.size()), d);
  for (std::size_t t = 0; t < ids.size(); ++t) x.row(static_cast<Eigen::Index>(t)) += scale * embedding.row(ids[t]);
  return x;
}

template <typename Scalar>
void embed_backward(std::span<const TokenId> ids, const Matrix<Scalar>& dx, Matrix<Scalar>& grad_embedding) {
  const Scalar scale = std::sqrt(Scalar(dx.cols()));
  for (std::size_t t = 0; t < ids.size(); ++t) grad_embedding.row(ids[t]) += scale * dx.row(static_cast<Eigen::Index>(t));
}

// ---------------------------------------------------------------------------
// Encoder stack (also used by the style extractor)

template <typename Scalar>
struct EncoderLayerCache {
  LayerNormCache<Scalar> norm1;
  AttentionCache<Scalar> attn;
  Matrix<Scalar> drop1;
  LayerNormCache<Scalar> norm2;
  FeedForwardCache<Scalar> ffn;
  Matrix<Scalar> drop2;
};

template <typename Scalar>
struct EncoderStackCache {
  TokenIds ids;
  std::vector<EncoderLayerCache<Scalar>> layers;
  LayerNormCache<Scalar> final_norm;
};

template <typename Scalar>
Matrix<Scalar> encoder_stack_forward(const EncoderStackParams<Scalar>& p, const Matrix<Scalar>& embedding,
                                     std::span<const TokenId> ids, int n_heads, EncoderStackCache<Scalar>* cache,
                                     Dropout* dropout = nullptr) {
  Matrix<Scalar> x = embed(embedding, ids);
  if (cache) {
    cache->ids.assign(ids.begin(), ids.end());
    cache->layers.assign(p.layers.size(), {});
  }
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& lp = p.layers[l];
    EncoderLayerCache<Scalar>* lc = cache ? &cache->layers[l] : nullptr;
    Matrix<Scalar> a = layer_norm_forward(lp.norm1, x, lc ? &lc->norm1 : nullptr);
    Matrix<Scalar> att = attention_forward(lp.attn, a, a, n_heads, false, lc ? &lc->attn : nullptr);
    Matrix<Scalar> m1 = dropout_mask<Scalar>(att.rows(), att.cols(), dropout);
    apply_mask(att, m1);
    x += att;
    Matrix<Scalar> b = layer_norm_forward(lp.norm2, x, lc ? &lc->norm2 : nullptr);
    Matrix<Scalar> f = feed_forward_forward(lp.ffn, b, lc ? &lc->ffn : nullptr);
    Matrix<Scalar> m2 = dropout_mask<Scalar>(f.rows(), f.cols(), dropout);
    apply_mask(f, m2);
    x += f;
    if (lc) {
      lc->drop1 = std::move(m1);
      lc->drop2 = std::move(m2);
    }
  }
  return layer_norm_forward(p.final_norm, x, cache ? &cache->final_norm : nullptr);
}

template <typename Scalar>
void encoder_stack_backward(const EncoderStackParams<Scalar>& p, const EncoderStackCache<Scalar>& cache,
                            const Matrix<Scalar>& dout, EncoderStackParams<Scalar>& grad,
                            Matrix<Scalar>& grad_embedding, int n_heads) {
  Matrix<Scalar> dx = layer_norm_backward(p.final_norm, cache.final_norm, dout, grad.final_norm);
  for (std::size_t l = p.layers.size(); l-- > 0;) {
    const auto& lp = p.layers[l];
    const auto& lc = cache.layers[l];
    auto& lg = grad.layers[l];
    Matrix<Scalar> df = dx;
    apply_mask(df, lc.drop2);
    Matrix<Scalar> db = feed_forward_backward(lp.ffn, lc.ffn, df, lg.ffn);
    dx += layer_norm_backward(lp.norm2, lc.norm2, db, lg.norm2);
    Matrix<Scalar> datt = dx;
    apply_mask(datt, lc.drop1);
    Matrix<Scalar> dxq, dxkv;
    attention_backward(lp.attn, lc.attn, n_heads, datt, lg.attn, dxq, dxkv);
    dxq += dxkv;
    dx += layer_norm_backward(lp.norm1, lc.norm1, dxq, lg.norm1);
  }
  embed_backward(std::span<const TokenId>(cache.ids), dx, grad_embedding);
}

// ---------------------------------------------------------------------------
// Decoder stack: causal self-attention, cross-attention over memory, feed-forward.

template <typename Scalar>
struct DecoderLayerCache {
  LayerNormCache<Scalar> norm1;
  AttentionCache<Scalar> self_attn;
  Matrix<Scalar> drop1;
  LayerNormCache<Scalar> norm2;
  AttentionCache<Scalar> cross_attn;
  Matrix<Scalar> drop2;
  LayerNormCache<Scalar> norm3;
  FeedForwardCache<Scalar> ffn;
  Matrix<Scalar> drop3;
};

template <typename Scalar>
struct DecoderStackCache {
  TokenIds ids;
  LayerNormCache<Scalar> memory_norm;
  std::vector<DecoderLayerCache<Scalar>> layers;
  LayerNormCache<Scalar> final_norm;
};

template <typename Scalar>
Matrix<Scalar> decoder_stack_forward(const DecoderStackParams<Scalar>& p, const Matrix<Scalar>& embedding,
                                     std::span<const TokenId> ids, const Matrix<Scalar>& raw_memory, int n_heads,
                                     DecoderStackCache<Scalar>* cache, Dropout* dropout = nullptr) {
  const Matrix<Scalar> memory = layer_norm_forward(p.memory_norm, raw_memory, cache ? &cache->memory_norm : nullptr);
  Matrix<Scalar> x = embed(embedding, ids);
  if (cache) {
    cache->ids.assign(ids.begin(), ids.end());
    cache->layers.assign(p.layers.size(), {});
  }
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& lp = p.layers[l];
    DecoderLayerCache<Scalar>* lc = cache ? &cache->layers[l] : nullptr;
    Matrix<Scalar> a = layer_norm_forward(lp.norm1, x, lc ? &lc->norm1 : nullptr);
    Matrix<Scalar> sa = attention_forward(lp.self_attn, a, a, n_heads, true, lc ? &lc->self_attn : nullptr);
    Matrix<Scalar> m1 = dropout_mask<Scalar>(sa.rows(), sa.cols(), dropout);
    apply_mask(sa, m1);
    x += sa;
    Matrix<Scalar> b = layer_norm_forward(lp.norm2, x, lc ? &lc->norm2 : nullptr);
    Matrix<Scalar> ca = attention_forward(lp.cross_attn, b, memory, n_heads, false, lc ? &lc->cross_attn : nullptr);
    Matrix<Scalar> m2 = dropout_mask<Scalar>(ca.rows(), ca.cols(), dropout);
    apply_mask(ca, m2);
    x += ca;
    Matrix<Scalar> c = layer_norm_forward(lp.norm3, x, lc ? &lc->norm3 : nullptr);
    Matrix<Scalar> f = feed_forward_forward(lp.ffn, c, lc ? &lc->ffn : nullptr);
    Matrix<Scalar> m3 = dropout_mask<Scalar>(f.rows(), f.cols(), dropout);
    apply_mask(f, m3);
    x += f;
    if (lc) {
      lc->drop1 = std::move(m1);
      lc->drop2 = std::move(m2);
      lc->drop3 = std::move(m3);
    }
  }
  return layer_norm_forward(p.final_norm, x, cache ? &cache->final_norm : nullptr);
}

/// Returns the gradient with respect to the memory.
template <typename Scalar>
Matrix<Scalar> decoder_stack_backward(const DecoderStackParams<Scalar>& p, const DecoderStackCache<Scalar>& cache,
                                      const Matrix<Scalar>& dout, DecoderStackParams<Scalar>& grad,
                                      Matrix<Scalar>& grad_embedding, int n_heads) {
  Matrix<Scalar> dx = layer_norm_backward(p.final_norm, cache.final_norm, dout, grad.final_norm);
  Matrix<Scalar> dmemory;
  for (std::size_t l = p.layers.size(); l-- > 0;) {
    const auto& lp = p.layers[l];
    const auto& lc = cache.layers[l];
    auto& lg = grad.layers[l];

    Matrix<Scalar> df = dx;
    apply_mask(df, lc.drop3);
    Matrix<Scalar> dc = feed_forward_backward(lp.ffn, lc.ffn, df, lg.ffn);
    dx += layer_norm_backward(lp.norm3, lc.norm3, dc, lg.norm3);

    Matrix<Scalar> dca = dx;
    apply_mask(dca, lc.drop2);
    Matrix<Scalar> db, dmem;
    attention_backward(lp.cross_attn, lc.cross_attn, n_heads, dca, lg.cross_attn, db, dmem);
    if (dmemory.size() == 0) {
      dmemory = std::move(dmem);
    } else {
      dmemory += dmem;
    }
    dx += layer_norm_backward(lp.norm2, lc.norm2, db, lg.norm2);

    Matrix<Scalar> dsa = dx;
    apply_mask(dsa, lc.drop1);
    Matrix<Scalar> dxq, dxkv;
    attention_backward(lp.self_attn, lc.self_attn, n_heads, dsa, lg.self_attn, dxq, dxkv);
    dxq += dxkv;
    dx += layer_norm_backward(lp.norm1, lc.norm1, dxq, lg.norm1);
  }
  embed_backward(std::span<const TokenId>(cache.ids), dx, grad_embedding);
  return layer_norm_backward(p.memory_norm, cache.memory_norm, dmemory, grad.memory_norm);
}

}  // namespace btts
