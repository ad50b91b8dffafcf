#pragma once

#include "btts/types.hpp"

#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace btts {

class LossError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BTConfig {
  double delta = 1e-4;  // off-diagonal weight
  double eps = 1e-8;    // variance floor

  void validate() const;
};

enum class BTLevel { kSentence, kParagraph, kBoth };

BTLevel parse_bt_level(std::string_view name);
std::string_view to_string(BTLevel level);

struct LossConfig {
  double lambda = 1e-2;
  BTLevel bt_level = BTLevel::kSentence;

  void validate() const;
};

// ---------------------------------------------------------------------------
// Barlow Twins

/// Column-standardizes an N x D batch: mean 0, population std 1, variance
/// floored at eps.
template <typename Scalar>
Matrix<Scalar> normalize_features(const Matrix<Scalar>& z, double eps = BTConfig{}.eps) {
  if (z.rows() < 2) throw LossError("normalize_features: need at least two rows, got " + std::to_string(z.rows()));
  const Scalar n = Scalar(z.rows());
  RowVector<Scalar> mean = z.colwise().mean();
  Matrix<Scalar> centered = z.rowwise() - mean;
  RowVector<Scalar> var = centered.array().square().colwise().sum() / n;
  RowVector<Scalar> sd = var.array().max(Scalar(eps)).sqrt();
  return centered.array().rowwise() / sd.array();
}

/// C = (1/N) A^T B for already-normalized batches.
template <typename Scalar>
Matrix<Scalar> cross_correlation(const Matrix<Scalar>& a, const Matrix<Scalar>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw LossError("cross_correlation: shape mismatch " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                    " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  if (a.rows() == 0) throw LossError("cross_correlation: empty batch");
  return (a.transpose() * b) / Scalar(a.rows());
}

/// sum_i (1 - C_ii)^2 + delta * sum_{i != j} C_ij^2
template <typename Scalar>
Scalar bt_from_correlation(const Matrix<Scalar>& c, double delta) {
  if (c.rows() != c.cols()) throw LossError("bt_from_correlation: matrix is not square");
  const Scalar on_diag = (Scalar(1) - c.diagonal().array()).square().sum();
  const Scalar off_diag = c.array().square().sum() - c.diagonal().array().square().sum();
  return on_diag + Scalar(delta) * off_diag;
}

template <typename Scalar>
Scalar barlow_twins(const Matrix<Scalar>& za, const Matrix<Scalar>& zb, const BTConfig& cfg = {}) {
  if (za.rows() != zb.rows() || za.cols() != zb.cols()) throw LossError("barlow_twins: shape mismatch");
  return bt_from_correlation(cross_correlation(normalize_features(za, cfg.eps), normalize_features(zb, cfg.eps)),
                             cfg.delta);
}

template <typename Scalar>
struct BarlowTwinsGrad {
  Scalar value = 0;
  Matrix<Scalar> d_a;
  Matrix<Scalar> d_b;
};

namespace detail {

template <typename Scalar>
struct Standardized {
  Matrix<Scalar> values;
  RowVector<Scalar> sd;
  std::vector<bool> floored;
};

template <typename Scalar>
Standardized<Scalar> standardize(const Matrix<Scalar>& z, double eps) {
  if (z.rows() < 2) throw LossError("normalize_features: need at least two rows, got " + std::to_string(z.rows()));
  Standardized<Scalar> s;
  RowVector<Scalar> mean = z.colwise().mean();
  Matrix<Scalar> centered = z.rowwise() - mean;
  RowVector<Scalar> var = centered.array().square().colwise().sum() / Scalar(z.rows());
  s.floored.resize(static_cast<std::size_t>(z.cols()));
  for (Eigen::Index j = 0; j < z.cols(); ++j) s.floored[static_cast<std::size_t>(j)] = var(j) <= Scalar(eps);
  s.sd = var.array().max(Scalar(eps)).sqrt();
  s.values = centered.array().rowwise() / s.sd.array();
  return s;
}

template <typename Scalar>
Matrix<Scalar> standardize_backward(const Standardized<Scalar>& s, const Matrix<Scalar>& dy) {
  const Scalar n = Scalar(dy.rows());
  Matrix<Scalar> dz(dy.rows(), dy.cols());
  for (Eigen::Index j = 0; j < dy.cols(); ++j) {
    const auto y = s.values.col(j);
    const auto g = dy.col(j);
    const Scalar mean_g = g.sum() / n;
    if (s.floored[static_cast<std::size_t>(j)]) {
      dz.col(j) = (g.array() - mean_g) / s.sd(j);
    } else {
      const Scalar mean_gy = g.dot(y) / n;
      dz.col(j) = (g.array() - mean_g - y.array() * mean_gy) / s.sd(j);
    }
  }
  return dz;
}

}  // namespace detail

/// Barlow Twins value with gradients with respect to both raw batches.
template <typename Scalar>
BarlowTwinsGrad<Scalar> barlow_twins_with_grad(const Matrix<Scalar>& za, const Matrix<Scalar>& zb,
                                               const BTConfig& cfg = {}) {
  if (za.rows() != zb.rows() || za.cols() != zb.cols()) throw LossError("barlow_twins: shape mismatch");
  const auto sa = detail::standardize(za, cfg.eps);
  const auto sb = detail::standardize(zb, cfg.eps);
  const Matrix<Scalar> c = cross_correlation(sa.values, sb.values);
  BarlowTwinsGrad<Scalar> out;
  out.value = bt_from_correlation(c, cfg.delta);
  Matrix<Scalar> dc = Scalar(2 * cfg.delta) * c;
  dc.diagonal() = Scalar(-2) * (Scalar(1) - c.diagonal().array()).matrix();
  const Scalar n = Scalar(za.rows());
  const Matrix<Scalar> d_norm_a = (sb.values * dc.transpose()) / n;
  const Matrix<Scalar> d_norm_b = (sa.values * dc) / n;
  out.d_a = detail::standardize_backward(sa, d_norm_a);
  out.d_b = detail::standardize_backward(sb, d_norm_b);
  return out;
}

/// Paragraph-level Barlow Twins over a batch of embeddings tagged by document.
///
/// Within each document holding m >= 2 embeddings, every unordered pair {i, j}
/// contributes the rows (e_i, e_j) and (e_j, e_i) to the two sides, giving a
/// 2 * m(m-1)/2 row batch; one Barlow Twins value is computed per document and
/// the values are averaged over contributing documents.
template <typename Scalar>
struct ParagraphBatch {
  std::vector<std::string> doc_ids;  // one per row of `embeddings`
  Matrix<Scalar> embeddings;         // M x D
};

template <typename Scalar>
struct ParagraphGrad {
  Scalar value = 0;
  std::size_t documents = 0;
  Matrix<Scalar> d_embeddings;
};

template <typename Scalar>
ParagraphGrad<Scalar> paragraph_bt_with_grad(const ParagraphBatch<Scalar>& batch, const BTConfig& cfg = {}) {
  const auto m = batch.embeddings.rows();
  if (static_cast<std::size_t>(m) != batch.doc_ids.size()) throw LossError("paragraph_bt: doc id count mismatch");
  std::vector<std::string> order;
  std::vector<std::vector<Eigen::Index>> members;
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto& doc = batch.doc_ids[static_cast<std::size_t>(i)];
    std::size_t k = 0;
    while (k < order.size() && order[k] != doc) ++k;
    if (k == order.size()) {
      order.push_back(doc);
      members.emplace_back();
    }
    members[k].push_back(i);
  }
  ParagraphGrad<Scalar> out;
  out.d_embeddings = Matrix<Scalar>::Zero(m, batch.embeddings.cols());
  std::vector<std::pair<Eigen::Index, Eigen::Index>> rows;
  for (const auto& group : members) {
    if (group.size() < 2) continue;
    rows.clear();
    for (std::size_t i = 0; i < group.size(); ++i)
      for (std::size_t j = i + 1; j < group.size(); ++j) {
        rows.emplace_back(group[i], group[j]);
        rows.emplace_back(group[j], group[i]);
      }
    Matrix<Scalar> za(static_cast<Eigen::Index>(rows.size()), batch.embeddings.cols());
    Matrix<Scalar> zb(za.rows(), za.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      za.row(static_cast<Eigen::Index>(r)) = batch.embeddings.row(rows[r].first);
      zb.row(static_cast<Eigen::Index>(r)) = batch.embeddings.row(rows[r].second);
    }
    auto g = barlow_twins_with_grad(za, zb, cfg);
    out.value += g.value;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      out.d_embeddings.row(rows[r].first) += g.d_a.row(static_cast<Eigen::Index>(r));
      out.d_embeddings.row(rows[r].second) += g.d_b.row(static_cast<Eigen::Index>(r));
    }
    ++out.documents;
  }
  if (out.documents == 0) throw LossError("paragraph_bt: no document contributes two or more embeddings");
  out.value /= Scalar(out.documents);
  out.d_embeddings /= Scalar(out.documents);
  return out;
}

template <typename Scalar>
Scalar paragraph_bt(const ParagraphBatch<Scalar>& batch, const BTConfig& cfg = {}) {
  return paragraph_bt_with_grad(batch, cfg).value;
}

// ---------------------------------------------------------------------------
// Reconstruction cross-entropy

struct CrossEntropyTerms {
  double sum = 0.0;
  std::size_t count = 0;  // non-PAD positions
};

/// Sum of -log softmax(logits)[target] over non-PAD targets. When `grad` is
/// given, (softmax - onehot) * grad_scale is written for every row (zero rows
/// at PAD positions).
CrossEntropyTerms cross_entropy_terms(const MatrixXr& logits, std::span<const TokenId> targets, MatrixXr* grad = nullptr,
                                      double grad_scale = 1.0);

/// Mean over non-PAD positions.
double cross_entropy(const MatrixXr& logits, std::span<const TokenId> targets);

double bt_active(double bt_sentence, double bt_paragraph, BTLevel level);

/// ce + lambda * bt_active
double total_loss(double ce, double bt_sentence, double bt_paragraph, const LossConfig& cfg);

}  // namespace btts
