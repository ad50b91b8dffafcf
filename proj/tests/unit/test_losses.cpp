#include "btts/losses.hpp"

#include "btts/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <map>

using namespace btts;

namespace {

MatrixXr mat(std::initializer_list<std::initializer_list<double>> rows) {
  MatrixXr m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (double v : r) m(i, j++) = v;
    ++i;
  }
  return m;
}

MatrixXr random_matrix(Rng& rng, Eigen::Index n, Eigen::Index d) {
  MatrixXr m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

// Written from the definitions with plain loops; shares no code with the
// library's Eigen formulation.
double oracle_bt(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b, double delta,
                 double eps) {
  const std::size_t n = a.size(), d = a[0].size();
  auto standardize = [&](const std::vector<std::vector<double>>& z) {
    auto out = z;
    for (std::size_t j = 0; j < d; ++j) {
      double mean = 0;
      for (std::size_t i = 0; i < n; ++i) mean += z[i][j];
      mean /= static_cast<double>(n);
      double var = 0;
      for (std::size_t i = 0; i < n; ++i) var += (z[i][j] - mean) * (z[i][j] - mean);
      var /= static_cast<double>(n);
      const double sd = std::sqrt(var < eps ? eps : var);
      for (std::size_t i = 0; i < n; ++i) out[i][j] = (z[i][j] - mean) / sd;
    }
    return out;
  };
  const auto na = standardize(a), nb = standardize(b);
  double loss = 0;
  for (std::size_t p = 0; p < d; ++p)
    for (std::size_t q = 0; q < d; ++q) {
      double c = 0;
      for (std::size_t i = 0; i < n; ++i) c += na[i][p] * nb[i][q];
      c /= static_cast<double>(n);
      loss += p == q ? (1 - c) * (1 - c) : delta * c * c;
    }
  return loss;
}

double oracle_paragraph(const std::vector<std::string>& docs, const MatrixXr& e, double delta, double eps) {
  std::map<std::string, std::vector<Eigen::Index>> groups;
  for (Eigen::Index i = 0; i < e.rows(); ++i) groups[docs[static_cast<std::size_t>(i)]].push_back(i);
  double sum = 0;
  int count = 0;
  for (const auto& [doc, idx] : groups) {
    if (idx.size() < 2) continue;
    std::vector<std::vector<double>> a, b;
    for (auto i : idx)
      for (auto j : idx) {
        if (i == j) continue;
        a.emplace_back(e.row(i).data(), e.row(i).data() + e.cols());
        b.emplace_back(e.row(j).data(), e.row(j).data() + e.cols());
      }
    sum += oracle_bt(a, b, delta, eps);
    ++count;
  }
  return sum / count;
}

}  // namespace

TEST(NormalizeFeatures, HandExamples) {
  const auto n = normalize_features<double>(mat({{1, 3, 2}, {-1, 5, 2}}));
  EXPECT_EQ(n, mat({{1, -1, 0}, {-1, 1, 0}}));
  EXPECT_THROW(normalize_features<double>(mat({{1, 2}})), LossError);
}

TEST(NormalizeFeatures, ColumnsStandardized) {
  Rng rng(1);
  const auto n = normalize_features<double>(random_matrix(rng, 9, 5));
  for (Eigen::Index j = 0; j < 5; ++j) {
    EXPECT_NEAR(n.col(j).mean(), 0.0, 1e-14);
    EXPECT_NEAR(n.col(j).squaredNorm() / 9.0, 1.0, 1e-12);
  }
}

TEST(CrossCorrelation, HandExamples) {
  const auto z = mat({{1, 1}, {-1, -1}, {1, -1}, {-1, 1}});
  EXPECT_EQ(cross_correlation<double>(z, z), MatrixXr::Identity(2, 2));
  const auto y = mat({{1, 1}, {-1, -1}});
  EXPECT_EQ(cross_correlation<double>(y, y), MatrixXr::Ones(2, 2));
  EXPECT_EQ(cross_correlation<double>(z, -z), -(z.transpose() * z) / 4.0);
  EXPECT_THROW(cross_correlation<double>(z, y), LossError);
}

TEST(BtFromCorrelation, HandExamples) {
  EXPECT_EQ(bt_from_correlation<double>(MatrixXr::Identity(3, 3), 0.5), 0.0);
  EXPECT_EQ(bt_from_correlation<double>(MatrixXr::Zero(2, 2), 0.7), 2.0);
  EXPECT_NEAR(bt_from_correlation<double>(MatrixXr::Ones(2, 2), 1e-4), 2e-4, 1e-18);
  EXPECT_THROW(bt_from_correlation<double>(MatrixXr::Zero(2, 3), 0.1), LossError);
}

TEST(BtFromCorrelation, ZeroExactlyAtIdentityDiagonal) {
  MatrixXr c = MatrixXr::Identity(3, 3);
  c(0, 1) = 0.3;
  EXPECT_EQ(bt_from_correlation<double>(c, 0.0), 0.0);
  EXPECT_GT(bt_from_correlation<double>(c, 1e-4), 0.0);
  c = MatrixXr::Identity(3, 3);
  c(2, 2) = 0.999;
  EXPECT_GT(bt_from_correlation<double>(c, 0.0), 0.0);
}

TEST(BarlowTwins, DecorrelatedIdenticalBatchesGiveZero) {
  const auto z = mat({{1, 1}, {-1, -1}, {1, -1}, {-1, 1}});
  EXPECT_EQ(barlow_twins<double>(z, z), 0.0);
}

TEST(BarlowTwins, SymmetricAndAffineInvariant) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const auto n = 2 + static_cast<Eigen::Index>(rng.below(7));
    const auto d = 1 + static_cast<Eigen::Index>(rng.below(6));
    const auto a = random_matrix(rng, n, d), b = random_matrix(rng, n, d);
    const BTConfig cfg{rng.uniform() * 0.1, 1e-8};
    const double v = barlow_twins<double>(a, b, cfg);
    EXPECT_NEAR(v, barlow_twins<double>(b, a, cfg), 1e-12);
    MatrixXr t = a;
    for (Eigen::Index j = 0; j < d; ++j) t.col(j) = t.col(j).array() * (0.1 + 5 * rng.uniform()) + 10 * rng.normal();
    EXPECT_NEAR(v, barlow_twins<double>(t, b, cfg), 1e-9);
    EXPECT_GE(v, 0.0);
  }
}

TEST(BarlowTwins, MatchesLoopOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const auto n = 2 + static_cast<Eigen::Index>(rng.below(7));
    const auto d = 1 + static_cast<Eigen::Index>(rng.below(6));
    const auto a = random_matrix(rng, n, d), b = random_matrix(rng, n, d);
    std::vector<std::vector<double>> va, vb;
    for (Eigen::Index i = 0; i < n; ++i) {
      va.emplace_back(a.row(i).data(), a.row(i).data() + d);
      vb.emplace_back(b.row(i).data(), b.row(i).data() + d);
    }
    EXPECT_NEAR(barlow_twins<double>(a, b, BTConfig{1e-3, 1e-8}), oracle_bt(va, vb, 1e-3, 1e-8), 1e-10);
  }
}

TEST(BarlowTwins, ConstantColumnIsFinite) {
  MatrixXr a = mat({{2, 1}, {2, 3}, {2, 5}});
  EXPECT_TRUE(std::isfinite(barlow_twins<double>(a, a)));
  const auto g = barlow_twins_with_grad<double>(a, a);
  EXPECT_TRUE(g.d_a.allFinite());
}

TEST(BarlowTwins, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  const BTConfig cfg{0.05, 1e-8};
  const auto a = random_matrix(rng, 5, 3), b = random_matrix(rng, 5, 3);
  const auto g = barlow_twins_with_grad<double>(a, b, cfg);
  EXPECT_NEAR(g.value, barlow_twins<double>(a, b, cfg), 1e-14);
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    MatrixXr p = a, m = a;
    p.data()[i] += h;
    m.data()[i] -= h;
    EXPECT_NEAR(g.d_a.data()[i], (barlow_twins<double>(p, b, cfg) - barlow_twins<double>(m, b, cfg)) / (2 * h), 1e-6);
    p = b;
    m = b;
    p.data()[i] += h;
    m.data()[i] -= h;
    EXPECT_NEAR(g.d_b.data()[i], (barlow_twins<double>(a, p, cfg) - barlow_twins<double>(a, m, cfg)) / (2 * h), 1e-6);
  }
}

TEST(ParagraphBT, SinglePairDegenerateCase) {
  Rng rng(5);
  const auto e = random_matrix(rng, 2, 3);
  const ParagraphBatch<double> batch{{"d", "d"}, e};
  MatrixXr a(2, 3), b(2, 3);
  a << e.row(0), e.row(1);
  b << e.row(1), e.row(0);
  EXPECT_NEAR(paragraph_bt(batch), barlow_twins<double>(a, b), 1e-14);
}

TEST(ParagraphBT, EqualDocumentsAverageToEither) {
  Rng rng(6);
  const auto e = random_matrix(rng, 3, 2);
  MatrixXr both(6, 2);
  both << e, e;
  const double one = paragraph_bt(ParagraphBatch<double>{{"x", "x", "x"}, e});
  EXPECT_NEAR(paragraph_bt(ParagraphBatch<double>{{"x", "x", "x", "y", "y", "y"}, both}), one, 1e-14);
}

TEST(ParagraphBT, ThreeEmbeddingsMatchBruteForce) {
  Rng rng(7);
  const auto e = random_matrix(rng, 3, 4);
  const std::vector<std::string> docs{"d", "d", "d"};
  EXPECT_NEAR(paragraph_bt(ParagraphBatch<double>{docs, e}), oracle_paragraph(docs, e, 1e-4, 1e-8), 1e-10);
}

TEST(ParagraphBT, RandomBatchesMatchBruteForce) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const auto n = 2 + static_cast<Eigen::Index>(rng.below(7));
    const auto d = 1 + static_cast<Eigen::Index>(rng.below(6));
    std::vector<std::string> docs(static_cast<std::size_t>(n));
    for (auto& doc : docs) doc = "doc" + std::to_string(rng.below(3));
    docs[1] = docs[0];
    const auto e = random_matrix(rng, n, d);
    const BTConfig cfg{rng.uniform() * 0.01, 1e-8};
    EXPECT_NEAR(paragraph_bt(ParagraphBatch<double>{docs, e}, cfg), oracle_paragraph(docs, e, cfg.delta, cfg.eps),
                1e-10);
  }
}

TEST(ParagraphBT, NeedsAContributingDocument) {
  Rng rng(9);
  EXPECT_THROW(paragraph_bt(ParagraphBatch<double>{{"a", "b"}, random_matrix(rng, 2, 2)}), LossError);
  EXPECT_THROW(paragraph_bt(ParagraphBatch<double>{{"a"}, random_matrix(rng, 2, 2)}), LossError);
}

TEST(CrossEntropy, UniformAndConfident) {
  EXPECT_NEAR(cross_entropy(MatrixXr::Zero(3, 8), TokenIds{4, 5, 7}), std::log(8.0), 1e-15);
  MatrixXr l = MatrixXr::Zero(1, 6);
  l(0, 4) = 100;
  EXPECT_NEAR(cross_entropy(l, TokenIds{4}), 0.0, 1e-40);
}

// Column 0 is the PAD id, so the three-class hand example lives in columns
// 1..3 with an impossible PAD column.
TEST(CrossEntropy, HandExample) {
  const double ninf = -std::numeric_limits<double>::infinity();
  const auto l = mat({{ninf, 1, 0, 0}, {ninf, 0, 2, 0}});
  const double p0 = std::log(std::exp(1.0) + 2.0) - 1.0;
  const double p1 = std::log(std::exp(2.0) + 2.0) - 2.0;
  EXPECT_NEAR(cross_entropy(l, TokenIds{1, 2}), (p0 + p1) / 2, 1e-15);
}

TEST(CrossEntropy, PadPositionsAreMasked) {
  const auto l = mat({{1, 0, 0}, {0, 2, 0}});
  EXPECT_NEAR(cross_entropy(l, TokenIds{kPadId, 1}), std::log(std::exp(2.0) + 2.0) - 2.0, 1e-15);
  EXPECT_THROW(cross_entropy(l, TokenIds{kPadId, kPadId}), LossError);
  MatrixXr grad;
  cross_entropy_terms(l, TokenIds{kPadId, 1}, &grad, 0.5);
  EXPECT_TRUE(grad.row(0).isZero());
  EXPECT_NEAR(grad.row(1).sum(), 0.0, 1e-15);
}

TEST(CrossEntropy, Errors) {
  EXPECT_THROW(cross_entropy(MatrixXr::Zero(2, 3), TokenIds{1}), LossError);
  EXPECT_THROW(cross_entropy(MatrixXr::Zero(1, 3), TokenIds{3}), LossError);
  EXPECT_THROW(cross_entropy(MatrixXr::Zero(1, 3), TokenIds{-1}), LossError);
}

TEST(CrossEntropy, NonNegativeOnRandomLogits) {
  Rng rng(10);
  for (int i = 0; i < 50; ++i) {
    const auto l = random_matrix(rng, 3, 5) * 4.0;
    EXPECT_GE(cross_entropy(l, TokenIds{1, 2, 4}), 0.0);
  }
}

TEST(TotalLoss, HandExamples) {
  EXPECT_EQ(total_loss(1.3, 5.0, 7.0, LossConfig{0.0, BTLevel::kBoth}), 1.3);
  EXPECT_NEAR(total_loss(1.0, 2.0, 99.0, LossConfig{0.01, BTLevel::kSentence}), 1.02, 1e-15);
  EXPECT_NEAR(total_loss(0.0, 2.0, 4.0, LossConfig{0.5, BTLevel::kBoth}), 1.5, 1e-15);
  EXPECT_NEAR(total_loss(1.0, 2.0, 4.0, LossConfig{0.5, BTLevel::kParagraph}), 3.0, 1e-15);
}

TEST(LossConfig, Validation) {
  EXPECT_THROW((LossConfig{-1.0, BTLevel::kSentence}).validate(), LossError);
  EXPECT_THROW((BTConfig{-1e-4, 1e-8}).validate(), LossError);
  EXPECT_THROW((BTConfig{1e-4, 0.0}).validate(), LossError);
  EXPECT_EQ(parse_bt_level("both"), BTLevel::kBoth);
  EXPECT_EQ(to_string(BTLevel::kParagraph), "paragraph");
  EXPECT_THROW(parse_bt_level("doc"), LossError);
}
