#pragma once

#include "btts/corpus.hpp"
#include "btts/model.hpp"
#include "btts/types.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace btts {

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kUnknownLabel = "unknown";

struct EvalExample {
  std::string input_text;
  std::string output_text;
  std::string target_style;
  std::optional<std::string> reference;
};

struct Prediction {
  std::string label = kUnknownLabel;
  /// The classifier failed to produce a usable answer; counted as incorrect.
  bool flagged = false;
  std::string detail;
};

class StyleClassifier {
 public:
  virtual ~StyleClassifier() = default;
  virtual Prediction classify(const std::string& text) = 0;
  /// Defaults to one classify() call per text, in order.
  virtual std::vector<Prediction> classify_all(std::span<const std::string> texts);
};

/// Labels text by which style's marker lexicon has the larger token overlap;
/// ties (including no markers at all) give "unknown".
class RuleClassifier final : public StyleClassifier {
 public:
  explicit RuleClassifier(std::vector<StyleSpec> styles);
  Prediction classify(const std::string& text) override;
  std::vector<std::string> labels() const;

 private:
  std::vector<StyleSpec> styles_;
};

RuleClassifier rule_classifier(const SynthSpec& spec);

struct ExampleRecord {
  std::string predicted;
  bool correct = false;
  bool flagged = false;
};

struct EvalReport {
  double accuracy = 0.0;
  double bleu = 0.0;
  double g = 0.0;
  std::size_t n = 0;
  std::vector<ExampleRecord> per_example;

  std::string to_json() const;
};

/// Percentage of outputs whose predicted style equals the target style.
double accuracy(std::span<const EvalExample> examples, StyleClassifier& classifier,
                std::vector<ExampleRecord>* records = nullptr);

/// Tokens for BLEU: every ASCII punctuation character becomes its own token,
/// then the text is split on whitespace. Case is preserved.
std::vector<std::string> bleu_tokenize(std::string_view text);

inline constexpr double kBleuFloor = 1e-16;

/// Corpus BLEU-4 in [0, 100]: clipped n-gram precisions (n = 1..4) combined by
/// geometric mean with each precision floored at 1e-16, times the brevity
/// penalty exp(1 - r/c) when c < r.
double bleu(std::span<const std::string> hypotheses, std::span<const std::string> references);

double g_score(double accuracy, double bleu);

/// Accuracy from the classifier, BLEU of each output against its input.
EvalReport evaluate(std::span<const EvalExample> examples, StyleClassifier& classifier);

// ---------------------------------------------------------------------------
// Linear probe

struct LabeledVector {
  VectorXr vector;
  std::string label;
};

/// Multinomial logistic regression on standardized features, trained by
/// full-batch gradient descent.
class LinearProbe {
 public:
  struct Options {
    int iterations = 300;
    double learning_rate = 0.5;
    double l2 = 1e-4;
  };

  static LinearProbe fit(std::span<const LabeledVector> data, const Options& options);
  static LinearProbe fit(std::span<const LabeledVector> data) { return fit(data, Options{}); }
  std::string predict(const VectorXr& x) const;
  const std::vector<std::string>& labels() const { return labels_; }

 private:
  std::vector<std::string> labels_;
  RowVectorXr mean_, scale_;
  MatrixXr weights_;  // D x K
  RowVectorXr bias_;
};

struct ProbeResult {
  double accuracy = 0.0;  // percent, held-out
  std::size_t n_train = 0;
  std::size_t n_test = 0;
};

/// Stratified seeded split; at least two labels with four examples each.
ProbeResult linear_probe(std::span<const LabeledVector> data, double train_frac, std::uint64_t seed);

/// Classifies texts by extractor style vector with a probe trained on labeled
/// sentences.
class ProbeClassifier final : public StyleClassifier {
 public:
  ProbeClassifier(const ModelParams<double>& params, const Vocab& vocab, std::span<const Sentence> labeled);
  Prediction classify(const std::string& text) override;

 private:
  const ModelParams<double>& params_;
  const Vocab& vocab_;
  LinearProbe probe_;
};

/// Extractor style vector of a sentence, clipped to the model's max_len.
StyleVector sentence_style(const ModelParams<double>& params, const Vocab& vocab, std::string_view text);

/// CSV with header id,style,dim_0..dim_{D-1}; id is doc_id:sent_id and values
/// use 9 significant digits.
std::string export_embeddings(const ModelParams<double>& params, const Vocab& vocab,
                              std::span<const Sentence> sentences);

/// Quotes a CSV field when it contains a comma, quote or newline.
std::string csv_field(std::string_view value);

}  // namespace btts
