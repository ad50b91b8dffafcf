#include "btts/losses.hpp"

#include <cmath>

namespace btts {

void BTConfig::validate() const {
  if (!(delta >= 0.0)) throw LossError("bt config: delta must be non-negative");
  if (!(eps > 0.0)) throw LossError("bt config: eps must be positive");
}

BTLevel parse_bt_level(std::string_view name) {
  if (name == "sentence") return BTLevel::kSentence;
  if (name == "paragraph") return BTLevel::kParagraph;
  if (name == "both") return BTLevel::kBoth;
  throw LossError("unknown bt level '" + std::string(name) + "' (expected sentence, paragraph or both)");
}

std::string_view to_string(BTLevel level) {
  switch (level) {
    case BTLevel::kSentence:
      return "sentence";
    case BTLevel::kParagraph:
      return "paragraph";
    case BTLevel::kBoth:
      return "both";
  }
  return "sentence";
}

void LossConfig::validate() const {
  if (!(lambda >= 0.0)) throw LossError("loss config: lambda must be non-negative");
}

CrossEntropyTerms cross_entropy_terms(const MatrixXr& logits, std::span<const TokenId> targets, MatrixXr* grad,
                                      double grad_scale) {
  if (static_cast<std::size_t>(logits.rows()) != targets.size()) {
    throw LossError("cross_entropy: " + std::to_string(logits.rows()) + " logit rows for " +
                    std::to_string(targets.size()) + " targets");
  }
  const auto vocab = logits.cols();
  if (grad) grad->setZero(logits.rows(), vocab);
  CrossEntropyTerms out;
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    const TokenId target = targets[static_cast<std::size_t>(t)];
    if (target < 0 || target >= vocab) {
      throw LossError("cross_entropy: target id " + std::to_string(target) + " outside vocabulary of " +
                      std::to_string(vocab));
    }
    if (target == kPadId) continue;
    const double mx = logits.row(t).maxCoeff();
    const double lse = mx + std::log((logits.row(t).array() - mx).exp().sum());
    out.sum += lse - logits(t, target);
    ++out.count;
    if (grad) {
      grad->row(t) = (logits.row(t).array() - lse).exp() * grad_scale;
      (*grad)(t, target) -= grad_scale;
    }
  }
  return out;
}

double cross_entropy(const MatrixXr& logits, std::span<const TokenId> targets) {
  const auto terms = cross_entropy_terms(logits, targets);
  if (terms.count == 0) throw LossError("cross_entropy: every target is PAD");
  return terms.sum / static_cast<double>(terms.count);
}

double bt_active(double bt_sentence, double bt_paragraph, BTLevel level) {
  switch (level) {
    case BTLevel::kSentence:
      return bt_sentence;
    case BTLevel::kParagraph:
      return bt_paragraph;
    case BTLevel::kBoth:
      return 0.5 * (bt_sentence + bt_paragraph);
  }
  return bt_sentence;
}

double total_loss(double ce, double bt_sentence, double bt_paragraph, const LossConfig& cfg) {
  return ce + cfg.lambda * bt_active(bt_sentence, bt_paragraph, cfg.bt_level);
}

}  // namespace btts
