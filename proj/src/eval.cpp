#include "btts/eval.hpp"

#include "btts/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

namespace btts {

std::vector<Prediction> StyleClassifier::classify_all(std::span<const std::string> texts) {
  std::vector<Prediction> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(classify(t));
  return out;
}

// ---------------------------------------------------------------------------
// Rule classifier

RuleClassifier::RuleClassifier(std::vector<StyleSpec> styles) : styles_(std::move(styles)) {
  std::map<std::string, std::string> owner;
  for (const auto& st : styles_)
    for (const auto& m : st.markers) {
      auto [it, fresh] = owner.emplace(m, st.label);
      if (!fresh && it->second != st.label) throw EvalError("rule classifier: marker '" + m + "' is not disjoint");
    }
}

Prediction RuleClassifier::classify(const std::string& text) {
  std::vector<std::size_t> counts(styles_.size(), 0);
  for (const auto& tok : split_whitespace(text))
    for (std::size_t s = 0; s < styles_.size(); ++s)
      if (std::find(styles_[s].markers.begin(), styles_[s].markers.end(), tok) != styles_[s].markers.end())
        ++counts[s];
  const auto best = std::max_element(counts.begin(), counts.end());
  if (*best == 0 || std::count(counts.begin(), counts.end(), *best) > 1) return Prediction{kUnknownLabel, false, {}};
  return Prediction{styles_[static_cast<std::size_t>(best - counts.begin())].label, false, {}};
}

std::vector<std::string> RuleClassifier::labels() const {
  std::vector<std::string> out;
  for (const auto& st : styles_) out.push_back(st.label);
  return out;
}

RuleClassifier rule_classifier(const SynthSpec& spec) { return RuleClassifier(spec.styles); }

// ---------------------------------------------------------------------------
// Metrics

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["accuracy"] = accuracy;
  j["bleu"] = bleu;
  j["g"] = g;
  j["n"] = n;
  j["per_example"] = nlohmann::ordered_json::array();
  for (const auto& r : per_example) {
    nlohmann::ordered_json e;
    e["predicted"] = r.predicted;
    e["correct"] = r.correct;
    if (r.flagged) e["flagged"] = true;
    j["per_example"].push_back(e);
  }
  return j.dump(2) + "\n";
}

double accuracy(std::span<const EvalExample> examples, StyleClassifier& classifier,
                std::vector<ExampleRecord>* records) {
  if (examples.empty()) throw EvalError("accuracy: no examples");
  std::vector<std::string> outputs;
  outputs.reserve(examples.size());
  for (const auto& e : examples) outputs.push_back(e.output_text);
  const auto predictions = classifier.classify_all(outputs);
  std::size_t correct = 0;
  if (records) records->clear();
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& p = predictions[i];
    const bool ok = !p.flagged && p.label == examples[i].target_style;
    correct += ok ? 1 : 0;
    if (records) records->push_back({p.label, ok, p.flagged});
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(examples.size());
}

std::vector<std::string> bleu_tokenize(std::string_view text) {
  std::string spaced;
  spaced.reserve(text.size() * 2);
  for (char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (u < 128 && std::ispunct(u)) {
      spaced += ' ';
      spaced += c;
      spaced += ' ';
    } else {
      spaced += c;
    }
  }
  return split_whitespace(spaced);
}

double bleu(std::span<const std::string> hypotheses, std::span<const std::string> references) {
  if (hypotheses.size() != references.size()) throw EvalError("bleu: hypothesis/reference count mismatch");
  if (hypotheses.empty()) throw EvalError("bleu: empty corpus");
  constexpr int kMaxOrder = 4;
  std::array<double, kMaxOrder> matches{}, totals{};
  double hyp_len = 0, ref_len = 0;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    const auto hyp = bleu_tokenize(hypotheses[s]);
    const auto ref = bleu_tokenize(references[s]);
    hyp_len += static_cast<double>(hyp.size());
    ref_len += static_cast<double>(ref.size());
    for (int n = 1; n <= kMaxOrder; ++n) {
      std::map<std::vector<std::string>, int> ref_counts;
      for (std::size_t i = 0; i + n <= ref.size(); ++i) ++ref_counts[{ref.begin() + i, ref.begin() + i + n}];
      std::map<std::vector<std::string>, int> hyp_counts;
      for (std::size_t i = 0; i + n <= hyp.size(); ++i) ++hyp_counts[{hyp.begin() + i, hyp.begin() + i + n}];
      for (const auto& [gram, count] : hyp_counts) {
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) matches[n - 1] += std::min(count, it->second);
        totals[n - 1] += count;
      }
    }
  }
  if (hyp_len == 0) return 0.0;
  double log_sum = 0.0;
  for (int n = 0; n < kMaxOrder; ++n) {
    const double p = totals[n] > 0 ? matches[n] / totals[n] : 0.0;
    log_sum += std::log(std::max(p, kBleuFloor));
  }
  const double bp = hyp_len < ref_len ? std::exp(1.0 - ref_len / hyp_len) : 1.0;
  return 100.0 * bp * std::exp(log_sum / kMaxOrder);
}

double g_score(double accuracy, double bleu) { return std::sqrt(accuracy * bleu); }

EvalReport evaluate(std::span<const EvalExample> examples, StyleClassifier& classifier) {
  EvalReport report;
  report.n = examples.size();
  report.accuracy = accuracy(examples, classifier, &report.per_example);
  std::vector<std::string> hyps, refs;
  for (const auto& e : examples) {
    hyps.push_back(e.output_text);
    refs.push_back(e.input_text);
  }
  report.bleu = bleu(hyps, refs);
  report.g = g_score(report.accuracy, report.bleu);
  return report;
}

// ---------------------------------------------------------------------------
// Linear probe

LinearProbe LinearProbe::fit(std::span<const LabeledVector> data, const Options& options) {
  if (data.empty()) throw EvalError("linear probe: no training data");
  std::set<std::string> label_set;
  for (const auto& d : data) label_set.insert(d.label);
  LinearProbe probe;
  probe.labels_.assign(label_set.begin(), label_set.end());
  const auto n = static_cast<Eigen::Index>(data.size());
  const auto dim = data.front().vector.size();
  const auto k = static_cast<Eigen::Index>(probe.labels_.size());

  MatrixXr x(n, dim);
  MatrixXr y = MatrixXr::Zero(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& d = data[static_cast<std::size_t>(i)];
    if (d.vector.size() != dim) throw EvalError("linear probe: inconsistent vector widths");
    x.row(i) = d.vector.transpose();
    const auto pos = std::lower_bound(probe.labels_.begin(), probe.labels_.end(), d.label) - probe.labels_.begin();
    y(i, pos) = 1.0;
  }
  probe.mean_ = x.colwise().mean();
  x.rowwise() -= probe.mean_;
  probe.scale_ = ((x.array().square().colwise().sum() / static_cast<double>(n)).sqrt()).max(1e-8);
  x = x.array().rowwise() / probe.scale_.array();

  probe.weights_ = MatrixXr::Zero(dim, k);
  probe.bias_ = RowVectorXr::Zero(k);
  for (int it = 0; it < options.iterations; ++it) {
    MatrixXr logits = x * probe.weights_;
    logits.rowwise() += probe.bias_;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double mx = logits.row(i).maxCoeff();
      logits.row(i) = (logits.row(i).array() - mx).exp();
      logits.row(i) /= logits.row(i).sum();
    }
    const MatrixXr residual = (logits - y) / static_cast<double>(n);
    probe.weights_ -= options.learning_rate * (x.transpose() * residual + options.l2 * probe.weights_);
    probe.bias_ -= options.learning_rate * residual.colwise().sum();
  }
  return probe;
}

std::string LinearProbe::predict(const VectorXr& v) const {
  RowVectorXr x = (v.transpose() - mean_).array() / scale_.array();
  RowVectorXr logits = x * weights_ + bias_;
  Eigen::Index best = 0;
  logits.maxCoeff(&best);
  return labels_[static_cast<std::size_t>(best)];
}

ProbeResult linear_probe(std::span<const LabeledVector> data, double train_frac, std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0)) throw EvalError("linear probe: train_frac must be in (0, 1)");
  std::map<std::string, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < data.size(); ++i) by_label[data[i].label].push_back(i);
  if (by_label.size() < 2) throw EvalError("linear probe: need at least two labels");
  for (const auto& [label, idx] : by_label)
    if (idx.size() < 4) throw EvalError("linear probe: label '" + label + "' has fewer than four examples");

  Rng rng(seed);
  std::vector<LabeledVector> train, test;
  for (auto& [label, idx] : by_label) {
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    auto n_train = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(idx.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, idx.size() - 1);
    for (std::size_t i = 0; i < idx.size(); ++i) (i < n_train ? train : test).push_back(data[idx[i]]);
  }
  const auto probe = LinearProbe::fit(train);
  std::size_t correct = 0;
  for (const auto& t : test) correct += probe.predict(t.vector) == t.label ? 1 : 0;
  return {100.0 * static_cast<double>(correct) / static_cast<double>(test.size()), train.size(), test.size()};
}

StyleVector sentence_style(const ModelParams<double>& params, const Vocab& vocab, std::string_view text) {
  auto ids = encode(vocab, text);
  if (ids.empty()) throw EvalError("sentence has no tokens");
  if (ids.size() > static_cast<std::size_t>(params.config.max_len)) ids.resize(static_cast<std::size_t>(params.config.max_len));
  return extract_style(params, std::span<const TokenId>(ids));
}

ProbeClassifier::ProbeClassifier(const ModelParams<double>& params, const Vocab& vocab,
                                 std::span<const Sentence> labeled)
    : params_(params), vocab_(vocab) {
  std::vector<LabeledVector> data;
  for (const auto& s : labeled)
    if (s.style) data.push_back({sentence_style(params, vocab, s.text), *s.style});
  if (data.empty()) throw EvalError("probe classifier: no labeled sentences");
  probe_ = LinearProbe::fit(data);
}

Prediction ProbeClassifier::classify(const std::string& text) {
  if (split_whitespace(text).empty()) return Prediction{kUnknownLabel, true, "empty output"};
  return Prediction{probe_.predict(sentence_style(params_, vocab_, text)), false, {}};
}

std::string csv_field(std::string_view value) {
  if (value.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(value);
  std::string out = "\"";
  for (char c : value) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string export_embeddings(const ModelParams<double>& params, const Vocab& vocab,
                              std::span<const Sentence> sentences) {
  const auto dim = params.config.style_dim;
  std::string out = "id,style";
  for (int d = 0; d < dim; ++d) out += ",dim_" + std::to_string(d);
  out += '\n';
  char buf[32];
  for (const auto& s : sentences) {
    const auto v = sentence_style(params, vocab, s.text);
    out += csv_field(s.doc_id + ":" + std::to_string(s.sent_id));
    out += ',';
    out += csv_field(s.style.value_or(""));
    for (Eigen::Index d = 0; d < v.size(); ++d) {
      std::snprintf(buf, sizeof buf, "%.9g", v(d));
      out += ',';
      out += buf;
    }
    out += '\n';
  }
  return out;
}

}  // namespace btts
