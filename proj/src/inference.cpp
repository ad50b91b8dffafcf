#include "btts/inference.hpp"

#include "btts/io.hpp"
#include "btts/rng.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <sstream>

namespace btts {

ExemplarSet load_exemplars(const std::filesystem::path& path, std::string label) {
  ExemplarSet ex{std::move(label), {}};
  std::istringstream in(read_file(path));
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!split_whitespace(line).empty()) ex.sentences.push_back(line);
  }
  if (ex.sentences.empty()) throw InferenceError("exemplar file " + path.string() + " has no sentences");
  return ex;
}

void TransferConfig::validate() const {
  if (!std::isfinite(beta)) throw InferenceError("transfer config: beta must be finite");
  if (decode.beam_width < 1) throw InferenceError("transfer config: beam_width must be positive");
  if (decode.max_new_tokens < 1) throw InferenceError("transfer config: max_new_tokens must be positive");
}

StyleVector mean_style(const ModelParams<double>& params, const Vocab& vocab, const ExemplarSet& ex) {
  if (ex.sentences.empty()) throw InferenceError("exemplar set '" + ex.label + "' is empty");
  StyleVector sum = StyleVector::Zero(params.config.style_dim);
  for (const auto& s : ex.sentences) sum += sentence_style(params, vocab, s);
  return sum / static_cast<double>(ex.sentences.size());
}

TokenIds inference_prefix(const Vocab& vocab) {
  if (!vocab.has_rate_tokens()) return {};
  return {vocab.drop_rate_token(0), vocab.replace_rate_token(0)};
}

TransferResult transfer(const ModelParams<double>& params, const Vocab& vocab, const std::string& input_text,
                        const StyleVector& a_src, const StyleVector& a_tgt, const TransferConfig& cfg) {
  cfg.validate();
  auto ids = encode(vocab, input_text);
  if (ids.empty()) throw InferenceError("transfer input has no tokens");
  if (ids.size() > static_cast<std::size_t>(params.config.max_len)) ids.resize(static_cast<std::size_t>(params.config.max_len));
  TransferResult r;
  r.input_text = input_text;
  r.beta = cfg.beta;
  r.a_i = extract_style(params, std::span<const TokenId>(ids));
  r.a_diff = targeted_restyle_vector(r.a_i, a_src, a_tgt, cfg.beta);
  const MatrixXr memory = conditioned_memory(params, encode_seq(params, std::span<const TokenId>(ids)), r.a_diff);
  DecodeConfig dc = cfg.decode;
  if (dc.prefix.empty()) dc.prefix = inference_prefix(vocab);
  r.output_text = decode(vocab, generate(params, memory, dc));
  return r;
}

TransferResult transfer(const ModelParams<double>& params, const Vocab& vocab, const std::string& input_text,
                        const ExemplarSet& src, const ExemplarSet& tgt, const TransferConfig& cfg) {
  return transfer(params, vocab, input_text, mean_style(params, vocab, src), mean_style(params, vocab, tgt), cfg);
}

std::string transfer_jsonl(const TransferResult& r) {
  nlohmann::ordered_json j;
  j["input"] = r.input_text;
  j["output"] = r.output_text;
  j["beta"] = r.beta;
  j["a_i"] = std::vector<double>(r.a_i.data(), r.a_i.data() + r.a_i.size());
  j["a_diff"] = std::vector<double>(r.a_diff.data(), r.a_diff.data() + r.a_diff.size());
  return j.dump() + "\n";
}

std::vector<TransferRecord> parse_transfer_jsonl(std::string_view content) {
  std::vector<TransferRecord> out;
  std::istringstream in{std::string(content)};
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (split_whitespace(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("input").get<std::string>(), j.at("output").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw InferenceError("transfers line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (out.empty()) throw InferenceError("transfers file has no records");
  return out;
}

std::vector<std::size_t> default_shot_sizes() { return {30, 16, 8, 4, 2, 1, 0}; }

namespace {

ExemplarSet sample(const ExemplarSet& pool, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(pool.sentences.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  ExemplarSet out{pool.label, {}};
  for (std::size_t i = 0; i < k; ++i) {
    std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
    out.sentences.push_back(pool.sentences[idx[i]]);
  }
  return out;
}

}  // namespace

std::vector<ShotRow> shot_size_sweep(const ModelParams<double>& params, const Vocab& vocab,
                                     std::span<const std::string> inputs, const ExemplarSet& src_pool,
                                     const ExemplarSet& tgt_pool, std::span<const std::size_t> sizes,
                                     std::uint64_t seed, const TransferConfig& cfg, StyleClassifier& classifier) {
  if (inputs.empty()) throw InferenceError("shot sweep: no inputs");
  for (auto k : sizes) {
    if (k > src_pool.sentences.size() || k > tgt_pool.sentences.size()) {
      throw InferenceError("shot size " + std::to_string(k) + " exceeds exemplar pool (" +
                           std::to_string(src_pool.sentences.size()) + " source, " +
                           std::to_string(tgt_pool.sentences.size()) + " target)");
    }
  }
  std::vector<ShotRow> rows;
  for (auto k : sizes) {
    ShotRow row;
    row.size = k;
    StyleVector a_src = StyleVector::Zero(params.config.style_dim);
    StyleVector a_tgt = a_src;
    if (k > 0) {
      Rng rng(derive_seed(seed, {k}));
      a_src = mean_style(params, vocab, sample(src_pool, k, rng));
      a_tgt = mean_style(params, vocab, sample(tgt_pool, k, rng));
    }
    std::vector<EvalExample> examples;
    for (const auto& in : inputs) {
      row.results.push_back(transfer(params, vocab, in, a_src, a_tgt, cfg));
      examples.push_back({in, row.results.back().output_text, tgt_pool.label, std::nullopt});
    }
    const auto report = evaluate(examples, classifier);
    row.accuracy = report.accuracy;
    row.content = report.bleu;
    row.g = report.g;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string shots_csv(std::span<const ShotRow> rows) {
  std::string out = "size,accuracy,content,g\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g\n", r.size, r.accuracy, r.content, r.g);
    out += buf;
  }
  return out;
}

}  // namespace btts
