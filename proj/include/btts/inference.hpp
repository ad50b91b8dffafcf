#pragma once

#include "btts/corpus.hpp"
#include "btts/decoding.hpp"
#include "btts/eval.hpp"
#include "btts/model.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace btts {

class InferenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExemplarSet {
  std::string label;
  std::vector<std::string> sentences;
};

/// One sentence per line; blank lines are skipped.
ExemplarSet load_exemplars(const std::filesystem::path& path, std::string label);

struct TransferConfig {
  double beta = 4.0;
  DecodeConfig decode;

  void validate() const;
};

/// Mean of the per-sentence extractor style vectors.
StyleVector mean_style(const ModelParams<double>& params, const Vocab& vocab, const ExemplarSet& ex);

/// a_i + beta * (a_tgt - a_src)
template <typename DI, typename DS, typename DT>
VectorXr targeted_restyle_vector(const Eigen::MatrixBase<DI>& a_i, const Eigen::MatrixBase<DS>& a_src,
                                 const Eigen::MatrixBase<DT>& a_tgt, double beta) {
  if (a_i.size() != a_src.size() || a_i.size() != a_tgt.size()) {
    throw InferenceError("targeted_restyle_vector: length mismatch (" + std::to_string(a_i.size()) + ", " +
                         std::to_string(a_src.size()) + ", " + std::to_string(a_tgt.size()) + ")");
  }
  return (a_i + beta * (a_tgt - a_src)).eval();
}

struct TransferResult {
  std::string input_text;
  std::string output_text;
  double beta = 0.0;
  StyleVector a_i;
  StyleVector a_diff;
};

/// Decoder prefix used at inference: the zero-corruption rate tokens when the
/// vocabulary has them, otherwise empty.
TokenIds inference_prefix(const Vocab& vocab);

/// Transfer with precomputed exemplar means.
TransferResult transfer(const ModelParams<double>& params, const Vocab& vocab, const std::string& input_text,
                        const StyleVector& a_src, const StyleVector& a_tgt, const TransferConfig& cfg);

TransferResult transfer(const ModelParams<double>& params, const Vocab& vocab, const std::string& input_text,
                        const ExemplarSet& src, const ExemplarSet& tgt, const TransferConfig& cfg);

/// JSONL line {input, output, beta, a_i, a_diff}.
std::string transfer_jsonl(const TransferResult& r);

struct TransferRecord {
  std::string input;
  std::string output;
};

/// Reads the input/output fields of a transfer JSONL file.
std::vector<TransferRecord> parse_transfer_jsonl(std::string_view content);

struct ShotRow {
  std::size_t size = 0;
  double accuracy = 0.0;
  double content = 0.0;
  double g = 0.0;
  std::vector<TransferResult> results;
};

std::vector<std::size_t> default_shot_sizes();

/// For each k: k exemplars per side sampled without replacement (seeded per k),
/// transfer of every input toward `target_label`, scored with `classifier` and
/// BLEU against the input. k = 0 uses zero vectors for both sides.
std::vector<ShotRow> shot_size_sweep(const ModelParams<double>& params, const Vocab& vocab,
                                     std::span<const std::string> inputs, const ExemplarSet& src_pool,
                                     const ExemplarSet& tgt_pool, std::span<const std::size_t> sizes,
                                     std::uint64_t seed, const TransferConfig& cfg, StyleClassifier& classifier);

std::string shots_csv(std::span<const ShotRow> rows);

}  // namespace btts
