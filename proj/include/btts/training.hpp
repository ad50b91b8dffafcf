#pragma once

#include "btts/corpus.hpp"
#include "btts/losses.hpp"
#include "btts/model.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace btts {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double lr = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 16;
  int steps = 1000;
  std::uint64_t seed = 0;
  LossConfig loss;
  BTConfig bt;
  CorruptionConfig corruption;
  int checkpoint_every = 1000;
  /// Consecutive pairs drawn from one document into a batch; gives the
  /// paragraph-level loss several same-document sentences to compare.
  int group_size = 4;

  void validate() const;
};

struct TrainMetrics {
  int step = 0;
  double ce = 0.0;
  double bt_sentence = 0.0;
  double bt_paragraph = 0.0;
  double total = 0.0;
  double grad_norm = 0.0;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const TrainMetrics& m);

/// One context/target pair after tokenization and target corruption.
struct EncodedPair {
  std::string doc_id;
  std::size_t context_sent = 0;
  std::size_t target_sent = 0;
  TokenIds context;         // extractor input
  TokenIds target;          // uncorrupted target (extractor input for BT)
  TokenIds encoder_input;   // corrupted target
  TokenIds decoder_input;   // BOS [rate tokens] target
  TokenIds decoder_target;  // [PAD PAD] target EOS
};

/// Tokenizes a pair, corrupts the target with `corruption_seed` and builds the
/// teacher-forcing sequences. Sequences are clipped to the model's max_len.
EncodedPair encode_pair(const ContextTargetPair& pair, const Vocab& vocab, const CorruptionConfig& corruption,
                        std::uint64_t corruption_seed, int max_len);

struct LossBreakdown {
  double ce = 0.0;
  double bt_sentence = 0.0;
  double bt_paragraph = 0.0;
  double total = 0.0;
};

/// Full objective on one batch:
///   memory_k = enc(corrupted target_k) + ext(context_k)
///   ce       = token-mean cross-entropy of dec(memory_k) against target_k
///   bt_sentence  = BT(ext(context), ext(target)) over the batch
///   bt_paragraph = paragraph BT over the distinct sentences of the batch
///   total    = ce + lambda * bt_active
/// When `grad` is non-null it receives dtotal/dparams (overwritten).
LossBreakdown evaluate_loss(const ModelParams<double>& params, std::span<const EncodedPair> batch,
                            const LossConfig& loss, const BTConfig& bt, ModelParams<double>* grad,
                            Dropout* dropout = nullptr);

struct AdamState {
  ModelParams<double> m;
  ModelParams<double> v;
  long step = 0;

  static AdamState for_model(const ModelParams<double>& params);
};

double gradient_norm(const ModelParams<double>& grad);

/// Corrupts and encodes `batch` with per-example seeds derived from
/// (cfg.seed, step, index), evaluates the objective, applies one Adam update
/// and rounds the weights to storage precision.
TrainMetrics train_step(ModelParams<double>& params, AdamState& adam, const Vocab& vocab,
                        std::span<const ContextTargetPair> batch, const TrainConfig& cfg, int step);

/// Seeded epoch ordering: pairs are cut into runs of `group_size` consecutive
/// same-document pairs, the runs are shuffled, and batches are taken in order.
class BatchSampler {
 public:
  BatchSampler(std::span<const ContextTargetPair> pairs, int batch_size, int group_size, std::uint64_t seed);
  std::vector<ContextTargetPair> next();

 private:
  void refill();
  std::vector<ContextTargetPair> pairs_;
  std::vector<std::vector<std::size_t>> runs_;
  std::vector<std::size_t> queue_;
  std::size_t head_ = 0;
  int batch_size_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
};

struct TrainOptions {
  std::filesystem::path checkpoint_path;  // empty: no checkpoints
  std::function<void(const TrainMetrics&)> on_metrics;
};

struct TrainResult {
  ModelParams<double> params;
  std::vector<TrainMetrics> metrics;
};

TrainResult train(ModelParams<double> params, const Vocab& vocab, std::span<const ContextTargetPair> pairs,
                  const TrainConfig& cfg, const TrainOptions& options = {});

// ---------------------------------------------------------------------------
// Finite-difference gradient verification

struct GradCheckOptions {
  double epsilon = 1e-4;
  double tolerance = 1e-3;
  int coordinates = 240;  // split evenly over embedding, encoder, decoder, extractor
  std::uint64_t seed = 0;
  /// Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
  double abs_floor = 1e-6;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  int n_checked = 0;
  std::string worst_tensor;
  /// Coordinates checked per tower: embedding, encoder, decoder, extractor.
  std::array<int, 4> per_tower{};
  /// Largest |analytic gradient| seen per tower.
  std::array<double, 4> max_abs_grad{};
  bool passed = false;
};

using ScalarLoss = std::function<double(const ModelParams<double>&)>;

/// Central differences of `loss` at sampled coordinates against `analytic`.
GradCheckReport check_gradients(const ModelParams<double>& params, const ScalarLoss& loss,
                                const ModelParams<double>& analytic, const GradCheckOptions& options);

/// Gradient check of the full training objective on a fixed, already-encoded batch.
GradCheckReport grad_check(const ModelParams<double>& params, std::span<const EncodedPair> batch,
                           const LossConfig& loss, const BTConfig& bt, const GradCheckOptions& options);

// ---------------------------------------------------------------------------
// lambda/delta sensitivity sweep

struct SweepRow {
  double lambda = 0.0;
  double delta = 0.0;
  double final_ce = 0.0;
  double final_bt = 0.0;
  double probe_acc = 0.0;
};

struct SweepOptions {
  double probe_train_frac = 0.7;
  std::size_t probe_max_sentences = 1000;
  int workers = 1;
};

std::vector<double> default_lambda_grid();
std::vector<double> default_delta_grid();

/// Trains one model per (lambda, delta) cell from the same initial seed and
/// scores the extractor's style space with the linear probe on the corpus's
/// style labels.
std::vector<SweepRow> sweep(std::span<const Sentence> corpus, const Vocab& vocab, const ModelConfig& model_cfg,
                            const TrainConfig& base, std::span<const double> lambda_grid,
                            std::span<const double> delta_grid, const SweepOptions& options = {});

std::string sweep_csv(std::span<const SweepRow> rows);

/// Held-out linear-probe accuracy (percent) of extractor style vectors against
/// sentence style labels.
double style_probe_accuracy(const ModelParams<double>& params, const Vocab& vocab,
                            std::span<const Sentence> sentences, double train_frac, std::uint64_t seed,
                            std::size_t max_sentences = 0);

}  // namespace btts
