#include "btts/training.hpp"

#include "btts/checkpoint.hpp"
#include "btts/eval.hpp"
#include "btts/rng.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <thread>

namespace btts {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw TrainingError("train config: lr must be positive");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw TrainingError("train config: adam_beta1 must be in [0, 1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw TrainingError("train config: adam_beta2 must be in [0, 1)");
  if (!(adam_eps > 0.0)) throw TrainingError("train config: adam_eps must be positive");
  if (batch_size < 2) throw TrainingError("train config: batch_size must be at least 2");
  if (steps < 0) throw TrainingError("train config: steps must be non-negative");
  if (checkpoint_every < 1) throw TrainingError("train config: checkpoint_every must be positive");
  if (group_size < 1) throw TrainingError("train config: group_size must be positive");
  loss.validate();
  bt.validate();
  corruption.validate();
}

std::string metrics_csv_header() { return "step,ce,bt_sentence,bt_paragraph,total,grad_norm\n"; }

std::string metrics_csv_row(const TrainMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g,%.9g\n", m.step, m.ce, m.bt_sentence, m.bt_paragraph,
                m.total, m.grad_norm);
  return buf;
}

EncodedPair encode_pair(const ContextTargetPair& pair, const Vocab& vocab, const CorruptionConfig& corruption,
                        std::uint64_t corruption_seed, int max_len) {
  EncodedPair out;
  out.doc_id = pair.target.doc_id;
  out.context_sent = pair.context.sent_id;
  out.target_sent = pair.target.sent_id;
  if (corruption.emit_rate_tokens && !vocab.has_rate_tokens())
    throw TrainingError("rate tokens requested but the vocabulary has none");
  const std::size_t prefix_len = corruption.emit_rate_tokens ? 2 : 0;
  if (max_len < static_cast<int>(prefix_len) + 2) throw TrainingError("max_len too small for a training pair");

  out.context = encode(vocab, pair.context.text);
  out.target = encode(vocab, pair.target.text);
  if (out.context.empty() || out.target.empty())
    throw TrainingError("pair " + pair.target.doc_id + ":" + std::to_string(pair.target.sent_id) + " has an empty sentence");
  if (out.context.size() > static_cast<std::size_t>(max_len)) out.context.resize(static_cast<std::size_t>(max_len));
  const auto target_room = static_cast<std::size_t>(max_len) - 1 - prefix_len;
  if (out.target.size() > target_room) out.target.resize(target_room);

  auto noisy = corrupt(out.target, corruption, vocab, corruption_seed);
  out.encoder_input = std::move(noisy.ids);
  out.decoder_input = {kBosId};
  out.decoder_target.assign(prefix_len, kPadId);
  if (corruption.emit_rate_tokens) {
    out.decoder_input.push_back(vocab.drop_rate_token(rate_bucket(noisy.drop_rate)));
    out.decoder_input.push_back(vocab.replace_rate_token(rate_bucket(noisy.replace_rate)));
  }
  out.decoder_input.insert(out.decoder_input.end(), out.target.begin(), out.target.end());
  out.decoder_target.insert(out.decoder_target.end(), out.target.begin(), out.target.end());
  out.decoder_target.push_back(kEosId);
  return out;
}

namespace {

Matrix<double> pooled_backward(const RowVectorXr& d_style, Eigen::Index rows) {
  Matrix<double> d = Matrix<double>::Zero(rows, d_style.size());
  d.rowwise() += d_style / static_cast<double>(rows);
  return d;
}

}  // namespace

LossBreakdown evaluate_loss(const ModelParams<double>& params, std::span<const EncodedPair> batch,
                            const LossConfig& loss, const BTConfig& bt, ModelParams<double>* grad, Dropout* dropout) {
  const auto n = static_cast<Eigen::Index>(batch.size());
  if (n < 2) throw TrainingError("evaluate_loss: batch needs at least two pairs");
  const auto& cfg = params.config;
  const int heads = cfg.n_heads;
  const Eigen::Index d = cfg.d_model;
  if (grad) *grad = zeros_like(params);

  // Extractor over contexts and uncorrupted targets.
  std::vector<EncoderStackCache<double>> ctx_cache(batch.size()), tgt_cache(batch.size());
  MatrixXr zc(n, d), zt(n, d);
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto& ex = batch[static_cast<std::size_t>(k)];
    check_sequence_length(cfg, ex.context.size(), "extractor input");
    check_sequence_length(cfg, ex.target.size(), "extractor input");
    zc.row(k) = encoder_stack_forward<double>(params.extractor, params.embedding, ex.context, heads,
                                              &ctx_cache[static_cast<std::size_t>(k)], dropout)
                    .colwise()
                    .mean();
    zt.row(k) = encoder_stack_forward<double>(params.extractor, params.embedding, ex.target, heads,
                                              &tgt_cache[static_cast<std::size_t>(k)], dropout)
                    .colwise()
                    .mean();
  }

  LossBreakdown out;
  const auto sent = barlow_twins_with_grad(zc, zt, bt);
  out.bt_sentence = sent.value;

  // Paragraph level over the distinct sentences in the batch. Each row refers
  // back to the extractor pass (context or target of pair k) that produced it.
  struct Ref {
    bool is_context;
    Eigen::Index k;
  };
  std::map<std::pair<std::string, std::size_t>, std::size_t> seen;
  std::vector<Ref> refs;
  ParagraphBatch<double> para;
  auto add_ref = [&](const std::string& doc, std::size_t sid, Ref r) {
    if (seen.emplace(std::make_pair(doc, sid), refs.size()).second) {
      refs.push_back(r);
      para.doc_ids.push_back(doc);
    }
  };
  for (Eigen::Index k = 0; k < n; ++k) add_ref(batch[k].doc_id, batch[k].context_sent, {true, k});
  for (Eigen::Index k = 0; k < n; ++k) add_ref(batch[k].doc_id, batch[k].target_sent, {false, k});
  para.embeddings.resize(static_cast<Eigen::Index>(refs.size()), d);
  for (std::size_t r = 0; r < refs.size(); ++r)
    para.embeddings.row(static_cast<Eigen::Index>(r)) = refs[r].is_context ? zc.row(refs[r].k) : zt.row(refs[r].k);
  std::optional<ParagraphGrad<double>> para_grad;
  try {
    para_grad = paragraph_bt_with_grad(para, bt);
    out.bt_paragraph = para_grad->value;
  } catch (const LossError&) {
    if (loss.bt_level != BTLevel::kSentence)
      throw TrainingError("paragraph-level loss needs two sentences of one document in the batch");
  }

  double w_sent = 0.0, w_para = 0.0;
  switch (loss.bt_level) {
    case BTLevel::kSentence:
      w_sent = loss.lambda;
      break;
    case BTLevel::kParagraph:
      w_para = loss.lambda;
      break;
    case BTLevel::kBoth:
      w_sent = w_para = 0.5 * loss.lambda;
      break;
  }

  std::size_t tokens = 0;
  for (const auto& ex : batch)
    for (TokenId t : ex.decoder_target) tokens += t != kPadId ? 1 : 0;
  if (tokens == 0) throw TrainingError("evaluate_loss: no target tokens");
  const double scale = 1.0 / static_cast<double>(tokens);

  LayerNormCache<double> style_cache;
  const MatrixXr zn = layer_norm_forward(params.style_norm, zc, grad ? &style_cache : nullptr);
  MatrixXr d_zn = MatrixXr::Zero(n, d);
  double ce_sum = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto& ex = batch[static_cast<std::size_t>(k)];
    check_sequence_length(cfg, ex.encoder_input.size(), "encoder input");
    check_sequence_length(cfg, ex.decoder_input.size(), "decoder input");
    EncoderStackCache<double> enc_cache;
    DecoderStackCache<double> dec_cache;
    const bool want_cache = grad != nullptr;
    MatrixXr memory = encoder_stack_forward<double>(params.encoder, params.embedding, ex.encoder_input, heads,
                                                    want_cache ? &enc_cache : nullptr, dropout);
    memory.rowwise() += zn.row(k);
    const MatrixXr hidden = decoder_stack_forward<double>(params.decoder, params.embedding, ex.decoder_input, memory,
                                                          heads, want_cache ? &dec_cache : nullptr, dropout);
    const MatrixXr logits = hidden * params.embedding.transpose();
    MatrixXr dlogits;
    const auto terms = cross_entropy_terms(logits, ex.decoder_target, grad ? &dlogits : nullptr, scale);
    ce_sum += terms.sum;
    if (!grad) continue;
    grad->embedding.noalias() += dlogits.transpose() * hidden;
    const MatrixXr dhidden = dlogits * params.embedding;
    const MatrixXr dmemory =
        decoder_stack_backward(params.decoder, dec_cache, dhidden, grad->decoder, grad->embedding, heads);
    encoder_stack_backward(params.encoder, enc_cache, dmemory, grad->encoder, grad->embedding, heads);
    d_zn.row(k) += dmemory.colwise().sum();
  }
  out.ce = ce_sum * scale;
  out.total = total_loss(out.ce, out.bt_sentence, out.bt_paragraph, loss);

  if (grad) {
    MatrixXr d_zc = layer_norm_backward(params.style_norm, style_cache, d_zn, grad->style_norm);
    MatrixXr d_zt = MatrixXr::Zero(n, d);
    if (w_sent != 0.0) {
      d_zc += w_sent * sent.d_a;
      d_zt += w_sent * sent.d_b;
    }
    if (w_para != 0.0 && para_grad) {
      for (std::size_t r = 0; r < refs.size(); ++r) {
        auto row = para_grad->d_embeddings.row(static_cast<Eigen::Index>(r));
        (refs[r].is_context ? d_zc : d_zt).row(refs[r].k) += w_para * row;
      }
    }
    for (Eigen::Index k = 0; k < n; ++k) {
      const auto& ex = batch[static_cast<std::size_t>(k)];
      encoder_stack_backward(params.extractor, ctx_cache[static_cast<std::size_t>(k)],
                             pooled_backward(d_zc.row(k), static_cast<Eigen::Index>(ex.context.size())),
                             grad->extractor, grad->embedding, heads);
      if (d_zt.row(k).isZero(0.0)) continue;
      encoder_stack_backward(params.extractor, tgt_cache[static_cast<std::size_t>(k)],
                             pooled_backward(d_zt.row(k), static_cast<Eigen::Index>(ex.target.size())),
                             grad->extractor, grad->embedding, heads);
    }
  }
  return out;
}

AdamState AdamState::for_model(const ModelParams<double>& params) {
  return AdamState{zeros_like(params), zeros_like(params), 0};
}

namespace {

std::vector<MatrixXr*> tensor_ptrs(ModelParams<double>& p) {
  std::vector<MatrixXr*> out;
  visit_tensors(p, [&](const std::string&, MatrixXr& t) { out.push_back(&t); });
  return out;
}

std::vector<const MatrixXr*> tensor_ptrs(const ModelParams<double>& p) {
  std::vector<const MatrixXr*> out;
  visit_tensors(p, [&](const std::string&, const MatrixXr& t) { out.push_back(&t); });
  return out;
}

void check_finite(double value, const char* metric, int step) {
  if (!std::isfinite(value))
    throw TrainingError(std::string("non-finite ") + metric + " at step " + std::to_string(step));
}

}  // namespace

double gradient_norm(const ModelParams<double>& grad) {
  double sq = 0.0;
  for (const auto* t : tensor_ptrs(grad)) sq += t->squaredNorm();
  return std::sqrt(sq);
}

TrainMetrics train_step(ModelParams<double>& params, AdamState& adam, const Vocab& vocab,
                        std::span<const ContextTargetPair> batch, const TrainConfig& cfg, int step) {
  if (batch.size() < 2) throw TrainingError("train_step: batch needs at least two pairs");
  const auto s = static_cast<std::uint64_t>(step);
  std::vector<EncodedPair> encoded;
  encoded.reserve(batch.size());
  for (std::size_t k = 0; k < batch.size(); ++k)
    encoded.push_back(encode_pair(batch[k], vocab, cfg.corruption, derive_seed(cfg.seed, {s, k}), params.config.max_len));

  Rng dropout_rng(derive_seed(cfg.seed, {s, 0xd209u}));
  Dropout dropout{params.config.dropout, &dropout_rng};
  ModelParams<double> grad;
  const auto lb = evaluate_loss(params, encoded, cfg.loss, cfg.bt, &grad, params.config.dropout > 0 ? &dropout : nullptr);

  TrainMetrics m{step, lb.ce, lb.bt_sentence, lb.bt_paragraph, lb.total, gradient_norm(grad)};
  check_finite(m.ce, "ce", step);
  check_finite(m.bt_sentence, "bt_sentence", step);
  check_finite(m.bt_paragraph, "bt_paragraph", step);
  check_finite(m.total, "total", step);
  check_finite(m.grad_norm, "grad_norm", step);

  ++adam.step;
  const double c1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(adam.step));
  const double c2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(adam.step));
  auto p = tensor_ptrs(params);
  auto g = tensor_ptrs(static_cast<const ModelParams<double>&>(grad));
  auto mm = tensor_ptrs(adam.m);
  auto vv = tensor_ptrs(adam.v);
  for (std::size_t i = 0; i < p.size(); ++i) {
    *mm[i] = cfg.adam_beta1 * *mm[i] + (1.0 - cfg.adam_beta1) * *g[i];
    *vv[i] = cfg.adam_beta2 * *vv[i] + (1.0 - cfg.adam_beta2) * g[i]->cwiseAbs2();
    p[i]->array() -= cfg.lr * (mm[i]->array() / c1) / ((vv[i]->array() / c2).sqrt() + cfg.adam_eps);
  }
  round_to_storage(params);
  return m;
}

BatchSampler::BatchSampler(std::span<const ContextTargetPair> pairs, int batch_size, int group_size,
                           std::uint64_t seed)
    : pairs_(pairs.begin(), pairs.end()), batch_size_(batch_size), seed_(seed) {
  if (pairs_.empty()) throw TrainingError("batch sampler: no pairs");
  if (batch_size < 1 || group_size < 1) throw TrainingError("batch sampler: sizes must be positive");
  for (std::size_t i = 0; i < pairs_.size(); ++i) {
    const bool extend = !runs_.empty() && runs_.back().size() < static_cast<std::size_t>(group_size) &&
                        pairs_[runs_.back().back()].target.doc_id == pairs_[i].target.doc_id;
    if (extend) {
      runs_.back().push_back(i);
    } else {
      runs_.push_back({i});
    }
  }
}

void BatchSampler::refill() {
  Rng rng(derive_seed(seed_, {0x5a3u, epoch_++}));
  std::vector<std::size_t> order(runs_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  queue_.erase(queue_.begin(), queue_.begin() + static_cast<std::ptrdiff_t>(head_));
  head_ = 0;
  for (auto r : order) queue_.insert(queue_.end(), runs_[r].begin(), runs_[r].end());
}

std::vector<ContextTargetPair> BatchSampler::next() {
  while (queue_.size() - head_ < static_cast<std::size_t>(batch_size_)) refill();
  std::vector<ContextTargetPair> batch;
  for (int i = 0; i < batch_size_; ++i) batch.push_back(pairs_[queue_[head_++]]);
  return batch;
}

TrainResult train(ModelParams<double> params, const Vocab& vocab, std::span<const ContextTargetPair> pairs,
                  const TrainConfig& cfg, const TrainOptions& options) {
  cfg.validate();
  TrainResult result{std::move(params), {}};
  if (cfg.steps == 0) return result;
  if (pairs.size() < static_cast<std::size_t>(cfg.batch_size)) {
    throw TrainingError("corpus yields " + std::to_string(pairs.size()) + " pairs, fewer than batch_size " +
                        std::to_string(cfg.batch_size));
  }
  BatchSampler sampler(pairs, cfg.batch_size, cfg.group_size, cfg.seed);
  AdamState adam = AdamState::for_model(result.params);
  result.metrics.reserve(static_cast<std::size_t>(cfg.steps));
  for (int step = 1; step <= cfg.steps; ++step) {
    const auto batch = sampler.next();
    result.metrics.push_back(train_step(result.params, adam, vocab, batch, cfg, step));
    if (options.on_metrics) options.on_metrics(result.metrics.back());
    if (!options.checkpoint_path.empty() && (step % cfg.checkpoint_every == 0 || step == cfg.steps)) {
      Checkpoint ckpt{result.params, vocab, static_cast<std::uint64_t>(step),
                      Rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(step)})).state()};
      save_checkpoint(options.checkpoint_path, ckpt);
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Gradient check

namespace {

int tower_of(const std::string& name) {
  if (name == "embedding") return 0;
  if (name.rfind("encoder", 0) == 0) return 1;
  if (name.rfind("decoder", 0) == 0) return 2;
  return 3;
}

struct Coord {
  MatrixXr* tensor;
  const MatrixXr* analytic;
  std::string name;
  Eigen::Index index;
};

}  // namespace

GradCheckReport check_gradients(const ModelParams<double>& params, const ScalarLoss& loss,
                                const ModelParams<double>& analytic, const GradCheckOptions& options) {
  ModelParams<double> probe = params;
  std::array<std::vector<Coord>, 4> all, nonzero;
  std::vector<const MatrixXr*> an = tensor_ptrs(analytic);
  std::size_t ti = 0;
  visit_tensors(probe, [&](const std::string& name, MatrixXr& t) {
    const MatrixXr* a = an[ti++];
    const int tower = tower_of(name);
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      all[tower].push_back({&t, a, name, i});
      if (a->data()[i] != 0.0) nonzero[tower].push_back({&t, a, name, i});
    }
  });

  GradCheckReport report;
  Rng rng(options.seed);
  const int per_tower = std::max(1, options.coordinates / 4);
  for (int tower = 0; tower < 4; ++tower) {
    if (all[tower].empty()) continue;
    for (int c = 0; c < per_tower; ++c) {
      // Half the draws target coordinates with a nonzero analytic gradient so
      // sparse tensors (unused embedding rows) do not dominate the sample.
      const auto& pool = (c % 2 == 0 && !nonzero[tower].empty()) ? nonzero[tower] : all[tower];
      const Coord& co = pool[rng.below(pool.size())];
      double& x = co.tensor->data()[co.index];
      const double saved = x;
      x = saved + options.epsilon;
      const double up = loss(probe);
      x = saved - options.epsilon;
      const double down = loss(probe);
      x = saved;
      const double numeric = (up - down) / (2.0 * options.epsilon);
      const double a = co.analytic->data()[co.index];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), options.abs_floor});
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_tensor = co.name;
      }
      report.max_abs_grad[tower] = std::max(report.max_abs_grad[tower], std::abs(a));
      ++report.per_tower[tower];
      ++report.n_checked;
    }
  }
  report.passed = report.max_rel_err < options.tolerance;
  return report;
}

GradCheckReport grad_check(const ModelParams<double>& params, std::span<const EncodedPair> batch,
                           const LossConfig& loss, const BTConfig& bt, const GradCheckOptions& options) {
  ModelParams<double> analytic;
  evaluate_loss(params, batch, loss, bt, &analytic);
  const ScalarLoss f = [&](const ModelParams<double>& p) { return evaluate_loss(p, batch, loss, bt, nullptr).total; };
  return check_gradients(params, f, analytic, options);
}

// ---------------------------------------------------------------------------
// Sweep

std::vector<double> default_lambda_grid() { return {1e-4, 1e-3, 1e-2, 1e-1, 1.0}; }
std::vector<double> default_delta_grid() { return {1e-6, 1e-5, 1e-4, 1e-3, 1e-2}; }

double style_probe_accuracy(const ModelParams<double>& params, const Vocab& vocab, std::span<const Sentence> sentences,
                            double train_frac, std::uint64_t seed, std::size_t max_sentences) {
  std::vector<const Sentence*> labeled;
  for (const auto& s : sentences)
    if (s.style) labeled.push_back(&s);
  if (max_sentences > 0 && labeled.size() > max_sentences) {
    Rng rng(derive_seed(seed, {0x9b0eu}));
    for (std::size_t i = labeled.size(); i > 1; --i) std::swap(labeled[i - 1], labeled[rng.below(i)]);
    labeled.resize(max_sentences);
  }
  std::vector<LabeledVector> data;
  data.reserve(labeled.size());
  for (const auto* s : labeled) data.push_back({sentence_style(params, vocab, s->text), *s->style});
  return linear_probe(data, train_frac, seed).accuracy;
}

std::vector<SweepRow> sweep(std::span<const Sentence> corpus, const Vocab& vocab, const ModelConfig& model_cfg,
                            const TrainConfig& base, std::span<const double> lambda_grid,
                            std::span<const double> delta_grid, const SweepOptions& options) {
  if (lambda_grid.empty() || delta_grid.empty()) throw TrainingError("sweep: grids must be non-empty");
  const auto pairs = pair_context_target(corpus);
  std::vector<SweepRow> rows;
  for (double l : lambda_grid)
    for (double dl : delta_grid) rows.push_back({l, dl, 0.0, 0.0, 0.0});

  auto run_cell = [&](SweepRow& row) {
    TrainConfig cfg = base;
    cfg.loss.lambda = row.lambda;
    cfg.bt.delta = row.delta;
    auto result = train(init_model<double>(model_cfg, base.seed), vocab, pairs, cfg);
    if (!result.metrics.empty()) {
      const auto& last = result.metrics.back();
      row.final_ce = last.ce;
      row.final_bt = bt_active(last.bt_sentence, last.bt_paragraph, cfg.loss.bt_level);
    }
    row.probe_acc = style_probe_accuracy(result.params, vocab, corpus, options.probe_train_frac, base.seed,
                                         options.probe_max_sentences);
  };

  const auto workers = static_cast<std::size_t>(std::max(1, options.workers));
  if (workers == 1) {
    for (auto& row : rows) run_cell(row);
    return rows;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(rows.size());
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, rows.size()); ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < rows.size(); i = next++) {
        try {
          run_cell(rows[i]);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return rows;
}

std::string sweep_csv(std::span<const SweepRow> rows) {
  std::string out = "lambda,delta,final_ce,final_bt,probe_acc\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g,%.9g,%.9g\n", r.lambda, r.delta, r.final_ce, r.final_bt, r.probe_acc);
    out += buf;
  }
  return out;
}

}  // namespace btts
