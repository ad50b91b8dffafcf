#include "btts/cli.hpp"

#include "btts/checkpoint.hpp"
#include "btts/corpus.hpp"
#include "btts/eval.hpp"
#include "btts/inference.hpp"
#include "btts/io.hpp"
#include "btts/judge.hpp"
#include "btts/run_config.hpp"
#include "btts/training.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>

namespace btts {

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

const std::map<std::string, std::string>& flag_aliases() {
  static const std::map<std::string, std::string> aliases{{"loss.lambda", "lambda"},
                                                          {"loss.delta", "delta"},
                                                          {"training.steps", "steps"},
                                                          {"training.seed", "seed"},
                                                          {"inference.beta", "beta"}};
  return aliases;
}

/// Config flags collected during parsing, applied over the file afterwards.
struct ConfigOptions {
  std::string file;
  std::vector<std::pair<std::string, std::string>> flags;

  RunConfig resolve() const {
    RunConfig cfg;
    if (!file.empty()) apply_config_file(cfg, file);
    for (const auto& [key, value] : flags) set_config_value(cfg, key, value);
    validate(cfg);
    return cfg;
  }
};

void add_config_options(CLI::App* sub, ConfigOptions& opts, std::initializer_list<ConfigSection> sections,
                        const std::string& file_flag = "--config") {
  sub->add_option(file_flag, opts.file, "configuration file (INI; flags take precedence)");
  const RunConfig defaults;
  for (const auto& f : config_fields()) {
    if (std::find(sections.begin(), sections.end(), f.section) == sections.end()) continue;
    std::string names = "--" + f.key;
    if (auto it = flag_aliases().find(f.key); it != flag_aliases().end()) names += ",--" + it->second;
    sub->add_option_function<std::string>(
           names, [&opts, key = f.key](const std::string& v) { opts.flags.emplace_back(key, v); }, f.help)
        ->default_str(f.get(defaults));
  }
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) throw UsageError("empty item in list '" + s + "'");
    out.push_back(item.substr(b, e - b + 1));
  }
  if (out.empty()) throw UsageError("empty list");
  return out;
}

std::vector<double> parse_doubles(const std::string& s) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) {
    std::size_t used = 0;
    try {
      out.push_back(std::stod(item, &used));
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw UsageError("not a number: '" + item + "'");
  }
  return out;
}

std::vector<std::size_t> parse_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(s)) {
    if (item.find_first_not_of("0123456789") != std::string::npos) throw UsageError("not a shot size: '" + item + "'");
    out.push_back(std::stoul(item));
  }
  return out;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::string content;
  if (path == "-") {
    std::ostringstream ss;
    ss << std::cin.rdbuf();
    content = ss.str();
  } else {
    content = read_file(path);
  }
  std::vector<std::string> lines;
  std::istringstream in(content);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!split_whitespace(line).empty()) lines.push_back(line);
  }
  if (lines.empty()) throw UsageError("no sentences in " + path);
  return lines;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

struct ClassifierOptions {
  std::string kind = "rule";
  std::string synth_spec;
  std::string probe_corpus;
  std::string probe_format = "jsonl";
  std::string labels;
};

void add_classifier_options(CLI::App* sub, ClassifierOptions& o, bool allow_judge) {
  sub->add_option("--classifier", o.kind, "style classifier")
      ->check(allow_judge ? CLI::IsMember({"rule", "probe", "judge"}) : CLI::IsMember({"rule", "probe"}))
      ->capture_default_str();
  sub->add_option("--synth-spec", o.synth_spec, "synthetic spec JSON for the rule classifier (default spec if omitted)");
  sub->add_option("--probe-corpus", o.probe_corpus, "labeled corpus the probe classifier is fit on");
  sub->add_option("--probe-format", o.probe_format, "probe corpus format")
      ->check(CLI::IsMember({"jsonl", "plain"}))
      ->capture_default_str();
  if (allow_judge) sub->add_option("--labels", o.labels, "comma-separated style labels offered to the judge");
}

/// Owns whatever the chosen classifier borrows.
struct ClassifierHolder {
  std::unique_ptr<StyleClassifier> classifier;
  std::vector<Sentence> probe_sentences;
};

ClassifierHolder make_classifier(const ClassifierOptions& o, const Checkpoint* ckpt, const JudgeConfig& judge) {
  ClassifierHolder h;
  if (o.kind == "rule") {
    const auto spec = o.synth_spec.empty() ? SynthSpec::defaults() : SynthSpec::load(o.synth_spec);
    h.classifier = std::make_unique<RuleClassifier>(rule_classifier(spec));
  } else if (o.kind == "probe") {
    if (!ckpt) throw UsageError("--classifier probe needs --model");
    if (o.probe_corpus.empty()) throw UsageError("--classifier probe needs --probe-corpus");
    h.probe_sentences = load_corpus(o.probe_corpus, parse_corpus_format(o.probe_format));
    h.classifier = std::make_unique<ProbeClassifier>(ckpt->params, ckpt->vocab, h.probe_sentences);
  } else {
    if (o.labels.empty()) throw UsageError("--classifier judge needs --labels");
    const char* key = std::getenv(kJudgeApiKeyEnv);
    if (!key || !*key) throw std::runtime_error(std::string("set ") + kJudgeApiKeyEnv + " to use the judge");
    h.classifier = std::make_unique<JudgeClassifier>(judge, std::make_shared<HttplibTransport>(), split_list(o.labels));
  }
  return h;
}

// ---------------------------------------------------------------------------
// Subcommands

struct SynthArgs {
  std::string spec, out, format = "jsonl", write_spec;
  std::size_t n_per_style = 1000;
  std::uint64_t seed = 0;
};

void cmd_synth(const SynthArgs& a, std::ostream& out) {
  const auto spec = a.spec.empty() ? SynthSpec::defaults() : SynthSpec::load(a.spec);
  const auto sentences = synth_corpus(spec, a.n_per_style, a.seed);
  if (a.format == "jsonl") {
    write_file_atomic(a.out, to_jsonl(sentences));
  } else {
    std::string text;
    for (std::size_t i = 0; i < sentences.size(); ++i) {
      if (i > 0 && sentences[i].doc_id != sentences[i - 1].doc_id) text += '\n';
      text += sentences[i].text + '\n';
    }
    write_file_atomic(a.out, text);
  }
  if (!a.write_spec.empty()) write_file_atomic(a.write_spec, spec.to_json_text());
  out << "synth: " << sentences.size() << " sentences, " << spec.styles.size() << " styles -> " << a.out << "\n";
}

struct TrainArgs {
  std::string corpus, format = "jsonl", out, metrics;
  ConfigOptions config;
};

std::string default_metrics_path(const std::string& ckpt) {
  std::filesystem::path p(ckpt);
  p.replace_extension(".metrics.csv");
  return p.string();
}

void cmd_train(const TrainArgs& a, std::ostream& out) {
  RunConfig cfg = a.config.resolve();
  const auto sentences = load_corpus(a.corpus, parse_corpus_format(a.format));
  Vocab vocab = build_vocab(sentences, cfg.min_freq);
  if (cfg.train.corruption.emit_rate_tokens) vocab = vocab.with_rate_tokens();
  cfg.model.vocab_size = static_cast<int>(vocab.size());
  const auto pairs = pair_context_target(sentences);
  TrainOptions opts;
  opts.checkpoint_path = a.out;
  auto result = train(init_model<double>(cfg.model, cfg.train.seed), vocab, pairs, cfg.train, opts);
  if (cfg.train.steps == 0) save_checkpoint(a.out, Checkpoint{result.params, vocab, 0, Rng(cfg.train.seed).state()});
  std::string csv = metrics_csv_header();
  for (const auto& m : result.metrics) csv += metrics_csv_row(m);
  const auto metrics_path = a.metrics.empty() ? default_metrics_path(a.out) : a.metrics;
  write_file_atomic(metrics_path, csv);
  out << "train: " << cfg.train.steps << " steps on " << pairs.size() << " pairs";
  if (!result.metrics.empty()) {
    const auto& m = result.metrics.back();
    out << ", ce=" << fmt(m.ce) << " total=" << fmt(m.total);
  }
  out << " -> " << a.out << ", " << metrics_path << "\n";
}

struct TransferArgs {
  std::string model, input, src, tgt, out;
  ConfigOptions config;
};

void cmd_transfer(const TransferArgs& a, std::ostream& out) {
  const RunConfig cfg = a.config.resolve();
  const auto ckpt = load_checkpoint(a.model);
  const auto inputs = read_lines(a.input);
  const ExemplarSet src{"source", read_lines(a.src)};
  const ExemplarSet tgt{"target", read_lines(a.tgt)};
  const auto a_src = mean_style(ckpt.params, ckpt.vocab, src);
  const auto a_tgt = mean_style(ckpt.params, ckpt.vocab, tgt);
  std::string jsonl;
  for (const auto& line : inputs) jsonl += transfer_jsonl(transfer(ckpt.params, ckpt.vocab, line, a_src, a_tgt, cfg.inference));
  write_file_atomic(a.out, jsonl);
  out << "transfer: " << inputs.size() << " sentences, beta=" << fmt(cfg.inference.beta) << " -> " << a.out << "\n";
}

struct EvalArgs {
  std::string transfers, target_style, model, out;
  ClassifierOptions classifier;
  ConfigOptions config;
};

void cmd_eval(const EvalArgs& a, std::ostream& out) {
  const RunConfig cfg = a.config.resolve();
  const auto records = parse_transfer_jsonl(read_file(a.transfers));
  std::optional<Checkpoint> ckpt;
  if (!a.model.empty()) ckpt = load_checkpoint(a.model);
  auto holder = make_classifier(a.classifier, ckpt ? &*ckpt : nullptr, cfg.judge);
  std::vector<EvalExample> examples;
  for (const auto& r : records) examples.push_back({r.input, r.output, a.target_style, std::nullopt});
  const auto report = evaluate(examples, *holder.classifier);
  write_file_atomic(a.out, report.to_json());
  out << "eval: n=" << report.n << " accuracy=" << fmt(report.accuracy) << " bleu=" << fmt(report.bleu)
      << " g=" << fmt(report.g) << " -> " << a.out << "\n";
}

struct SweepArgs {
  std::string corpus, format = "jsonl", out;
  std::string lambda_grid = "1e-4,1e-3,1e-2,1e-1,1";
  std::string delta_grid = "1e-6,1e-5,1e-4,1e-3,1e-2";
  SweepOptions sweep;
  ConfigOptions config;
};

void cmd_sweep(const SweepArgs& a, std::ostream& out) {
  RunConfig cfg = a.config.resolve();
  const auto lambdas = parse_doubles(a.lambda_grid);
  const auto deltas = parse_doubles(a.delta_grid);
  const auto sentences = load_corpus(a.corpus, parse_corpus_format(a.format));
  Vocab vocab = build_vocab(sentences, cfg.min_freq);
  if (cfg.train.corruption.emit_rate_tokens) vocab = vocab.with_rate_tokens();
  cfg.model.vocab_size = static_cast<int>(vocab.size());
  const auto rows = sweep(sentences, vocab, cfg.model, cfg.train, lambdas, deltas, a.sweep);
  write_file_atomic(a.out, sweep_csv(rows));
  out << "sweep: " << rows.size() << " cells -> " << a.out << "\n";
}

struct ShotsArgs {
  std::string model, input, src, tgt, target_style, out, sizes = "30,16,8,4,2,1,0";
  std::uint64_t seed = 0;
  ClassifierOptions classifier;
  ConfigOptions config;
};

void cmd_shots(const ShotsArgs& a, std::ostream& out) {
  const RunConfig cfg = a.config.resolve();
  const auto sizes = parse_sizes(a.sizes);
  const auto ckpt = load_checkpoint(a.model);
  const auto inputs = read_lines(a.input);
  const ExemplarSet src{"source", read_lines(a.src)};
  const ExemplarSet tgt{a.target_style, read_lines(a.tgt)};
  auto holder = make_classifier(a.classifier, &ckpt, cfg.judge);
  const auto rows = shot_size_sweep(ckpt.params, ckpt.vocab, inputs, src, tgt, sizes, a.seed, cfg.inference,
                                    *holder.classifier);
  write_file_atomic(a.out, shots_csv(rows));
  out << "shots: " << rows.size() << " sizes over " << inputs.size() << " inputs -> " << a.out << "\n";
}

struct ExportArgs {
  std::string model, corpus, format = "jsonl", out;
};

void cmd_export_emb(const ExportArgs& a, std::ostream& out) {
  const auto ckpt = load_checkpoint(a.model);
  const auto sentences = load_corpus(a.corpus, parse_corpus_format(a.format));
  write_file_atomic(a.out, export_embeddings(ckpt.params, ckpt.vocab, sentences));
  out << "export-emb: " << sentences.size() << " sentences x " << ckpt.params.config.style_dim << " dims -> " << a.out
      << "\n";
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  using S = ConfigSection;
  CLI::App app{"Few-shot text style transfer with a contrastive style extractor"};
  app.name("btts");
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "generate a synthetic multi-style corpus");
  s->add_option("--spec", synth.spec, "style spec JSON (built-in two-style spec if omitted)");
  s->add_option("--n-per-style", synth.n_per_style, "sentences per style")->capture_default_str();
  s->add_option("--seed", synth.seed, "random seed")->capture_default_str();
  s->add_option("--format", synth.format, "output format")->check(CLI::IsMember({"jsonl", "plain"}))->capture_default_str();
  s->add_option("--out", synth.out, "output corpus")->required();
  s->add_option("--write-spec", synth.write_spec, "also write the effective spec JSON here");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train a model on a corpus");
  t->add_option("--corpus", tr.corpus, "training corpus")->required();
  t->add_option("--format", tr.format, "corpus format")->check(CLI::IsMember({"jsonl", "plain"}))->capture_default_str();
  t->add_option("--out", tr.out, "checkpoint path")->required();
  t->add_option("--metrics", tr.metrics, "metrics CSV (default: checkpoint path with .metrics.csv)");
  add_config_options(t, tr.config, {S::kModel, S::kTraining, S::kLoss, S::kCorruption, S::kData});

  TransferArgs tf;
  auto* x = app.add_subcommand("transfer", "restyle sentences toward a target exemplar set");
  x->add_option("--model", tf.model, "checkpoint")->required();
  x->add_option("--input", tf.input, "input sentences, one per line, or - for stdin")->required();
  x->add_option("--src-exemplars", tf.src, "source-style exemplars, one per line")->required();
  x->add_option("--tgt-exemplars", tf.tgt, "target-style exemplars, one per line")->required();
  x->add_option("--out", tf.out, "output JSONL")->required();
  add_config_options(x, tf.config, {S::kInference});

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "score transfers for style accuracy, BLEU and G");
  e->add_option("--transfers", ev.transfers, "transfer JSONL")->required();
  e->add_option("--target-style", ev.target_style, "style every output should have")->required();
  e->add_option("--model", ev.model, "checkpoint (probe classifier)");
  e->add_option("--out", ev.out, "report JSON")->required();
  add_classifier_options(e, ev.classifier, true);
  add_config_options(e, ev.config, {S::kJudge}, "--judge-config");

  SweepArgs sw;
  auto* w = app.add_subcommand("sweep", "train over a lambda/delta grid and probe each model");
  w->add_option("--corpus", sw.corpus, "labeled training corpus")->required();
  w->add_option("--format", sw.format, "corpus format")->check(CLI::IsMember({"jsonl", "plain"}))->capture_default_str();
  w->add_option("--lambda-grid", sw.lambda_grid, "comma-separated lambda values")->capture_default_str();
  w->add_option("--delta-grid", sw.delta_grid, "comma-separated delta values")->capture_default_str();
  w->add_option("--workers", sw.sweep.workers, "cells trained concurrently")->capture_default_str();
  w->add_option("--probe-max-sentences", sw.sweep.probe_max_sentences, "sentences used by the probe (0: all)")
      ->capture_default_str();
  w->add_option("--out", sw.out, "heatmap CSV")->required();
  add_config_options(w, sw.config, {S::kModel, S::kTraining, S::kLoss, S::kCorruption, S::kData});

  ShotsArgs sh;
  auto* h = app.add_subcommand("shots", "score transfer quality across exemplar counts");
  h->add_option("--model", sh.model, "checkpoint")->required();
  h->add_option("--input", sh.input, "evaluation sentences, one per line")->required();
  h->add_option("--src-exemplars", sh.src, "source-style exemplar pool")->required();
  h->add_option("--tgt-exemplars", sh.tgt, "target-style exemplar pool")->required();
  h->add_option("--target-style", sh.target_style, "label of the target style")->required();
  h->add_option("--sizes", sh.sizes, "comma-separated exemplar counts")->capture_default_str();
  h->add_option("--seed", sh.seed, "exemplar sampling seed")->capture_default_str();
  h->add_option("--out", sh.out, "table CSV")->required();
  add_classifier_options(h, sh.classifier, false);
  add_config_options(h, sh.config, {S::kInference});

  ExportArgs ex;
  auto* m = app.add_subcommand("export-emb", "write extractor style vectors as CSV");
  m->add_option("--model", ex.model, "checkpoint")->required();
  m->add_option("--corpus", ex.corpus, "sentences to embed")->required();
  m->add_option("--format", ex.format, "corpus format")->check(CLI::IsMember({"jsonl", "plain"}))->capture_default_str();
  m->add_option("--out", ex.out, "output CSV")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::Success& ok) {
    app.exit(ok, out, err);
    return kExitOk;
  } catch (const CLI::ParseError& pe) {
    app.exit(pe, err, err);
    return kExitUsage;
  }

  try {
    if (s->parsed()) cmd_synth(synth, out);
    else if (t->parsed()) cmd_train(tr, out);
    else if (x->parsed()) cmd_transfer(tf, out);
    else if (e->parsed()) cmd_eval(ev, out);
    else if (w->parsed()) cmd_sweep(sw, out);
    else if (h->parsed()) cmd_shots(sh, out);
    else if (m->parsed()) cmd_export_emb(ex, out);
  } catch (const UsageError& ue) {
    err << "error: " << ue.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& ce) {
    err << "error: " << ce.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& re) {
    err << "error: " << re.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace btts
