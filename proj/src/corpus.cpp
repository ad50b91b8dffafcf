#include "btts/corpus.hpp"

#include "btts/io.hpp"
#include "btts/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <set>
#include <sstream>

namespace btts {

namespace {

using json = nlohmann::json;

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_lines(std::string_view content) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= content.size()) {
    auto end = content.find('\n', start);
    if (end == std::string_view::npos) end = content.size();
    auto line = content.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = end + 1;
  }
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

void check_unique_ids(const std::vector<Sentence>& sentences) {
  std::set<std::pair<std::string, std::size_t>> seen;
  for (const auto& s : sentences) {
    if (!seen.emplace(s.doc_id, s.sent_id).second) {
      throw CorpusError("duplicate sent_id " + std::to_string(s.sent_id) + " in document '" +
                        s.doc_id + "'");
    }
  }
}

std::vector<Sentence> parse_plain(std::string_view content) {
  std::vector<Sentence> out;
  std::size_t doc = 0;
  std::size_t line_in_doc = 0;
  for (auto line : split_lines(content)) {
    auto text = trim(line);
    if (text.empty()) {
      if (line_in_doc > 0) {
        ++doc;
        line_in_doc = 0;
      }
      continue;
    }
    out.push_back(Sentence{std::to_string(doc), line_in_doc++, std::string(text), std::nullopt});
  }
  return out;
}

std::vector<Sentence> parse_jsonl(std::string_view content) {
  std::vector<Sentence> out;
  std::size_t line_no = 0;
  for (auto line : split_lines(content)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fail = [&](const std::string& why) {
      return CorpusError("line " + std::to_string(line_no) + ": " + why);
    };
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw fail(std::string("invalid JSON (") + e.what() + ")");
    }
    if (!obj.is_object()) throw fail("expected a JSON object");
    if (!obj.contains("doc_id") || !obj["doc_id"].is_string()) throw fail("missing string field 'doc_id'");
    if (!obj.contains("sent_id") || !obj["sent_id"].is_number_integer() || obj["sent_id"].get<long long>() < 0)
      throw fail("missing non-negative integer field 'sent_id'");
    if (!obj.contains("text") || !obj["text"].is_string()) throw fail("missing string field 'text'");
    Sentence s;
    s.doc_id = obj["doc_id"].get<std::string>();
    s.sent_id = obj["sent_id"].get<std::size_t>();
    s.text = std::string(trim(obj["text"].get<std::string>()));
    if (s.text.empty()) throw fail("empty text");
    if (obj.contains("style") && !obj["style"].is_null()) {
      if (!obj["style"].is_string()) throw fail("field 'style' must be a string");
      s.style = obj["style"].get<std::string>();
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

CorpusFormat parse_corpus_format(std::string_view name) {
  if (name == "jsonl") return CorpusFormat::kJsonl;
  if (name == "plain") return CorpusFormat::kPlain;
  throw CorpusError("unknown corpus format '" + std::string(name) + "' (expected jsonl or plain)");
}

std::vector<Sentence> parse_corpus(std::string_view content, CorpusFormat format) {
  auto sentences = format == CorpusFormat::kJsonl ? parse_jsonl(content) : parse_plain(content);
  if (sentences.empty()) throw CorpusError("corpus is empty");
  check_unique_ids(sentences);
  return sentences;
}

std::vector<Sentence> load_corpus(const std::filesystem::path& path, CorpusFormat format) {
  try {
    return parse_corpus(read_file(path), format);
  } catch (const CorpusError& e) {
    throw CorpusError(path.string() + ": " + e.what());
  }
}

std::string to_jsonl(std::span<const Sentence> sentences) {
  std::string out;
  for (const auto& s : sentences) {
    nlohmann::ordered_json obj;
    obj["doc_id"] = s.doc_id;
    obj["sent_id"] = s.sent_id;
    obj["text"] = s.text;
    if (s.style) obj["style"] = *s.style;
    out += obj.dump();
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Vocab

Vocab::Vocab(std::vector<std::string> regular_tokens, bool rate_tokens)
    : regular_count_(regular_tokens.size()), rate_tokens_(rate_tokens) {
  tokens_ = {"<pad>", "<bos>", "<eos>", "<unk>"};
  for (auto& t : regular_tokens) tokens_.push_back(std::move(t));
  if (rate_tokens_) {
    for (int b = 0; b < kRateBuckets; ++b) tokens_.push_back("<drop_" + std::to_string(b) + ">");
    for (int b = 0; b < kRateBuckets; ++b) tokens_.push_back("<replace_" + std::to_string(b) + ">");
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw CorpusError("duplicate vocabulary token '" + tokens_[i] + "'");
    }
  }
}

TokenId Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw CorpusError("unknown token id " + std::to_string(id));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

TokenId Vocab::drop_rate_token(int bucket) const {
  if (!rate_tokens_) throw CorpusError("vocabulary has no rate tokens");
  return kFirstRegular + static_cast<TokenId>(regular_count_) + std::clamp(bucket, 0, kRateBuckets - 1);
}

TokenId Vocab::replace_rate_token(int bucket) const {
  return drop_rate_token(0) + kRateBuckets + std::clamp(bucket, 0, kRateBuckets - 1);
}

Vocab Vocab::with_rate_tokens() const {
  std::vector<std::string> regular(tokens_.begin() + kFirstRegular,
                                   tokens_.begin() + kFirstRegular + static_cast<std::ptrdiff_t>(regular_count_));
  return Vocab(std::move(regular), true);
}

std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

Vocab build_vocab(std::span<const Sentence> sentences, std::size_t min_freq) {
  if (sentences.empty()) throw CorpusError("build_vocab: no sentences");
  if (min_freq == 0) throw CorpusError("build_vocab: min_freq must be positive");
  std::map<std::string, std::size_t> freq;
  for (const auto& s : sentences)
    for (auto& tok : split_whitespace(s.text)) ++freq[tok];
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [tok, n] : freq)
    if (n >= min_freq) kept.emplace_back(tok, n);
  // std::map iteration is lexicographic, so a stable sort on count keeps ties ordered.
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (kept.empty()) throw CorpusError("build_vocab: no token reaches min_freq");
  std::vector<std::string> regular;
  regular.reserve(kept.size());
  for (auto& [tok, n] : kept) regular.push_back(tok);
  return Vocab(std::move(regular));
}

TokenIds encode(const Vocab& vocab, std::string_view text) {
  TokenIds ids;
  for (const auto& tok : split_whitespace(text)) ids.push_back(vocab.id(tok));
  return ids;
}

std::string decode(const Vocab& vocab, std::span<const TokenId> ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += vocab.token(ids[i]);
  }
  return out;
}

std::vector<ContextTargetPair> pair_context_target(std::span<const Sentence> sentences) {
  std::map<std::pair<std::string, std::size_t>, std::size_t> index;
  for (std::size_t i = 0; i < sentences.size(); ++i) index.emplace(std::pair{sentences[i].doc_id, sentences[i].sent_id}, i);
  std::vector<ContextTargetPair> pairs;
  for (const auto& target : sentences) {
    if (target.sent_id == 0) continue;
    auto it = index.find({target.doc_id, target.sent_id - 1});
    if (it == index.end()) continue;
    pairs.push_back({sentences[it->second], target});
  }
  return pairs;
}

// ---------------------------------------------------------------------------
// Corruption

void CorruptionConfig::validate() const {
  for (const auto& r : {drop_rate_range, replace_rate_range}) {
    if (!(r.lo >= 0.0 && r.hi <= 1.0 && r.lo <= r.hi)) {
      throw CorpusError("corruption rate range must satisfy 0 <= lo <= hi <= 1");
    }
  }
}

int rate_bucket(double rate) {
  return std::clamp(static_cast<int>(rate * Vocab::kRateBuckets), 0, Vocab::kRateBuckets - 1);
}

Corruption corrupt(std::span<const TokenId> ids, const CorruptionConfig& cfg, const Vocab& vocab,
                   std::uint64_t seed) {
  if (ids.empty()) throw CorpusError("corrupt: empty input");
  cfg.validate();
  Rng rng(seed);
  Corruption out;
  out.drop_rate = rng.uniform(cfg.drop_rate_range.lo, cfg.drop_rate_range.hi);
  out.replace_rate = rng.uniform(cfg.replace_rate_range.lo, cfg.replace_rate_range.hi);

  std::vector<std::size_t> survivors;
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (!(rng.uniform() < out.drop_rate)) survivors.push_back(i);
  if (survivors.empty()) survivors.push_back(static_cast<std::size_t>(rng.below(ids.size())));

  out.ids.reserve(survivors.size());
  for (auto i : survivors) {
    TokenId tok = ids[i];
    if (rng.uniform() < out.replace_rate && vocab.regular_count() > 0) {
      tok = Vocab::kFirstRegular + static_cast<TokenId>(rng.below(vocab.regular_count()));
    }
    out.ids.push_back(tok);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpora

namespace {

bool is_slot(const std::string& tok) { return tok.size() > 2 && tok.front() == '{' && tok.back() == '}'; }

}  // namespace

void SynthSpec::validate() const {
  if (styles.size() < 2) throw CorpusError("synth spec needs at least two styles");
  std::map<std::string, std::string> marker_owner;
  std::set<std::string> labels;
  for (const auto& st : styles) {
    if (st.label.empty()) throw CorpusError("synth spec: empty style label");
    if (!labels.insert(st.label).second) throw CorpusError("synth spec: duplicate style label '" + st.label + "'");
    if (st.markers.empty()) throw CorpusError("synth spec: style '" + st.label + "' has no markers");
    if (st.templates.empty()) throw CorpusError("synth spec: style '" + st.label + "' has no templates");
    for (const auto& m : st.markers) {
      auto [it, fresh] = marker_owner.emplace(m, st.label);
      if (!fresh && it->second != st.label) {
        throw CorpusError("synth spec: marker '" + m + "' shared by styles '" + it->second + "' and '" +
                          st.label + "'");
      }
    }
    for (const auto& t : st.templates) {
      bool has_marker = false;
      for (const auto& tok : split_whitespace(t)) {
        if (!is_slot(tok)) continue;
        auto slot = tok.substr(1, tok.size() - 2);
        if (slot == "marker") {
          has_marker = true;
        } else if (!content.contains(slot) || content.at(slot).empty()) {
          throw CorpusError("synth spec: template slot '" + slot + "' has no content words");
        }
      }
      if (!has_marker) throw CorpusError("synth spec: template without {marker}: '" + t + "'");
    }
  }
  for (const auto& [slot, words] : content)
    for (const auto& w : words)
      if (marker_owner.contains(w))
        throw CorpusError("synth spec: content word '" + w + "' is also a style marker");
}

SynthSpec SynthSpec::defaults() {
  SynthSpec spec;
  const std::vector<std::string> templates = {
      "{marker} the {adj} {noun} {verb} the {noun}",
      "the {noun} {verb} a {adj} {noun} {marker}",
      "{marker} , the {noun} in the {place} {verb} the {noun}",
      "a {adj} {noun} {verb} the {noun} near the {place} {marker}",
      "the {noun} {marker} {verb} the {adj} {noun}",
      "in the {place} the {noun} {verb} a {noun} {marker}",
  };
  spec.styles = {
      {"formal", {"indeed", "therefore", "moreover", "furthermore", "consequently", "accordingly"}, templates},
      {"casual", {"lol", "yeah", "totally", "gonna", "dude", "kinda"}, templates},
  };
  spec.content = {
      {"noun", {"cat", "dog", "bird", "farmer", "child", "teacher", "doctor", "river", "garden", "market",
                "house", "boat"}},
      {"verb", {"sees", "finds", "likes", "paints", "visits", "follows", "carries", "watches"}},
      {"adj", {"red", "small", "old", "quiet", "bright", "green", "happy", "tall"}},
      {"place", {"park", "city", "forest", "village", "school", "harbor"}},
  };
  return spec;
}

SynthSpec SynthSpec::from_json_text(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw CorpusError(std::string("synth spec: invalid JSON: ") + e.what());
  }
  SynthSpec spec;
  try {
    for (const auto& st : doc.at("styles")) {
      spec.styles.push_back({st.at("label").get<std::string>(), st.at("markers").get<std::vector<std::string>>(),
                             st.at("templates").get<std::vector<std::string>>()});
    }
    if (doc.contains("content")) {
      spec.content = doc.at("content").get<std::map<std::string, std::vector<std::string>>>();
    } else {
      spec.content = defaults().content;
    }
  } catch (const json::exception& e) {
    throw CorpusError(std::string("synth spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

SynthSpec SynthSpec::load(const std::filesystem::path& path) { return from_json_text(read_file(path)); }

std::string SynthSpec::to_json_text() const {
  nlohmann::ordered_json doc;
  doc["styles"] = nlohmann::ordered_json::array();
  for (const auto& st : styles) {
    nlohmann::ordered_json s;
    s["label"] = st.label;
    s["markers"] = st.markers;
    s["templates"] = st.templates;
    doc["styles"].push_back(s);
  }
  doc["content"] = content;
  return doc.dump(2) + "\n";
}

std::vector<Sentence> synth_corpus(const SynthSpec& spec, std::size_t n_per_style, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  std::vector<Sentence> out;
  out.reserve(n_per_style * spec.styles.size());
  for (const auto& st : spec.styles) {
    for (std::size_t i = 0; i < n_per_style; ++i) {
      const auto& tmpl = st.templates[rng.below(st.templates.size())];
      std::string text;
      for (const auto& tok : split_whitespace(tmpl)) {
        if (!text.empty()) text += ' ';
        if (!is_slot(tok)) {
          text += tok;
          continue;
        }
        auto slot = tok.substr(1, tok.size() - 2);
        const auto& pool = slot == "marker" ? st.markers : spec.content.at(slot);
        text += pool[rng.below(pool.size())];
      }
      out.push_back(Sentence{st.label + "-" + std::to_string(i / kSynthDocumentLength),
                             i % kSynthDocumentLength, std::move(text), st.label});
    }
  }
  return out;
}

}  // namespace btts
