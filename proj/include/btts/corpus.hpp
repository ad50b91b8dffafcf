#pragma once

#include "btts/types.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace btts {

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Sentence {
  std::string doc_id;
  std::size_t sent_id = 0;
  std::string text;
  std::optional<std::string> style;

  bool operator==(const Sentence&) const = default;
};

/// A target sentence and the sentence directly preceding it in the same document.
struct ContextTargetPair {
  Sentence context;
  Sentence target;
};

enum class CorpusFormat { kJsonl, kPlain };

CorpusFormat parse_corpus_format(std::string_view name);

/// Reads a corpus file. Plain files hold one sentence per line with blank lines
/// separating documents; doc ids are the document index, sent ids the line index
/// within the document.
std::vector<Sentence> load_corpus(const std::filesystem::path& path, CorpusFormat format);
std::vector<Sentence> parse_corpus(std::string_view content, CorpusFormat format);

std::string to_jsonl(std::span<const Sentence> sentences);

/// Whitespace-token vocabulary. Ids 0-3 are PAD, BOS, EOS, UNK; regular tokens
/// follow, then optional corruption-rate control tokens.
class Vocab {
 public:
  static constexpr TokenId kPad = kPadId;
  static constexpr TokenId kBos = kBosId;
  static constexpr TokenId kEos = kEosId;
  static constexpr TokenId kUnk = kUnkId;
  static constexpr TokenId kFirstRegular = 4;
  static constexpr int kRateBuckets = 10;

  /// Builds from regular tokens in id order (ids 4, 5, ...).
  explicit Vocab(std::vector<std::string> regular_tokens, bool rate_tokens = false);

  std::size_t size() const { return tokens_.size(); }
  std::size_t regular_count() const { return regular_count_; }
  bool has_rate_tokens() const { return rate_tokens_; }

  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const;
  bool is_regular(TokenId id) const {
    return id >= kFirstRegular && id < kFirstRegular + static_cast<TokenId>(regular_count_);
  }

  TokenId drop_rate_token(int bucket) const;
  TokenId replace_rate_token(int bucket) const;

  /// Every token in id order, specials included.
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// Same regular tokens with the rate control tokens appended.
  Vocab with_rate_tokens() const;

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  std::size_t regular_count_ = 0;
  bool rate_tokens_ = false;
};

/// Tokens with frequency >= min_freq, most frequent first, ties lexicographic.
Vocab build_vocab(std::span<const Sentence> sentences, std::size_t min_freq);

std::vector<std::string> split_whitespace(std::string_view text);

/// No BOS/EOS is added; out-of-vocabulary tokens map to UNK.
TokenIds encode(const Vocab& vocab, std::string_view text);
std::string decode(const Vocab& vocab, std::span<const TokenId> ids);

std::vector<ContextTargetPair> pair_context_target(std::span<const Sentence> sentences);

struct RateRange {
  double lo = 0.0;
  double hi = 0.0;
};

struct CorruptionConfig {
  RateRange drop_rate_range{0.1, 0.5};
  RateRange replace_rate_range{0.0, 0.3};
  bool emit_rate_tokens = false;

  void validate() const;
};

struct Corruption {
  TokenIds ids;
  double drop_rate = 0.0;
  double replace_rate = 0.0;
};

/// Rate bucket in [0, 9] for the control tokens; width 0.1.
int rate_bucket(double rate);

/// Draw protocol for Rng(seed): drop rate, replace rate, one uniform per input
/// token (dropped when below the drop rate), a below(n) index if nothing
/// survived, then per survivor one uniform (replaced when below the replace
/// rate) followed by below(regular_count) for the replacement token.
Corruption corrupt(std::span<const TokenId> ids, const CorruptionConfig& cfg, const Vocab& vocab,
                   std::uint64_t seed);

struct StyleSpec {
  std::string label;
  std::vector<std::string> markers;
  std::vector<std::string> templates;
};

/// Synthetic corpus description. Templates are whitespace-separated tokens where
/// `{marker}` draws from the style's markers and `{slot}` draws from
/// content[slot]; content words are shared across styles.
struct SynthSpec {
  std::vector<StyleSpec> styles;
  std::map<std::string, std::vector<std::string>> content;

  void validate() const;
  static SynthSpec defaults();
  static SynthSpec from_json_text(std::string_view text);
  static SynthSpec load(const std::filesystem::path& path);
  std::string to_json_text() const;
};

inline constexpr std::size_t kSynthDocumentLength = 8;

/// n_per_style sentences per style grouped into same-style documents of eight.
std::vector<Sentence> synth_corpus(const SynthSpec& spec, std::size_t n_per_style,
                                   std::uint64_t seed);

}  // namespace btts
