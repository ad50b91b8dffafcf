#pragma once

#include "btts/types.hpp"

#include <functional>
#include <span>
#include <string_view>

namespace btts {

enum class DecodeMode { kGreedy, kBeam };

DecodeMode parse_decode_mode(std::string_view name);
std::string_view to_string(DecodeMode mode);

struct DecodeConfig {
  DecodeMode mode = DecodeMode::kGreedy;
  int beam_width = 4;
  int max_new_tokens = 32;
  /// Forced tokens placed after BOS before free decoding (rate control tokens).
  TokenIds prefix;
};

/// Next-token log-probabilities given the full decoder input so far
/// (BOS, prefix, generated tokens).
using NextTokenLogProbs = std::function<VectorXr(std::span<const TokenId> decoder_input)>;

/// Argmax per step with ties to the lowest id; stops at EOS or the token budget.
/// Returns generated tokens without BOS, prefix or EOS.
TokenIds greedy_search(const NextTokenLogProbs& step, TokenId bos, TokenId eos, const DecodeConfig& cfg);

/// Beam search ranked by length-normalized log-probability (sum / number of
/// generated tokens, EOS included). Equal scores break toward the
/// lexicographically smaller token sequence.
TokenIds beam_search(const NextTokenLogProbs& step, TokenId bos, TokenId eos, const DecodeConfig& cfg);

TokenIds run_search(const NextTokenLogProbs& step, TokenId bos, TokenId eos, const DecodeConfig& cfg);

}  // namespace btts
