#include "btts/decoding.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace btts {

DecodeMode parse_decode_mode(std::string_view name) {
  if (name == "greedy") return DecodeMode::kGreedy;
  if (name == "beam") return DecodeMode::kBeam;
  throw std::invalid_argument("unknown decode mode '" + std::string(name) + "' (expected greedy or beam)");
}

std::string_view to_string(DecodeMode mode) { return mode == DecodeMode::kGreedy ? "greedy" : "beam"; }

namespace {

void check(const DecodeConfig& cfg) {
  if (cfg.max_new_tokens < 1) throw std::invalid_argument("max_new_tokens must be >= 1");
  if (cfg.mode == DecodeMode::kBeam && cfg.beam_width < 1) throw std::invalid_argument("beam_width must be >= 1");
}

TokenIds start_sequence(TokenId bos, const DecodeConfig& cfg) {
  TokenIds seq{bos};
  seq.insert(seq.end(), cfg.prefix.begin(), cfg.prefix.end());
  return seq;
}

struct Hypothesis {
  TokenIds tokens;  // generated tokens only
  double log_prob = 0.0;
  bool finished = false;

  double score() const { return log_prob / static_cast<double>(tokens.size()); }
};

bool better(const Hypothesis& a, const Hypothesis& b) {
  const double sa = a.score(), sb = b.score();
  if (sa != sb) return sa > sb;
  return a.tokens < b.tokens;
}

}  // namespace

TokenIds greedy_search(const NextTokenLogProbs& step, TokenId bos, TokenId eos, const DecodeConfig& cfg) {
  check(cfg);
  TokenIds seq = start_sequence(bos, cfg);
  const std::size_t start = seq.size();
  for (int i = 0; i < cfg.max_new_tokens; ++i) {
    VectorXr lp = step(seq);
    Eigen::Index best = 0;
    lp.maxCoeff(&best);  // first maximum, i.e. lowest id on ties
    if (static_cast<TokenId>(best) == eos) break;
    seq.push_back(static_cast<TokenId>(best));
  }
  return TokenIds(seq.begin() + static_cast<std::ptrdiff_t>(start), seq.end());
}

TokenIds beam_search(const NextTokenLogProbs& step, TokenId bos, TokenId eos, const DecodeConfig& cfg) {
  check(cfg);
  const TokenIds base = start_sequence(bos, cfg);
  const auto width = static_cast<std::size_t>(cfg.beam_width);
  std::vector<Hypothesis> alive{Hypothesis{}};
  std::vector<Hypothesis> finished;

  for (int t = 0; t < cfg.max_new_tokens && !alive.empty(); ++t) {
    std::vector<Hypothesis> candidates;
    for (const auto& hyp : alive) {
      TokenIds input = base;
      input.insert(input.end(), hyp.tokens.begin(), hyp.tokens.end());
      VectorXr lp = step(input);
      for (Eigen::Index v = 0; v < lp.size(); ++v) {
        Hypothesis next = hyp;
        next.tokens.push_back(static_cast<TokenId>(v));
        next.log_prob += lp(v);
        next.finished = static_cast<TokenId>(v) == eos;
        candidates.push_back(std::move(next));
      }
    }
    // Rank by the score the hypothesis would have if it ended here.
    const auto keep = std::min(width, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(),
                      better);
    alive.clear();
    for (std::size_t i = 0; i < keep; ++i) {
      if (candidates[i].finished) {
        finished.push_back(std::move(candidates[i]));
      } else {
        alive.push_back(std::move(candidates[i]));
      }
    }
  }
  finished.insert(finished.end(), alive.begin(), alive.end());
  const auto& best = *std::min_element(finished.begin(), finished.end(), better);
  TokenIds out = best.tokens;
  if (best.finished) out.pop_back();
  return out;
}

TokenIds run_search(const NextTokenLogProbs& step, TokenId bos, TokenId eos, const DecodeConfig& cfg) {
  return cfg.mode == DecodeMode::kGreedy ? greedy_search(step, bos, eos, cfg) : beam_search(step, bos, eos, cfg);
}

}  // namespace btts
