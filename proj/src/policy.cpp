#include "fspo/policy.hpp"

#include <cmath>

namespace fspo {

SequenceSample sample_sequence(const TabularPolicy<double>& policy, std::span<const TokenId> prompt, int max_len,
                               std::uint64_t seed) {
  if (max_len < 1) throw InvalidArgument("max_len must be >= 1");
  for (TokenId tok : prompt) policy.check_token(tok);

  Rng rng(seed);
  SequenceSample out;
  out.prompt.assign(prompt.begin(), prompt.end());
  Tokens history = out.prompt;
  double logp = 0.0;
  bool ended = false;
  while (static_cast<int>(out.tokens.size()) < max_len) {
    const Eigen::Index row = policy.context_index(history);
    const VectorXd log_probs = policy.row_log_probs(row);
    const double u = rng.uniform();
    double cumulative = 0.0;
    TokenId chosen = policy.vocab_size() - 1;
    for (TokenId v = 0; v < policy.vocab_size(); ++v) {
      cumulative += std::exp(log_probs[v]);
      if (u < cumulative) {
        chosen = v;
        break;
      }
    }
    // Rounding can leave u beyond the final cumulative sum; fall back to the
    // last token with nonzero mass.
    while (std::exp(log_probs[chosen]) == 0.0 && chosen > 0) --chosen;
    logp += log_probs[chosen];
    out.tokens.push_back(chosen);
    history.push_back(chosen);
    if (policy.eos() && chosen == *policy.eos()) {
      ended = true;
      break;
    }
  }
  out.length = static_cast<int>(out.tokens.size());
  out.truncated = !ended;
  out.logp_old = logp;
  out.logp_new = logp;
  return out;
}

double enumeration_leaf_count(int vocab_size, bool has_eos, int max_len) {
  if (!has_eos) return std::pow(static_cast<double>(vocab_size), max_len);
  // Sequences ending in EOS at length l < max_len, plus all length-max_len ones.
  const double branching = vocab_size - 1;
  double total = 0.0;
  double prefixes = 1.0;
  for (int l = 1; l < max_len; ++l) {
    total += prefixes;
    prefixes *= branching;
  }
  return total + prefixes * vocab_size;
}

namespace {

struct Enumerator {
  const TabularPolicy<double>& policy;
  int max_len;
  std::size_t prompt_len;
  Tokens history;
  std::vector<WeightedSequence> out;

  void visit(double logp) {
    const Eigen::Index row = policy.context_index(history);
    const VectorXd log_probs = policy.row_log_probs(row);
    const int depth = static_cast<int>(history.size() - prompt_len) + 1;
    for (TokenId v = 0; v < policy.vocab_size(); ++v) {
      const double child = logp + log_probs[v];
      if (std::exp(child) == 0.0) continue;
      history.push_back(v);
      const bool eos = policy.eos() && v == *policy.eos();
      if (eos || depth == max_len) {
        WeightedSequence leaf;
        leaf.sample.prompt.assign(history.begin(), history.begin() + static_cast<std::ptrdiff_t>(prompt_len));
        leaf.sample.tokens.assign(history.begin() + static_cast<std::ptrdiff_t>(prompt_len), history.end());
        leaf.sample.length = depth;
        leaf.sample.truncated = !eos;
        leaf.sample.logp_old = child;
        leaf.sample.logp_new = child;
        leaf.probability = std::exp(child);
        out.push_back(std::move(leaf));
      } else {
        visit(child);
      }
      history.pop_back();
    }
  }
};

}  // namespace

std::vector<WeightedSequence> enumerate_all(const TabularPolicy<double>& policy, std::span<const TokenId> prompt,
                                            int max_len) {
  if (max_len < 1) throw InvalidArgument("max_len must be >= 1");
  for (TokenId tok : prompt) policy.check_token(tok);
  const double leaves = enumeration_leaf_count(policy.vocab_size(), policy.eos().has_value(), max_len);
  if (leaves > kEnumerationLeafLimit)
    throw CapacityError("enumeration would visit " + std::to_string(leaves) + " leaves (limit 1e7)");

  Enumerator e{policy, max_len, prompt.size(), Tokens(prompt.begin(), prompt.end()), {}};
  e.out.reserve(static_cast<std::size_t>(leaves));
  e.visit(0.0);
  return std::move(e.out);
}

}  // namespace fspo
