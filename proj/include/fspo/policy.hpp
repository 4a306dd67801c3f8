#pragma once

// Tabular autoregressive softmax policy over a finite vocabulary with a
// bounded context window. Contexts shorter than the window are left-padded
// with a reserved pad id (== vocab_size), so the logits table is dense over
// (vocab_size + 1)^K contexts and every reachable history has a row.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "fspo/common.hpp"

namespace fspo {

/// One completion y for a prompt x.
struct SequenceSample {
  Tokens prompt;
  Tokens tokens;
  int length = 0;
  double logp_old = 0.0;
  double logp_new = 0.0;
  double reward = 0.0;
  std::optional<double> advantage;
  bool truncated = false;  // hit max_len without emitting EOS
};

template <typename Scalar = double>
class TabularPolicy {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using ParamVector = Vector<Scalar>;

  TabularPolicy(int vocab_size, int context_window, Scalar temperature = Scalar(1),
                std::optional<TokenId> eos = TokenId{0})
      : vocab_size_(vocab_size), context_window_(context_window), temperature_(temperature), eos_(eos) {
    if (vocab_size < 1) throw InvalidArgument("vocab_size must be positive");
    if (context_window < 1) throw InvalidArgument("context_window must be positive");
    if (!(temperature > Scalar(0))) throw InvalidArgument("temperature must be positive");
    if (eos && (*eos < 0 || *eos >= vocab_size)) throw InvalidArgument("eos id outside vocabulary");
    long double rows = 1;
    for (int k = 0; k < context_window; ++k) rows *= (vocab_size + 1);
    if (rows * vocab_size > 5e7L) throw CapacityError("logits table too large");
    num_contexts_ = static_cast<Eigen::Index>(rows);
    logits_ = Matrix::Zero(num_contexts_, vocab_size);
  }

  /// Logits drawn i.i.d. N(0, scale^2) from a seeded stream.
  static TabularPolicy random(int vocab_size, int context_window, std::uint64_t seed, double scale = 1.0,
                              Scalar temperature = Scalar(1), std::optional<TokenId> eos = TokenId{0}) {
    TabularPolicy p(vocab_size, context_window, temperature, eos);
    Rng rng(seed);
    auto flat = p.params();
    for (Eigen::Index i = 0; i < flat.size(); ++i) flat[i] = static_cast<Scalar>(scale * rng.normal());
    return p;
  }

  int vocab_size() const { return vocab_size_; }
  int context_window() const { return context_window_; }
  Scalar temperature() const { return temperature_; }
  std::optional<TokenId> eos() const { return eos_; }
  TokenId pad_id() const { return vocab_size_; }
  Eigen::Index num_contexts() const { return num_contexts_; }
  Eigen::Index num_params() const { return logits_.size(); }

  Matrix& logits() { return logits_; }
  const Matrix& logits() const { return logits_; }

  /// Flat row-major view of the logits table; gradients use the same layout.
  Eigen::Map<ParamVector> params() { return {logits_.data(), logits_.size()}; }
  Eigen::Map<const ParamVector> params() const { return {logits_.data(), logits_.size()}; }

  bool same_shape(const TabularPolicy& other) const {
    return vocab_size_ == other.vocab_size_ && context_window_ == other.context_window_ && eos_ == other.eos_;
  }

  void check_token(TokenId token) const {
    if (token < 0 || token >= vocab_size_)
      throw InvalidArgument("token id " + std::to_string(token) + " outside vocabulary of size " +
                            std::to_string(vocab_size_));
  }

  /// Row index of the context formed by the last K entries of `history`.
  Eigen::Index context_index(std::span<const TokenId> history) const {
    Eigen::Index index = 0;
    const auto n = static_cast<std::ptrdiff_t>(history.size());
    for (int slot = 0; slot < context_window_; ++slot) {
      const std::ptrdiff_t pos = n - context_window_ + slot;
      TokenId tok = pad_id();
      if (pos >= 0) {
        tok = history[static_cast<std::size_t>(pos)];
        check_token(tok);
      }
      index = index * (vocab_size_ + 1) + tok;
    }
    return index;
  }

  /// Inverse of context_index: the padded K-tuple for a row.
  Tokens context_tuple(Eigen::Index index) const {
    Tokens ctx(static_cast<std::size_t>(context_window_));
    for (int slot = context_window_ - 1; slot >= 0; --slot) {
      ctx[static_cast<std::size_t>(slot)] = static_cast<TokenId>(index % (vocab_size_ + 1));
      index /= (vocab_size_ + 1);
    }
    return ctx;
  }

  /// log softmax(logits[row] / temperature), max-subtracted.
  ParamVector row_log_probs(Eigen::Index row) const {
    ParamVector scaled = logits_.row(row).transpose() / temperature_;
    const Scalar m = scaled.maxCoeff();
    using std::exp;
    using std::log;
    const Scalar lse = m + log((scaled.array() - m).exp().sum());
    return (scaled.array() - lse).matrix();
  }

  ParamVector row_probs(Eigen::Index row) const { return row_log_probs(row).array().exp().matrix(); }

  template <typename Other>
  TabularPolicy<Other> cast() const {
    TabularPolicy<Other> out(vocab_size_, context_window_, static_cast<Other>(temperature_), eos_);
    out.logits() = logits_.template cast<Other>();
    return out;
  }

 private:
  int vocab_size_;
  int context_window_;
  Scalar temperature_;
  std::optional<TokenId> eos_;
  Eigen::Index num_contexts_ = 0;
  Matrix logits_;
};

namespace detail {

inline Tokens concat(std::span<const TokenId> prompt, std::span<const TokenId> tokens) {
  Tokens history(prompt.begin(), prompt.end());
  history.insert(history.end(), tokens.begin(), tokens.end());
  return history;
}

// Calls fn(t, row) for every response position t with the row index of h_t.
template <typename Scalar, typename Fn>
void for_each_step(const TabularPolicy<Scalar>& policy, std::span<const TokenId> prompt,
                   std::span<const TokenId> tokens, Fn&& fn) {
  if (tokens.empty()) throw InvalidArgument("token list must be nonempty");
  const Tokens history = concat(prompt, tokens);
  const std::span<const TokenId> hist(history);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    policy.check_token(tokens[t]);
    fn(t, policy.context_index(hist.first(prompt.size() + t)));
  }
}

}  // namespace detail

/// log pi(token | context); the context is truncated/padded to the window.
template <typename Scalar>
Scalar token_log_prob(const TabularPolicy<Scalar>& policy, std::span<const TokenId> context, TokenId token) {
  policy.check_token(token);
  return policy.row_log_probs(policy.context_index(context))[token];
}

/// Per-position conditionals log pi(y_t | h_t) with h_t = (prompt, y_<t).
template <typename Scalar>
std::vector<Scalar> token_log_probs(const TabularPolicy<Scalar>& policy, std::span<const TokenId> prompt,
                                    std::span<const TokenId> tokens) {
  std::vector<Scalar> out(tokens.size());
  detail::for_each_step(policy, prompt, tokens, [&](std::size_t t, Eigen::Index row) {
    out[t] = policy.row_log_probs(row)[tokens[t]];
  });
  return out;
}

template <typename Scalar>
Scalar sequence_log_prob(const TabularPolicy<Scalar>& policy, std::span<const TokenId> prompt,
                         std::span<const TokenId> tokens) {
  Scalar total(0);
  detail::for_each_step(policy, prompt, tokens, [&](std::size_t t, Eigen::Index row) {
    total += policy.row_log_probs(row)[tokens[t]];
  });
  return total;
}

/// Adds sum_t weights[t] * d log pi(y_t|h_t) / d logits into `out`.
/// The score of one step is (onehot(y_t) - softmax(row)) / temperature on that row.
template <typename Scalar>
void accumulate_score(const TabularPolicy<Scalar>& policy, std::span<const TokenId> prompt,
                      std::span<const TokenId> tokens, std::span<const Scalar> weights, Vector<Scalar>& out) {
  if (weights.size() != tokens.size()) throw InvalidArgument("weights/tokens length mismatch");
  if (out.size() != policy.num_params()) throw InvalidArgument("gradient buffer has wrong size");
  const Eigen::Index V = policy.vocab_size();
  detail::for_each_step(policy, prompt, tokens, [&](std::size_t t, Eigen::Index row) {
    const Scalar w = weights[t];
    if (w == Scalar(0)) return;
    auto block = out.segment(row * V, V);
    block -= (w / policy.temperature()) * policy.row_probs(row);
    block[tokens[t]] += w / policy.temperature();
  });
}

/// Exact gradient of sequence_log_prob with respect to every logits entry.
template <typename Scalar>
Vector<Scalar> log_prob_gradient(const TabularPolicy<Scalar>& policy, std::span<const TokenId> prompt,
                                 std::span<const TokenId> tokens) {
  Vector<Scalar> grad = Vector<Scalar>::Zero(policy.num_params());
  const std::vector<Scalar> ones(tokens.size(), Scalar(1));
  accumulate_score(policy, prompt, tokens, std::span<const Scalar>(ones), grad);
  return grad;
}

/// Autoregressive sampling until EOS or max_len. logp_old is the sampling
/// policy's log-probability; logp_new starts equal to it.
SequenceSample sample_sequence(const TabularPolicy<double>& policy, std::span<const TokenId> prompt, int max_len,
                               std::uint64_t seed);

struct WeightedSequence {
  SequenceSample sample;
  double probability = 0.0;
};

inline constexpr double kEnumerationLeafLimit = 1e7;

/// Exact number of leaves enumerate_all would visit (upper bound when some
/// branches underflow to zero probability).
double enumeration_leaf_count(int vocab_size, bool has_eos, int max_len);

/// Every sequence terminating at EOS or reaching max_len, with its exact
/// probability. Branches whose probability underflows to 0 are skipped.
std::vector<WeightedSequence> enumerate_all(const TabularPolicy<double>& policy, std::span<const TokenId> prompt,
                                            int max_len);

}  // namespace fspo
