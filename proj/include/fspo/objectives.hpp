#pragma once

// Clipped policy-gradient surrogates: token-level PPO/GRPO, sequence-level
// RLOO, length-normalized GSPO, and FSPO's log-space band that widens as
// sqrt(L). All surrogates return a loss to minimize (the negated objective).

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fspo/common.hpp"
#include "fspo/policy.hpp"

namespace fspo {

enum class Method { PpoToken, RlooSeq, GspoNorm, FspoLog };

std::string_view method_name(Method m);
/// Accepts the canonical names (FSPO_LOG, ...) and short aliases (fspo, grpo, ppo, rloo, gspo).
Method parse_method(std::string_view text);

struct ClipSpec {
  Method method = Method::FspoLog;
  // Ratio-space methods clip to [1 - c_lower, 1 + c_upper]. FSPO clips the
  // log-ratio to [mu - c_lower*sqrt(L), mu + c_upper*sqrt(L)].
  double c_upper = 0.03;
  double c_lower = 0.03;
  std::optional<double> c_dual = 0.03;
  double drift_mu = 0.0;
  std::optional<double> scale_c = 0.03;  // c = z * sigma_hat, FSPO only

  /// Per-method defaults from the reference hyperparameter tables.
  static ClipSpec defaults(Method method);
  /// Symmetric FSPO spec with scale c on both sides.
  static ClipSpec fspo(double c, std::optional<double> c_dual, double drift_mu = 0.0);

  void validate() const;
  bool operator==(const ClipSpec&) const = default;
};

struct ClipFlags {
  bool low = false;
  bool high = false;
  bool dual = false;
  bool any() const { return low || high || dual; }
  bool operator==(const ClipFlags&) const = default;
};

struct GroupBatch {
  Tokens prompt;
  std::vector<SequenceSample> samples;
  int size() const { return static_cast<int>(samples.size()); }
  void validate() const;
};

inline constexpr double kEpsStd = 1e-6;

/// (R_i - mean R) / max(std R, 1e-6), population std.
std::vector<double> grpo_advantage(std::span<const double> rewards);
/// R_i minus the mean of the other G-1 rewards.
std::vector<double> loo_advantage(std::span<const double> rewards);

/// S = sum_t [log pi_new(y_t|h_t) - log pi_old(y_t|h_t)].
template <typename Scalar>
Scalar sequence_log_ratio(const TabularPolicy<Scalar>& policy_new, const TabularPolicy<Scalar>& policy_old,
                          const SequenceSample& sample) {
  if (!policy_new.same_shape(policy_old)) throw InvalidArgument("policy shapes differ");
  const auto new_lp = token_log_probs(policy_new, std::span<const TokenId>(sample.prompt), sample.tokens);
  const auto old_lp = token_log_probs(policy_old, std::span<const TokenId>(sample.prompt), sample.tokens);
  Scalar total(0);
  for (std::size_t t = 0; t < new_lp.size(); ++t) total += new_lp[t] - old_lp[t];
  return total;
}

/// Symmetric FSPO band mu + c * sqrt(L).
double fspo_band(int length, const ClipSpec& spec);

struct LogBand {
  double lower;
  double upper;
};

/// Log-space acceptance interval for a length-L sequence under `spec`.
/// FSPO: [mu - c_lower sqrt L, mu + c_upper sqrt L]; RLOO: [log(1-c_lower), log(1+c_upper)];
/// GSPO: the RLOO interval scaled by L. Not defined for PPO_TOKEN.
LogBand acceptance_band(int length, const ClipSpec& spec);

/// Two-sided acceptance flags for a sequence log-ratio: low if below the band,
/// high if above. Used for acceptance-rate diagnostics, independent of the
/// advantage sign.
ClipFlags band_flags(double log_ratio, int length, const ClipSpec& spec);

namespace detail {

template <typename Scalar>
struct Term {
  Scalar value;   // per-sample objective contribution
  Scalar slope;   // d value / d (log-ratio driving the term)
  ClipFlags flags;
};

// Pessimistic min of ratio*A and clip(ratio)*A, plus the dual cap for A < 0.
// `ratio` is exp(x) for the log-quantity x the caller differentiates through;
// `dratio` = d ratio / d x.
template <typename Scalar>
Term<Scalar> pessimistic(Scalar ratio, Scalar dratio, Scalar lo, Scalar hi, std::optional<Scalar> dual_cap,
                         double advantage) {
  const Scalar adv(advantage);
  const Scalar clipped_ratio = std::clamp(ratio, lo, hi);
  const Scalar unclipped = ratio * adv;
  const Scalar clipped = clipped_ratio * adv;
  Term<Scalar> term{unclipped, dratio * adv, {}};
  if (clipped < unclipped) {
    term.value = clipped;
    term.slope = Scalar(0);
    if (ratio > hi)
      term.flags.high = true;
    else
      term.flags.low = true;
  }
  if (advantage < 0.0 && dual_cap) {
    const Scalar capped = *dual_cap * adv;
    if (term.value < capped) {
      term.value = capped;
      term.slope = Scalar(0);
      term.flags.dual = true;
    }
  }
  return term;
}

template <typename Scalar>
Term<Scalar> sequence_term(Scalar log_ratio, int length, double advantage, const ClipSpec& spec) {
  using std::exp;
  using std::sqrt;
  const Scalar root_len = sqrt(Scalar(length));
  switch (spec.method) {
    case Method::FspoLog: {
      // Clipping S in log space then exponentiating equals clipping e^S to
      // [e^lower, e^upper]; the ratio form keeps one code path.
      const Scalar lo = exp(Scalar(spec.drift_mu) - Scalar(spec.c_lower) * root_len);
      const Scalar hi = exp(Scalar(spec.drift_mu) + Scalar(spec.c_upper) * root_len);
      std::optional<Scalar> cap;
      if (spec.c_dual) cap = exp(Scalar(*spec.c_dual) * root_len);
      const Scalar ratio = exp(log_ratio);
      return pessimistic(ratio, ratio, lo, hi, cap, advantage);
    }
    case Method::RlooSeq: {
      std::optional<Scalar> cap;
      if (spec.c_dual) cap = Scalar(1 + *spec.c_dual);
      const Scalar ratio = exp(log_ratio);
      return pessimistic(ratio, ratio, Scalar(1 - spec.c_lower), Scalar(1 + spec.c_upper), cap, advantage);
    }
    case Method::GspoNorm: {
      const Scalar ratio = exp(log_ratio / Scalar(length));
      return pessimistic(ratio, ratio / Scalar(length), Scalar(1 - spec.c_lower), Scalar(1 + spec.c_upper),
                         std::optional<Scalar>{}, advantage);
    }
    case Method::PpoToken:
      break;
  }
  throw InvalidArgument("sequence_term: PPO_TOKEN is token-level");
}

inline double require_advantage(const SequenceSample& s) {
  if (!s.advantage) throw InvalidState("sample advantage not populated");
  return *s.advantage;
}

template <typename Scalar>
void check_sequence_inputs(const GroupBatch& batch, std::span<const Scalar> log_ratios, const ClipSpec& spec,
                           Method expected) {
  if (spec.method != expected)
    throw InvalidArgument("clip spec method " + std::string(method_name(spec.method)) + " does not match " +
                          std::string(method_name(expected)));
  if (log_ratios.size() != batch.samples.size()) throw InvalidArgument("log-ratio count does not match batch size");
  if (batch.samples.empty()) throw InvalidArgument("empty batch");
}

}  // namespace detail

template <typename Scalar>
struct SurrogateResult {
  Scalar loss;
  std::vector<ClipFlags> flags;  // one per sample
};

/// Shared implementation of the three sequence-level surrogates:
/// loss = -(1/G) sum_i term_i, denominator G regardless of clipping.
template <typename Scalar>
SurrogateResult<Scalar> sequence_surrogate(const GroupBatch& batch, std::span<const Scalar> log_ratios,
                                           const ClipSpec& spec) {
  detail::check_sequence_inputs(batch, log_ratios, spec, spec.method);
  SurrogateResult<Scalar> out{Scalar(0), {}};
  out.flags.reserve(batch.samples.size());
  for (std::size_t i = 0; i < batch.samples.size(); ++i) {
    const auto& s = batch.samples[i];
    const auto term = detail::sequence_term(log_ratios[i], s.length, detail::require_advantage(s), spec);
    out.loss -= term.value;
    out.flags.push_back(term.flags);
  }
  out.loss /= Scalar(batch.size());
  return out;
}

template <typename Scalar>
SurrogateResult<Scalar> fspo_surrogate(const GroupBatch& batch, std::span<const Scalar> log_ratios,
                                       const ClipSpec& spec) {
  detail::check_sequence_inputs(batch, log_ratios, spec, Method::FspoLog);
  return sequence_surrogate(batch, log_ratios, spec);
}

template <typename Scalar>
SurrogateResult<Scalar> rloo_surrogate(const GroupBatch& batch, std::span<const Scalar> log_ratios,
                                       const ClipSpec& spec) {
  detail::check_sequence_inputs(batch, log_ratios, spec, Method::RlooSeq);
  return sequence_surrogate(batch, log_ratios, spec);
}

template <typename Scalar>
SurrogateResult<Scalar> gspo_surrogate(const GroupBatch& batch, std::span<const Scalar> log_ratios,
                                       const ClipSpec& spec) {
  detail::check_sequence_inputs(batch, log_ratios, spec, Method::GspoNorm);
  return sequence_surrogate(batch, log_ratios, spec);
}

template <typename Scalar>
struct TokenSurrogateResult {
  Scalar loss;
  std::vector<std::vector<ClipFlags>> flags;  // [sample][token]
};

/// Token-level PPO/GRPO surrogate, token-mean over the whole batch. The
/// sequence advantage is broadcast to every token.
template <typename Scalar>
TokenSurrogateResult<Scalar> ppo_token_surrogate(const GroupBatch& batch,
                                                 const std::vector<std::vector<Scalar>>& token_logp_old,
                                                 const std::vector<std::vector<Scalar>>& token_logp_new,
                                                 const ClipSpec& spec) {
  using std::exp;
  if (spec.method != Method::PpoToken) throw InvalidArgument("ppo_token_surrogate needs a PPO_TOKEN clip spec");
  if (token_logp_old.size() != batch.samples.size() || token_logp_new.size() != batch.samples.size())
    throw InvalidArgument("per-token log-prob lists do not match batch size");
  std::optional<Scalar> cap;
  if (spec.c_dual) cap = Scalar(1 + *spec.c_dual);
  TokenSurrogateResult<Scalar> out{Scalar(0), {}};
  std::size_t token_count = 0;
  for (std::size_t i = 0; i < batch.samples.size(); ++i) {
    const auto& s = batch.samples[i];
    const double adv = detail::require_advantage(s);
    if (token_logp_old[i].size() != s.tokens.size() || token_logp_new[i].size() != s.tokens.size())
      throw InvalidArgument("per-token log-prob length mismatch for sample " + std::to_string(i));
    auto& row = out.flags.emplace_back();
    for (std::size_t t = 0; t < s.tokens.size(); ++t) {
      const Scalar ratio = exp(token_logp_new[i][t] - token_logp_old[i][t]);
      const auto term = detail::pessimistic(ratio, ratio, Scalar(1 - spec.c_lower), Scalar(1 + spec.c_upper), cap, adv);
      out.loss -= term.value;
      row.push_back(term.flags);
      ++token_count;
    }
  }
  if (token_count == 0) throw InvalidArgument("empty batch");
  out.loss /= Scalar(token_count);
  return out;
}

/// Per-sample summary of token flags: a flag is set if any token carries it.
std::vector<ClipFlags> collapse_token_flags(const std::vector<std::vector<ClipFlags>>& token_flags);

template <typename Scalar>
struct SurrogateEval {
  Scalar loss;
  std::vector<ClipFlags> flags;       // per sample (token flags collapsed for PPO)
  std::vector<Scalar> log_ratios;     // per sample S_i
  Vector<Scalar> gradient;            // d loss / d logits of policy_new (empty unless requested)
};

/// Evaluates the surrogate for `spec.method` from the two policies and,
/// optionally, its exact gradient w.r.t. policy_new. Branches where the
/// clipped constant attains the min contribute zero gradient.
template <typename Scalar>
SurrogateEval<Scalar> evaluate_surrogate(const TabularPolicy<Scalar>& policy_new,
                                         const TabularPolicy<Scalar>& policy_old, const GroupBatch& batch,
                                         const ClipSpec& spec, bool with_gradient) {
  using std::exp;
  if (!policy_new.same_shape(policy_old)) throw InvalidArgument("policy shapes differ");
  spec.validate();
  SurrogateEval<Scalar> out{Scalar(0), {}, {}, {}};
  if (with_gradient) out.gradient = Vector<Scalar>::Zero(policy_new.num_params());
  const auto G = batch.samples.size();

  if (spec.method == Method::PpoToken) {
    std::vector<std::vector<Scalar>> old_lp(G), new_lp(G);
    for (std::size_t i = 0; i < G; ++i) {
      const auto& s = batch.samples[i];
      old_lp[i] = token_log_probs(policy_old, std::span<const TokenId>(s.prompt), s.tokens);
      new_lp[i] = token_log_probs(policy_new, std::span<const TokenId>(s.prompt), s.tokens);
      Scalar total(0);
      for (std::size_t t = 0; t < s.tokens.size(); ++t) total += new_lp[i][t] - old_lp[i][t];
      out.log_ratios.push_back(total);
    }
    const auto res = ppo_token_surrogate(batch, old_lp, new_lp, spec);
    out.loss = res.loss;
    out.flags = collapse_token_flags(res.flags);
    if (with_gradient) {
      std::size_t token_count = 0;
      for (const auto& s : batch.samples) token_count += s.tokens.size();
      std::optional<Scalar> cap;
      if (spec.c_dual) cap = Scalar(1 + *spec.c_dual);
      for (std::size_t i = 0; i < G; ++i) {
        const auto& s = batch.samples[i];
        std::vector<Scalar> weights(s.tokens.size());
        for (std::size_t t = 0; t < s.tokens.size(); ++t) {
          const Scalar ratio = exp(new_lp[i][t] - old_lp[i][t]);
          const auto term = detail::pessimistic(ratio, ratio, Scalar(1 - spec.c_lower), Scalar(1 + spec.c_upper),
                                                cap, *s.advantage);
          weights[t] = -term.slope / Scalar(token_count);
        }
        accumulate_score(policy_new, std::span<const TokenId>(s.prompt), s.tokens, std::span<const Scalar>(weights),
                         out.gradient);
      }
    }
    return out;
  }

  for (const auto& s : batch.samples) out.log_ratios.push_back(sequence_log_ratio(policy_new, policy_old, s));
  const auto res = sequence_surrogate(batch, std::span<const Scalar>(out.log_ratios), spec);
  out.loss = res.loss;
  out.flags = res.flags;
  if (with_gradient) {
    for (std::size_t i = 0; i < G; ++i) {
      const auto& s = batch.samples[i];
      const auto term = detail::sequence_term(out.log_ratios[i], s.length, *s.advantage, spec);
      if (term.slope == Scalar(0)) continue;
      const std::vector<Scalar> weights(s.tokens.size(), -term.slope / Scalar(G));
      accumulate_score(policy_new, std::span<const TokenId>(s.prompt), s.tokens, std::span<const Scalar>(weights),
                       out.gradient);
    }
  }
  return out;
}

template <typename Scalar>
Scalar surrogate_loss(const TabularPolicy<Scalar>& policy_new, const TabularPolicy<Scalar>& policy_old,
                      const GroupBatch& batch, const ClipSpec& spec) {
  return evaluate_surrogate(policy_new, policy_old, batch, spec, false).loss;
}

template <typename Scalar>
Vector<Scalar> surrogate_gradient(const TabularPolicy<Scalar>& policy_new, const TabularPolicy<Scalar>& policy_old,
                                  const GroupBatch& batch, const ClipSpec& spec) {
  return evaluate_surrogate(policy_new, policy_old, batch, spec, true).gradient;
}

}  // namespace fspo
