#pragma once

// Length-fairness measurement (clip fraction per length bin, LRE and its
// gradient-weighted variant) and exact enumeration oracles: the directional
// certificate relating LRE to the angle between clipped and true updates,
// the drift/KL identity, and the shared-prefix weighting demonstration.

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "fspo/common.hpp"
#include "fspo/objectives.hpp"
#include "fspo/policy.hpp"

namespace fspo {

struct SeqRecord {
  long step = 0;
  int length = 1;
  double log_ratio = 0.0;
  double advantage = 0.0;
  bool clipped_low = false;
  bool clipped_high = false;
  bool clipped_dual = false;
  Method method = Method::FspoLog;
  // Not needed for fairness analysis; carried for off-policy bookkeeping.
  double logp_old = 0.0;
  double logp_new = 0.0;
  double reward = 0.0;

  bool clipped() const { return clipped_low || clipped_high || clipped_dual; }
};

struct FairnessBin {
  int bin_lo = 0;
  int bin_hi = 0;  // exclusive
  std::size_t count = 0;
  double clip_fraction = 0.0;
  double acceptance = 1.0;  // 1 - clip_fraction
};

struct FairnessReport {
  std::vector<FairnessBin> bins;
  double q_bar = 1.0;
  double lre = 0.0;
  std::optional<double> lre_weighted;
  std::size_t excluded_short = 0;
};

/// Per-bin fraction of records with any clip flag; bins [k b, (k+1) b), empty bins omitted.
std::vector<FairnessBin> clip_fraction_by_bin(std::span<const SeqRecord> records, int bin_size);

/// 1/2 * count-weighted mean of |q(L)/q_bar - 1| over bins with bin_lo >= min_length.
double lre(std::span<const FairnessBin> bins, int min_length);

/// Drops records with L < min_length, bins the rest, and computes q_bar and LRE.
FairnessReport fairness_report(std::span<const SeqRecord> records, int bin_size, int min_length);

struct LengthStratumSummary {
  double weight;     // P(L) or a count
  double acceptance; // q(L)
  double norm;       // ||g_L*||
};

/// 1/2 E[|q/q_bar - 1| * ||g_L*|| / E||g_L*||].
double lre_weighted(std::span<const LengthStratumSummary> strata);

struct LengthStratum {
  int length = 0;
  double probability = 0.0;  // P_old(L)
  double acceptance = 0.0;   // q(L)
  VectorXd g_star;           // E[e^S grad log pi A | L]
  VectorXd g_b;              // same, conditioned on acceptance (zero when q(L) = 0)
};

struct UpdateTargets {
  std::vector<LengthStratum> strata;
  VectorXd g_star;  // E_L[g_L*]
  VectorXd g_b;     // E_L[q(L) g_L^b]
};

using RewardFn = std::function<double(const Tokens& prompt, const Tokens& tokens)>;

/// Two-sided acceptance |S| within the band of `spec` (per token for PPO_TOKEN).
bool accepted(const TabularPolicy<double>& policy_new, const TabularPolicy<double>& policy_old,
              const SequenceSample& sample, const ClipSpec& spec);

/// Exact per-length update targets by full enumeration under policy_old.
/// Advantage is reward minus its exact expectation under policy_old.
UpdateTargets exact_update_targets(const TabularPolicy<double>& policy_old, const TabularPolicy<double>& policy_new,
                                   const RewardFn& reward_fn, std::span<const TokenId> prompt, const ClipSpec& spec,
                                   int max_len);

struct Theorem1Certificate {
  VectorXd g_star;
  VectorXd g_b;
  std::vector<LengthStratum> per_length;
  double kappa = 1.0;
  double eta = 0.0;
  double gamma = 1.0;
  double lre = 0.0;
  double lre_weighted = 0.0;
  double rho_bound = 0.0;
  double rho_weighted = 0.0;  // rho with LRE_w and gamma = 1
  double cosine = 1.0;
  double bound = 1.0;
  double bound_weighted = 1.0;
  std::optional<bool> holds;           // undefined when eta >= 1
  std::optional<bool> holds_weighted;
};

/// Measures kappa, eta, gamma as the tightest constants on the instance and
/// checks cos(g_b, g*) >= (1 - rho) / (1 + rho).
Theorem1Certificate theorem1_certificate(const UpdateTargets& targets);

/// cos(u, v) for nonzero vectors; 0 if either vanishes.
double cosine(const VectorXd& u, const VectorXd& v);
/// (||v|| - ||u - v||) / (||v|| + ||u - v||).
double cosine_lemma_bound(const VectorXd& u, const VectorXd& v);

struct KlDrift {
  double lhs = 0.0;  // E_old[S_L]
  double rhs = 0.0;  // -sum_t E_old KL(old(.|h_t) || new(.|h_t))
  double gap = 0.0;
};

/// Both sides of E[S_L] = -sum_t E KL by two separate enumerations. Policies must have EOS disabled.
KlDrift kl_drift_check(const TabularPolicy<double>& policy_old, const TabularPolicy<double>& policy_new,
                       std::span<const TokenId> prompt, int fixed_length);

struct PrefixDemoInstance {
  TabularPolicy<double> policy_old;
  TabularPolicy<double> policy_new;
  Tokens prompt;
  Tokens shared_prefix;
  Tokens continuation_a;
  Tokens continuation_b;
  double advantage_a = 0.5;
  double advantage_b = -0.5;
};

struct PrefixDemoReport {
  double w_a = 1.0;
  double w_b = 1.0;
  // Coefficient multiplying the shared-prefix score block in the summed update.
  double sequence_prefix_coefficient = 0.0;
  std::vector<double> token_ratios_a;  // per shared-prefix token
  std::vector<double> token_ratios_b;
  std::vector<double> token_prefix_coefficients;  // r_t * A_a + r_t * A_b
  bool sequence_prefers_a = false;                // w_a > w_b
  bool token_ratios_identical = false;
};

/// Sequence-level vs token-level IS weighting of a prefix shared by two
/// completions with equal old-policy probability.
PrefixDemoReport prefix_weighting_demo(const PrefixDemoInstance& instance);

/// Admissible random instance: the old policy is uniform on every row the
/// continuations visit, so pi_old(y_a) == pi_old(y_b) exactly; a and b are
/// ordered so that pi_new(y_a) >= pi_new(y_b).
PrefixDemoInstance make_prefix_demo_instance(std::uint64_t seed, int vocab_size = 3, int prefix_len = 2,
                                             int continuation_len = 2, double perturbation = 0.5);

}  // namespace fspo
