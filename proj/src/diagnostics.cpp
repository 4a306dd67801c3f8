#include "fspo/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace fspo {

std::vector<FairnessBin> clip_fraction_by_bin(std::span<const SeqRecord> records, int bin_size) {
  if (bin_size < 1) throw InvalidArgument("bin_size must be >= 1");
  std::map<int, std::pair<std::size_t, std::size_t>> counts;  // bin -> (total, clipped)
  for (const auto& r : records) {
    auto& c = counts[r.length / bin_size];
    ++c.first;
    if (r.clipped()) ++c.second;
  }
  std::vector<FairnessBin> bins;
  bins.reserve(counts.size());
  for (const auto& [k, c] : counts) {
    FairnessBin b;
    b.bin_lo = k * bin_size;
    b.bin_hi = (k + 1) * bin_size;
    b.count = c.first;
    b.clip_fraction = double(c.second) / double(c.first);
    b.acceptance = double(c.first - c.second) / double(c.first);
    bins.push_back(b);
  }
  return bins;
}

namespace {

// q_bar and LRE over a weighted set of acceptance rates.
std::pair<double, double> weighted_lre(std::span<const double> weights, std::span<const double> q) {
  double total = 0.0, q_sum = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    total += weights[i];
    q_sum += weights[i] * q[i];
  }
  if (!(total > 0.0)) throw UndefinedMetric("no weight in the included length strata");
  const double q_bar = q_sum / total;
  if (!(q_bar > 0.0)) throw UndefinedMetric("mean acceptance q_bar is zero; LRE undefined");
  double dev = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) dev += weights[i] * std::abs(q[i] / q_bar - 1.0);
  return {q_bar, 0.5 * dev / total};
}

}  // namespace

double lre(std::span<const FairnessBin> bins, int min_length) {
  std::vector<double> w, q;
  for (const auto& b : bins) {
    if (b.bin_lo < min_length) continue;
    w.push_back(double(b.count));
    q.push_back(b.acceptance);
  }
  if (w.empty()) throw InvalidArgument("no bin at or above min_length");
  return weighted_lre(w, q).second;
}

FairnessReport fairness_report(std::span<const SeqRecord> records, int bin_size, int min_length) {
  FairnessReport report;
  std::vector<SeqRecord> kept;
  kept.reserve(records.size());
  for (const auto& r : records) {
    if (r.length < min_length)
      ++report.excluded_short;
    else
      kept.push_back(r);
  }
  report.bins = clip_fraction_by_bin(kept, bin_size);
  if (report.bins.empty()) throw InvalidArgument("no records at or above min_length");
  std::vector<double> w, q;
  for (const auto& b : report.bins) {
    w.push_back(double(b.count));
    q.push_back(b.acceptance);
  }
  std::tie(report.q_bar, report.lre) = weighted_lre(w, q);
  return report;
}

double lre_weighted(std::span<const LengthStratumSummary> strata) {
  double total = 0.0, q_sum = 0.0, norm_sum = 0.0;
  for (const auto& s : strata) {
    total += s.weight;
    q_sum += s.weight * s.acceptance;
    norm_sum += s.weight * s.norm;
  }
  if (!(total > 0.0)) throw UndefinedMetric("no weight in length strata");
  const double q_bar = q_sum / total;
  const double mean_norm = norm_sum / total;
  if (!(q_bar > 0.0)) throw UndefinedMetric("mean acceptance q_bar is zero");
  if (!(mean_norm > 0.0)) throw UndefinedMetric("all per-length gradient norms are zero");
  double acc = 0.0;
  for (const auto& s : strata) acc += s.weight * std::abs(s.acceptance / q_bar - 1.0) * s.norm / mean_norm;
  return 0.5 * acc / total;
}

bool accepted(const TabularPolicy<double>& policy_new, const TabularPolicy<double>& policy_old,
              const SequenceSample& sample, const ClipSpec& spec) {
  if (spec.method == Method::PpoToken) {
    const auto lp_new = token_log_probs(policy_new, std::span<const TokenId>(sample.prompt), sample.tokens);
    const auto lp_old = token_log_probs(policy_old, std::span<const TokenId>(sample.prompt), sample.tokens);
    const double lo = std::log1p(-spec.c_lower), hi = std::log1p(spec.c_upper);
    for (std::size_t t = 0; t < lp_new.size(); ++t) {
      const double r = lp_new[t] - lp_old[t];
      if (r < lo || r > hi) return false;
    }
    return true;
  }
  const double S = sequence_log_ratio(policy_new, policy_old, sample);
  return !band_flags(S, sample.length, spec).any();
}

UpdateTargets exact_update_targets(const TabularPolicy<double>& policy_old, const TabularPolicy<double>& policy_new,
                                   const RewardFn& reward_fn, std::span<const TokenId> prompt, const ClipSpec& spec,
                                   int max_len) {
  if (!policy_new.same_shape(policy_old)) throw InvalidArgument("policy shapes differ");
  const auto leaves = enumerate_all(policy_old, prompt, max_len);

  double mean_reward = 0.0;
  std::vector<double> rewards(leaves.size());
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    rewards[i] = reward_fn(leaves[i].sample.prompt, leaves[i].sample.tokens);
    mean_reward += leaves[i].probability * rewards[i];
  }

  const Eigen::Index P = policy_old.num_params();
  struct Acc {
    double prob = 0.0;
    double accepted_prob = 0.0;
    VectorXd sum_all;
    VectorXd sum_accepted;
  };
  std::map<int, Acc> by_length;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    const auto& leaf = leaves[i];
    auto& acc = by_length[leaf.sample.length];
    if (acc.sum_all.size() == 0) {
      acc.sum_all = VectorXd::Zero(P);
      acc.sum_accepted = VectorXd::Zero(P);
    }
    const double S = sequence_log_ratio(policy_new, policy_old, leaf.sample);
    const double advantage = rewards[i] - mean_reward;
    const double coeff = leaf.probability * std::exp(S) * advantage;
    acc.prob += leaf.probability;
    const bool ok = accepted(policy_new, policy_old, leaf.sample, spec);
    if (ok) acc.accepted_prob += leaf.probability;
    if (coeff == 0.0) continue;
    const VectorXd score = log_prob_gradient(policy_new, std::span<const TokenId>(leaf.sample.prompt), leaf.sample.tokens);
    acc.sum_all.noalias() += coeff * score;
    if (ok) acc.sum_accepted.noalias() += coeff * score;
  }

  UpdateTargets out;
  out.g_star = VectorXd::Zero(P);
  out.g_b = VectorXd::Zero(P);
  for (auto& [length, acc] : by_length) {
    if (!(acc.prob > 0.0)) continue;
    LengthStratum s;
    s.length = length;
    s.probability = acc.prob;
    s.acceptance = acc.accepted_prob / acc.prob;
    s.g_star = acc.sum_all / acc.prob;
    s.g_b = acc.accepted_prob > 0.0 ? VectorXd(acc.sum_accepted / acc.accepted_prob) : VectorXd::Zero(P);
    out.g_star.noalias() += acc.sum_all;
    out.g_b.noalias() += acc.sum_accepted;
    out.strata.push_back(std::move(s));
  }
  return out;
}

double cosine(const VectorXd& u, const VectorXd& v) {
  const double nu = u.norm(), nv = v.norm();
  if (nu == 0.0 || nv == 0.0) return 0.0;
  return u.dot(v) / (nu * nv);
}

double cosine_lemma_bound(const VectorXd& u, const VectorXd& v) {
  const double nv = v.norm(), d = (u - v).norm();
  return (nv - d) / (nv + d);
}

Theorem1Certificate theorem1_certificate(const UpdateTargets& targets) {
  Theorem1Certificate cert;
  cert.g_star = targets.g_star;
  cert.g_b = targets.g_b;
  cert.per_length = targets.strata;
  const double g_norm = targets.g_star.norm();
  if (!(g_norm > 0.0)) throw UndefinedMetric("g* is zero; directional certificate undefined");

  double total = 0.0, q_bar = 0.0, mean_norm = 0.0;
  std::vector<double> norms;
  for (const auto& s : targets.strata) {
    const double n = s.g_star.norm();
    norms.push_back(n);
    total += s.probability;
    q_bar += s.probability * s.acceptance;
    mean_norm += s.probability * n;
  }
  q_bar /= total;
  mean_norm /= total;

  cert.kappa = mean_norm / g_norm;

  cert.eta = 0.0;
  for (std::size_t i = 0; i < targets.strata.size(); ++i) {
    const auto& s = targets.strata[i];
    const double diff = (s.g_b - s.g_star).norm();
    double ratio;
    if (norms[i] > 0.0)
      ratio = diff / norms[i];
    else
      ratio = diff > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
    cert.eta = std::max(cert.eta, ratio);
  }

  double mean_abs_dev = 0.0, weighted_dev = 0.0;
  for (std::size_t i = 0; i < targets.strata.size(); ++i) {
    const auto& s = targets.strata[i];
    mean_abs_dev += s.probability * std::abs(s.acceptance - q_bar);
    weighted_dev += s.probability * std::abs(s.acceptance - q_bar) * norms[i];
  }
  mean_abs_dev /= total;
  weighted_dev /= total;
  cert.gamma = mean_abs_dev > 0.0 && mean_norm > 0.0 ? weighted_dev / (mean_abs_dev * mean_norm) : 1.0;

  if (q_bar > 0.0) {
    cert.lre = 0.5 * mean_abs_dev / q_bar;
    cert.lre_weighted = mean_norm > 0.0 ? 0.5 * weighted_dev / (q_bar * mean_norm) : 0.0;
  } else {
    cert.lre = std::numeric_limits<double>::quiet_NaN();
    cert.lre_weighted = std::numeric_limits<double>::quiet_NaN();
  }

  cert.rho_bound = cert.kappa * (cert.eta + 2.0 * cert.gamma * (1.0 + cert.eta) * cert.lre);
  cert.rho_weighted = cert.kappa * (cert.eta + 2.0 * (1.0 + cert.eta) * cert.lre_weighted);
  cert.bound = (1.0 - cert.rho_bound) / (1.0 + cert.rho_bound);
  cert.bound_weighted = (1.0 - cert.rho_weighted) / (1.0 + cert.rho_weighted);
  cert.cosine = cosine(targets.g_b, targets.g_star);
  if (cert.eta < 1.0 && q_bar > 0.0) {
    cert.holds = cert.cosine >= cert.bound - 1e-9;
    cert.holds_weighted = cert.cosine >= cert.bound_weighted - 1e-9;
  }
  return cert;
}

namespace {

double kl_rows(const VectorXd& log_p, const VectorXd& log_q) {
  double kl = 0.0;
  for (Eigen::Index v = 0; v < log_p.size(); ++v) {
    const double p = std::exp(log_p[v]);
    if (p > 0.0) kl += p * (log_p[v] - log_q[v]);
  }
  return kl;
}

struct PrefixKl {
  const TabularPolicy<double>& old_policy;
  const TabularPolicy<double>& new_policy;
  int fixed_length;
  Tokens history;
  std::size_t prompt_len;
  double total = 0.0;

  void visit(double log_prob_prefix) {
    const Eigen::Index row = old_policy.context_index(history);
    const VectorXd lp_old = old_policy.row_log_probs(row);
    total += std::exp(log_prob_prefix) * kl_rows(lp_old, new_policy.row_log_probs(row));
    if (static_cast<int>(history.size() - prompt_len) + 1 >= fixed_length) return;
    for (TokenId v = 0; v < old_policy.vocab_size(); ++v) {
      const double child = log_prob_prefix + lp_old[v];
      if (std::exp(child) == 0.0) continue;
      history.push_back(v);
      visit(child);
      history.pop_back();
    }
  }
};

}  // namespace

KlDrift kl_drift_check(const TabularPolicy<double>& policy_old, const TabularPolicy<double>& policy_new,
                       std::span<const TokenId> prompt, int fixed_length) {
  if (!policy_new.same_shape(policy_old)) throw InvalidArgument("policy shapes differ");
  if (policy_old.eos()) throw InvalidArgument("kl_drift_check needs EOS disabled so every sequence has the fixed length");
  if (fixed_length < 1) throw InvalidArgument("fixed_length must be >= 1");

  KlDrift out;
  for (const auto& leaf : enumerate_all(policy_old, prompt, fixed_length))
    out.lhs += leaf.probability * sequence_log_ratio(policy_new, policy_old, leaf.sample);

  PrefixKl walker{policy_old, policy_new, fixed_length, Tokens(prompt.begin(), prompt.end()), prompt.size()};
  walker.visit(0.0);
  out.rhs = -walker.total;
  out.gap = std::abs(out.lhs - out.rhs);
  return out;
}

PrefixDemoReport prefix_weighting_demo(const PrefixDemoInstance& inst) {
  const auto& old_p = inst.policy_old;
  const auto& new_p = inst.policy_new;
  if (!new_p.same_shape(old_p)) throw InvalidArgument("policy shapes differ");
  if (inst.shared_prefix.empty() || inst.continuation_a.empty() || inst.continuation_b.empty())
    throw InvalidArgument("prefix and continuations must be nonempty");
  if (inst.continuation_a.front() == inst.continuation_b.front())
    throw InvalidArgument("continuations must diverge at their first token");

  const Tokens y_a = detail::concat(inst.shared_prefix, inst.continuation_a);
  const Tokens y_b = detail::concat(inst.shared_prefix, inst.continuation_b);
  const std::span<const TokenId> prompt(inst.prompt);
  const double old_a = sequence_log_prob(old_p, prompt, y_a);
  const double old_b = sequence_log_prob(old_p, prompt, y_b);
  if (std::abs(old_a - old_b) > 1e-12)
    throw InvalidArgument("construction requires pi_old(y_a) == pi_old(y_b)");

  PrefixDemoReport report;
  report.w_a = std::exp(sequence_log_prob(new_p, prompt, y_a) - old_a);
  report.w_b = std::exp(sequence_log_prob(new_p, prompt, y_b) - old_b);
  report.sequence_prefix_coefficient = report.w_a * inst.advantage_a + report.w_b * inst.advantage_b;
  report.sequence_prefers_a = report.w_a > report.w_b;

  const auto new_a = token_log_probs(new_p, prompt, std::span<const TokenId>(y_a));
  const auto old_ta = token_log_probs(old_p, prompt, std::span<const TokenId>(y_a));
  const auto new_b = token_log_probs(new_p, prompt, std::span<const TokenId>(y_b));
  const auto old_tb = token_log_probs(old_p, prompt, std::span<const TokenId>(y_b));
  report.token_ratios_identical = true;
  for (std::size_t t = 0; t < inst.shared_prefix.size(); ++t) {
    const double ra = std::exp(new_a[t] - old_ta[t]);
    const double rb = std::exp(new_b[t] - old_tb[t]);
    report.token_ratios_a.push_back(ra);
    report.token_ratios_b.push_back(rb);
    report.token_prefix_coefficients.push_back(ra * inst.advantage_a + rb * inst.advantage_b);
    report.token_ratios_identical = report.token_ratios_identical && ra == rb;
  }
  return report;
}

PrefixDemoInstance make_prefix_demo_instance(std::uint64_t seed, int vocab_size, int prefix_len,
                                             int continuation_len, double perturbation) {
  if (vocab_size < 2 || prefix_len < 1 || continuation_len < 1)
    throw InvalidArgument("prefix demo needs vocab >= 2 and nonempty prefix/continuations");
  const int window = prefix_len + continuation_len;
  Rng rng(Rng::derive(seed, 1));

  // Empty prompt and window == total length: step t sees K - t pads, so the
  // rows visited at each step are distinct across steps.
  auto old_p = TabularPolicy<double>::random(vocab_size, window, Rng::derive(seed, 2), 1.0, 1.0, std::nullopt);
  Tokens prefix, cont_a, cont_b;
  for (int t = 0; t < prefix_len; ++t) prefix.push_back(static_cast<TokenId>(rng.below(vocab_size)));
  cont_a.push_back(static_cast<TokenId>(rng.below(vocab_size)));
  cont_b.push_back(static_cast<TokenId>((cont_a[0] + 1 + rng.below(vocab_size - 1)) % vocab_size));
  for (int t = 1; t < continuation_len; ++t) {
    cont_a.push_back(static_cast<TokenId>(rng.below(vocab_size)));
    cont_b.push_back(static_cast<TokenId>(rng.below(vocab_size)));
  }
  // Uniform old rows after the prefix make both continuations equally likely.
  const Tokens y_a = detail::concat(prefix, cont_a);
  const Tokens y_b = detail::concat(prefix, cont_b);
  for (const Tokens* y : {&y_a, &y_b})
    for (std::size_t t = prefix.size(); t < y->size(); ++t)
      old_p.logits().row(old_p.context_index(std::span<const TokenId>(*y).first(t))).setZero();

  auto new_p = old_p;
  auto flat = new_p.params();
  for (Eigen::Index i = 0; i < flat.size(); ++i) flat[i] += perturbation * rng.normal();

  PrefixDemoInstance inst{old_p, new_p, {}, prefix, cont_a, cont_b, 0.5, -0.5};
  if (sequence_log_prob(new_p, std::span<const TokenId>{}, std::span<const TokenId>(y_a)) <
      sequence_log_prob(new_p, std::span<const TokenId>{}, std::span<const TokenId>(y_b)))
    std::swap(inst.continuation_a, inst.continuation_b);
  return inst;
}

}  // namespace fspo
