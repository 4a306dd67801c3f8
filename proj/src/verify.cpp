#include "fspo/verify.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <limits>

#include "fspo/io.hpp"

namespace fspo {

std::string SuiteResult::to_json() const {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "{\"suite\":\"%s\",\"instances\":%ld,\"failures\":%ld,\"skipped\":%ld,\"%s\":%s}", suite.c_str(),
                instances, failures, skipped, worst_label.empty() ? "worst" : worst_label.c_str(),
                format_double(worst).c_str());
  return buf;
}

const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names = {"gradients", "theorem1", "cosine_lemma", "kl_drift", "prefix_demo"};
  return names;
}

namespace {

ClipSpec gradient_spec(Method method) {
  ClipSpec spec = ClipSpec::defaults(method);
  switch (method) {
    case Method::FspoLog: spec = ClipSpec::fspo(0.1, 0.15); break;
    case Method::RlooSeq: spec.c_upper = 0.2; spec.c_lower = 0.2; spec.c_dual = 0.5; break;
    case Method::GspoNorm: spec.c_upper = 0.05; spec.c_lower = 0.05; break;
    case Method::PpoToken: spec.c_upper = 0.2; spec.c_lower = 0.2; spec.c_dual = 0.5; break;
  }
  return spec;
}

// Log-space boundaries relevant to one driving quantity x.
std::vector<double> log_boundaries(const ClipSpec& spec, int length) {
  std::vector<double> out;
  const double root = std::sqrt(double(length));
  switch (spec.method) {
    case Method::FspoLog:
      out = {spec.drift_mu - spec.c_lower * root, spec.drift_mu + spec.c_upper * root};
      if (spec.c_dual) out.push_back(*spec.c_dual * root);
      break;
    case Method::RlooSeq:
    case Method::PpoToken:
    case Method::GspoNorm:
      out = {std::log1p(-spec.c_lower), std::log1p(spec.c_upper)};
      if (spec.c_dual) out.push_back(std::log1p(*spec.c_dual));
      break;
  }
  return out;
}

}  // namespace

double boundary_margin(const GradientInstance& inst) {
  double margin = std::numeric_limits<double>::infinity();
  for (const auto& s : inst.batch.samples) {
    std::vector<double> quantities;
    if (inst.spec.method == Method::PpoToken) {
      const auto a = token_log_probs(inst.policy_new, std::span<const TokenId>(s.prompt), s.tokens);
      const auto b = token_log_probs(inst.policy_old, std::span<const TokenId>(s.prompt), s.tokens);
      for (std::size_t t = 0; t < a.size(); ++t) quantities.push_back(a[t] - b[t]);
    } else {
      const double S = sequence_log_ratio(inst.policy_new, inst.policy_old, s);
      quantities.push_back(inst.spec.method == Method::GspoNorm ? S / s.length : S);
    }
    for (double x : quantities)
      for (double b : log_boundaries(inst.spec, s.length)) margin = std::min(margin, std::abs(x - b));
  }
  return margin;
}

GradientInstance make_gradient_instance(Method method, std::uint64_t seed, double margin) {
  for (std::uint64_t attempt = 0;; ++attempt) {
    Rng rng(Rng::derive(seed, attempt, 11));
    const int vocab = 3 + int(rng.below(2));
    const int window = 1 + int(rng.below(2));
    auto old_p = TabularPolicy<double>::random(vocab, window, rng.next_u64(), 1.0);
    auto new_p = old_p;
    const double delta = 0.05 + 0.3 * rng.uniform();
    auto flat = new_p.params();
    for (Eigen::Index i = 0; i < flat.size(); ++i) flat[i] += delta * rng.normal();

    GroupBatch batch;
    batch.prompt = {TokenId(1 + rng.below(vocab - 1))};
    const int G = 4;
    std::vector<double> rewards;
    for (int i = 0; i < G; ++i) {
      batch.samples.push_back(sample_sequence(old_p, batch.prompt, 5, rng.next_u64()));
      rewards.push_back(rng.normal());
    }
    const auto adv = grpo_advantage(rewards);
    for (int i = 0; i < G; ++i) batch.samples[i].advantage = adv[i];

    GradientInstance inst{old_p, new_p, batch, gradient_spec(method)};
    if (boundary_margin(inst) >= margin) return inst;
  }
}

double gradient_relative_error(const GradientInstance& inst, long double step) {
  const VectorXd analytic = surrogate_gradient(inst.policy_new, inst.policy_old, inst.batch, inst.spec);
  const auto old_ld = inst.policy_old.cast<long double>();
  auto probe = inst.policy_new.cast<long double>();
  Vector<long double> fd(probe.num_params());
  auto flat = probe.params();
  for (Eigen::Index i = 0; i < flat.size(); ++i) {
    const long double keep = flat[i];
    flat[i] = keep + step;
    const long double up = surrogate_loss(probe, old_ld, inst.batch, inst.spec);
    flat[i] = keep - step;
    const long double down = surrogate_loss(probe, old_ld, inst.batch, inst.spec);
    flat[i] = keep;
    fd[i] = (up - down) / (2 * step);
  }
  const VectorXd fd_d = fd.cast<double>();
  const double denom = fd_d.norm();
  const double diff = (analytic - fd_d).norm();
  if (denom < 1e-14) return diff < 1e-12 ? 0.0 : std::numeric_limits<double>::infinity();
  return diff / denom;
}

RewardFn hashed_reward(std::uint64_t seed) {
  return [seed](const Tokens& prompt, const Tokens& tokens) {
    std::uint64_t h = Rng::mix(seed);
    for (TokenId t : prompt) h = Rng::mix(h ^ std::uint64_t(t + 1));
    h = Rng::mix(h ^ 0xabcdefULL);
    for (TokenId t : tokens) h = Rng::mix(h ^ std::uint64_t(t + 1));
    return double(h & 1ULL);
  };
}

CertificateInstance make_certificate_instance(std::uint64_t seed) {
  Rng rng(Rng::derive(seed, 21));
  const int vocab = 2 + int(rng.below(3));
  const int window = 1 + int(rng.below(2));
  const int max_len = 3 + int(rng.below(4));
  auto old_p = TabularPolicy<double>::random(vocab, window, rng.next_u64(), 1.0);
  auto new_p = old_p;
  const double delta = 0.05 + 0.45 * rng.uniform();
  auto flat = new_p.params();
  for (Eigen::Index i = 0; i < flat.size(); ++i) flat[i] += delta * rng.normal();

  ClipSpec spec;
  switch (rng.below(3)) {
    case 0: spec = ClipSpec::fspo(0.05 + 0.45 * rng.uniform(), std::nullopt); break;
    case 1:
      spec = ClipSpec::defaults(Method::RlooSeq);
      spec.c_upper = 0.1 + 0.6 * rng.uniform();
      spec.c_lower = std::min(0.9, spec.c_upper);
      break;
    default:
      spec = ClipSpec::defaults(Method::GspoNorm);
      spec.c_upper = 0.01 + 0.1 * rng.uniform();
      spec.c_lower = spec.c_upper;
      break;
  }
  return {old_p, new_p, Tokens{TokenId(rng.below(vocab))}, spec, max_len, rng.next_u64()};
}

namespace {

SuiteResult run_gradients(int seeds, std::uint64_t base) {
  SuiteResult r{"gradients", 0, 0, 0, 0.0, "max_relative_error"};
  for (Method m : {Method::PpoToken, Method::RlooSeq, Method::GspoNorm, Method::FspoLog}) {
    for (int s = 0; s < seeds; ++s) {
      const auto inst = make_gradient_instance(m, Rng::derive(base, 100 + int(m), s));
      const double err = gradient_relative_error(inst);
      ++r.instances;
      r.worst = std::max(r.worst, err);
      if (!(err <= 1e-5)) ++r.failures;
    }
  }
  return r;
}

SuiteResult run_theorem1(int seeds, std::uint64_t base) {
  SuiteResult r{"theorem1", 0, 0, 0, std::numeric_limits<double>::infinity(), "min_slack"};
  for (long attempt = 0; r.instances < seeds && attempt < 50L * seeds; ++attempt) {
    const auto inst = make_certificate_instance(Rng::derive(base, 200, attempt));
    const auto targets = exact_update_targets(inst.policy_old, inst.policy_new, hashed_reward(inst.reward_seed),
                                              inst.prompt, inst.spec, inst.max_len);
    Theorem1Certificate cert;
    try {
      cert = theorem1_certificate(targets);
    } catch (const UndefinedMetric&) {
      ++r.skipped;
      continue;
    }
    if (!cert.holds) {
      ++r.skipped;  // eta >= 1: assumption violated, theorem silent
      continue;
    }
    ++r.instances;
    r.worst = std::min(r.worst, cert.cosine - std::max(cert.bound, cert.bound_weighted));
    if (!*cert.holds || !*cert.holds_weighted) ++r.failures;
  }
  if (r.instances < seeds) ++r.failures;  // could not find enough admissible instances
  return r;
}

SuiteResult run_cosine_lemma(int seeds, std::uint64_t base) {
  SuiteResult r{"cosine_lemma", 0, 0, 0, std::numeric_limits<double>::infinity(), "min_slack"};
  const long draws = std::max(1L, long(seeds)) * 100;
  Rng rng(Rng::derive(base, 300));
  for (long i = 0; i < draws; ++i) {
    const int dim = 2 + int(rng.below(9));
    VectorXd u(dim), v(dim);
    for (int k = 0; k < dim; ++k) {
      u[k] = rng.normal();
      v[k] = rng.normal();
    }
    if (rng.below(2)) u = v + 0.3 * rng.uniform() * u;  // include near-parallel pairs
    const double slack = cosine(u, v) - cosine_lemma_bound(u, v);
    ++r.instances;
    r.worst = std::min(r.worst, slack);
    if (slack < -1e-12) ++r.failures;
  }
  return r;
}

SuiteResult run_kl_drift(int seeds, std::uint64_t base) {
  SuiteResult r{"kl_drift", 0, 0, 0, 0.0, "max_gap"};
  for (int s = 0; s < seeds; ++s) {
    Rng rng(Rng::derive(base, 400, s));
    const int vocab = 2 + int(rng.below(2));
    const int window = 1 + int(rng.below(2));
    const int length = 1 + int(rng.below(5));
    auto old_p = TabularPolicy<double>::random(vocab, window, rng.next_u64(), 1.0, 1.0, std::nullopt);
    auto new_p = TabularPolicy<double>::random(vocab, window, rng.next_u64(), 1.0, 1.0, std::nullopt);
    const auto res = kl_drift_check(old_p, new_p, Tokens{TokenId(rng.below(vocab))}, length);
    ++r.instances;
    r.worst = std::max(r.worst, res.gap);
    if (!(res.gap <= 1e-10) || res.lhs > 1e-12) ++r.failures;
  }
  return r;
}

SuiteResult run_prefix_demo(int seeds, std::uint64_t base) {
  SuiteResult r{"prefix_demo", 0, 0, 0, 0.0, "min_weight_gap"};
  r.worst = std::numeric_limits<double>::infinity();
  for (int s = 0; s < seeds; ++s) {
    auto inst = make_prefix_demo_instance(Rng::derive(base, 500, s));
    const auto rep = prefix_weighting_demo(inst);
    bool ok = rep.token_ratios_identical;
    ok = ok && ((rep.sequence_prefix_coefficient > 0.0) == rep.sequence_prefers_a);
    ok = ok && rep.w_a >= rep.w_b;
    // Identical policies: both schemes weight the prefix the same.
    inst.policy_new = inst.policy_old;
    const auto same = prefix_weighting_demo(inst);
    for (double c : same.token_prefix_coefficients) ok = ok && c == same.sequence_prefix_coefficient;
    ++r.instances;
    r.worst = std::min(r.worst, rep.w_a - rep.w_b);
    if (!ok) ++r.failures;
  }
  return r;
}

}  // namespace

SuiteResult run_suite(std::string_view name, int seeds, std::uint64_t base_seed) {
  if (seeds < 1) throw InvalidArgument("seed count must be >= 1");
  if (name == "gradients") return run_gradients(seeds, base_seed);
  if (name == "theorem1") return run_theorem1(seeds, base_seed);
  if (name == "cosine_lemma") return run_cosine_lemma(seeds, base_seed);
  if (name == "kl_drift") return run_kl_drift(seeds, base_seed);
  if (name == "prefix_demo") return run_prefix_demo(seeds, base_seed);
  throw InvalidArgument("unknown suite '" + std::string(name) + "'");
}

}  // namespace fspo
