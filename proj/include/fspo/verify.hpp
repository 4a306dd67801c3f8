#pragma once

// Randomized property suites driven by `fspo-lab verify`: surrogate gradient
// checks, the directional certificate, the drift/KL identity, the
// shared-prefix demonstration, and the cosine lemma.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "fspo/diagnostics.hpp"
#include "fspo/objectives.hpp"
#include "fspo/policy.hpp"

namespace fspo {

struct SuiteResult {
  std::string suite;
  long instances = 0;
  long failures = 0;
  long skipped = 0;
  double worst = 0.0;  // suite-specific worst-case statistic
  std::string worst_label;

  std::string to_json() const;
};

const std::vector<std::string>& suite_names();

/// Runs one suite ("all" is not accepted here). Unknown names raise InvalidArgument.
SuiteResult run_suite(std::string_view name, int seeds, std::uint64_t base_seed);

/// Random (policy_old, policy_new, batch, spec) for a gradient check, resampled
/// until every clip-relevant quantity is at least `margin` from its boundary.
struct GradientInstance {
  TabularPolicy<double> policy_old;
  TabularPolicy<double> policy_new;
  GroupBatch batch;
  ClipSpec spec;
};
GradientInstance make_gradient_instance(Method method, std::uint64_t seed, double margin = 1e-3);

/// Smallest distance of any clip-relevant log quantity to a clip boundary.
double boundary_margin(const GradientInstance& instance);

/// Relative error ||g - g_fd|| / ||g_fd|| with central differences in long double.
double gradient_relative_error(const GradientInstance& instance, long double step = 1e-5L);

struct CertificateInstance {
  TabularPolicy<double> policy_old;
  TabularPolicy<double> policy_new;
  Tokens prompt;
  ClipSpec spec;
  int max_len;
  std::uint64_t reward_seed;
};
CertificateInstance make_certificate_instance(std::uint64_t seed);
/// Deterministic pseudo-random 0/1 reward keyed on the full token sequence.
RewardFn hashed_reward(std::uint64_t seed);

}  // namespace fspo
