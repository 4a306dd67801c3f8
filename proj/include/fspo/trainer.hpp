#pragma once

// Toy RLVR training loop: group rollouts on rule-checked tasks, group
// advantages, clipped-surrogate gradient steps over shuffled mini-batches,
// and the EMA tracker for the per-token log-ratio scale.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "fspo/diagnostics.hpp"
#include "fspo/objectives.hpp"
#include "fspo/policy.hpp"

namespace fspo {

enum class TaskKind { Parity, MatchLast, LengthBand };

std::string_view task_name(TaskKind kind);
TaskKind parse_task(std::string_view text);

/// Rule-based 0/1 reward. Prompt encodings:
///   PARITY      [p]      reward 1 iff (sum of non-EOS response tokens) % 2 == p % 2
///   MATCH_LAST  [t]      reward 1 iff the last non-EOS response token is t
///   LENGTH_BAND [lo, hi] reward 1 iff lo <= L <= hi
struct RewardTask {
  TaskKind kind = TaskKind::MatchLast;
  std::vector<int> params;  // fixed prompt when nonempty; otherwise prompts are sampled
  std::optional<TokenId> eos = TokenId{0};
};

double compute_reward(const RewardTask& task, std::span<const TokenId> prompt, std::span<const TokenId> tokens);

/// Draws a prompt for `task` over non-EOS token ids (or returns the fixed prompt).
Tokens sample_prompt(const RewardTask& task, int vocab_size, Rng& rng);

enum class AdvantageKind { Grpo, Loo };

struct TrainConfig {
  ClipSpec clip = ClipSpec::defaults(Method::FspoLog);
  RewardTask task;
  AdvantageKind advantage = AdvantageKind::Grpo;
  int vocab_size = 8;
  int context_window = 2;
  double temperature = 1.0;
  int group_size = 8;
  int prompts_per_step = 8;
  double learning_rate = 1.0;
  long total_steps = 300;
  int max_len = 12;
  bool ema = true;           // FSPO scale from z * sigma_hat instead of the fixed spec
  double ema_alpha = 0.1;
  double sigma_init = 0.03;
  double z = 1.0;
  int inner_epochs = 4;      // mini-batch updates per rollout batch
  double momentum = 0.0;
  std::uint64_t seed = 42;

  void validate() const;
};

struct SigmaTracker {
  double sigma_hat = 0.03;
  double alpha = 0.1;
};

/// Population std over i of S_i / sqrt(L_i); nullopt for fewer than two entries.
std::optional<double> sigma_batch_statistic(std::span<const double> log_ratios, std::span<const int> lengths);

/// sigma <- (1 - alpha) sigma + alpha * statistic; batches of size < 2 leave it unchanged.
SigmaTracker ema_sigma_update(const SigmaTracker& tracker, std::span<const double> log_ratios,
                              std::span<const int> lengths);

struct StepMetrics {
  long step = 0;
  double mean_reward = 0.0;
  double mean_length = 0.0;
  double clip_fraction = 0.0;
  double loss = 0.0;
  double sigma_hat = 0.0;  // value that set this step's FSPO band
};

struct TrainState {
  TabularPolicy<double> policy;
  SigmaTracker tracker;
  VectorXd velocity;
  long step = 0;
};

TrainState initial_state(const TrainConfig& config);

/// Clip spec in force for a step: FSPO with EMA on uses scale z * sigma_hat on
/// both sides; everything else uses the configured spec unchanged.
ClipSpec step_clip_spec(const TrainConfig& config, const SigmaTracker& tracker);

/// prompts_per_step groups of G samples from policy_old with rewards and
/// logp_old filled; a pure function of (config.seed, step).
std::vector<GroupBatch> rollout_groups(const TabularPolicy<double>& policy_old, const RewardTask& task,
                                       const TrainConfig& config, long step);

/// Fills advantages on every sample of each group.
void assign_advantages(std::vector<GroupBatch>& groups, AdvantageKind kind);

struct StepResult {
  TrainState state;
  StepMetrics metrics;
  std::vector<SeqRecord> records;  // group-major, sample-minor
};

StepResult train_step(const TrainState& state, const TrainConfig& config);

struct TrainHistory {
  std::vector<StepMetrics> metrics;
  TabularPolicy<double> final_policy;
  std::vector<SeqRecord> records;

  /// Mean of per-step mean_reward over the last `window` steps.
  double final_mean_reward(std::size_t window = 10) const;
};

TrainHistory train(const TrainConfig& config);

}  // namespace fspo
