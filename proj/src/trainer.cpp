#include "fspo/trainer.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <string>

namespace fspo {

namespace {

// Stream tags for Rng::derive; part of the reproducibility contract.
constexpr std::uint64_t kTagSample = 1;
constexpr std::uint64_t kTagPrompt = 2;
constexpr std::uint64_t kTagShuffle = 3;

bool is_eos(const RewardTask& task, TokenId t) { return task.eos && *task.eos == t; }

}  // namespace

std::string_view task_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::Parity: return "PARITY";
    case TaskKind::MatchLast: return "MATCH_LAST";
    case TaskKind::LengthBand: return "LENGTH_BAND";
  }
  return "?";
}

TaskKind parse_task(std::string_view text) {
  std::string upper(text);
  std::transform(upper.begin(), upper.end(), upper.begin(), [](unsigned char c) { return std::toupper(c); });
  if (upper == "PARITY") return TaskKind::Parity;
  if (upper == "MATCH_LAST") return TaskKind::MatchLast;
  if (upper == "LENGTH_BAND") return TaskKind::LengthBand;
  throw InvalidArgument("unknown task '" + std::string(text) + "'");
}

double compute_reward(const RewardTask& task, std::span<const TokenId> prompt, std::span<const TokenId> tokens) {
  if (tokens.empty()) throw InvalidArgument("compute_reward needs a nonempty response");
  switch (task.kind) {
    case TaskKind::Parity: {
      if (prompt.empty()) throw InvalidArgument("PARITY prompt must carry the target");
      long sum = 0;
      for (TokenId t : tokens)
        if (!is_eos(task, t)) sum += t;
      return (sum % 2) == (prompt[0] % 2) ? 1.0 : 0.0;
    }
    case TaskKind::MatchLast: {
      if (prompt.empty()) throw InvalidArgument("MATCH_LAST prompt must carry the target");
      for (auto it = tokens.rbegin(); it != tokens.rend(); ++it)
        if (!is_eos(task, *it)) return *it == prompt[0] ? 1.0 : 0.0;
      return 0.0;
    }
    case TaskKind::LengthBand: {
      if (prompt.size() < 2) throw InvalidArgument("LENGTH_BAND prompt must carry [lo, hi]");
      const auto L = static_cast<long>(tokens.size());
      return (L >= prompt[0] && L <= prompt[1]) ? 1.0 : 0.0;
    }
  }
  return 0.0;
}

Tokens sample_prompt(const RewardTask& task, int vocab_size, Rng& rng) {
  if (!task.params.empty()) return Tokens(task.params.begin(), task.params.end());
  std::vector<TokenId> regular;
  for (TokenId t = 0; t < vocab_size; ++t)
    if (!is_eos(task, t)) regular.push_back(t);
  if (regular.empty()) throw InvalidArgument("vocabulary has no non-EOS tokens");
  auto draw = [&] { return regular[static_cast<std::size_t>(rng.below(regular.size()))]; };
  switch (task.kind) {
    case TaskKind::Parity:
    case TaskKind::MatchLast:
      return {draw()};
    case TaskKind::LengthBand: {
      TokenId a = draw(), b = draw();
      if (a > b) std::swap(a, b);
      return {a, b};
    }
  }
  return {};
}

void TrainConfig::validate() const {
  clip.validate();
  if (group_size < 2) throw InvalidArgument("group_size must be >= 2");
  if (prompts_per_step < 1) throw InvalidArgument("prompts_per_step must be >= 1");
  if (total_steps < 1) throw InvalidArgument("total_steps must be >= 1");
  if (max_len < 1) throw InvalidArgument("max_len must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw InvalidArgument("learning_rate must be >= 0");
  if (!(ema_alpha > 0.0 && ema_alpha <= 1.0)) throw InvalidArgument("ema_alpha must lie in (0, 1]");
  if (!(sigma_init > 0.0)) throw InvalidArgument("sigma_init must be positive");
  if (!(z > 0.0)) throw InvalidArgument("z must be positive");
  if (inner_epochs < 1) throw InvalidArgument("inner_epochs must be >= 1");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidArgument("momentum must lie in [0, 1)");
  if (task.eos && *task.eos != 0) throw InvalidArgument("task EOS id must match the policy EOS id 0");
}

std::optional<double> sigma_batch_statistic(std::span<const double> log_ratios, std::span<const int> lengths) {
  if (log_ratios.size() != lengths.size()) throw InvalidArgument("log-ratio and length lists differ in size");
  const std::size_t n = log_ratios.size();
  if (n < 2) return std::nullopt;
  std::vector<double> r(n);
  for (std::size_t i = 0; i < n; ++i) r[i] = log_ratios[i] / std::sqrt(double(lengths[i]));
  const double mean = std::accumulate(r.begin(), r.end(), 0.0) / double(n);
  double var = 0.0;
  for (double x : r) var += (x - mean) * (x - mean);
  return std::sqrt(var / double(n));
}

SigmaTracker ema_sigma_update(const SigmaTracker& tracker, std::span<const double> log_ratios,
                              std::span<const int> lengths) {
  const auto stat = sigma_batch_statistic(log_ratios, lengths);
  if (!stat) return tracker;
  SigmaTracker next = tracker;
  next.sigma_hat = (1.0 - tracker.alpha) * tracker.sigma_hat + tracker.alpha * *stat;
  return next;
}

TrainState initial_state(const TrainConfig& config) {
  TabularPolicy<double> policy(config.vocab_size, config.context_window, config.temperature, TokenId{0});
  return {policy, {config.sigma_init, config.ema_alpha}, VectorXd::Zero(policy.num_params()), 0};
}

ClipSpec step_clip_spec(const TrainConfig& config, const SigmaTracker& tracker) {
  ClipSpec spec = config.clip;
  if (spec.method == Method::FspoLog && config.ema) {
    const double c = config.z * tracker.sigma_hat;
    spec.scale_c = c;
    spec.c_upper = c;
    spec.c_lower = c;
  }
  return spec;
}

std::vector<GroupBatch> rollout_groups(const TabularPolicy<double>& policy_old, const RewardTask& task,
                                       const TrainConfig& config, long step) {
  std::vector<GroupBatch> groups;
  groups.reserve(static_cast<std::size_t>(config.prompts_per_step));
  for (int g = 0; g < config.prompts_per_step; ++g) {
    Rng prompt_rng(Rng::derive(config.seed, kTagPrompt, step, g));
    GroupBatch batch;
    batch.prompt = sample_prompt(task, config.vocab_size, prompt_rng);
    for (int i = 0; i < config.group_size; ++i) {
      auto s = sample_sequence(policy_old, batch.prompt, config.max_len, Rng::derive(config.seed, kTagSample, step, g, i));
      s.reward = compute_reward(task, s.prompt, s.tokens);
      batch.samples.push_back(std::move(s));
    }
    groups.push_back(std::move(batch));
  }
  return groups;
}

void assign_advantages(std::vector<GroupBatch>& groups, AdvantageKind kind) {
  for (auto& g : groups) {
    std::vector<double> rewards;
    for (const auto& s : g.samples) rewards.push_back(s.reward);
    const auto adv = kind == AdvantageKind::Grpo ? grpo_advantage(rewards) : loo_advantage(rewards);
    for (std::size_t i = 0; i < g.samples.size(); ++i) g.samples[i].advantage = adv[i];
  }
}

StepResult train_step(const TrainState& state, const TrainConfig& config) {
  const long step = state.step;
  const TabularPolicy<double> policy_old = state.policy;
  const ClipSpec spec = step_clip_spec(config, state.tracker);

  auto groups = rollout_groups(policy_old, config.task, config, step);
  assign_advantages(groups, config.advantage);

  std::vector<std::size_t> order(groups.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(Rng::derive(config.seed, kTagShuffle, step));
  shuffle(order, shuffle_rng);
  const std::size_t chunks = std::min<std::size_t>(static_cast<std::size_t>(config.inner_epochs), groups.size());

  StepResult result{state, {}, {}};
  auto& policy = result.state.policy;
  auto& velocity = result.state.velocity;

  // records[g][i] filled when group g's mini-batch is evaluated.
  std::vector<std::vector<SeqRecord>> records(groups.size());
  double loss_sum = 0.0;
  for (std::size_t c = 0; c < chunks; ++c) {
    const std::size_t begin = c * groups.size() / chunks, end = (c + 1) * groups.size() / chunks;
    VectorXd grad = VectorXd::Zero(policy.num_params());
    double chunk_loss = 0.0;
    for (std::size_t k = begin; k < end; ++k) {
      const std::size_t g = order[k];
      const auto eval = evaluate_surrogate(policy, policy_old, groups[g], spec, true);
      chunk_loss += eval.loss;
      grad += eval.gradient;
      for (std::size_t i = 0; i < groups[g].samples.size(); ++i) {
        const auto& s = groups[g].samples[i];
        SeqRecord r;
        r.step = step;
        r.length = s.length;
        r.log_ratio = eval.log_ratios[i];
        r.advantage = *s.advantage;
        r.clipped_low = eval.flags[i].low;
        r.clipped_high = eval.flags[i].high;
        r.clipped_dual = eval.flags[i].dual;
        r.method = spec.method;
        r.logp_old = s.logp_old;
        r.logp_new = sequence_log_prob(policy, std::span<const TokenId>(s.prompt), s.tokens);
        r.reward = s.reward;
        records[g].push_back(r);
      }
    }
    const double n_groups = double(end - begin);
    chunk_loss /= n_groups;
    grad /= n_groups;
    if (!std::isfinite(chunk_loss) || !grad.allFinite()) throw TrainingDiverged(step, "non-finite loss or gradient");
    loss_sum += chunk_loss;
    velocity = config.momentum * velocity + grad;
    policy.params() -= config.learning_rate * velocity;
    if (!policy.params().allFinite()) throw TrainingDiverged(step, "non-finite policy parameters after update");
  }

  StepMetrics& m = result.metrics;
  m.step = step;
  m.sigma_hat = state.tracker.sigma_hat;
  m.loss = loss_sum / double(chunks);
  std::size_t n = 0, clipped = 0;
  double reward_sum = 0.0, length_sum = 0.0;
  std::vector<double> S;
  std::vector<int> L;
  for (auto& group_records : records) {
    for (auto& r : group_records) {
      ++n;
      clipped += r.clipped() ? 1 : 0;
      reward_sum += r.reward;
      length_sum += r.length;
      S.push_back(r.log_ratio);
      L.push_back(r.length);
      result.records.push_back(r);
    }
  }
  m.mean_reward = reward_sum / double(n);
  m.mean_length = length_sum / double(n);
  m.clip_fraction = double(clipped) / double(n);

  result.state.tracker = ema_sigma_update(state.tracker, S, L);
  if (!std::isfinite(result.state.tracker.sigma_hat)) throw TrainingDiverged(step, "non-finite sigma estimate");
  result.state.step = step + 1;
  return result;
}

double TrainHistory::final_mean_reward(std::size_t window) const {
  if (metrics.empty()) return 0.0;
  const std::size_t w = std::min(window, metrics.size());
  double sum = 0.0;
  for (std::size_t i = metrics.size() - w; i < metrics.size(); ++i) sum += metrics[i].mean_reward;
  return sum / double(w);
}

TrainHistory train(const TrainConfig& config) {
  config.validate();
  TrainState state = initial_state(config);
  TrainHistory history{{}, state.policy, {}};
  for (long t = 0; t < config.total_steps; ++t) {
    auto res = train_step(state, config);
    history.metrics.push_back(res.metrics);
    history.records.insert(history.records.end(), res.records.begin(), res.records.end());
    state = std::move(res.state);
  }
  history.final_policy = state.policy;
  return history;
}

}  // namespace fspo
