#include "fspo/objectives.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

namespace fspo {

std::string_view method_name(Method m) {
  switch (m) {
    case Method::PpoToken: return "PPO_TOKEN";
    case Method::RlooSeq: return "RLOO_SEQ";
    case Method::GspoNorm: return "GSPO_NORM";
    case Method::FspoLog: return "FSPO_LOG";
  }
  return "?";
}

Method parse_method(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "ppo_token" || lower == "ppo" || lower == "grpo") return Method::PpoToken;
  if (lower == "rloo_seq" || lower == "rloo") return Method::RlooSeq;
  if (lower == "gspo_norm" || lower == "gspo") return Method::GspoNorm;
  if (lower == "fspo_log" || lower == "fspo") return Method::FspoLog;
  throw InvalidArgument("unknown method '" + std::string(text) + "'");
}

ClipSpec ClipSpec::defaults(Method method) {
  ClipSpec spec;
  spec.method = method;
  spec.drift_mu = 0.0;
  switch (method) {
    case Method::FspoLog:
      return fspo(0.03, 0.03);
    case Method::PpoToken:
      spec.c_upper = 0.28;
      spec.c_lower = 0.2;
      spec.c_dual = 3.0;
      break;
    case Method::RlooSeq:
      spec.c_upper = 0.667;
      spec.c_lower = 0.4;
      spec.c_dual = 3.0;
      break;
    case Method::GspoNorm:
      spec.c_upper = 4e-4;
      spec.c_lower = 3e-4;
      spec.c_dual.reset();
      break;
  }
  spec.scale_c.reset();
  return spec;
}

ClipSpec ClipSpec::fspo(double c, std::optional<double> c_dual, double drift_mu) {
  ClipSpec spec;
  spec.method = Method::FspoLog;
  spec.c_upper = c;
  spec.c_lower = c;
  spec.c_dual = c_dual;
  spec.drift_mu = drift_mu;
  spec.scale_c = c;
  return spec;
}

void ClipSpec::validate() const {
  auto finite_nonneg = [](double v) { return std::isfinite(v) && v >= 0.0; };
  if (!finite_nonneg(c_upper)) throw InvalidArgument("c_upper must be a nonnegative real");
  if (!finite_nonneg(c_lower)) throw InvalidArgument("c_lower must be a nonnegative real");
  if (c_dual && !finite_nonneg(*c_dual)) throw InvalidArgument("c_dual must be a nonnegative real or disabled");
  if (!std::isfinite(drift_mu)) throw InvalidArgument("drift_mu must be finite");
  if (method == Method::FspoLog) {
    if (!scale_c || !(*scale_c > 0.0) || !std::isfinite(*scale_c))
      throw InvalidArgument("FSPO_LOG requires a positive scale_c");
  } else {
    if (scale_c) throw InvalidArgument("scale_c is only meaningful for FSPO_LOG");
    if (!(c_lower < 1.0)) throw InvalidArgument("c_lower must be < 1 for ratio-space clipping");
  }
  if (method == Method::GspoNorm && c_dual) throw InvalidArgument("GSPO_NORM does not use dual clipping");
}

void GroupBatch::validate() const {
  if (samples.size() < 2) throw InvalidArgument("a group needs G >= 2 samples");
  for (const auto& s : samples) {
    if (s.prompt != prompt) throw InvalidArgument("all samples in a group must share the prompt");
    if (s.length != static_cast<int>(s.tokens.size()) || s.length < 1)
      throw InvalidArgument("sample length must equal its token count and be >= 1");
  }
}

std::vector<double> grpo_advantage(std::span<const double> rewards) {
  const auto G = rewards.size();
  if (G < 2) throw InvalidArgument("grpo_advantage needs G >= 2");
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / static_cast<double>(G);
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / static_cast<double>(G));
  std::vector<double> out(G, 0.0);
  if (!(sd > kEpsStd)) return out;
  for (std::size_t i = 0; i < G; ++i) out[i] = (rewards[i] - mean) / sd;
  return out;
}

std::vector<double> loo_advantage(std::span<const double> rewards) {
  const auto G = rewards.size();
  if (G < 2) throw InvalidArgument("loo_advantage needs G >= 2");
  const double total = std::accumulate(rewards.begin(), rewards.end(), 0.0);
  std::vector<double> out(G);
  for (std::size_t i = 0; i < G; ++i) out[i] = rewards[i] - (total - rewards[i]) / static_cast<double>(G - 1);
  return out;
}

double fspo_band(int length, const ClipSpec& spec) {
  if (length < 1) throw InvalidArgument("fspo_band needs L >= 1");
  if (!spec.scale_c) throw InvalidArgument("fspo_band needs scale_c");
  return spec.drift_mu + *spec.scale_c * std::sqrt(static_cast<double>(length));
}

LogBand acceptance_band(int length, const ClipSpec& spec) {
  if (length < 1) throw InvalidArgument("acceptance_band needs L >= 1");
  const double root = std::sqrt(static_cast<double>(length));
  switch (spec.method) {
    case Method::FspoLog:
      return {spec.drift_mu - spec.c_lower * root, spec.drift_mu + spec.c_upper * root};
    case Method::RlooSeq:
      return {std::log1p(-spec.c_lower), std::log1p(spec.c_upper)};
    case Method::GspoNorm:
      return {length * std::log1p(-spec.c_lower), length * std::log1p(spec.c_upper)};
    case Method::PpoToken:
      break;
  }
  throw InvalidArgument("acceptance_band is sequence-level; PPO_TOKEN clips per token");
}

ClipFlags band_flags(double log_ratio, int length, const ClipSpec& spec) {
  const LogBand band = acceptance_band(length, spec);
  ClipFlags flags;
  flags.low = log_ratio < band.lower;
  flags.high = log_ratio > band.upper;
  return flags;
}

std::vector<ClipFlags> collapse_token_flags(const std::vector<std::vector<ClipFlags>>& token_flags) {
  std::vector<ClipFlags> out;
  out.reserve(token_flags.size());
  for (const auto& row : token_flags) {
    ClipFlags f;
    for (const auto& t : row) {
      f.low |= t.low;
      f.high |= t.high;
      f.dual |= t.dual;
    }
    out.push_back(f);
  }
  return out;
}

}  // namespace fspo
