#include "fspo/theory.hpp"

#include <algorithm>
#include <cmath>

#include "fspo/common.hpp"

namespace fspo {

void GaussianModel::validate() const {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw InvalidArgument("sigma must be positive");
}

double std_normal_cdf(double x) { return 0.5 * std::erfc(-x * 0.70710678118654752440084436210485); }

double std_normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw InvalidArgument("quantile probability must lie in (0, 1)");
  // Upper half by symmetry: 1 - p is exact there and the lower tail keeps full relative precision.
  if (p > 0.5) return -std_normal_quantile(1.0 - p);
  double lo = -40.0;
  double hi = 40.0;
  for (int i = 0; i < 200 && hi - lo > 1e-6; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (std_normal_cdf(mid) < p)
      lo = mid;
    else
      hi = mid;
  }
  double x = 0.5 * (lo + hi);
  constexpr double kInvSqrt2Pi = 0.39894228040143267793994605993438;
  for (int i = 0; i < 50; ++i) {
    const double density = kInvSqrt2Pi * std::exp(-0.5 * x * x);
    if (density <= 0.0) break;
    const double step = (std_normal_cdf(x) - p) / density;
    const double next = std::clamp(x - step, lo - 1e-6, hi + 1e-6);
    if (std::abs(next - x) <= 1e-15 * std::max(1.0, std::abs(x))) {
      x = next;
      break;
    }
    x = next;
  }
  return x;
}

double clip_prob_rloo(int length, double xi, const GaussianModel& model) {
  if (length < 1) throw InvalidArgument("length must be >= 1");
  if (!(xi >= 0.0)) throw InvalidArgument("xi must be nonnegative");
  model.validate();
  if (std::isinf(xi)) return 0.0;
  return 2.0 * std_normal_cdf(-(xi - model.mu(length)) / (model.sigma * std::sqrt(double(length))));
}

double clip_prob_gspo(int length, double xi, const GaussianModel& model) {
  if (length < 1) throw InvalidArgument("length must be >= 1");
  if (!(xi >= 0.0)) throw InvalidArgument("xi must be nonnegative");
  model.validate();
  if (std::isinf(xi)) return 0.0;
  return 2.0 * std_normal_cdf(-(xi * length - model.mu(length)) / (model.sigma * std::sqrt(double(length))));
}

double clip_prob_fspo(double z) {
  if (!(z > 0.0)) throw InvalidArgument("z must be positive");
  if (std::isinf(z)) return 0.0;
  return 2.0 * std_normal_cdf(-z);
}

double standardized_statistic(double log_ratio, int length, double mu_L, double sigma) {
  if (!(sigma > 0.0)) throw InvalidArgument("sigma must be positive");
  if (length < 1) throw InvalidArgument("length must be >= 1");
  return (log_ratio - mu_L) / (std::sqrt(double(length)) * sigma);
}

double BinnedMoments::mean_for(int length) const {
  for (const auto& b : bins)
    if (length >= b.bin_lo && length < b.bin_hi) return b.mean;
  return 0.0;
}

BinnedMoments binned_moments(std::span<const LengthLogRatio> records, int bin_size) {
  if (bin_size < 1) throw InvalidArgument("bin_size must be >= 1");
  BinnedMoments out;
  if (records.empty()) return out;

  struct Acc {
    std::size_t n = 0;
    double sum = 0.0;
  };
  int max_bin = 0;
  for (const auto& r : records)
    if (r.length < 1) throw InvalidArgument("record length must be >= 1");
  for (const auto& r : records) max_bin = std::max(max_bin, r.length / bin_size);
  std::vector<Acc> acc(static_cast<std::size_t>(max_bin) + 1);
  for (const auto& r : records) {
    auto& a = acc[static_cast<std::size_t>(r.length / bin_size)];
    ++a.n;
    a.sum += r.log_ratio;
  }
  std::vector<double> means(acc.size(), 0.0);
  for (std::size_t k = 0; k < acc.size(); ++k)
    if (acc[k].n) means[k] = acc[k].sum / double(acc[k].n);

  // Residuals r = (S - mu_hat_bin) / sqrt(L); sample std (n - 1).
  std::vector<double> res_sum(acc.size(), 0.0), res_sq(acc.size(), 0.0);
  double total = 0.0, total_sq = 0.0;
  for (const auto& r : records) {
    const auto k = static_cast<std::size_t>(r.length / bin_size);
    const double res = (r.log_ratio - means[k]) / std::sqrt(double(r.length));
    res_sum[k] += res;
    res_sq[k] += res * res;
    total += res;
    total_sq += res * res;
  }
  auto sample_std = [](std::size_t n, double s, double sq) -> std::optional<double> {
    if (n < 2) return std::nullopt;
    const double m = s / double(n);
    return std::sqrt(std::max(0.0, (sq - double(n) * m * m) / double(n - 1)));
  };
  for (std::size_t k = 0; k < acc.size(); ++k) {
    if (!acc[k].n) continue;
    out.bins.push_back({int(k) * bin_size, int(k + 1) * bin_size, acc[k].n, means[k],
                        sample_std(acc[k].n, res_sum[k], res_sq[k])});
  }
  out.sigma_hat = sample_std(records.size(), total, total_sq);
  return out;
}

std::vector<double> standardize(std::span<const LengthLogRatio> records, const BinnedMoments& moments) {
  if (!moments.sigma_hat || !(*moments.sigma_hat > 0.0))
    throw UndefinedMetric("sigma_hat unavailable; cannot standardize");
  std::vector<double> z;
  z.reserve(records.size());
  for (const auto& r : records)
    z.push_back(standardized_statistic(r.log_ratio, r.length, moments.mean_for(r.length), *moments.sigma_hat));
  return z;
}

QQFit qq_fit(std::span<const double> samples) {
  const std::size_t n = samples.size();
  if (n < 10) throw InvalidArgument("qq_fit needs at least 10 samples");
  std::vector<double> y(samples.begin(), samples.end());
  std::sort(y.begin(), y.end());
  double sx = 0, sy = 0;
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = std_normal_quantile((double(i) + 0.5) / double(n));
    sx += x[i];
    sy += y[i];
  }
  const double mx = sx / double(n), my = sy / double(n);
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  QQFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.r_squared = syy > 0 ? std::clamp(sxy * sxy / (sxx * syy), 0.0, 1.0) : 1.0;
  return fit;
}

}  // namespace fspo
