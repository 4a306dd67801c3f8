#pragma once

// Gaussian-law predictions for the sequence log-ratio S_L ~ N(mu_L, sigma^2 L):
// closed-form clip probabilities for fixed, length-normalized, and
// sqrt(L)-scaled bands, plus the normality diagnostics (standardized
// statistic, binned moments, Q-Q fit).

#include <functional>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace fspo {

struct GaussianModel {
  double sigma = 0.0304;
  std::function<double(int)> mu_of_L = [](int) { return 0.0; };

  double mu(int length) const { return mu_of_L ? mu_of_L(length) : 0.0; }
  void validate() const;
};

struct QQFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

/// Phi(x) = erfc(-x / sqrt 2) / 2.
double std_normal_cdf(double x);
/// Phi^{-1}(p) for p in (0, 1): bisection bracket, then Newton polish.
double std_normal_quantile(double p);

/// 2 Phi(-(xi - mu_L) / (sigma sqrt L)): fixed band xi on S.
double clip_prob_rloo(int length, double xi, const GaussianModel& model);
/// 2 Phi(-(xi L - mu_L) / (sigma sqrt L)): band xi on S / L.
double clip_prob_gspo(int length, double xi, const GaussianModel& model);
/// 2 Phi(-z): band mu_L + z sigma sqrt L, constant in L.
double clip_prob_fspo(double z);

double standardized_statistic(double log_ratio, int length, double mu_L, double sigma);

struct LengthLogRatio {
  int length;
  double log_ratio;
};

struct MomentBin {
  int bin_lo;
  int bin_hi;  // exclusive
  std::size_t count;
  double mean;                          // mu_hat for lengths in this bin
  std::optional<double> residual_std;   // std of (S - mu_hat)/sqrt L within the bin
};

struct BinnedMoments {
  std::vector<MomentBin> bins;
  std::optional<double> sigma_hat;  // over all records; absent with < 2 records

  /// mu_hat of the bin containing `length` (0 if the bin is empty).
  double mean_for(int length) const;
};

BinnedMoments binned_moments(std::span<const LengthLogRatio> records, int bin_size);

/// Standardized Z-hat values using per-bin means and the global sigma_hat.
std::vector<double> standardize(std::span<const LengthLogRatio> records, const BinnedMoments& moments);

/// Least-squares line of sorted samples against Phi^{-1}((i - 0.5)/n).
QQFit qq_fit(std::span<const double> samples);

}  // namespace fspo
