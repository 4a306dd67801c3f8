#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "fspo/common.hpp"
#include "fspo/theory.hpp"

using namespace fspo;

// Reference values computed with 30-digit arithmetic (mpmath ncdf).
TEST_CASE("std_normal_cdf against high-precision values") {
  CHECK(std_normal_cdf(0.0) == 0.5);
  CHECK(std::abs(std_normal_cdf(-1.96) - 0.0249978951482204341) < 1e-15);
  CHECK(std::abs(std_normal_cdf(-1.0) - 0.158655253931457051) < 1e-15);
  CHECK(std::abs(std_normal_cdf(-2.0) - 0.0227501319481792072) < 1e-15);
  CHECK(std::abs(std_normal_cdf(0.5) - 0.691462461274013104) < 1e-15);
  CHECK(std::abs(std_normal_cdf(-6.0) / 9.86587645037698141e-10 - 1) < 1e-12);
}

TEST_CASE("std_normal_cdf symmetry") {
  Rng rng(1);
  for (int i = 0; i < 10000; ++i) {
    const double x = 8 * rng.normal();
    CHECK(std::abs(std_normal_cdf(x) + std_normal_cdf(-x) - 1.0) < 1e-12);
  }
}

TEST_CASE("std_normal_quantile inverts the CDF") {
  for (double x = -6.0; x <= 6.0; x += 0.01) CHECK(std::abs(std_normal_quantile(std_normal_cdf(x)) - x) < 1e-8);
  CHECK_THROWS_AS(std_normal_quantile(0.0), InvalidArgument);
  CHECK_THROWS_AS(std_normal_quantile(1.0), InvalidArgument);
}

TEST_CASE("clip_prob_rloo") {
  const GaussianModel m;
  CHECK(clip_prob_rloo(100, std::log(1.667), m) < clip_prob_rloo(2500, std::log(1.667), m));
  CHECK(clip_prob_rloo(2500, std::log(1.667), m) < clip_prob_rloo(10000, std::log(1.667), m));
  CHECK(std::abs(clip_prob_rloo(10000, 0.5108, m) - 0.866562576390643425) < 1e-14);
  CHECK(clip_prob_rloo(10, 1e6, m) == 0.0);
  CHECK(clip_prob_rloo(10, INFINITY, m) == 0.0);
  CHECK_THROWS_AS(clip_prob_rloo(0, 0.5, m), InvalidArgument);
  CHECK_THROWS_AS(clip_prob_rloo(5, -0.1, m), InvalidArgument);
  GaussianModel bad;
  bad.sigma = 0.0;
  CHECK_THROWS_AS(clip_prob_rloo(5, 0.1, bad), InvalidArgument);
}

TEST_CASE("clip_prob_gspo") {
  const GaussianModel m;
  const double xi = std::log1p(4e-4);
  CHECK(std::abs(clip_prob_gspo(400, xi, m) - 0.792469436598842745) < 1e-14);
  CHECK(clip_prob_gspo(100, 1e-14, m) == doctest::Approx(1.0).epsilon(1e-9));
  double prev = 1.0;
  for (int L = 1; L <= 20000; L += 7) {
    const double c = clip_prob_gspo(L, xi, m);
    CHECK(c < prev);
    prev = c;
  }
}

TEST_CASE("clip_prob_rloo nondecreasing on a dense grid") {
  const GaussianModel m;
  double prev = 0.0;
  for (int L = 1; L <= 20000; L += 3) {
    const double c = clip_prob_rloo(L, std::log(1.667), m);
    CHECK(c >= prev);
    prev = c;
  }
}

TEST_CASE("clip_prob_fspo") {
  CHECK(std::abs(clip_prob_fspo(1.0) - 0.317310507862914103) < 1e-15);
  CHECK(std::abs(clip_prob_fspo(2.0) - 0.0455002638963584144) < 1e-15);
  CHECK(clip_prob_fspo(INFINITY) == 0.0);
  CHECK(clip_prob_fspo(40.0) == 0.0);
  CHECK_THROWS_AS(clip_prob_fspo(0.0), InvalidArgument);
}

TEST_CASE("band-substitution identity") {
  GaussianModel m;
  m.mu_of_L = [](int L) { return 0.001 * L; };
  for (double z : {0.5, 1.0, 1.7, 3.0})
    for (int L : {1, 7, 64, 1000, 12345})
      CHECK(std::abs(clip_prob_fspo(z) - clip_prob_rloo(L, z * m.sigma * std::sqrt(double(L)) + m.mu(L), m)) < 1e-14);
}

TEST_CASE("Monte Carlo agrees with the closed forms") {
  const GaussianModel m;
  const double xi_r = std::log(1.667), xi_g = std::log1p(4e-4), z = 1.0;
  for (int L : {1000, 2500, 10000}) {
    Rng rng(Rng::derive(9, L));
    const int n = 100000;
    long r = 0, g = 0, f = 0;
    const double sd = m.sigma * std::sqrt(double(L));
    for (int i = 0; i < n; ++i) {
      const double S = sd * rng.normal();
      r += std::abs(S) > xi_r;
      g += std::abs(S) > xi_g * L;
      f += std::abs(S) > z * sd;
    }
    CHECK(std::abs(double(r) / n - clip_prob_rloo(L, xi_r, m)) <= 0.01);
    CHECK(std::abs(double(g) / n - clip_prob_gspo(L, xi_g, m)) <= 0.01);
    CHECK(std::abs(double(f) / n - clip_prob_fspo(z)) <= 0.01);
  }
}

TEST_CASE("standardized_statistic") {
  CHECK(standardized_statistic(0.3, 9, 0.3, 0.1) == 0.0);
  CHECK(std::abs(standardized_statistic(0.3 + 2 * 0.1 * 3, 9, 0.3, 0.1) - 2.0) < 1e-14);
  CHECK_THROWS_AS(standardized_statistic(0.1, 4, 0.0, 0.0), InvalidArgument);
  Rng rng(3);
  const double sigma = 0.0304;
  double sum = 0, sq = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const int L = 1 + int(rng.below(500));
    const double zhat = standardized_statistic(sigma * std::sqrt(double(L)) * rng.normal(), L, 0.0, sigma);
    sum += zhat;
    sq += zhat * zhat;
  }
  const double mean = sum / n;
  CHECK(std::abs(std::sqrt(sq / n - mean * mean) - 1.0) <= 0.02);
}

TEST_CASE("binned_moments") {
  SUBCASE("all zero log-ratios") {
    std::vector<LengthLogRatio> recs;
    for (int L = 1; L < 50; ++L) recs.push_back({L, 0.0});
    const auto bm = binned_moments(recs, 10);
    for (const auto& b : bm.bins) CHECK(b.mean == 0.0);
    REQUIRE(bm.sigma_hat);
    CHECK(*bm.sigma_hat == 0.0);
  }
  SUBCASE("single record") {
    const std::vector<LengthLogRatio> recs = {{5, 0.2}};
    const auto bm = binned_moments(recs, 4);
    REQUIRE(bm.bins.size() == 1);
    CHECK(bm.bins[0].bin_lo == 4);
    CHECK(bm.bins[0].count == 1);
    CHECK_FALSE(bm.sigma_hat.has_value());
  }
  SUBCASE("synthetic Gaussian scale recovery") {
    Rng rng(17);
    std::vector<LengthLogRatio> recs;
    for (int i = 0; i < 200000; ++i) {
      const int L = 1 + int(rng.below(2000));
      recs.push_back({L, 0.0304 * std::sqrt(double(L)) * rng.normal()});
    }
    const auto bm = binned_moments(recs, 200);
    REQUIRE(bm.sigma_hat);
    CHECK(std::abs(*bm.sigma_hat - 0.0304) <= 0.001);
  }
  SUBCASE("errors") {
    const std::vector<LengthLogRatio> recs = {{0, 0.0}};
    CHECK_THROWS_AS(binned_moments(recs, 4), InvalidArgument);
    const std::vector<LengthLogRatio> ok = {{1, 0.0}};
    CHECK_THROWS_AS(binned_moments(ok, 0), InvalidArgument);
  }
}

TEST_CASE("qq_fit") {
  SUBCASE("exact quantiles") {
    const int n = 1000;
    std::vector<double> q;
    for (int i = 1; i <= n; ++i) q.push_back(std_normal_quantile((i - 0.5) / n));
    const auto fit = qq_fit(q);
    CHECK(std::abs(fit.slope - 1) < 1e-9);
    CHECK(std::abs(fit.intercept) < 1e-9);
    CHECK(std::abs(fit.r_squared - 1) < 1e-9);
  }
  SUBCASE("simulated normals and affine equivariance") {
    Rng rng(23);
    std::vector<double> z(100000), w(100000);
    for (std::size_t i = 0; i < z.size(); ++i) {
      z[i] = rng.normal();
      w[i] = 0.7 + 2.5 * z[i];
    }
    const auto fit = qq_fit(z);
    CHECK(std::abs(fit.slope - 1) <= 0.02);
    CHECK(std::abs(fit.intercept) <= 0.01);
    CHECK(fit.r_squared >= 0.995);
    const auto aff = qq_fit(w);
    CHECK(std::abs(aff.slope - 2.5) <= 0.05);
    CHECK(std::abs(aff.intercept - 0.7) <= 0.025);
  }
  SUBCASE("too few samples") { CHECK_THROWS_AS(qq_fit(std::vector<double>(5, 0.0)), InvalidArgument); }
}
