#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "fspo/policy.hpp"

using namespace fspo;

namespace {

Tokens toks(std::initializer_list<TokenId> t) { return Tokens(t); }

// Straight softmax over a logits row, independent of row_log_probs.
long double oracle_log_softmax(const TabularPolicy<double>& p, Eigen::Index row, TokenId tok) {
  long double z = 0;
  for (int v = 0; v < p.vocab_size(); ++v) z += std::exp((long double)p.logits()(row, v) / p.temperature());
  return (long double)p.logits()(row, tok) / p.temperature() - std::log(z);
}

}  // namespace

TEST_CASE("token_log_prob on a uniform row") {
  TabularPolicy<double> p(4, 1);
  CHECK(token_log_prob(p, std::span<const TokenId>(), 2) == doctest::Approx(-1.3862943611198906).epsilon(1e-15));
  CHECK(std::abs(token_log_prob(p, std::span<const TokenId>(), 0) - std::log(0.25)) < 1e-15);
}

TEST_CASE("token_log_prob near-deterministic row") {
  TabularPolicy<double> p(4, 1);
  const Tokens ctx = {1};
  p.logits().row(p.context_index(ctx)) << 10, -10, -10, -10;
  const double lp = token_log_prob(p, std::span<const TokenId>(ctx), 0);
  CHECK(lp < 0.0);
  CHECK(lp > -1e-8);
}

TEST_CASE("token_log_prob two-token softmax") {
  TabularPolicy<double> p(2, 1, 1.0, std::nullopt);
  const Tokens ctx = {0};
  p.logits().row(p.context_index(ctx)) << 1, 0;
  CHECK(std::abs(token_log_prob(p, std::span<const TokenId>(ctx), 0) - std::log(std::exp(1.0) / (std::exp(1.0) + 1))) <
        1e-15);
}

TEST_CASE("temperature scales logits") {
  TabularPolicy<double> p(2, 1, 2.0, std::nullopt);
  p.logits().row(p.context_index(Tokens{})) << 2, 0;
  CHECK(std::abs(token_log_prob(p, std::span<const TokenId>(), 0) - std::log(std::exp(1.0) / (std::exp(1.0) + 1))) <
        1e-15);
}

TEST_CASE("sequence_log_prob basics") {
  const auto p = TabularPolicy<double>::random(5, 2, 7);
  const Tokens prompt = {3};
  SUBCASE("single token equals token_log_prob") {
    CHECK(sequence_log_prob(p, std::span<const TokenId>(prompt), toks({2})) ==
          token_log_prob(p, std::span<const TokenId>(prompt), 2));
  }
  SUBCASE("uniform two tokens") {
    TabularPolicy<double> u(4, 2);
    CHECK(std::abs(sequence_log_prob(u, std::span<const TokenId>(prompt), toks({1, 2})) - 2 * std::log(0.25)) < 1e-15);
  }
  SUBCASE("three-token sequence matches enumerated conditionals") {
    const Tokens y = {1, 4, 2};
    Tokens hist = prompt;
    long double oracle = 0;
    for (TokenId t : y) {
      oracle += oracle_log_softmax(p, p.context_index(hist), t);
      hist.push_back(t);
    }
    CHECK(std::abs(sequence_log_prob(p, std::span<const TokenId>(prompt), y) - (double)oracle) < 1e-13);
    const auto leaves = enumerate_all(p, prompt, 3);
    const auto it = std::find_if(leaves.begin(), leaves.end(), [&](const auto& w) { return w.sample.tokens == y; });
    REQUIRE(it != leaves.end());
    CHECK(std::abs(it->probability - std::exp((double)oracle)) < 1e-14);
  }
  SUBCASE("empty response is rejected") {
    CHECK_THROWS_AS(sequence_log_prob(p, std::span<const TokenId>(prompt), Tokens{}), InvalidArgument);
  }
  SUBCASE("out-of-vocabulary token is rejected") {
    CHECK_THROWS_AS(sequence_log_prob(p, std::span<const TokenId>(prompt), toks({5})), InvalidArgument);
  }
}

TEST_CASE("normalization of every conditional") {
  const auto p = TabularPolicy<double>::random(4, 2, 3, 3.0);
  for (Eigen::Index r = 0; r < p.num_contexts(); ++r) CHECK(std::abs(p.row_probs(r).sum() - 1.0) < 1e-12);
}

TEST_CASE("Markov property: tokens outside the window do not matter") {
  const auto p = TabularPolicy<double>::random(4, 2, 11);
  const Tokens a = {1, 2, 3, 0, 2};
  const Tokens b = {3, 1, 1, 0, 2};  // differs only outside the last two positions
  for (TokenId t = 0; t < 4; ++t)
    CHECK(token_log_prob(p, std::span<const TokenId>(a), t) == token_log_prob(p, std::span<const TokenId>(b), t));
}

TEST_CASE("context indexing pads on the left") {
  TabularPolicy<double> p(3, 2);
  const Tokens empty;
  const auto idx = p.context_index(empty);
  CHECK(p.context_tuple(idx) == Tokens{p.pad_id(), p.pad_id()});
  const Tokens one = {2};
  CHECK(p.context_tuple(p.context_index(one)) == Tokens{p.pad_id(), 2});
  const Tokens three = {0, 1, 2};
  CHECK(p.context_tuple(p.context_index(three)) == Tokens{1, 2});
}

TEST_CASE("construction errors") {
  CHECK_THROWS_AS(TabularPolicy<double>(0, 1), InvalidArgument);
  CHECK_THROWS_AS(TabularPolicy<double>(3, 0), InvalidArgument);
  CHECK_THROWS_AS(TabularPolicy<double>(3, 1, 0.0), InvalidArgument);
  CHECK_THROWS_AS(TabularPolicy<double>(3, 1, 1.0, TokenId{3}), InvalidArgument);
  CHECK_THROWS_AS(TabularPolicy<double>(100, 6), CapacityError);
}

TEST_CASE("sample_sequence") {
  SUBCASE("EOS-first policy gives a length-1 sequence") {
    TabularPolicy<double> p(3, 1);
    p.logits().col(0).setConstant(50.0);
    const Tokens prompt = {1};
    const auto s = sample_sequence(p, prompt, 10, 5);
    CHECK(s.tokens == Tokens{0});
    CHECK(s.length == 1);
    CHECK_FALSE(s.truncated);
  }
  SUBCASE("deterministic in the seed") {
    const auto p = TabularPolicy<double>::random(5, 2, 1);
    const Tokens prompt = {2};
    const auto a = sample_sequence(p, prompt, 12, 99);
    const auto b = sample_sequence(p, prompt, 12, 99);
    CHECK(a.tokens == b.tokens);
    CHECK(a.logp_old == b.logp_old);
    CHECK(a.logp_old == sequence_log_prob(p, std::span<const TokenId>(prompt), a.tokens));
  }
  SUBCASE("max_len truncation without EOS") {
    TabularPolicy<double> p(3, 1, 1.0, std::nullopt);
    const auto s = sample_sequence(p, Tokens{}, 6, 1);
    CHECK(s.length == 6);
    CHECK(s.truncated);
  }
  SUBCASE("max_len must be positive") {
    TabularPolicy<double> p(3, 1);
    CHECK_THROWS_AS(sample_sequence(p, Tokens{}, 0, 1), InvalidArgument);
  }
  SUBCASE("uniform binary vocabulary frequencies") {
    TabularPolicy<double> p(2, 1, 1.0, std::nullopt);
    long ones = 0, total = 0;
    for (int i = 0; i < 100000; ++i) {
      const auto s = sample_sequence(p, Tokens{}, 8, Rng::derive(2024, i));
      ones += std::count(s.tokens.begin(), s.tokens.end(), 1);
      total += s.length;
    }
    CHECK(std::abs(double(ones) / double(total) - 0.5) < 0.01);
  }
}

TEST_CASE("log_prob_gradient") {
  SUBCASE("finite differences on 100 random pairs") {
    double worst = 0.0;
    for (int inst = 0; inst < 100; ++inst) {
      Rng rng(Rng::derive(77, inst));
      const int V = 2 + int(rng.below(3)), K = 1 + int(rng.below(2));
      const auto p = TabularPolicy<double>::random(V, K, rng.next_u64(), 1.5, 0.5 + rng.uniform());
      const Tokens prompt = {TokenId(rng.below(V))};
      const auto s = sample_sequence(p, prompt, 6, rng.next_u64());
      const VectorXd g = log_prob_gradient(p, std::span<const TokenId>(prompt), s.tokens);
      auto q = p.cast<long double>();
      const long double h = 1e-5L;
      Vector<long double> fd(q.num_params());
      for (Eigen::Index i = 0; i < fd.size(); ++i) {
        const long double keep = q.params()[i];
        q.params()[i] = keep + h;
        const long double up = sequence_log_prob(q, std::span<const TokenId>(prompt), s.tokens);
        q.params()[i] = keep - h;
        const long double dn = sequence_log_prob(q, std::span<const TokenId>(prompt), s.tokens);
        q.params()[i] = keep;
        fd[i] = (up - dn) / (2 * h);
      }
      const VectorXd fdd = fd.cast<double>();
      worst = std::max(worst, (g - fdd).norm() / fdd.norm());
    }
    CHECK(worst <= 1e-6);
  }
  SUBCASE("unvisited rows are zero and visited rows sum to zero") {
    const auto p = TabularPolicy<double>::random(4, 2, 5);
    const Tokens prompt = {1};
    const Tokens y = {2, 3, 0};
    const VectorXd g = log_prob_gradient(p, std::span<const TokenId>(prompt), y);
    std::map<Eigen::Index, bool> visited;
    Tokens hist = prompt;
    for (TokenId t : y) {
      visited[p.context_index(hist)] = true;
      hist.push_back(t);
    }
    for (Eigen::Index r = 0; r < p.num_contexts(); ++r) {
      const auto block = g.segment(r * 4, 4);
      if (visited.count(r))
        CHECK(std::abs(block.sum()) < 1e-14);
      else
        CHECK(block.isZero(0.0));
    }
  }
}

TEST_CASE("enumerate_all") {
  SUBCASE("binary vocabulary with EOS") {
    const auto p = TabularPolicy<double>::random(2, 1, 4);
    const auto leaves = enumerate_all(p, Tokens{1}, 3);
    CHECK(leaves.size() <= 8);
    double mass = 0;
    for (const auto& w : leaves) mass += w.probability;
    CHECK(std::abs(mass - 1.0) < 1e-12);
  }
  SUBCASE("total mass on a larger instance") {
    const auto p = TabularPolicy<double>::random(4, 2, 8);
    double mass = 0;
    for (const auto& w : enumerate_all(p, Tokens{2}, 6)) mass += w.probability;
    CHECK(std::abs(mass - 1.0) < 1e-10);
  }
  SUBCASE("deterministic policy gives one sequence") {
    TabularPolicy<double> p(3, 1);
    p.logits().setConstant(-1e4);
    p.logits().col(2).setConstant(1e4);
    p.logits().row(p.context_index(Tokens{2})).setConstant(-1e4);
    p.logits()(p.context_index(Tokens{2}), 0) = 1e4;
    const auto leaves = enumerate_all(p, Tokens{1}, 5);
    REQUIRE(leaves.size() == 1);
    CHECK(leaves[0].sample.tokens == Tokens{2, 0});
    CHECK(leaves[0].probability == 1.0);
  }
  SUBCASE("capacity guard") {
    TabularPolicy<double> p(10, 1);
    CHECK_THROWS_AS(enumerate_all(p, Tokens{}, 10), CapacityError);
  }
  SUBCASE("Monte Carlo frequencies converge to enumerated probabilities") {
    const auto p = TabularPolicy<double>::random(3, 1, 21);
    const Tokens prompt = {1};
    const auto leaves = enumerate_all(p, prompt, 4);
    std::map<Tokens, double> freq;
    const int n = 100000;
    for (int i = 0; i < n; ++i) freq[sample_sequence(p, prompt, 4, Rng::derive(3, i)).tokens] += 1.0 / n;
    double gap = 0;
    for (const auto& w : leaves) gap = std::max(gap, std::abs(freq[w.sample.tokens] - w.probability));
    CHECK(gap <= 0.01);
  }
}
