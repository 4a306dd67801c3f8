#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "fspo/config.hpp"
#include "fspo/io.hpp"

using namespace fspo;

TEST_CASE("double formatting round-trips") {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double x = std::ldexp(rng.normal(), int(rng.below(80)) - 40);
    CHECK(parse_double(format_double(x)) == x);
  }
  CHECK_THROWS(parse_double("1.5x"));
  CHECK_THROWS(parse_double(""));
}

TEST_CASE("policy text round-trip is exact") {
  const auto p = TabularPolicy<double>::random(3, 2, 5, 2.0, 0.7);
  const auto q = policy_from_text(header_line(7) + "\n" + policy_to_text(p));
  CHECK(q.params() == p.params());
  CHECK(q.temperature() == p.temperature());
  CHECK(q.eos() == p.eos());
  const auto no_eos = TabularPolicy<double>::random(2, 1, 6, 1.0, 1.0, std::nullopt);
  CHECK_FALSE(policy_from_text(policy_to_text(no_eos)).eos().has_value());
  CHECK_THROWS(policy_from_text("fspo-policy v2\n"));
}

TEST_CASE("record log round-trip") {
  SeqRecord r;
  r.step = 3;
  r.length = 7;
  r.log_ratio = -0.0123456789;
  r.advantage = 0.5;
  r.clipped_low = true;
  r.method = Method::GspoNorm;
  r.logp_old = -3.25;
  r.logp_new = -3.2623456789;
  r.reward = 1;
  std::stringstream ss;
  write_records(ss, {r, r}, 42);
  std::string first;
  std::getline(std::stringstream(ss.str()), first);
  CHECK(first.find("\"header\"") != std::string::npos);
  const auto back = read_records(ss);
  REQUIRE(back.size() == 2);
  CHECK(record_to_json(back[0]) == record_to_json(r));
}

TEST_CASE("record parsing") {
  const std::string base =
      R"({"step":0,"length":3,"log_ratio":0.1,"advantage":1,"clipped_low":false,"clipped_high":true,"clipped_dual":false,"method":"FSPO_LOG")";
  SUBCASE("unknown fields are ignored") {
    const auto r = record_from_json(base + R"(,"extra":[1,2]})");
    CHECK(r.clipped_high);
    CHECK(r.length == 3);
  }
  SUBCASE("malformed line names its number") {
    std::stringstream ss(base + "}\n\n{not json}\n");
    try {
      read_records(ss);
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
  }
  SUBCASE("both low and high rejected") {
    std::string both = base;
    both.replace(both.find("\"clipped_low\":false"), 19, "\"clipped_low\":true");
    CHECK_THROWS(record_from_json(both + "}"));
  }
  SUBCASE("missing field rejected") { CHECK_THROWS(record_from_json(R"({"step":0})")); }
}

TEST_CASE("metrics CSV layout") {
  StepMetrics m;
  m.step = 2;
  m.mean_reward = 0.5;
  std::stringstream ss;
  write_metrics_csv(ss, {m}, 0xabc);
  std::string l1, l2, l3;
  std::getline(ss, l1);
  std::getline(ss, l2);
  std::getline(ss, l3);
  CHECK(l1 == "# fspo-lab 0.1.0 config=0000000000000abc");
  CHECK(l2 == "step,mean_reward,mean_length,clip_fraction,loss,sigma_hat");
  CHECK(l3.rfind("2,0.5,", 0) == 0);
}

TEST_CASE("theory CSV round-trip is byte-identical") {
  TheoryTable t{header_line(1), {{1, 0.1, 0.9, 0.3173}, {2, 1e-40, 0.5, 0.3173}}};
  const std::string text = theory_csv(t);
  CHECK(theory_csv(parse_theory_csv(text)) == text);
  CHECK_THROWS(parse_theory_csv("# h\nL,x\n"));
}

TEST_CASE("run config parsing") {
  SUBCASE("defaults") {
    const auto c = parse_run_config("");
    CHECK(c.train.clip.method == Method::FspoLog);
    CHECK(c.train.clip.c_upper == 0.03);
    CHECK(c.train.clip.scale_c == 0.03);
    CHECK(c.out_dir == "out");
  }
  SUBCASE("method defaults then overrides") {
    const auto c = parse_run_config("method = RLOO_SEQ\nc_upper = 20\nc_lower = 0.95 # ablation\n");
    CHECK(c.train.clip.method == Method::RlooSeq);
    CHECK(c.train.clip.c_upper == 20);
    CHECK(c.train.clip.c_lower == 0.95);
    CHECK(c.train.clip.c_dual == 3.0);
    const auto g = parse_run_config("method = GSPO_NORM\n");
    CHECK_FALSE(g.train.clip.c_dual.has_value());
    const auto d = parse_run_config("c_dual = disabled\n");
    CHECK_FALSE(d.train.clip.c_dual.has_value());
  }
  SUBCASE("unknown key names key and line") {
    try {
      parse_run_config("seed = 1\nlearning_rat = 2\n", "x.conf");
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("learning_rat") != std::string::npos);
      CHECK(msg.find("x.conf:2") != std::string::npos);
    }
  }
  SUBCASE("bad values") {
    CHECK_THROWS_AS(parse_run_config("seed = abc\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("ema = maybe\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("seed = 1\nseed = 2\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("seed =\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("just words\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("method = RLOO_SEQ\nscale_c = 0.1\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("group_size = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("method = GSPO_NORM\nc_dual = 1\n"), ConfigError);
  }
  SUBCASE("canonical text round-trips") {
    const auto c = parse_run_config("method = PPO_TOKEN\ntask = PARITY\ntask_params = 3\nlearning_rate = 0.3\nseed = 9\n");
    const auto d = parse_run_config(to_text(c));
    CHECK(to_text(d) == to_text(c));
    CHECK(config_hash(d) == config_hash(c));
    auto e = c;
    e.out_dir = "elsewhere";
    CHECK(config_hash(e) == config_hash(c));
    e.train.seed = 10;
    CHECK(config_hash(e) != config_hash(c));
  }
  SUBCASE("missing file names the path") {
    try {
      load_run_config("/nonexistent/run.conf");
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("/nonexistent/run.conf") != std::string::npos);
    }
  }
  SUBCASE("fixture configs load") {
    CHECK_NOTHROW(load_run_config(std::string(FSPO_FIXTURE_DIR) + "/match_last_fspo.conf"));
    CHECK_NOTHROW(load_run_config(std::string(FSPO_FIXTURE_DIR) + "/match_last_rloo_ablation.conf"));
  }
}

TEST_CASE("clip spec text round-trip") {
  for (Method m : {Method::PpoToken, Method::RlooSeq, Method::GspoNorm, Method::FspoLog}) {
    const auto spec = ClipSpec::defaults(m);
    CHECK(clip_spec_from_text(clip_spec_to_text(spec)) == spec);
  }
  const auto f = ClipSpec::fspo(0.05, std::nullopt, 0.01);
  CHECK(clip_spec_from_text(clip_spec_to_text(f)) == f);
  CHECK_THROWS_AS(clip_spec_from_text("task = PARITY\n"), ConfigError);
}
