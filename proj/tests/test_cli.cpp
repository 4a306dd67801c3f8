#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "fspo/io.hpp"
#include "synthetic.hpp"

namespace fs = std::filesystem;
using namespace fspo;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("fspo_cli_" + std::to_string(::getpid())) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Run lab(const std::string& args) {
  const fs::path dir = scratch("io");
  const std::string cmd = std::string(FSPO_LAB_EXE) + " " + args + " > " + (dir / "out").string() + " 2> " +
                          (dir / "err").string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(dir / "out"), slurp(dir / "err")};
}

const std::string kFixtures = FSPO_FIXTURE_DIR;

std::string first_line(const std::string& text) { return text.substr(0, text.find('\n')); }

}  // namespace

TEST_CASE("train reproduces the golden metrics") {
  const auto dir = scratch("train");
  const auto r = lab("train --config " + kFixtures + "/match_last_fspo.conf --out " + dir.string());
  REQUIRE(r.code == 0);
  CHECK(r.out.find("final_mean_reward=") != std::string::npos);
  CHECK(slurp(dir / "metrics.csv") == slurp(kFixtures + "/match_last_fspo.metrics.csv"));
  CHECK(first_line(slurp(dir / "policy.txt")).rfind("# fspo-lab 0.1.0 config=", 0) == 0);
  CHECK(first_line(slurp(dir / "records.jsonl")).find("\"header\"") != std::string::npos);
  // Same config twice gives identical artifacts.
  const auto again = scratch("train_again");
  REQUIRE(lab("train --config " + kFixtures + "/match_last_fspo.conf --out " + again.string()).code == 0);
  CHECK(slurp(dir / "records.jsonl") == slurp(again / "records.jsonl"));
  CHECK(slurp(dir / "policy.txt") == slurp(again / "policy.txt"));
  // The saved policy loads back.
  CHECK_NOTHROW(load_policy((dir / "policy.txt").string()));
}

TEST_CASE("train errors") {
  auto r = lab("train --config /no/such/file.conf");
  CHECK(r.code == 2);
  CHECK(r.err.find("/no/such/file.conf") != std::string::npos);
  const auto dir = scratch("badconf");
  std::ofstream(dir / "bad.conf") << "seed = 3\nlearning_rat = 1\n";
  r = lab("train --config " + (dir / "bad.conf").string());
  CHECK(r.code == 2);
  CHECK(r.err.find("learning_rat") != std::string::npos);
  CHECK(r.err.find(":2:") != std::string::npos);
  std::ofstream(dir / "diverge.conf") << "learning_rate = 1e308\ntotal_steps = 5\n";
  r = lab("train --config " + (dir / "diverge.conf").string() + " --out " + dir.string());
  CHECK(r.code == 1);
  CHECK(r.err.find("diverged") != std::string::npos);
  CHECK(lab("train").code == 2);
  CHECK(lab("").code == 2);
  CHECK(lab("frobnicate").code == 2);
}

TEST_CASE("ablation config runs") {
  const auto dir = scratch("ablation");
  const auto r = lab("train --config " + kFixtures + "/match_last_rloo_ablation.conf --out " + dir.string());
  CHECK(r.code == 0);
  CHECK(r.out.find("method=RLOO_SEQ") != std::string::npos);
  CHECK(fs::exists(dir / "metrics.csv"));
}

TEST_CASE("diagnose") {
  const auto dir = scratch("diagnose");
  SUBCASE("trainer log") {
    REQUIRE(lab("train --config " + kFixtures + "/match_last_fspo.conf --out " + dir.string()).code == 0);
    const auto r = lab("diagnose " + (dir / "records.jsonl").string() + " --bin-size 2 --out " + (dir / "d").string());
    REQUIRE(r.code == 0);
    const std::string csv = slurp(dir / "d" / "fairness.csv");
    CHECK(first_line(csv).rfind("# fspo-lab", 0) == 0);
    CHECK(csv.find("bin_lo,bin_hi,count,clip_fraction,acceptance\n") != std::string::npos);
    const auto j = nlohmann::json::parse(slurp(dir / "d" / "fairness.json"));
    CHECK(j.contains("header"));
    CHECK(j["bins"][0]["bin_hi"].get<int>() - j["bins"][0]["bin_lo"].get<int>() == 2);
  }
  SUBCASE("log without clip flags") {
    std::vector<SeqRecord> recs;
    for (int L = 1; L < 30; ++L) {
      SeqRecord r;
      r.length = L;
      recs.push_back(r);
    }
    std::ofstream out(dir / "clean.jsonl");
    write_records(out, recs, 0);
    out.close();
    const auto r = lab("diagnose " + (dir / "clean.jsonl").string() + " --out " + dir.string());
    REQUIRE(r.code == 0);
    CHECK(nlohmann::json::parse(r.out)["lre"].get<double>() == 0.0);
  }
  SUBCASE("three synthetic methods") {
    const std::vector<int> lengths = {100, 400, 1000, 2500, 5000, 10000};
    double lre[3];
    int k = 0;
    for (const auto& spec : {ClipSpec::fspo(0.0304, std::nullopt), ClipSpec::defaults(Method::RlooSeq),
                             ClipSpec::defaults(Method::GspoNorm)}) {
      const auto path = dir / ("m" + std::to_string(k) + ".jsonl");
      std::ofstream out(path);
      write_records(out, testing::gaussian_records(spec, lengths, 2000, 0.0304, 5), 0);
      out.close();
      const auto r = lab("diagnose " + path.string() + " --bin-size 1 --out " + (dir / std::to_string(k)).string());
      REQUIRE(r.code == 0);
      lre[k++] = nlohmann::json::parse(r.out)["lre"].get<double>();
    }
    CHECK(lre[0] < lre[1]);
    CHECK(lre[0] < lre[2]);
  }
  SUBCASE("malformed and empty logs") {
    std::ofstream(dir / "bad.jsonl") << "{\"header\":{}}\n{\"step\":0}\n";
    auto r = lab("diagnose " + (dir / "bad.jsonl").string() + " --out " + dir.string());
    CHECK(r.code == 2);
    CHECK(r.err.find("line 2") != std::string::npos);
    std::ofstream(dir / "empty.jsonl") << "{\"header\":{}}\n";
    r = lab("diagnose " + (dir / "empty.jsonl").string() + " --out " + dir.string());
    CHECK(r.code != 0);
    CHECK(lab("diagnose /no/such/log.jsonl").code != 0);
  }
}

TEST_CASE("theory") {
  const auto r = lab("theory --sigma 0.0304 --z 1 --lengths 1:2000");
  REQUIRE(r.code == 0);
  const auto table = parse_theory_csv(r.out);
  REQUIRE(table.rows.size() == 2000);
  CHECK(theory_csv(table) == r.out);
  for (std::size_t i = 1; i < table.rows.size(); ++i) {
    CHECK(table.rows[i].c_fspo == table.rows[0].c_fspo);
    CHECK(table.rows[i].c_rloo >= table.rows[i - 1].c_rloo);
    CHECK(table.rows[i].c_gspo <= table.rows[i - 1].c_gspo);
  }
  CHECK(lab("theory --sigma 0").code == 2);
  CHECK(lab("theory --sigma -1").code == 2);
  CHECK(lab("theory --lengths 0,3").code == 2);
  CHECK(lab("theory --lengths x").code == 2);
}

TEST_CASE("verify") {
  auto r = lab("verify --suite theorem1 --seeds 100");
  CHECK(r.code == 0);
  auto j = nlohmann::json::parse(first_line(r.out));
  CHECK(j["suite"] == "theorem1");
  CHECK(j["instances"].get<long>() == 100);
  CHECK(j["failures"].get<long>() == 0);
  r = lab("verify --suite kl_drift --seeds 20");
  CHECK(r.code == 0);
  CHECK(nlohmann::json::parse(first_line(r.out))["max_gap"].get<double>() <= 1e-10);
  r = lab("verify --suite prefix_demo --seeds 20");
  CHECK(r.code == 0);
  CHECK(nlohmann::json::parse(first_line(r.out))["failures"].get<long>() == 0);
  r = lab("verify --suite gradients --seeds 5");
  CHECK(r.code == 0);
  CHECK(lab("verify --suite nonsense").code == 2);
  CHECK(lab("verify --seeds 0").code == 2);
}
