#include "fspo/io.hpp"

#include <charconv>
#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <json.hpp>

namespace fspo {

using nlohmann::json;

std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string format_double(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view text) {
  double value = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size())
    throw InvalidArgument("not a number: '" + std::string(text) + "'");
  return value;
}

std::string header_line(std::uint64_t config_hash) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "# fspo-lab %s config=%016" PRIx64, kToolVersion, config_hash);
  return buf;
}

namespace {

std::string hexfloat(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

double parse_hexfloat(const std::string& text) {
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (end == text.c_str() || *end != '\0') throw InvalidArgument("bad float in policy dump: '" + text + "'");
  return v;
}

}  // namespace

std::string policy_to_text(const TabularPolicy<double>& policy) {
  std::ostringstream out;
  out << "fspo-policy v1\n";
  out << "vocab_size " << policy.vocab_size() << "\n";
  out << "context_window " << policy.context_window() << "\n";
  out << "temperature " << hexfloat(policy.temperature()) << "\n";
  out << "eos " << (policy.eos() ? std::to_string(*policy.eos()) : "none") << "\n";
  out << "rows " << policy.num_contexts() << "\n";
  for (Eigen::Index r = 0; r < policy.num_contexts(); ++r) {
    const Tokens ctx = policy.context_tuple(r);
    for (std::size_t k = 0; k < ctx.size(); ++k) out << (k ? " " : "") << ctx[k];
    out << " :";
    for (Eigen::Index v = 0; v < policy.vocab_size(); ++v) out << ' ' << hexfloat(policy.logits()(r, v));
    out << '\n';
  }
  return out.str();
}

TabularPolicy<double> policy_from_text(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  // Skip leading comment/header lines.
  do {
    if (!std::getline(in, line)) throw InvalidArgument("empty policy dump");
  } while (!line.empty() && line[0] == '#');
  if (line != "fspo-policy v1") throw InvalidArgument("unsupported policy dump version: '" + line + "'");

  auto field = [&](const std::string& name) {
    std::string key, value;
    if (!std::getline(in, line)) throw InvalidArgument("policy dump truncated before '" + name + "'");
    std::istringstream ls(line);
    ls >> key >> value;
    if (key != name) throw InvalidArgument("expected '" + name + "' in policy dump, got '" + key + "'");
    return value;
  };
  const int vocab = std::stoi(field("vocab_size"));
  const int window = std::stoi(field("context_window"));
  const double temperature = parse_hexfloat(field("temperature"));
  const std::string eos_text = field("eos");
  std::optional<TokenId> eos;
  if (eos_text != "none") eos = std::stoi(eos_text);
  const long rows = std::stol(field("rows"));

  TabularPolicy<double> policy(vocab, window, temperature, eos);
  if (rows != policy.num_contexts()) throw InvalidArgument("row count does not match vocab/window");
  for (long r = 0; r < rows; ++r) {
    if (!std::getline(in, line)) throw InvalidArgument("policy dump truncated at row " + std::to_string(r));
    const auto colon = line.find(':');
    if (colon == std::string::npos) throw InvalidArgument("malformed policy row " + std::to_string(r));
    std::istringstream ctx_in(line.substr(0, colon));
    Tokens ctx;
    for (TokenId t; ctx_in >> t;) ctx.push_back(t);
    if (ctx != policy.context_tuple(r)) throw InvalidArgument("context mismatch at row " + std::to_string(r));
    std::istringstream val_in(line.substr(colon + 1));
    std::string tok;
    for (int v = 0; v < vocab; ++v) {
      if (!(val_in >> tok)) throw InvalidArgument("too few logits at row " + std::to_string(r));
      policy.logits()(r, v) = parse_hexfloat(tok);
    }
  }
  return policy;
}

void save_policy(const std::string& path, const TabularPolicy<double>& policy, std::uint64_t config_hash) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot write " + path);
  out << header_line(config_hash) << '\n' << policy_to_text(policy);
}

TabularPolicy<double> load_policy(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot read " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return policy_from_text(buf.str());
}

std::string record_to_json(const SeqRecord& r) {
  // Keys in a fixed order so logs are byte-stable.
  std::string out = "{";
  auto add = [&](const char* key, const std::string& value, bool first = false) {
    if (!first) out += ',';
    out += '"';
    out += key;
    out += "\":";
    out += value;
  };
  add("step", std::to_string(r.step), true);
  add("length", std::to_string(r.length));
  add("log_ratio", format_double(r.log_ratio));
  add("advantage", format_double(r.advantage));
  add("clipped_low", r.clipped_low ? "true" : "false");
  add("clipped_high", r.clipped_high ? "true" : "false");
  add("clipped_dual", r.clipped_dual ? "true" : "false");
  add("method", "\"" + std::string(method_name(r.method)) + "\"");
  add("logp_old", format_double(r.logp_old));
  add("logp_new", format_double(r.logp_new));
  add("reward", format_double(r.reward));
  out += '}';
  return out;
}

SeqRecord record_from_json(std::string_view line) {
  const json j = json::parse(line);
  if (!j.is_object()) throw InvalidArgument("record is not an object");
  SeqRecord r;
  r.step = j.at("step").get<long>();
  r.length = j.at("length").get<int>();
  if (r.length < 1) throw InvalidArgument("record length must be >= 1");
  r.log_ratio = j.at("log_ratio").get<double>();
  r.advantage = j.at("advantage").get<double>();
  r.clipped_low = j.at("clipped_low").get<bool>();
  r.clipped_high = j.at("clipped_high").get<bool>();
  r.clipped_dual = j.at("clipped_dual").get<bool>();
  if (r.clipped_low && r.clipped_high) throw InvalidArgument("record sets both clipped_low and clipped_high");
  r.method = parse_method(j.at("method").get<std::string>());
  r.logp_old = j.value("logp_old", 0.0);
  r.logp_new = j.value("logp_new", 0.0);
  r.reward = j.value("reward", 0.0);
  return r;
}

std::string log_header_json(std::uint64_t config_hash) {
  char hash[24];
  std::snprintf(hash, sizeof hash, "%016" PRIx64, config_hash);
  return std::string("{\"header\":{\"tool\":\"fspo-lab\",\"version\":\"") + kToolVersion + "\",\"config\":\"" + hash +
         "\"}}";
}

std::vector<SeqRecord> read_records(std::istream& in) {
  std::vector<SeqRecord> out;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      if (j.is_object() && j.contains("header")) continue;
      out.push_back(record_from_json(line));
    } catch (const std::exception& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": malformed record: " + e.what());
    }
  }
  return out;
}

void write_records(std::ostream& out, const std::vector<SeqRecord>& records, std::uint64_t config_hash) {
  out << log_header_json(config_hash) << '\n';
  for (const auto& r : records) out << record_to_json(r) << '\n';
}

void write_metrics_csv(std::ostream& out, const std::vector<StepMetrics>& metrics, std::uint64_t config_hash) {
  out << header_line(config_hash) << '\n';
  out << "step,mean_reward,mean_length,clip_fraction,loss,sigma_hat\n";
  for (const auto& m : metrics)
    out << m.step << ',' << format_double(m.mean_reward) << ',' << format_double(m.mean_length) << ','
        << format_double(m.clip_fraction) << ',' << format_double(m.loss) << ',' << format_double(m.sigma_hat) << '\n';
}

void write_fairness_csv(std::ostream& out, const FairnessReport& report, std::uint64_t config_hash) {
  out << header_line(config_hash) << '\n';
  out << "bin_lo,bin_hi,count,clip_fraction,acceptance\n";
  for (const auto& b : report.bins)
    out << b.bin_lo << ',' << b.bin_hi << ',' << b.count << ',' << format_double(b.clip_fraction) << ','
        << format_double(b.acceptance) << '\n';
}

std::string fairness_report_json(const FairnessReport& report, std::uint64_t config_hash) {
  json j;
  char hash[24];
  std::snprintf(hash, sizeof hash, "%016" PRIx64, config_hash);
  j["header"] = {{"tool", "fspo-lab"}, {"version", kToolVersion}, {"config", hash}};
  j["q_bar"] = report.q_bar;
  j["lre"] = report.lre;
  j["lre_weighted"] = report.lre_weighted ? json(*report.lre_weighted) : json(nullptr);
  j["excluded_short"] = report.excluded_short;
  json bins = json::array();
  for (const auto& b : report.bins)
    bins.push_back({{"bin_lo", b.bin_lo},
                    {"bin_hi", b.bin_hi},
                    {"count", b.count},
                    {"clip_fraction", b.clip_fraction},
                    {"acceptance", b.acceptance}});
  j["bins"] = bins;
  return j.dump(2);
}

std::string theory_csv(const TheoryTable& table) {
  std::string out = table.header + "\nL,c_rloo,c_gspo,c_fspo\n";
  for (const auto& r : table.rows)
    out += std::to_string(r.length) + ',' + format_double(r.c_rloo) + ',' + format_double(r.c_gspo) + ',' +
           format_double(r.c_fspo) + '\n';
  return out;
}

TheoryTable parse_theory_csv(std::string_view text) {
  TheoryTable table;
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, table.header)) throw InvalidArgument("empty theory CSV");
  if (!std::getline(in, line) || line != "L,c_rloo,c_gspo,c_fspo") throw InvalidArgument("bad theory CSV header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(cell);
    if (cells.size() != 4) throw InvalidArgument("theory CSV row needs 4 cells: '" + line + "'");
    table.rows.push_back({std::stoi(cells[0]), parse_double(cells[1]), parse_double(cells[2]), parse_double(cells[3])});
  }
  return table;
}

}  // namespace fspo
