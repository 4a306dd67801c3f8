#include "fspo/config.hpp"

#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "fspo/io.hpp"

namespace fspo {

namespace {

struct Entry {
  std::string value;
  long line;
};

using Entries = std::map<std::string, Entry>;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

Entries tokenize(std::string_view text, std::string_view source, const std::set<std::string>& allowed) {
  Entries entries;
  std::istringstream in{std::string(text)};
  std::string raw;
  long line_no = 0;
  auto fail = [&](const std::string& msg) {
    throw ConfigError(std::string(source) + ":" + std::to_string(line_no) + ": " + msg);
  };
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!allowed.count(key)) fail("unknown key '" + key + "'");
    if (value.empty()) fail("empty value for '" + key + "'");
    if (entries.count(key)) fail("duplicate key '" + key + "'");
    entries[key] = {value, line_no};
  }
  return entries;
}

const std::set<std::string> kClipKeys = {"method", "c_upper", "c_lower", "c_dual", "drift_mu", "scale_c"};

const std::set<std::string> kRunKeys = {
    "method",       "c_upper",     "c_lower",  "c_dual",     "drift_mu",     "scale_c",        "task",
    "task_params",  "advantage",   "vocab_size", "context_window", "temperature", "group_size", "prompts_per_step",
    "learning_rate", "total_steps", "max_len", "ema",        "ema_alpha",    "sigma_init",     "z",
    "inner_epochs", "momentum",    "seed",     "out_dir",    "bin_size",     "min_length"};

class Reader {
 public:
  Reader(const Entries& entries, std::string_view source) : entries_(entries), source_(source) {}

  bool has(const std::string& key) const { return entries_.count(key) > 0; }

  template <typename Fn>
  auto convert(const std::string& key, Fn&& fn) const {
    const auto& e = entries_.at(key);
    try {
      return fn(e.value);
    } catch (const std::exception& ex) {
      throw ConfigError(std::string(source_) + ":" + std::to_string(e.line) + ": bad value for '" + key +
                        "': " + e.value);
    }
  }

  void real(const std::string& key, double& out) const {
    if (has(key)) out = convert(key, [](const std::string& v) { return parse_double(v); });
  }
  template <typename Int>
  void integer(const std::string& key, Int& out) const {
    if (has(key))
      out = convert(key, [](const std::string& v) {
        std::size_t pos = 0;
        const long long x = std::stoll(v, &pos);
        if (pos != v.size()) throw InvalidArgument("trailing characters");
        return static_cast<Int>(x);
      });
  }
  void boolean(const std::string& key, bool& out) const {
    if (has(key))
      out = convert(key, [](const std::string& v) {
        if (v == "true") return true;
        if (v == "false") return false;
        throw InvalidArgument("expected true or false");
      });
  }
  void optional_real(const std::string& key, std::optional<double>& out) const {
    if (has(key))
      out = convert(key, [](const std::string& v) -> std::optional<double> {
        if (v == "disabled" || v == "none") return std::nullopt;
        return parse_double(v);
      });
  }

  long line_of(const std::string& key) const { return has(key) ? entries_.at(key).line : 0; }

 private:
  const Entries& entries_;
  std::string_view source_;
};

ClipSpec read_clip(const Reader& r) {
  Method method = Method::FspoLog;
  if (r.has("method")) method = r.convert("method", [](const std::string& v) { return parse_method(v); });
  ClipSpec spec = ClipSpec::defaults(method);
  r.real("c_upper", spec.c_upper);
  r.real("c_lower", spec.c_lower);
  r.optional_real("c_dual", spec.c_dual);
  r.real("drift_mu", spec.drift_mu);
  if (method == Method::FspoLog) {
    // Symmetric reference scale follows the upper band unless given.
    spec.scale_c = spec.c_upper;
    r.optional_real("scale_c", spec.scale_c);
  } else if (r.has("scale_c")) {
    throw ConfigError("config:" + std::to_string(r.line_of("scale_c")) + ": 'scale_c' only applies to FSPO_LOG");
  }
  return spec;
}

std::string optional_text(const std::optional<double>& v) { return v ? format_double(*v) : "disabled"; }

}  // namespace

RunConfig parse_run_config(std::string_view text, std::string_view source) {
  const Entries entries = tokenize(text, source, kRunKeys);
  const Reader r(entries, source);
  RunConfig cfg;
  TrainConfig& t = cfg.train;
  t.clip = read_clip(r);
  if (r.has("task")) t.task.kind = r.convert("task", [](const std::string& v) { return parse_task(v); });
  if (r.has("task_params"))
    t.task.params = r.convert("task_params", [](const std::string& v) {
      std::vector<int> out;
      std::stringstream ss(v);
      for (std::string cell; std::getline(ss, cell, ',');) out.push_back(std::stoi(trim(cell)));
      return out;
    });
  if (r.has("advantage"))
    t.advantage = r.convert("advantage", [](const std::string& v) {
      if (v == "grpo") return AdvantageKind::Grpo;
      if (v == "loo") return AdvantageKind::Loo;
      throw InvalidArgument("expected grpo or loo");
    });
  r.integer("vocab_size", t.vocab_size);
  r.integer("context_window", t.context_window);
  r.real("temperature", t.temperature);
  r.integer("group_size", t.group_size);
  r.integer("prompts_per_step", t.prompts_per_step);
  r.real("learning_rate", t.learning_rate);
  r.integer("total_steps", t.total_steps);
  r.integer("max_len", t.max_len);
  r.boolean("ema", t.ema);
  r.real("ema_alpha", t.ema_alpha);
  r.real("sigma_init", t.sigma_init);
  r.real("z", t.z);
  r.integer("inner_epochs", t.inner_epochs);
  r.real("momentum", t.momentum);
  r.integer("seed", t.seed);
  if (r.has("out_dir")) cfg.out_dir = entries.at("out_dir").value;
  r.integer("bin_size", cfg.bin_size);
  r.integer("min_length", cfg.min_length);
  try {
    t.validate();
    if (cfg.bin_size < 1) throw InvalidArgument("bin_size must be >= 1");
    if (cfg.min_length < 0) throw InvalidArgument("min_length must be >= 0");
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string(source) + ": " + e.what());
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str(), path);
}

std::string clip_spec_to_text(const ClipSpec& spec) {
  std::string out;
  out += "method = " + std::string(method_name(spec.method)) + "\n";
  out += "c_upper = " + format_double(spec.c_upper) + "\n";
  out += "c_lower = " + format_double(spec.c_lower) + "\n";
  out += "c_dual = " + optional_text(spec.c_dual) + "\n";
  out += "drift_mu = " + format_double(spec.drift_mu) + "\n";
  if (spec.method == Method::FspoLog) out += "scale_c = " + optional_text(spec.scale_c) + "\n";
  return out;
}

ClipSpec clip_spec_from_text(std::string_view text) {
  const Entries entries = tokenize(text, "clip", kClipKeys);
  ClipSpec spec = read_clip(Reader(entries, "clip"));
  try {
    spec.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("clip: ") + e.what());
  }
  return spec;
}

std::string to_text(const RunConfig& cfg) {
  const TrainConfig& t = cfg.train;
  std::string out = clip_spec_to_text(t.clip);
  auto kv = [&](const char* key, const std::string& value) { out += std::string(key) + " = " + value + "\n"; };
  kv("task", std::string(task_name(t.task.kind)));
  if (!t.task.params.empty()) {
    std::string p;
    for (std::size_t i = 0; i < t.task.params.size(); ++i) p += (i ? "," : "") + std::to_string(t.task.params[i]);
    kv("task_params", p);
  }
  kv("advantage", t.advantage == AdvantageKind::Grpo ? "grpo" : "loo");
  kv("vocab_size", std::to_string(t.vocab_size));
  kv("context_window", std::to_string(t.context_window));
  kv("temperature", format_double(t.temperature));
  kv("group_size", std::to_string(t.group_size));
  kv("prompts_per_step", std::to_string(t.prompts_per_step));
  kv("learning_rate", format_double(t.learning_rate));
  kv("total_steps", std::to_string(t.total_steps));
  kv("max_len", std::to_string(t.max_len));
  kv("ema", t.ema ? "true" : "false");
  kv("ema_alpha", format_double(t.ema_alpha));
  kv("sigma_init", format_double(t.sigma_init));
  kv("z", format_double(t.z));
  kv("inner_epochs", std::to_string(t.inner_epochs));
  kv("momentum", format_double(t.momentum));
  kv("seed", std::to_string(t.seed));
  kv("out_dir", cfg.out_dir);
  kv("bin_size", std::to_string(cfg.bin_size));
  kv("min_length", std::to_string(cfg.min_length));
  return out;
}

std::uint64_t config_hash(const RunConfig& config) {
  // out_dir does not affect results, so it stays out of the hash.
  RunConfig copy = config;
  copy.out_dir.clear();
  return fnv1a64(to_text(copy));
}

}  // namespace fspo
