#include "tokenpool/config.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <type_traits>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace tokenpool {
namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_bool(bool v) { return v ? "true" : "false"; }

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw std::invalid_argument("expected true/false, got '" + s + "'");
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

// Drops an inline "# ..." comment; '#' always starts a comment.
std::string strip_comment(const std::string& s) {
  return s.substr(0, s.find('#'));
}

std::string resolve(const std::string& path, const std::string& base_dir) {
  if (path.empty() || base_dir.empty()) return path;
  std::filesystem::path p(path);
  if (p.is_absolute()) return path;
  return (std::filesystem::path(base_dir) / p).string();
}

struct Entry {
  const char* name;  // "section.key"
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&,
                     const std::string& base_dir)> set;
};

#define NUM_ENTRY(name, field, conv)                                        \
  Entry{name,                                                                \
        [](const ExperimentConfig& c) { return fmt_double(c.field); },       \
        [](ExperimentConfig& c, const std::string& v, const std::string&) {  \
          c.field = static_cast<std::remove_reference_t<decltype(c.field)>>( \
              std::stod(v));                                                 \
        }}

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      Entry{"hardware.profile_path",
            [](const ExperimentConfig& c) { return c.profile_path; },
            [](ExperimentConfig& c, const std::string& v,
               const std::string& base) {
              c.profile_path = resolve(v, base);
              if (!v.empty()) c.profile = load_profile(c.profile_path);
            }},
      NUM_ENTRY("hardware.hidden_dim", profile.hidden_dim, as_double),
      NUM_ENTRY("hardware.layers", profile.layers, as_double),
      NUM_ENTRY("hardware.flops", profile.flops, as_double),
      NUM_ENTRY("hardware.mem_bw", profile.mem_bw, as_double),
      NUM_ENTRY("hardware.net_bw", profile.net_bw, as_double),
      NUM_ENTRY("hardware.net_latency", profile.net_latency, as_double),
      NUM_ENTRY("hardware.bytes_per_elem", profile.bytes_per_elem, as_double),
      Entry{"policy.kind",
            [](const ExperimentConfig& c) {
              return policy_to_string(c.policy.kind);
            },
            [](ExperimentConfig& c, const std::string& v, const std::string&) {
              c.policy.kind = policy_from_string(v);
            }},
      NUM_ENTRY("policy.prefill_instances", policy.prefill_instances, as_int),
      NUM_ENTRY("policy.decode_instances", policy.decode_instances, as_int),
      NUM_ENTRY("policy.w_hit", policy.w_hit, as_double),
      NUM_ENTRY("policy.w_load", policy.w_load, as_double),
      NUM_ENTRY("pool.n_instances", n_instances, as_int),
      NUM_ENTRY("pool.segment_size", segment_size, as_long),
      NUM_ENTRY("pool.slot_capacity", slot_capacity, as_long),
      NUM_ENTRY("pool.overload_delta", overload_delta, as_double),
      Entry{"pool.allow_small_segments",
            [](const ExperimentConfig& c) {
              return fmt_bool(c.allow_small_segments);
            },
            [](ExperimentConfig& c, const std::string& v, const std::string&) {
              c.allow_small_segments = parse_bool(v);
            }},
      NUM_ENTRY("scheduler.chunk_size", chunk_size, as_long),
      NUM_ENTRY("scheduler.slo_multiplier", slo_multiplier, as_double),
      NUM_ENTRY("scheduler.max_prefill_window", max_prefill_window, as_int),
      Entry{"trace.path",
            [](const ExperimentConfig& c) { return c.trace_path; },
            [](ExperimentConfig& c, const std::string& v,
               const std::string& base) { c.trace_path = resolve(v, base); }},
      Entry{"trace.preset",
            [](const ExperimentConfig& c) {
              return preset_to_string(c.trace.preset);
            },
            [](ExperimentConfig& c, const std::string& v, const std::string&) {
              c.trace.preset = preset_from_string(v);
            }},
      NUM_ENTRY("trace.rate_lambda", trace.rate_lambda, as_double),
      NUM_ENTRY("trace.duration", trace.duration, as_double),
      Entry{"trace.seed",
            [](const ExperimentConfig& c) {
              return std::to_string(c.trace.seed);
            },
            [](ExperimentConfig& c, const std::string& v, const std::string&) {
              c.trace.seed = std::stoull(v);
            }},
      NUM_ENTRY("trace.system_prompt_len", trace.system_prompt_len, as_long),
      NUM_ENTRY("trace.max_records", trace.max_records, as_long),
      NUM_ENTRY("trace.n_shared_docs", trace.n_shared_docs, as_long),
      NUM_ENTRY("trace.zipf_s", trace.zipf_s, as_double),
      NUM_ENTRY("trace.doc_len_mean", trace.doc_len_mean, as_double),
      NUM_ENTRY("trace.input_len_mean", trace.input_len_mean, as_double),
      NUM_ENTRY("trace.scbench_turn_input_mean", trace.scbench_turn_input_mean,
                as_double),
      NUM_ENTRY("trace.turns_mean", trace.turns_mean, as_double),
      NUM_ENTRY("trace.sharegpt_min", trace.sharegpt_min, as_double),
      NUM_ENTRY("trace.sharegpt_max", trace.sharegpt_max, as_double),
      NUM_ENTRY("trace.output_len_mean", trace.output_len_mean, as_double),
      NUM_ENTRY("trace.think_time_mean", trace.think_time_mean, as_double),
      Entry{"run.seed",
            [](const ExperimentConfig& c) { return std::to_string(c.seed); },
            [](ExperimentConfig& c, const std::string& v, const std::string&) {
              c.seed = std::stoull(v);
            }},
      Entry{"run.output_dir",
            [](const ExperimentConfig& c) { return c.output_dir; },
            [](ExperimentConfig& c, const std::string& v, const std::string&) {
              c.output_dir = v;
            }},
      NUM_ENTRY("run.cv_window", cv_window, as_double),
      Entry{"run.check_invariants",
            [](const ExperimentConfig& c) {
              return fmt_bool(c.check_invariants);
            },
            [](ExperimentConfig& c, const std::string& v, const std::string&) {
              c.check_invariants = parse_bool(v);
            }},
  };
  return table;
}

#undef NUM_ENTRY

const Entry* find_entry(const std::string& name) {
  for (const Entry& e : entries())
    if (name == e.name) return &e;
  return nullptr;
}

ExperimentConfig parse_config_impl(std::istream& in,
                                   const std::string& base_dir) {
  ExperimentConfig c;
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string s = trim(strip_comment(line));
    if (s.empty()) continue;
    if (s.front() == '[' && s.back() == ']') {
      section = trim(s.substr(1, s.size() - 2));
      continue;
    }
    std::size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected 'key = value'");
    std::string key = trim(s.substr(0, eq));
    std::string value = trim(s.substr(eq + 1));
    std::string full = section.empty() ? key : section + "." + key;
    const Entry* e = find_entry(full);
    if (!e)
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": unknown key '" + full + "'");
    try {
      e->set(c, value, base_dir);
    } catch (const std::exception& ex) {
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  " (" + full + "): " + ex.what());
    }
  }
  return c;
}

}  // namespace

SimConfig ExperimentConfig::sim_config() const {
  SimConfig s;
  s.profile = profile;
  s.n_instances = n_instances;
  s.segment_size = segment_size;
  s.slot_capacity = slot_capacity;
  s.overload_delta = overload_delta;
  s.policy = policy;
  s.chunk_size = chunk_size;
  s.slo_multiplier = slo_multiplier;
  s.max_prefill_window = max_prefill_window;
  s.cv_window = cv_window;
  s.seed = seed;
  s.system_prompt_len = trace.system_prompt_len;
  s.doc_len_mean = trace.doc_len_mean;
  s.check_invariants = check_invariants;
  return s;
}

void ExperimentConfig::validate() const {
  profile.validate();
  auto bad = [](const std::string& msg) {
    throw std::invalid_argument("config: " + msg);
  };
  if (n_instances < 1) bad("pool.n_instances must be >= 1");
  if (slot_capacity < 1) bad("pool.slot_capacity must be >= 1");
  if (chunk_size < 1) bad("scheduler.chunk_size must be >= 1");
  if (slo_multiplier <= 0) bad("scheduler.slo_multiplier must be > 0");
  if (max_prefill_window < 1) bad("scheduler.max_prefill_window must be >= 1");
  if (overload_delta < 0) bad("pool.overload_delta must be >= 0");
  if (cv_window <= 0) bad("run.cv_window must be > 0");
  if (segment_size < 0) bad("pool.segment_size must be >= 0");
  if (segment_size > 0 && !allow_small_segments) {
    long floor = static_cast<long>(std::ceil(min_segment_size(profile)));
    if (segment_size < floor)
      bad("pool.segment_size " + std::to_string(segment_size) +
          " is below the profitability threshold " + std::to_string(floor) +
          " (set pool.allow_small_segments = true to override)");
  }
  if (policy.kind == PolicyKind::kPdDisagg) {
    if (policy.prefill_instances < 1 || policy.decode_instances < 1)
      bad("policy: pd_disagg needs >= 1 prefill and decode instance");
    if (policy.prefill_instances + policy.decode_instances != n_instances)
      bad("policy: prefill_instances + decode_instances must equal "
          "pool.n_instances");
  }
  if (trace.rate_lambda < 0) bad("trace.rate_lambda must be >= 0");
  if (trace.duration < 0) bad("trace.duration must be >= 0");
  if (!trace_path.empty() && !std::filesystem::exists(trace_path))
    bad("trace.path does not exist: " + trace_path);
  if (!profile_path.empty() && !std::filesystem::exists(profile_path))
    bad("hardware.profile_path does not exist: " + profile_path);
}

ExperimentConfig parse_config(std::istream& in) {
  return parse_config_impl(in, "");
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file: " + path);
  std::string base = std::filesystem::path(path).parent_path().string();
  return parse_config_impl(in, base);
}

void serialize_config(const ExperimentConfig& c, std::ostream& out) {
  std::string section;
  for (const Entry& e : entries()) {
    std::string name = e.name;
    std::size_t dot = name.find('.');
    std::string sec = name.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) out << "\n";
      out << "[" << sec << "]\n";
      section = sec;
    }
    out << name.substr(dot + 1) << " = " << e.get(c) << "\n";
  }
}

bool config_equal(const ExperimentConfig& a, const ExperimentConfig& b) {
  std::ostringstream sa, sb;
  serialize_config(a, sa);
  serialize_config(b, sb);
  return sa.str() == sb.str();
}

HardwareProfile load_profile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open profile file: " + path);
  ExperimentConfig scratch;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string s = trim(strip_comment(line));
    if (s.empty()) continue;
    std::size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(path + " line " + std::to_string(lineno) +
                                  ": expected 'key = value'");
    std::string key = trim(s.substr(0, eq));
    const Entry* e = find_entry("hardware." + key);
    if (!e || key == "profile_path")
      throw std::invalid_argument(path + " line " + std::to_string(lineno) +
                                  ": unknown profile key '" + key + "'");
    e->set(scratch, trim(s.substr(eq + 1)), "");
  }
  return scratch.profile;
}

bool set_param(ExperimentConfig& c, const std::string& key,
               const std::string& value) {
  const Entry* e = find_entry(key);
  if (!e) return false;
  e->set(c, value, "");
  return true;
}

std::vector<std::string> known_params() {
  std::vector<std::string> out;
  for (const Entry& e : entries()) out.push_back(e.name);
  return out;
}

}  // namespace tokenpool
