#include "tokenpool/workload.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace tokenpool {

// Lognormal sigma with P(X > 2 * mean) ~= 10%.
static constexpr double kLogSigma = 0.7755;

Preset preset_from_string(const std::string& s) {
  if (s == "loogle_like") return Preset::kLoogleLike;
  if (s == "scbench_like") return Preset::kScbenchLike;
  if (s == "sharegpt_like") return Preset::kSharegptLike;
  if (s == "mixed") return Preset::kMixed;
  throw std::invalid_argument("unknown preset: " + s);
}

std::string preset_to_string(Preset p) {
  switch (p) {
    case Preset::kLoogleLike: return "loogle_like";
    case Preset::kScbenchLike: return "scbench_like";
    case Preset::kSharegptLike: return "sharegpt_like";
    case Preset::kMixed: return "mixed";
  }
  return "?";
}

TokenId system_prompt_token(long pos) {
  return static_cast<TokenId>(mix64(0x53595350ull * 0x10001 + pos));
}

TokenId doc_token(long doc_id, long pos) {
  return static_cast<TokenId>(mix64(mix64(0xd0c0 + doc_id) + pos));
}

TokenId turn_input_token(long session_id, int turn, long pos) {
  return static_cast<TokenId>(
      mix64(mix64(0x1a0000 + session_id * 131 + turn) + pos));
}

TokenId turn_output_token(long session_id, int turn, long pos) {
  return static_cast<TokenId>(
      mix64(mix64(0x0a0000 + session_id * 131 + turn) * 0x9e37 + pos));
}

long doc_length(long doc_id, double mean) {
  // Deterministic lognormal draw from the doc id alone.
  const double u1 =
      (mix64(0x1e47 + doc_id) >> 11) * (1.0 / 9007199254740992.0);
  const double u2 =
      (mix64(0x77ef + doc_id) >> 11) * (1.0 / 9007199254740992.0);
  const double z = std::sqrt(-2.0 * std::log(std::max(u1, 1e-18))) *
                   std::cos(2.0 * M_PI * u2);
  const double mu = std::log(mean) - 0.5 * kLogSigma * kLogSigma;
  return std::max<long>(1, std::lround(std::exp(mu + kLogSigma * z)));
}

namespace {

double lognormal_mean(std::mt19937_64& rng, double mean) {
  const double mu = std::log(mean) - 0.5 * kLogSigma * kLogSigma;
  std::lognormal_distribution<double> d(mu, kLogSigma);
  return d(rng);
}

long sample_len(std::mt19937_64& rng, double mean) {
  return std::max<long>(1, std::lround(lognormal_mean(rng, mean)));
}

struct ZipfSampler {
  std::vector<double> cdf;
  ZipfSampler(long n, double s) {
    cdf.resize(n);
    double sum = 0;
    for (long k = 0; k < n; ++k) {
      sum += 1.0 / std::pow(static_cast<double>(k + 1), s);
      cdf[k] = sum;
    }
    for (double& c : cdf) c /= sum;
  }
  long operator()(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double x = u(rng);
    return std::lower_bound(cdf.begin(), cdf.end(), x) - cdf.begin();
  }
};

double mean_turns(const TraceSpec& spec, Preset p) {
  switch (p) {
    case Preset::kScbenchLike: return spec.turns_mean;
    case Preset::kMixed:
      return (1.0 + spec.turns_mean + 1.0) / 3.0;
    default: return 1.0;
  }
}

}  // namespace

std::vector<TraceRecord> generate(const TraceSpec& spec) {
  if (spec.rate_lambda < 0 || spec.duration < 0) {
    throw std::invalid_argument("generate: rate and duration must be >= 0");
  }
  std::vector<TraceRecord> records;
  if (spec.rate_lambda == 0 || spec.duration == 0) return records;

  std::mt19937_64 rng(spec.seed);
  const double session_rate =
      spec.rate_lambda / mean_turns(spec, spec.preset);
  std::exponential_distribution<double> inter_arrival(session_rate);
  std::exponential_distribution<double> think(1.0 / spec.think_time_mean);
  std::poisson_distribution<long> extra_turns(
      std::max(0.0, spec.turns_mean - 1.0));
  std::uniform_int_distribution<long> sharegpt_len(
      static_cast<long>(spec.sharegpt_min),
      static_cast<long>(spec.sharegpt_max));
  ZipfSampler zipf(spec.n_shared_docs, spec.zipf_s);

  double t = 0;
  long sid = 0;
  long rid = 0;
  while (true) {
    t += inter_arrival(rng);
    if (t > spec.duration) break;
    Preset p = spec.preset;
    if (p == Preset::kMixed) {
      switch (sid % 3) {
        case 0: p = Preset::kLoogleLike; break;
        case 1: p = Preset::kScbenchLike; break;
        default: p = Preset::kSharegptLike; break;
      }
    }
    long turns = 1;
    long doc = -1;
    if (p == Preset::kScbenchLike) {
      turns = 1 + extra_turns(rng);
    } else if (p == Preset::kLoogleLike) {
      doc = zipf(rng);
    }
    double arrival = t;
    for (int turn = 0; turn < turns; ++turn) {
      TraceRecord r;
      r.request_id = rid++;
      r.session_id = sid;
      r.turn_index = turn;
      r.arrival_time = arrival;
      r.shared_prefix_id = doc;
      switch (p) {
        case Preset::kLoogleLike:
          r.input_len = sample_len(rng, spec.input_len_mean);
          break;
        case Preset::kScbenchLike:
          r.input_len = sample_len(rng, spec.scbench_turn_input_mean);
          break;
        default:
          r.input_len = sharegpt_len(rng);
          break;
      }
      r.output_len = sample_len(rng, spec.output_len_mean);
      records.push_back(r);
      arrival += think(rng);
    }
    ++sid;
    if (spec.max_records > 0 &&
        static_cast<long>(records.size()) >= spec.max_records) {
      break;
    }
  }
  std::stable_sort(records.begin(), records.end(),
                   [](const TraceRecord& a, const TraceRecord& b) {
                     if (a.arrival_time != b.arrival_time)
                       return a.arrival_time < b.arrival_time;
                     return a.request_id < b.request_id;
                   });
  return records;
}

void save_trace(const std::vector<TraceRecord>& trace,
                const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_trace: cannot open " + path);
  for (const auto& r : trace) {
    nlohmann::ordered_json j;
    j["request_id"] = r.request_id;
    j["session_id"] = r.session_id;
    j["turn_index"] = r.turn_index;
    j["arrival_time"] = r.arrival_time;
    j["input_len"] = r.input_len;
    j["output_len"] = r.output_len;
    j["shared_prefix_id"] = r.shared_prefix_id;
    out << j.dump() << "\n";
  }
  if (!out) throw std::runtime_error("save_trace: write failed: " + path);
}

std::vector<TraceRecord> load_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_trace: cannot open " + path);
  std::vector<TraceRecord> trace;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("load_trace: parse error at line " +
                               std::to_string(line_no) + ": " + e.what());
    }
    TraceRecord r;
    auto field = [&](const char* name) -> const nlohmann::json& {
      auto it = j.find(name);
      if (it == j.end()) {
        throw std::runtime_error("load_trace: missing field '" +
                                 std::string(name) + "' at line " +
                                 std::to_string(line_no));
      }
      return *it;
    };
    r.request_id = field("request_id").get<long>();
    r.session_id = field("session_id").get<long>();
    r.turn_index = field("turn_index").get<int>();
    r.arrival_time = field("arrival_time").get<double>();
    r.input_len = field("input_len").get<long>();
    r.output_len = field("output_len").get<long>();
    r.shared_prefix_id = field("shared_prefix_id").get<long>();
    trace.push_back(r);
  }
  return trace;
}

}  // namespace tokenpool
