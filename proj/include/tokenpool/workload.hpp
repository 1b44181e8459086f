#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tokenpool/hash.hpp"

namespace tokenpool {

enum class Preset { kLoogleLike, kScbenchLike, kSharegptLike, kMixed };

Preset preset_from_string(const std::string& s);
std::string preset_to_string(Preset p);

// Shape parameters for the synthetic traces: Poisson arrivals, lognormal
// lengths, Zipf-popular shared documents, multi-turn sessions with
// exponential think time.
struct TraceSpec {
  Preset preset = Preset::kSharegptLike;
  double rate_lambda = 1.0;     // requests / s
  double duration = 60.0;       // s of arrivals
  std::uint64_t seed = 1;
  long system_prompt_len = 1024;
  long max_records = 0;         // 0 = unlimited; else truncate (whole sessions)

  // loogle_like: shared documents with Zipf popularity
  long n_shared_docs = 64;
  double zipf_s = 1.1;
  double doc_len_mean = 16384;
  double input_len_mean = 6656;

  // scbench_like: long multi-turn sessions
  double scbench_turn_input_mean = 45150;
  double turns_mean = 5;  // 1 + Poisson(turns_mean - 1)

  // sharegpt_like: short uniform requests
  double sharegpt_min = 64;
  double sharegpt_max = 2400;

  double output_len_mean = 256;
  double think_time_mean = 5.0;  // s between a turn's completion and the next
};

struct TraceRecord {
  long request_id = 0;
  long session_id = 0;
  int turn_index = 0;
  double arrival_time = 0;
  long input_len = 0;
  long output_len = 0;
  long shared_prefix_id = -1;  // -1: no shared document

  bool operator==(const TraceRecord&) const = default;
};

std::vector<TraceRecord> generate(const TraceSpec& spec);

// Line-delimited JSON, one record per line.
void save_trace(const std::vector<TraceRecord>& trace, const std::string& path);
std::vector<TraceRecord> load_trace(const std::string& path);

// --- deterministic token materialization -----------------------------------
// Token streams are pure functions of their ids, so the generator and the
// simulator agree without shipping token arrays in the trace.
TokenId system_prompt_token(long pos);
TokenId doc_token(long doc_id, long pos);
TokenId turn_input_token(long session_id, int turn, long pos);
TokenId turn_output_token(long session_id, int turn, long pos);

// Per-document length, deterministic in doc_id alone (lognormal around
// doc_len_mean with the preset sigma).
long doc_length(long doc_id, double mean);

}  // namespace tokenpool
