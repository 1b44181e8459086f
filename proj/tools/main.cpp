#include <atomic>
#include <cstdlib>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <iostream>
#include <sstream>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "tokenpool/config.hpp"
#include "tokenpool/metrics.hpp"
#include "tokenpool/sim.hpp"
#include "tokenpool/workload.hpp"

namespace {

using namespace tokenpool;

struct CommonOpts {
  std::string config_path;
  std::string trace_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

ExperimentConfig load_and_override(const CommonOpts& o) {
  ExperimentConfig c = load_config(o.config_path);
  if (!o.trace_path.empty()) c.trace_path = o.trace_path;
  if (o.seed_set) c.seed = o.seed;
  if (const char* env = std::getenv("TOKENPOOL_OUT")) c.output_dir = env;
  if (!o.out_dir.empty()) c.output_dir = o.out_dir;
  return c;
}

std::vector<TraceRecord> obtain_trace(const ExperimentConfig& c) {
  if (!c.trace_path.empty()) return load_trace(c.trace_path);
  return generate(c.trace);
}

void print_trace_stats(const std::vector<TraceRecord>& trace) {
  std::cout << "records: " << trace.size() << "\n";
  if (trace.empty()) return;
  double in_sum = 0, out_sum = 0;
  std::map<long, int> session_turns;
  for (const auto& r : trace) {
    in_sum += static_cast<double>(r.input_len);
    out_sum += static_cast<double>(r.output_len);
    session_turns[r.session_id] =
        std::max(session_turns[r.session_id], r.turn_index + 1);
  }
  double turn_sum = 0;
  for (const auto& [sid, t] : session_turns) turn_sum += t;
  const double n = static_cast<double>(trace.size());
  std::cout << "sessions: " << session_turns.size() << "\n"
            << "mean_turns: " << turn_sum / session_turns.size() << "\n"
            << "mean_input_len: " << in_sum / n << "\n"
            << "mean_output_len: " << out_sum / n << "\n"
            << "span_seconds: " << trace.back().arrival_time << "\n";
}

int write_report(const MetricsReport& report, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  std::ofstream csv(std::filesystem::path(dir) / "metrics.csv");
  std::ofstream summary(std::filesystem::path(dir) / "summary.txt");
  if (!csv || !summary) {
    std::cerr << "error: cannot write into output dir '" << dir << "'\n";
    return 1;
  }
  write_csv(report, csv);
  write_summary(report, summary);
  return (csv.flush() && summary.flush()) ? 0 : 1;
}

int cmd_gen_trace(const CommonOpts& o, const std::string& out_path) {
  ExperimentConfig c = load_and_override(o);
  c.trace_path.clear();  // generating: the inline spec is the source
  c.validate();
  std::vector<TraceRecord> trace = generate(c.trace);
  save_trace(trace, out_path);
  print_trace_stats(trace);
  return 0;
}

int cmd_run(const CommonOpts& o) {
  ExperimentConfig c = load_and_override(o);
  c.validate();
  MetricsReport report = run(c.sim_config(), obtain_trace(c));
  int rc = write_report(report, c.output_dir);
  if (report.cacheable_tokens > 0)
    std::cout << "hit_rate: " << hit_rate(report) << "\n";
  if (report.n_instances >= 2 && !report.access_windows.empty())
    std::cout << "mean_access_cv: " << access_cv(report).mean << "\n";
  if (!report.requests.empty())
    std::cout << "slo_attainment: " << slo_attainment(report, c.slo_multiplier)
              << "\n";
  return rc;
}

int cmd_sweep(const CommonOpts& o, const std::string& param,
              const std::string& values_csv, int jobs) {
  std::vector<std::string> values;
  std::stringstream ss(values_csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) values.push_back(item);
  }
  if (values.empty()) {
    std::cerr << "error: --values list is empty\n";
    return 1;
  }
  ExperimentConfig base = load_and_override(o);
  {
    ExperimentConfig probe = base;
    if (!set_param(probe, param, values[0])) {
      std::cerr << "error: unknown sweep key '" << param << "'. Known keys:\n";
      for (const auto& k : known_params()) std::cerr << "  " << k << "\n";
      return 1;
    }
  }
  std::vector<MetricsReport> reports(values.size());
  std::vector<std::string> errors(values.size());
  std::atomic<std::size_t> next{0};
  if (jobs <= 0) jobs = static_cast<int>(std::thread::hardware_concurrency());
  if (jobs < 1) jobs = 1;
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < values.size();
         i = next.fetch_add(1)) {
      try {
        ExperimentConfig c = base;
        set_param(c, param, values[i]);
        c.validate();
        reports[i] = run(c.sim_config(), obtain_trace(c));
      } catch (const std::exception& ex) {
        errors[i] = ex.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int j = 0; j < std::min<int>(jobs, values.size()); ++j)
    pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!errors[i].empty()) {
      std::cerr << "error: " << param << " = " << values[i] << ": "
                << errors[i] << "\n";
      return 1;
    }
  }
  std::error_code ec;
  std::filesystem::create_directories(base.output_dir, ec);
  std::ofstream out(std::filesystem::path(base.output_dir) / "sweep.csv");
  if (!out) {
    std::cerr << "error: cannot write into output dir '" << base.output_dir
              << "'\n";
    return 1;
  }
  out << "swept_key,swept_value,metric,scope,window_start,value\n";
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::ostringstream one;
    write_csv(reports[i], one);
    std::istringstream lines(one.str());
    std::string line;
    std::getline(lines, line);  // drop the per-run header
    while (std::getline(lines, line)) {
      out << param << "," << values[i] << "," << line << "\n";
    }
    if (reports[i].cacheable_tokens > 0)
      std::cout << param << " = " << values[i]
                << ": hit_rate = " << hit_rate(reports[i]) << "\n";
    else
      std::cout << param << " = " << values[i] << ": done\n";
  }
  return out.flush() ? 0 : 1;
}

int cmd_validate(const CommonOpts& o) {
  ExperimentConfig c = load_and_override(o);
  c.validate();
  std::cout << "ok\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Segment-level prefix cache pool simulator"};
  app.require_subcommand(1);
  CommonOpts o;
  std::string out_path, param, values_csv;
  int jobs = 0;

  auto add_common = [&](CLI::App* cmd, bool need_config = true) {
    auto* opt = cmd->add_option("--config", o.config_path, "experiment config file");
    if (need_config) opt->required();
    cmd->add_option("--trace", o.trace_path, "trace file override");
    cmd->add_option("--out", o.out_dir, "output directory override");
    cmd->add_option("--seed", o.seed, "seed override")
        ->each([&](const std::string&) { o.seed_set = true; });
  };

  CLI::App* gen = app.add_subcommand("gen-trace", "generate a workload trace");
  add_common(gen);
  gen->add_option("--out-trace", out_path, "trace output path")->required();

  CLI::App* runc = app.add_subcommand("run", "run one simulation");
  add_common(runc);

  CLI::App* sweep = app.add_subcommand("sweep", "run one simulation per value");
  add_common(sweep);
  sweep->add_option("--param", param, "dotted config key to sweep")->required();
  sweep->add_option("--values", values_csv, "comma-separated values")
      ->required();
  sweep->add_option("--jobs", jobs, "parallel runs (default: core count)");

  CLI::App* val = app.add_subcommand("validate", "check a config file");
  add_common(val);

  CLI11_PARSE(app, argc, argv);
  try {
    if (gen->parsed()) return cmd_gen_trace(o, out_path);
    if (runc->parsed()) return cmd_run(o);
    if (sweep->parsed()) return cmd_sweep(o, param, values_csv, jobs);
    if (val->parsed()) return cmd_validate(o);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 1;
}
