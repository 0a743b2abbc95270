#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "taca/attention.hpp"

namespace taca {

enum class Precision { f32, f64 };

std::string to_string(Precision p);
Precision parse_precision(const std::string& name);

struct BenchConfig {
  TokenLayout layout{32, 256, 8, 32};
  Precision precision = Precision::f64;
  double gamma = 1.2;
  int reps = 20;
  int warmup = 3;
  int run_steps = 30;
  int active_steps = 3;
  HeadExecution exec = HeadExecution::sequential;
  std::uint64_t seed = kDefaultSeed;

  void validate() const;
};

struct BenchRecord {
  std::string name;
  Precision precision = Precision::f64;
  TokenLayout layout;
  int active_steps = 0;
  double median_s = 0.0;
  double factor = 1.0;  ///< median_s / median_s of the matching baseline
};

struct BenchReport {
  std::vector<BenchRecord> records;
  double gate_baseline_error = 0.0;   ///< baseline vs reference at gamma = 1
  double gate_selective_error = 0.0;  ///< selective vs reference at gamma
  std::vector<std::string> warnings;

  const BenchRecord& find(const std::string& name) const;
};

struct Timing {
  double median_s = 0.0;
  int calls_per_rep = 1;
};

/// Median wall time of one call over `reps` repetitions after `warmup`
/// untimed calls. Fast calls are batched until a repetition spans at least
/// `min_rep_s` so the clock resolution does not dominate.
Timing time_median(const std::function<void()>& fn, int reps, int warmup, double min_rep_s = 2e-4);

/// Like time_median for several functions, with their repetitions interleaved
/// so slow drift in machine speed affects all of them alike.
std::vector<Timing> time_interleaved(const std::vector<std::function<void()>>& fns, int reps,
                                     int warmup, double min_rep_s = 2e-4);

/// Correctness gate, then timings of the three attention paths and of a
/// simulated sampling run in which only the first `active_steps` calls use
/// the selective path. Throws NumericError if a kernel fails the gate.
BenchReport run_bench(const BenchConfig& cfg);

/// bench.csv: name,precision,n_txt,n_vis,heads,head_dim,active_steps,median_s,factor
void write_bench_csv(const BenchReport& report, const std::filesystem::path& path);

}  // namespace taca
