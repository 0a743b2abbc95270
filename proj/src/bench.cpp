#include "taca/bench.hpp"

#include <algorithm>
#include <chrono>

#include "taca/csv.hpp"

namespace taca {
namespace {

template <typename Scalar>
double max_abs_diff(const Matrix<Scalar>& a, const Matrix<Scalar>& b) {
  return static_cast<double>((a - b).cwiseAbs().maxCoeff());
}

template <typename Scalar>
BenchReport run_typed(const BenchConfig& cfg) {
  const TokenLayout& lay = cfg.layout;
  Rng rng(cfg.seed);
  const Matrix<Scalar> q = randn<Scalar>(lay.seq_len(), lay.width(), rng);
  const Matrix<Scalar> k = randn<Scalar>(lay.seq_len(), lay.width(), rng);
  const Matrix<Scalar> v = randn<Scalar>(lay.seq_len(), lay.width(), rng);
  const double tol = cfg.precision == Precision::f32 ? 1e-5 : 1e-12;
  const auto none = static_cast<std::vector<Matrix<Scalar>>*>(nullptr);

  BenchReport report;
  report.gate_baseline_error =
      max_abs_diff(attention_baseline(q, k, v, 1.0, lay, cfg.exec),
                   attention_reference(q, k, v, 1.0, 1.0, lay, none, cfg.exec));
  report.gate_selective_error =
      max_abs_diff(attention_selective(q, k, v, cfg.gamma, 1.0, lay, cfg.exec),
                   attention_reference(q, k, v, cfg.gamma, 1.0, lay, none, cfg.exec));
  if (!(report.gate_baseline_error <= tol) || !(report.gate_selective_error <= tol)) {
    throw NumericError("bench correctness gate failed: baseline error " +
                       format_number(report.gate_baseline_error) + ", selective error " +
                       format_number(report.gate_selective_error) + ", tolerance " +
                       format_number(tol));
  }

  Matrix<Scalar> sink;
  auto baseline = [&] { sink = attention_baseline(q, k, v, 1.0, lay, cfg.exec); };
  auto reference = [&] { sink = attention_reference(q, k, v, cfg.gamma, 1.0, lay, none, cfg.exec); };
  auto selective = [&] { sink = attention_selective(q, k, v, cfg.gamma, 1.0, lay, cfg.exec); };
  auto run = [&](int active) {
    return [&, active] {
      for (int s = 0; s < cfg.run_steps; ++s) s < active ? selective() : baseline();
    };
  };

  auto measure = [&](const std::vector<std::string>& names, const std::vector<int>& active,
                     const std::vector<std::function<void()>>& fns) {
    const auto timings = time_interleaved(fns, cfg.reps, cfg.warmup);
    for (std::size_t i = 0; i < fns.size(); ++i) {
      if (timings[i].calls_per_rep > 1) {
        report.warnings.push_back(names[i] + ": timer resolution too coarse, batched " +
                                  std::to_string(timings[i].calls_per_rep) + " calls per repetition");
      }
      report.records.push_back({names[i], cfg.precision, lay, active[i], timings[i].median_s, 1.0});
    }
  };
  measure({"baseline", "reference", "selective"}, {0, 1, 1}, {baseline, reference, selective});
  measure({"run_baseline", "run_selective"}, {0, cfg.active_steps}, {run(0), run(cfg.active_steps)});

  const double call_base = report.records[0].median_s;
  const double run_base = report.records[3].median_s;
  for (auto& r : report.records) {
    r.factor = r.median_s / (r.name.starts_with("run_") ? run_base : call_base);
  }
  return report;
}

}  // namespace

std::string to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

Precision parse_precision(const std::string& name) {
  if (name == "f32") return Precision::f32;
  if (name == "f64") return Precision::f64;
  throw DomainError("unknown precision '" + name + "' (expected f32 or f64)");
}

void BenchConfig::validate() const {
  layout.validate();
  if (reps < 20) throw DomainError("bench: reps must be >= 20");
  if (warmup < 0) throw DomainError("bench: warmup must be >= 0");
  if (run_steps < 1) throw DomainError("bench: run steps must be >= 1");
  if (active_steps < 0 || active_steps > run_steps) {
    throw DomainError("bench: active steps must lie in [0, run steps]");
  }
  if (!(gamma > 0.0)) throw DomainError("bench: gamma must be > 0");
}

const BenchRecord& BenchReport::find(const std::string& name) const {
  for (const auto& r : records) {
    if (r.name == name) return r;
  }
  throw DomainError("bench: no record named '" + name + "'");
}

Timing time_median(const std::function<void()>& fn, int reps, int warmup, double min_rep_s) {
  return time_interleaved({fn}, reps, warmup, min_rep_s).front();
}

std::vector<Timing> time_interleaved(const std::vector<std::function<void()>>& fns, int reps,
                                     int warmup, double min_rep_s) {
  using clock = std::chrono::steady_clock;
  if (reps < 1) throw DomainError("timing: reps must be >= 1");
  auto time_batch = [](const std::function<void()>& fn, int calls) {
    const auto start = clock::now();
    for (int c = 0; c < calls; ++c) fn();
    return std::chrono::duration<double>(clock::now() - start).count();
  };
  std::vector<Timing> out(fns.size());
  for (std::size_t f = 0; f < fns.size(); ++f) {
    for (int i = 0; i < warmup; ++i) fns[f]();
    while (time_batch(fns[f], out[f].calls_per_rep) < min_rep_s && out[f].calls_per_rep < (1 << 20)) {
      out[f].calls_per_rep *= 2;
    }
  }
  std::vector<std::vector<double>> samples(fns.size());
  for (int r = 0; r < reps; ++r) {
    for (std::size_t f = 0; f < fns.size(); ++f) {
      samples[f].push_back(time_batch(fns[f], out[f].calls_per_rep) / out[f].calls_per_rep);
    }
  }
  for (std::size_t f = 0; f < fns.size(); ++f) {
    auto& v = samples[f];
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    out[f].median_s = n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  }
  return out;
}

BenchReport run_bench(const BenchConfig& cfg) {
  cfg.validate();
  return cfg.precision == Precision::f32 ? run_typed<float>(cfg) : run_typed<double>(cfg);
}

void write_bench_csv(const BenchReport& report, const std::filesystem::path& path) {
  CsvWriter out(path, {"name", "precision", "n_txt", "n_vis", "heads", "head_dim", "active_steps",
                       "median_s", "factor"});
  for (const auto& r : report.records) {
    out.row({r.name, to_string(r.precision), format_number(static_cast<long long>(r.layout.n_txt)),
             format_number(static_cast<long long>(r.layout.n_vis)),
             format_number(static_cast<long long>(r.layout.heads)),
             format_number(static_cast<long long>(r.layout.head_dim)),
             format_number(static_cast<long long>(r.active_steps)), format_number(r.median_s),
             format_number(r.factor)});
  }
  out.close();
}

}  // namespace taca
