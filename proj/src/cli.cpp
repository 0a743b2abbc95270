#include "taca/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <iostream>
#include <map>
#include <set>

#include "taca/analysis.hpp"
#include "taca/bench.hpp"
#include "taca/checkpoint.hpp"
#include "taca/csv.hpp"
#include "taca/flow.hpp"
#include "taca/sampler.hpp"
#include "taca/serialization.hpp"
#include "taca/training.hpp"

namespace taca::cli {
namespace {

using nlohmann::json;

const std::vector<std::string> kCommands = {"suppress", "train", "sample", "sweep", "bench"};

// Flags that round-trip through resolved_config.json. JSON keys are the flag
// names with '-' replaced by '_'.
class Section {
 public:
  explicit Section(CLI::App* app) : app_(app) {}

  template <typename T>
  CLI::Option* add(const std::string& flag, T& var, const std::string& help) {
    CLI::Option* opt = app_->add_option("--" + flag, var, help)->capture_default_str();
    bind(flag, var);
    return opt;
  }

  CLI::Option* add_flag(const std::string& flag, bool& var, const std::string& help) {
    CLI::Option* opt = app_->add_flag("--" + flag, var, help);
    bind(flag, var);
    return opt;
  }

  bool load(const std::string& key, const json& value) const {
    const auto it = fields_.find(key);
    if (it == fields_.end()) return false;
    it->second.load(value);
    return true;
  }

  void save(json& j) const {
    for (const auto& [key, f] : fields_) j[key] = f.save();
  }

 private:
  struct Field {
    std::function<void(const json&)> load;
    std::function<json()> save;
  };

  template <typename T>
  void bind(const std::string& flag, T& var) {
    std::string key = flag;
    std::replace(key.begin(), key.end(), '-', '_');
    fields_[key] = {[&var](const json& j) { var = j.get<T>(); }, [&var] { return json(var); }};
  }

  CLI::App* app_;
  std::map<std::string, Field> fields_;
};

struct Globals {
  std::uint64_t seed = kDefaultSeed;
  std::string precision = "f64";
  std::string out_dir = "out";
  std::string config;
};

struct SuppressOpts {
  Index n_txt = 8, n_vis = 64, heads = 4, head_dim = 16;
  int draws = 1000;
  std::vector<double> gammas = {1.0, 1.2};
  double tau = 1.0;
  std::string mode = "iid";
  std::string checkpoint;
  double t = 1000.0;
  Index block = 0;
  Index buckets = 16;
};

struct TrainOpts {
  Index blocks = 2, d_model = 64, heads = 4, head_dim = 16, ffn_hidden = 128, time_dim = 32;
  int concepts = 8;
  Index n_txt = 8, n_vis = 64;
  int pairs = 1024;
  int pretrain_steps = 1500;
  int steps = 200;
  double pretrain_lr = 2e-3;
  double lr = 1e-4;
  double weight_decay = 0.01;
  int batch_size = 4;
  double p_uncond = 0.1;
  double gamma0 = 1.2;
  double t_thresh = 970.0;
  double tau = 1.0;
  Index rank = 16;
  double alpha = 16.0;
  std::vector<std::string> targets = LoraSpec{}.targets;
};

struct SampleOpts {
  std::string checkpoint;
  int count = 8;
  int steps = 30;
  double shift = 3.0;
  double cfg_scale = 3.5;
  double gamma0 = 1.2;
  double t_thresh = 970.0;
  double tau = 1.0;
  std::string strategy = "reference";
  bool baseline = false;
};

struct SweepOpts {
  std::string checkpoint;
  std::vector<double> gamma0 = {1.15, 1.20, 1.25};
  std::vector<double> t_thresh = {970.0, 950.0, 930.0};
  int prompts = 20;
  int steps = 30;
  double shift = 3.0;
  double cfg_scale = 3.5;
  double tau = 1.0;
  std::string strategy = "reference";
};

struct BenchOpts {
  Index n_txt = 32, n_vis = 256, heads = 8, head_dim = 32;
  int reps = 20;
  int warmup = 3;
  int run_steps = 30;
  int active_steps = 3;
  double gamma = 1.2;
  bool parallel_heads = false;
};

struct Context {
  Globals g;
  std::filesystem::path out_dir;
  std::ostream& out;
  std::ostream& err;
};

std::filesystem::path absolute_path(const std::string& p) {
  if (p.empty()) return {};
  return std::filesystem::absolute(p).lexically_normal();
}

void require_f64(const Context& ctx, const std::string& what) {
  if (parse_precision(ctx.g.precision) != Precision::f64) {
    throw DomainError(what + " supports --precision f64 only");
  }
}

ToyModel load_model(const std::string& path) {
  if (path.empty()) throw DomainError("--checkpoint is required");
  return load_checkpoint(path);
}

// ---------------------------------------------------------------- suppress

template <typename Scalar>
BlockLogits<Scalar> random_logits(const TokenLayout& lay, bool nonneg, Rng& rng) {
  BlockLogits<Scalar> lg;
  lg.tt = randn<Scalar>(lay.n_txt, lay.n_txt, rng);
  lg.tv = randn<Scalar>(lay.n_txt, lay.n_vis, rng);
  lg.vt = randn<Scalar>(lay.n_vis, lay.n_txt, rng);
  lg.vv = randn<Scalar>(lay.n_vis, lay.n_vis, rng);
  if (nonneg) {
    for (Matrix<Scalar>* m : {&lg.tt, &lg.tv, &lg.vt, &lg.vv}) *m = m->cwiseAbs();
  }
  return lg;
}

void accumulate(SuppressionReport& acc, const SuppressionReport& r, int draws) {
  const double w = 1.0 / draws;
  if (acc.unified_mass.size() == 0) {
    acc = r;
    acc.unified_mass *= w;
    acc.typical_mass *= w;
    acc.head_ratio *= w;
    acc.mean_ratio *= w;
    return;
  }
  acc.unified_mass += w * r.unified_mass;
  acc.typical_mass += w * r.typical_mass;
  acc.head_ratio += w * r.head_ratio;
  acc.mean_ratio += w * r.mean_ratio;
}

struct ModelActivations {
  Qkv<double> qkv;
  TokenLayout layout;
};

ModelActivations model_activations(const ToyModel& model, const SyntheticBatch& pair, double t,
                                   Index block, Rng& rng) {
  const auto& d = model.config.data;
  const MatrixD noise = randn(d.n_vis, d.patch_dim, rng);
  const FlowSample fs = flow_interpolate(pair.x0, noise, t);
  ForwardCache cache;
  predict_velocity(model, fs.x_t, pair.prompt, t, ForwardOptions{}, &cache);
  return {cache.blocks.at(static_cast<std::size_t>(block)).qkv, model.config.layout()};
}

template <typename Scalar>
void suppress_typed(const SuppressOpts& o, const Context& ctx) {
  const bool model_mode = o.mode == "model";
  std::optional<ToyModel> model;
  TokenLayout lay{o.n_txt, o.n_vis, o.heads, o.head_dim};
  if (model_mode) {
    model = load_model(o.checkpoint);
    lay = model->config.layout();
    if (o.block < 0 || o.block >= model->config.blocks) throw DomainError("--block out of range");
  }
  lay.validate();

  const Rng base(ctx.g.seed);
  std::vector<SuppressionReport> acc(o.gammas.size());
  Qkv<Scalar> first;
  for (int draw = 0; draw < o.draws; ++draw) {
    Rng rng = base.fork(static_cast<std::uint64_t>(draw));
    std::vector<BlockLogits<Scalar>> heads;
    Qkv<Scalar> qkv;
    if (o.mode == "iid" || o.mode == "nonneg") {
      for (Index h = 0; h < lay.heads; ++h) heads.push_back(random_logits<Scalar>(lay, o.mode == "nonneg", rng));
      if (draw == 0) {
        for (Matrix<Scalar>* m : {&qkv.q, &qkv.k, &qkv.v}) *m = randn<Scalar>(lay.seq_len(), lay.width(), rng);
      }
    } else {
      if (model_mode) {
        const auto& data = model->config.data;
        const SyntheticBatch pair = synth_pair(draw % data.concepts, data, rng);
        const ModelActivations act = model_activations(*model, pair, o.t, o.block, rng);
        qkv = {act.qkv.q.template cast<Scalar>(), act.qkv.k.template cast<Scalar>(),
               act.qkv.v.template cast<Scalar>()};
      } else {
        for (Matrix<Scalar>* m : {&qkv.q, &qkv.k, &qkv.v}) *m = randn<Scalar>(lay.seq_len(), lay.width(), rng);
      }
      for (Index h = 0; h < lay.heads; ++h) heads.push_back(block_logits(qkv.q, qkv.k, lay, h));
    }
    if (draw == 0) first = std::move(qkv);
    for (std::size_t g = 0; g < o.gammas.size(); ++g) {
      accumulate(acc[g], suppression_from_logits(heads, lay, o.gammas[g], o.tau), o.draws);
    }
  }

  std::vector<SuppressionRow> rows;
  for (const auto& r : acc) {
    const auto part = suppression_rows(r);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  export_stats(rows, ctx.out_dir / "suppression.csv");

  const double gamma_max = *std::max_element(o.gammas.begin(), o.gammas.end());
  const AttentionMapDiff diff =
      attention_map_diff(first.q, first.k, first.v, gamma_max, o.tau, lay, o.buckets);
  export_stats(diff, ctx.out_dir / "attn_diff.csv");

  for (const auto& r : rows) {
    if (r.head == "all") {
      ctx.out << "gamma " << format_number(r.gamma) << ": visual->text mass "
              << format_number(r.mean_mass) << ", ratio " << format_number(r.ratio) << "\n";
    }
  }
}

void cmd_suppress(const SuppressOpts& o, const Context& ctx) {
  static const std::set<std::string> modes = {"iid", "nonneg", "qk", "model"};
  if (!modes.count(o.mode)) throw DomainError("--mode must be one of iid, nonneg, qk, model");
  if (o.draws < 1) throw DomainError("--draws must be >= 1");
  if (o.gammas.empty()) throw DomainError("--gamma needs at least one value");
  for (double g : o.gammas) {
    if (!(g > 0.0) || !std::isfinite(g)) throw DomainError("--gamma values must be > 0");
  }
  if (!(o.tau > 0.0)) throw DomainError("--tau must be > 0");
  if (o.buckets < 1) throw DomainError("--buckets must be >= 1");
  if (o.mode == "model") require_f64(ctx, "suppress --mode model");
  if (parse_precision(ctx.g.precision) == Precision::f32) {
    suppress_typed<float>(o, ctx);
  } else {
    suppress_typed<double>(o, ctx);
  }
}

// ------------------------------------------------------------------- train

void cmd_train(const TrainOpts& o, const Context& ctx) {
  require_f64(ctx, "train");
  if (o.steps < 1) throw DomainError("--steps must be >= 1");
  if (o.pretrain_steps < 0) throw DomainError("--pretrain-steps must be >= 0");
  if (o.pairs < 1) throw DomainError("--pairs must be >= 1");
  if (o.batch_size < 1) throw DomainError("--batch-size must be >= 1");
  if (!(o.p_uncond >= 0.0 && o.p_uncond <= 1.0)) throw DomainError("--p-uncond must lie in [0, 1]");

  ModelConfig mc;
  mc.blocks = o.blocks;
  mc.d_model = o.d_model;
  mc.heads = o.heads;
  mc.head_dim = o.head_dim;
  mc.ffn_hidden = o.ffn_hidden;
  mc.time_dim = o.time_dim;
  mc.data.concepts = o.concepts;
  mc.data.n_txt = o.n_txt;
  mc.data.n_vis = o.n_vis;
  mc.validate();
  TacaConfig taca;
  taca.gamma0 = o.gamma0;
  taca.t_thresh = o.t_thresh;
  taca.tau = o.tau;
  taca.validate();
  const LoraSpec spec{o.rank, o.alpha, o.targets};

  const Rng base(ctx.g.seed);
  Rng init_rng = base.fork(0), data_rng = base.fork(1), lora_rng = base.fork(2);
  ToyModel model = init_model(mc, init_rng);
  const auto dataset = synth_dataset(o.pairs, mc.data, data_rng);

  CsvWriter log(ctx.out_dir / "train_log.csv", {"phase", "step", "t", "loss", "gamma"});
  std::vector<StepRecord> records;
  auto on_step = [&](const StepRecord& r) {
    log.row({r.phase, format_number(static_cast<long long>(r.step)), format_number(r.t),
             format_number(r.loss), format_number(r.gamma)});
  };

  if (o.pretrain_steps > 0) {
    AdamWConfig opt;
    opt.lr = o.pretrain_lr;
    opt.weight_decay = o.weight_decay;
    PhaseConfig phase = pretrain_phase();
    phase.batch_size = o.batch_size;
    phase.p_uncond = o.p_uncond;
    TrainState state{AdamW(model, opt), base.fork(3), 0};
    const auto part = train_phase(model, dataset, taca, phase, o.pretrain_steps, state, on_step);
    ctx.out << "pretrain: loss " << format_number(window_mean(part, 20, false)) << " -> "
            << format_number(window_mean(part, 20, true)) << " (20-step means)\n";
  }

  attach_lora(model, spec, lora_rng);
  const double frozen = base_checksum(model);
  AdamWConfig opt;
  opt.lr = o.lr;
  opt.weight_decay = o.weight_decay;
  PhaseConfig phase = finetune_phase(taca);
  phase.batch_size = o.batch_size;
  phase.p_uncond = o.p_uncond;
  TrainState state{AdamW(model, opt), base.fork(4), 0};
  const auto part = train_phase(model, dataset, taca, phase, o.steps, state, on_step);
  log.close();
  if (base_checksum(model) != frozen) throw NumericError("fine-tuning modified frozen weights");
  ctx.out << "finetune: loss " << format_number(window_mean(part, 20, false)) << " -> "
          << format_number(window_mean(part, 20, true)) << " (20-step means)\n";

  save_checkpoint(model, ctx.out_dir / "checkpoint.json");
  ctx.out << "wrote " << (ctx.out_dir / "checkpoint.json").string() << "\n";
}

// ------------------------------------------------------------------ sample

SamplerConfig sampler_config(int steps, double shift, double cfg_scale, double gamma0,
                             double t_thresh, double tau, const std::string& strategy,
                             std::uint64_t seed) {
  SamplerConfig cfg;
  cfg.steps = steps;
  cfg.shift = shift;
  cfg.cfg_scale = cfg_scale;
  cfg.taca.gamma0 = gamma0;
  cfg.taca.t_thresh = t_thresh;
  cfg.taca.tau = tau;
  cfg.taca.strategy = parse_strategy(strategy);
  cfg.seed = seed;
  cfg.validate();
  return cfg;
}

void cmd_sample(const SampleOpts& o, const Context& ctx) {
  require_f64(ctx, "sample");
  if (o.count < 1) throw DomainError("--count must be >= 1");
  SamplerConfig cfg = sampler_config(o.steps, o.shift, o.cfg_scale, o.gamma0, o.t_thresh, o.tau,
                                     o.strategy, ctx.g.seed);
  cfg.taca_enabled = !o.baseline;
  const ToyModel model = load_model(o.checkpoint);
  const auto& data = model.config.data;
  const auto prompts = probe_prompts(o.count, data, ctx.g.seed);
  const Rng seeds(ctx.g.seed);

  json samples = json::array();
  std::vector<double> scores;
  CsvWriter log(ctx.out_dir / "sample_log.csv",
                {"sample", "step", "t", "sigma", "gamma", "gamma_active"});
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    SamplerConfig one = cfg;
    one.seed = seeds.fork(i).seed();
    const SampleResult r = sample(model, prompts[i].prompt, one);
    for (const auto& s : r.log) {
      log.row({format_number(static_cast<long long>(i)), format_number(static_cast<long long>(s.step)),
               format_number(s.t), format_number(s.sigma), format_number(s.gamma),
               s.gamma_active ? "1" : "0"});
    }
    samples.push_back({{"index", i},
                       {"concept", prompts[i].concept_id},
                       {"prompt", prompts[i].prompt},
                       {"tokens", matrix_to_json(r.tokens)}});
    scores.push_back(alignment_score(r.tokens, prompts[i].concept_id, data));
  }
  log.close();
  write_json({{"samples", samples}}, ctx.out_dir / "samples.json");

  const ProbeRow summary = summarize_scores(cfg.taca.gamma0, scores);
  const double mean = summary.mean_score, se = summary.std_error;
  const int active =
      cfg.taca_enabled ? make_schedule(cfg.steps, cfg.shift).active_steps(cfg.taca) : 0;
  write_json({{"checkpoint", absolute_path(o.checkpoint).string()},
              {"count", o.count},
              {"steps", cfg.steps},
              {"shift", cfg.shift},
              {"cfg_scale", cfg.cfg_scale},
              {"gamma0", cfg.taca.gamma0},
              {"t_thresh", cfg.taca.t_thresh},
              {"tau", cfg.taca.tau},
              {"strategy", to_string(cfg.taca.strategy)},
              {"taca_enabled", cfg.taca_enabled},
              {"active_steps", active},
              {"alignment", scores},
              {"mean_alignment", mean},
              {"std_error", se}},
             ctx.out_dir / "sample_meta.json");
  ctx.out << "sampled " << o.count << " outputs, " << active << " gamma-active steps, mean alignment "
          << format_number(mean) << " (se " << format_number(se) << ")\n";
}

// ------------------------------------------------------------------- sweep

template <typename T>
std::vector<T> dedup(const std::vector<T>& values, const std::string& flag, std::ostream& err) {
  std::vector<T> out;
  for (const T& v : values) {
    if (std::find(out.begin(), out.end(), v) == out.end()) {
      out.push_back(v);
    } else {
      err << "warning: duplicate " << flag << " value " << format_number(v) << " ignored\n";
    }
  }
  return out;
}

void cmd_sweep(const SweepOpts& o, const Context& ctx) {
  require_f64(ctx, "sweep");
  if (o.gamma0.empty() || o.t_thresh.empty()) throw DomainError("sweep grid is empty");
  if (o.prompts < 1) throw DomainError("--prompts must be >= 1");
  const auto gammas = dedup(o.gamma0, "--gamma0", ctx.err);
  const auto thresholds = dedup(o.t_thresh, "--t-thresh", ctx.err);
  for (double g : gammas) sampler_config(o.steps, o.shift, o.cfg_scale, g, 970.0, o.tau, o.strategy, 0);
  for (double t : thresholds) sampler_config(o.steps, o.shift, o.cfg_scale, 1.0, t, o.tau, o.strategy, 0);

  const ToyModel model = load_model(o.checkpoint);
  const auto& data = model.config.data;
  const TokenLayout lay = model.config.layout();
  const auto prompts = probe_prompts(o.prompts, data, ctx.g.seed);
  const FlowSchedule schedule = make_schedule(o.steps, o.shift);

  // Block-0 logits along each prompt's noising path, shared by every cell.
  std::vector<std::vector<std::vector<BlockLogits<double>>>> logits(prompts.size());
  const Rng base = Rng(ctx.g.seed).fork(0x5eed);
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    Rng rng = base.fork(i);
    for (double t : schedule.timesteps) {
      const ModelActivations act = model_activations(model, prompts[i], t, 0, rng);
      std::vector<BlockLogits<double>> heads;
      for (Index h = 0; h < lay.heads; ++h) heads.push_back(block_logits(act.qkv.q, act.qkv.k, lay, h));
      logits[i].push_back(std::move(heads));
    }
  }

  CsvWriter csv(ctx.out_dir / "sweep.csv", {"gamma0", "t_thresh", "active_steps", "alignment",
                                            "std_error", "samples", "suppression_ratio"});
  for (double t_thresh : thresholds) {
    for (double g : gammas) {
      const SamplerConfig cfg =
          sampler_config(o.steps, o.shift, o.cfg_scale, g, t_thresh, o.tau, o.strategy, ctx.g.seed);
      const ProbeRow row = alignment_probe(model, prompts, {g}, cfg).front();
      double ratio = 0.0;
      for (const auto& per_prompt : logits) {
        for (std::size_t s = 0; s < per_prompt.size(); ++s) {
          const double gamma = gamma_schedule(schedule.timesteps[s], cfg.taca);
          ratio += suppression_from_logits(per_prompt[s], lay, gamma, o.tau).mean_ratio;
        }
      }
      ratio /= static_cast<double>(logits.size() * schedule.timesteps.size());
      const int active = schedule.active_steps(cfg.taca);
      csv.row({format_number(g), format_number(t_thresh), format_number(static_cast<long long>(active)),
               format_number(row.mean_score), format_number(row.std_error),
               format_number(static_cast<long long>(row.samples)), format_number(ratio)});
      ctx.out << "gamma0 " << format_number(g) << " t_thresh " << format_number(t_thresh)
              << ": alignment " << format_number(row.mean_score) << " (se "
              << format_number(row.std_error) << "), suppression ratio " << format_number(ratio)
              << "\n";
    }
  }
  csv.close();
}

// ------------------------------------------------------------------- bench

void cmd_bench(const BenchOpts& o, const Context& ctx) {
  BenchConfig cfg;
  cfg.layout = {o.n_txt, o.n_vis, o.heads, o.head_dim};
  cfg.precision = parse_precision(ctx.g.precision);
  cfg.gamma = o.gamma;
  cfg.reps = o.reps;
  cfg.warmup = o.warmup;
  cfg.run_steps = o.run_steps;
  cfg.active_steps = o.active_steps;
  cfg.exec = o.parallel_heads ? HeadExecution::parallel : HeadExecution::sequential;
  cfg.seed = ctx.g.seed;
  const BenchReport report = run_bench(cfg);
  for (const auto& w : report.warnings) ctx.err << "warning: " << w << "\n";
  write_bench_csv(report, ctx.out_dir / "bench.csv");
  for (const auto& r : report.records) {
    ctx.out << r.name << ": " << format_number(r.median_s) << " s, factor "
            << format_number(r.factor) << "\n";
  }
}

// ------------------------------------------------------------------ driver

std::optional<std::string> prescan_config(const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) return args[i + 1];
    if (args[i].starts_with("--config=")) return args[i].substr(9);
  }
  return std::nullopt;
}

int run_impl(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  Globals g;
  SuppressOpts so;
  TrainOpts to;
  SampleOpts sa;
  SweepOpts sw;
  BenchOpts bo;

  CLI::App app{"Temperature-adjusted cross-modal attention: analysis, toy training and benchmarks",
               "taca"};
  app.require_subcommand(1);
  Section globals(&app);
  globals.add("seed", g.seed, "Root RNG seed");
  globals.add("precision", g.precision, "Scalar type: f32 or f64")
      ->check(CLI::IsMember({"f32", "f64"}));
  app.add_option("--out-dir", g.out_dir, "Output directory")->capture_default_str();
  app.add_option("--config", g.config, "JSON file with flag defaults (e.g. resolved_config.json)");

  std::map<std::string, Section> sections;
  auto sub = [&](const std::string& name, const std::string& help) {
    CLI::App* s = app.add_subcommand(name, help);
    s->fallthrough();
    sections.emplace(name, Section(s));
    return &sections.at(name);
  };

  Section* s = sub("suppress", "Visual->text attention mass under token imbalance");
  s->add("n-txt", so.n_txt, "Text tokens");
  s->add("n-vis", so.n_vis, "Visual tokens");
  s->add("heads", so.heads, "Attention heads");
  s->add("head-dim", so.head_dim, "Per-head width");
  s->add("draws", so.draws, "Seeded random draws");
  s->add("gamma", so.gammas, "Temperature values")->delimiter(',');
  s->add("tau", so.tau, "Softmax temperature");
  s->add("mode", so.mode, "Logit source: iid, nonneg, qk or model");
  s->add("checkpoint", so.checkpoint, "Checkpoint for --mode model");
  s->add("t", so.t, "Timestep of model activations");
  s->add("block", so.block, "Block whose activations are analysed (--mode model)");
  s->add("buckets", so.buckets, "Query buckets in attn_diff.csv");

  s = sub("train", "Pretrain the toy model, then fine-tune LoRA adapters with TACA");
  s->add("blocks", to.blocks, "Transformer blocks");
  s->add("d-model", to.d_model, "Hidden width");
  s->add("heads", to.heads, "Attention heads");
  s->add("head-dim", to.head_dim, "Per-head width");
  s->add("ffn-hidden", to.ffn_hidden, "Feed-forward width");
  s->add("time-dim", to.time_dim, "Timestep embedding width");
  s->add("concepts", to.concepts, "Synthetic concepts");
  s->add("n-txt", to.n_txt, "Text tokens");
  s->add("n-vis", to.n_vis, "Visual tokens (perfect square)");
  s->add("pairs", to.pairs, "Synthetic training pairs");
  s->add("pretrain-steps", to.pretrain_steps, "Full-parameter pretraining steps");
  s->add("steps", to.steps, "LoRA fine-tuning steps");
  s->add("pretrain-lr", to.pretrain_lr, "Pretraining learning rate");
  s->add("lr", to.lr, "Fine-tuning learning rate");
  s->add("weight-decay", to.weight_decay, "AdamW weight decay");
  s->add("batch-size", to.batch_size, "Pairs per step");
  s->add("p-uncond", to.p_uncond, "Prompt dropout probability");
  s->add("gamma0", to.gamma0, "Temperature for t >= t_thresh");
  s->add("t-thresh", to.t_thresh, "Timestep threshold");
  s->add("tau", to.tau, "Softmax temperature");
  s->add("rank", to.rank, "LoRA rank");
  s->add("alpha", to.alpha, "LoRA scale");
  s->add("targets", to.targets, "LoRA target projections")->delimiter(',');

  s = sub("sample", "Generate visual tokens from a checkpoint");
  s->add("checkpoint", sa.checkpoint, "Checkpoint file");
  s->add("count", sa.count, "Number of samples");
  s->add("steps", sa.steps, "Sampling steps");
  s->add("shift", sa.shift, "Timestep shift");
  s->add("cfg-scale", sa.cfg_scale, "Guidance scale (1 disables)");
  s->add("gamma0", sa.gamma0, "Temperature for t >= t_thresh");
  s->add("t-thresh", sa.t_thresh, "Timestep threshold");
  s->add("tau", sa.tau, "Softmax temperature");
  s->add("strategy", sa.strategy, "Kernel: reference or selective");
  s->add_flag("baseline", sa.baseline, "Disable the temperature adjustment");

  s = sub("sweep", "Alignment probe over a gamma0 x t_thresh grid");
  s->add("checkpoint", sw.checkpoint, "Checkpoint file");
  s->add("gamma0", sw.gamma0, "gamma0 grid")->delimiter(',');
  s->add("t-thresh", sw.t_thresh, "t_thresh grid")->delimiter(',');
  s->add("prompts", sw.prompts, "Probe prompts per cell");
  s->add("steps", sw.steps, "Sampling steps");
  s->add("shift", sw.shift, "Timestep shift");
  s->add("cfg-scale", sw.cfg_scale, "Guidance scale");
  s->add("tau", sw.tau, "Softmax temperature");
  s->add("strategy", sw.strategy, "Kernel: reference or selective");

  s = sub("bench", "Time the baseline, reference and selective attention paths");
  s->add("n-txt", bo.n_txt, "Text tokens");
  s->add("n-vis", bo.n_vis, "Visual tokens");
  s->add("heads", bo.heads, "Attention heads");
  s->add("head-dim", bo.head_dim, "Per-head width");
  s->add("reps", bo.reps, "Timed repetitions (>= 20)");
  s->add("warmup", bo.warmup, "Untimed warmup calls");
  s->add("run-steps", bo.run_steps, "Steps in the simulated sampling run");
  s->add("active-steps", bo.active_steps, "Steps using the adjusted kernel");
  s->add("gamma", bo.gamma, "Temperature");
  s->add_flag("parallel-heads", bo.parallel_heads, "One thread per head");

  // Config values become defaults; flags given on the command line win.
  if (const auto path = prescan_config(args)) {
    const json cfg = read_json(*path);
    if (!cfg.is_object() || !cfg.contains("command") || !cfg["command"].is_string()) {
      throw DomainError("config " + *path + ": expected an object with a \"command\" field");
    }
    const std::string command = cfg["command"].get<std::string>();
    if (!sections.count(command)) throw DomainError("config " + *path + ": unknown command " + command);
    for (const auto& [key, value] : cfg.items()) {
      if (key == "command") continue;
      if (!globals.load(key, value) && !sections.at(command).load(key, value)) {
        throw DomainError("config " + *path + ": unknown key '" + key + "' for " + command);
      }
    }
    const bool named = std::any_of(args.begin(), args.end(), [](const std::string& a) {
      return std::find(kCommands.begin(), kCommands.end(), a) != kCommands.end();
    });
    if (!named) args.insert(args.begin(), command);
  }

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kValidation;
  }

  std::string command;
  for (const auto& name : kCommands) {
    if (app.got_subcommand(name)) command = name;
  }
  parse_precision(g.precision);

  Context ctx{g, g.out_dir, out, err};
  std::error_code ec;
  std::filesystem::create_directories(ctx.out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + ctx.out_dir.string() + ": " + ec.message());

  // Input paths are recorded absolute so the config can be replayed from anywhere.
  for (std::string* p : {&so.checkpoint, &sa.checkpoint, &sw.checkpoint}) {
    if (!p->empty()) *p = absolute_path(*p).string();
  }
  json resolved = {{"command", command}};
  globals.save(resolved);
  sections.at(command).save(resolved);
  write_json(resolved, ctx.out_dir / "resolved_config.json");

  if (command == "suppress") cmd_suppress(so, ctx);
  if (command == "train") cmd_train(to, ctx);
  if (command == "sample") cmd_sample(sa, ctx);
  if (command == "sweep") cmd_sweep(sw, ctx);
  if (command == "bench") cmd_bench(bo, ctx);
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    return run_impl(args, out, err);
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kIo;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return kNumeric;
  } catch (const nlohmann::json::exception& e) {
    err << "error: malformed config value: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kValidation;
  }
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace taca::cli
