// tpcvit: train / eval / bench / trace / flops / sweep.
//
// Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tpc/bench.hpp"
#include "tpc/checkpoint.hpp"
#include "tpc/data.hpp"
#include "tpc/flops.hpp"
#include "tpc/manifest.hpp"
#include "tpc/plot.hpp"
#include "tpc/trace.hpp"
#include "tpc/trainer.hpp"

namespace fs = std::filesystem;
using namespace tpc;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

struct Common {
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c, bool config_required) {
  auto* opt = cmd->add_option("--config", c.config, "JSON run configuration");
  if (config_required) opt->required();
  cmd->add_option("--out", c.out, "output directory")->capture_default_str();
  cmd->add_option("--seed", c.seed, "overrides train.seed");
  cmd->add_option("overrides", c.overrides, "section.key=value overrides");
}

fs::path prepare_out(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw ConfigError("--out", "cannot create " + dir + ": " + ec.message());
  return fs::path(dir);
}

RunConfig load_config(const Common& c) {
  std::vector<std::string> overrides = c.overrides;
  if (c.seed) overrides.push_back("train.seed=" + std::to_string(*c.seed));
  return RunConfig::load(c.config, overrides);
}

RunConfig config_from_doc(Json doc, const Common& c) {
  std::vector<std::string> overrides = c.overrides;
  if (c.seed) overrides.push_back("train.seed=" + std::to_string(*c.seed));
  for (const auto& o : overrides) apply_override(doc, o);
  return RunConfig::from_json(doc);
}

void record_manifest(const fs::path& out, const std::string& command, const Common& c, const RunConfig& cfg,
                     const std::vector<std::string>& argv) {
  RunManifest m;
  m.command = command;
  m.argv = argv;
  m.overrides = c.overrides;
  m.config = cfg.to_json();
  m.seed = cfg.train.seed;
  write_manifest(out, m);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
  if (!out) throw FormatError("cannot write " + path.string());
}

Json eval_json(const EvalMetrics& m) {
  Json j;
  j["count"] = m.count;
  j["top1"] = m.top1;
  j["top5"] = m.top5;
  j["mean_depth"] = m.mean_depth;
  j["active_per_layer"] = m.active_per_layer;
  j["halting_histogram"] = m.halting_histogram;
  j["flops"] = m.flops;
  return j;
}

const Dataset& eval_split(const DatasetSplits& s) { return s.eval.empty() ? s.train : s.eval; }

struct TrainOptions {
  bool trace = false;
  bool plots = false;
  bool quiet = false;
  std::string resume;
};

/// Runs a full training job into `out`. Returns eval metrics.
template <typename Scalar>
EvalMetrics run_training(const RunConfig& cfg, const fs::path& out, const TrainOptions& opt) {
  const DatasetSplits splits = load_datasets(cfg);
  Trainer<Scalar> trainer(cfg, steps_per_epoch(splits.train.size(), cfg.train.batch_size));
  if (!opt.resume.empty()) trainer.restore(load_checkpoint(fs::path(opt.resume)));

  std::ofstream metrics(out / "metrics.csv", opt.resume.empty() ? std::ios::trunc : std::ios::app);
  if (!metrics) throw FormatError("cannot write " + (out / "metrics.csv").string());
  if (opt.resume.empty()) metrics << kMetricsHeader << '\n';

  std::optional<CsvTraceWriter> trace;
  if (opt.trace || cfg.train.trace) trace.emplace(out / "trace.csv");

  std::vector<double> steps;
  std::vector<double> final_loss;
  std::vector<double> task_loss;
  std::vector<double> depth;
  auto on_step = [&](const StepSummary& s) {
    metrics << format_metrics_row(s) << '\n';
    steps.push_back(static_cast<double>(s.step));
    final_loss.push_back(s.loss.final_loss);
    task_loss.push_back(s.loss.task);
    depth.push_back(s.mean_depth);
  };
  auto on_epoch = [&](std::uint64_t epoch) {
    metrics.flush();
    if (!opt.quiet) {
      std::cerr << "epoch " << epoch << "/" << cfg.train.epochs;
      if (!final_loss.empty()) std::cerr << "  loss " << final_loss.back() << "  depth " << depth.back();
      std::cerr << '\n';
    }
    if (cfg.train.checkpoint_every > 0 && epoch % static_cast<std::uint64_t>(cfg.train.checkpoint_every) == 0) {
      save_checkpoint(out / ("checkpoint_epoch_" + std::to_string(epoch) + ".tpck"), trainer.checkpoint());
    }
  };

  try {
    trainer.train(splits.train, on_step, on_epoch, trace ? &*trace : nullptr);
  } catch (const NonFiniteLoss& e) {
    const fs::path dump = out / "nan_dump.csv";
    std::ofstream d(dump);
    write_break_records(d, e.records());
    throw NumericError(std::string(e.what()) + "; break records dumped to " + dump.string());
  }
  if (trace) {
    trace->flush();
    if (trace->failed()) std::cerr << "warning: " << trace->error() << '\n';
  }
  save_checkpoint(out / "checkpoint.tpck", trainer.checkpoint());

  const EvalMetrics m = trainer.evaluate(eval_split(splits));
  write_text(out / "eval.json", eval_json(m).dump(2) + "\n");
  if (opt.plots) {
    write_text(out / "loss.svg", line_chart_svg("loss per step", {{"final", steps, final_loss}, {"task", steps, task_loss}}));
    std::vector<double> hist(m.halting_histogram.begin(), m.halting_histogram.end());
    write_text(out / "depth.svg", bar_chart_svg("tokens halting per layer (eval)", hist));
  }
  return m;
}

EvalMetrics dispatch_training(const RunConfig& cfg, const fs::path& out, const TrainOptions& opt) {
  return cfg.train.precision == "f32" ? run_training<float>(cfg, out, opt) : run_training<double>(cfg, out, opt);
}

int cmd_train(const Common& c, const TrainOptions& opt, const std::vector<std::string>& argv) {
  const RunConfig cfg = load_config(c);
  cfg.model.validate();
  const fs::path out = prepare_out(c.out);
  record_manifest(out, "train", c, cfg, argv);
  const EvalMetrics m = dispatch_training(cfg, out, opt);
  std::cout << eval_json(m).dump(2) << '\n';
  return kExitOk;
}

template <typename Scalar>
EvalMetrics run_eval(const RunConfig& cfg, const Checkpoint& ckpt) {
  Trainer<Scalar> trainer(cfg);
  trainer.restore(ckpt);
  return trainer.evaluate(eval_split(load_datasets(cfg)));
}

int cmd_eval(const Common& c, const std::string& checkpoint, const std::vector<std::string>& argv) {
  const Checkpoint ckpt = load_checkpoint(fs::path(checkpoint));
  const RunConfig cfg = config_from_doc(Json::parse(ckpt.config_json), c);
  const fs::path out = prepare_out(c.out);
  record_manifest(out, "eval", c, cfg, argv);
  const EvalMetrics m = cfg.train.precision == "f32" ? run_eval<float>(cfg, ckpt) : run_eval<double>(cfg, ckpt);
  write_text(out / "eval.json", eval_json(m).dump(2) + "\n");
  std::cout << eval_json(m).dump(2) << '\n';
  return kExitOk;
}

RunConfig preset_or_config(const Common& c, const std::string& preset) {
  if (!preset.empty() && !c.config.empty()) throw ConfigError("--preset", "give either --preset or --config");
  if (!preset.empty()) {
    Json doc = RunConfig{}.to_json();
    doc["model"] = Json{{"preset", preset}};
    return config_from_doc(doc, c);
  }
  if (c.config.empty()) throw ConfigError("--config", "a preset or config file is required");
  return load_config(c);
}

struct BenchArgs {
  std::string preset;
  int batch = 8;
  int reps = 20;
  int warmup = 3;
  int threads = 1;
  std::string schedule = "half";
  bool compare = true;
};

template <typename Scalar>
std::vector<std::pair<std::string, BenchResult>> run_bench(const RunConfig& cfg, const BenchArgs& a) {
  std::mt19937_64 rng(cfg.train.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Matrix<Scalar>> images;
  for (int i = 0; i < a.batch; ++i) {
    Matrix<Scalar> img(cfg.model.in_channels, static_cast<Index>(cfg.model.image_size) * cfg.model.image_size);
    for (Index j = 0; j < img.size(); ++j) img.data()[j] = static_cast<Scalar>(gauss(rng));
    images.push_back(std::move(img));
  }
  BenchOptions bo;
  bo.repetitions = a.reps;
  bo.warmup = a.warmup;
  bo.threads = std::min(a.threads, thread_cap());
  std::vector<int> schedule;
  if (a.schedule == "half") {
    schedule = half_depth_schedule(cfg.model.token_count(), cfg.model.depth);
    bo.forced_halting = &schedule;
  } else if (a.schedule != "none") {
    throw ConfigError("--schedule", "expected half or none");
  }
  std::vector<std::pair<std::string, BenchResult>> results;
  const VitParams<Scalar> params = init_params<Scalar>(cfg.model, cfg.train.seed);
  results.emplace_back(cfg.model.variant == BlockVariant::tpc ? "tpc" : "dense",
                       bench_throughput(params, cfg.model, images, bo));
  if (a.compare && cfg.model.variant == BlockVariant::tpc) {
    ModelConfig dense = cfg.model;
    dense.variant = BlockVariant::vanilla;
    bo.forced_halting = nullptr;
    results.emplace_back("dense", bench_throughput(params, dense, images, bo));
  }
  return results;
}

int cmd_bench(const Common& c, const BenchArgs& a, const std::vector<std::string>& argv) {
  const RunConfig cfg = preset_or_config(c, a.preset);
  const fs::path out = prepare_out(c.out);
  record_manifest(out, "bench", c, cfg, argv);
  const auto results = cfg.train.precision == "f32" ? run_bench<float>(cfg, a) : run_bench<double>(cfg, a);
  std::ostringstream csv;
  csv << "mode,threads,batch,images_per_sec,p50_ms,p95_ms\n";
  for (const auto& [mode, r] : results) {
    csv << mode << ',' << r.threads << ',' << r.batch << ',' << format_number(r.images_per_sec) << ','
        << format_number(r.p50_ms) << ',' << format_number(r.p95_ms) << '\n';
  }
  write_text(out / "bench.csv", csv.str());
  std::cout << csv.str();
  if (results.size() == 2 && results[1].second.images_per_sec > 0) {
    std::cout << "speedup " << results[0].second.images_per_sec / results[1].second.images_per_sec << "x\n";
  }
  return kExitOk;
}

template <typename Scalar>
std::uint64_t run_trace(const RunConfig& cfg, const std::string& checkpoint, int samples, const fs::path& path) {
  Trainer<Scalar> trainer(cfg);
  if (!checkpoint.empty()) trainer.restore(load_checkpoint(fs::path(checkpoint)));
  const DatasetSplits splits = load_datasets(cfg);
  const Dataset& ds = eval_split(splits);
  CsvTraceWriter writer(path);
  const std::size_t n = std::min(ds.size(), static_cast<std::size_t>(std::max(0, samples)));
  for (std::size_t i = 0; i < n; ++i) {
    ForwardOptions o;
    o.sink = &writer;
    o.step = static_cast<std::int64_t>(i);
    trainer.forward_image(ds.images[i], o);
  }
  writer.flush();
  if (writer.failed()) throw FormatError(writer.error());
  return writer.rows_written();
}

int cmd_trace(const Common& c, const std::string& checkpoint, int samples, const std::vector<std::string>& argv) {
  RunConfig cfg;
  if (!checkpoint.empty() && c.config.empty()) {
    cfg = config_from_doc(Json::parse(load_checkpoint(fs::path(checkpoint)).config_json), c);
  } else {
    cfg = load_config(c);
  }
  cfg.model.validate();
  const fs::path out = prepare_out(c.out);
  record_manifest(out, "trace", c, cfg, argv);
  const fs::path path = out / "trace.csv";
  const std::uint64_t rows = cfg.train.precision == "f32" ? run_trace<float>(cfg, checkpoint, samples, path)
                                                          : run_trace<double>(cfg, checkpoint, samples, path);
  std::cout << rows << " trace rows written to " << path.string() << '\n';
  return kExitOk;
}

std::vector<int> read_schedule(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("--schedule", "cannot open " + path);
  std::vector<int> counts;
  std::string tok;
  while (in >> tok) {
    for (char& ch : tok) {
      if (ch == ',') ch = ' ';
    }
    std::istringstream ts(tok);
    int v = 0;
    while (ts >> v) counts.push_back(v);
    if (!ts.eof()) throw ConfigError("--schedule", "non-integer entry '" + tok + "'");
  }
  return counts;
}

int cmd_flops(const Common& c, const std::string& preset, const std::string& schedule, int mac_factor,
              const std::vector<std::string>& argv) {
  const RunConfig cfg = preset_or_config(c, preset);
  if (mac_factor != 1 && mac_factor != 2) throw ConfigError("--mac-factor", "must be 1 or 2");
  FlopLedger ledger;
  if (!schedule.empty()) {
    const std::vector<int> counts = read_schedule(schedule);
    if (static_cast<int>(counts.size()) != cfg.model.depth) {
      throw ConfigError("--schedule", "needs " + std::to_string(cfg.model.depth) + " per-layer token counts");
    }
    for (int n : counts) {
      if (n < 1 || n > cfg.model.token_count()) throw ConfigError("--schedule", "token count outside [1, K+1]");
    }
    ledger = count_flops(cfg.model, computed_tokens(cfg.model, counts), mac_factor);
  } else {
    ledger = count_flops(cfg.model, mac_factor);
  }
  std::cout << format_ledger(ledger);
  std::cout << "dense path " << dense_path_flops(cfg.model, mac_factor) / 1e9 << " G\n";
  std::cout << "params " << count_params(cfg.model) << '\n';
  if (!c.out.empty() && c.out != "-") {
    const fs::path out = prepare_out(c.out);
    record_manifest(out, "flops", c, cfg, argv);
    write_text(out / "flops.csv", ledger_csv(ledger));
  }
  return kExitOk;
}

struct Axis {
  std::string key;
  std::vector<std::string> values;
};

Axis parse_axis(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size()) {
    throw ConfigError("--axis", "expected key=v1,v2,...");
  }
  Axis a;
  a.key = qualify_key(spec.substr(0, eq));
  std::stringstream ss(spec.substr(eq + 1));
  std::string v;
  while (std::getline(ss, v, ',')) {
    if (v.empty()) throw ConfigError("--axis", "empty value in " + spec);
    a.values.push_back(v);
  }
  return a;
}

int cmd_sweep(const Common& c, const std::vector<std::string>& axis_specs, const std::vector<std::string>& argv) {
  std::vector<Axis> axes;
  for (const auto& s : axis_specs) axes.push_back(parse_axis(s));
  const RunConfig base = load_config(c);
  const fs::path out = prepare_out(c.out);
  record_manifest(out, "sweep", c, base, argv);

  // validate every point before any run starts
  std::vector<std::vector<std::string>> points{{}};
  for (const auto& a : axes) {
    std::vector<std::vector<std::string>> next;
    for (const auto& p : points) {
      for (const auto& v : a.values) {
        auto q = p;
        q.push_back(a.key + "=" + v);
        next.push_back(std::move(q));
      }
    }
    points = std::move(next);
  }
  std::vector<RunConfig> configs;
  for (const auto& p : points) {
    Json doc = base.to_json();
    for (const auto& o : p) apply_override(doc, o);
    configs.push_back(RunConfig::from_json(doc));
  }

  std::ostringstream csv;
  for (const auto& a : axes) csv << a.key << ',';
  csv << "status,top1,mean_depth,flops\n";
  int failures = 0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    std::string name = "run_" + std::to_string(i);
    const fs::path dir = prepare_out((out / name).string());
    for (const auto& o : points[i]) csv << o.substr(o.find('=') + 1) << ',';
    try {
      Common sub = c;
      sub.overrides.insert(sub.overrides.end(), points[i].begin(), points[i].end());
      configs[i].model.validate();
      record_manifest(dir, "train", sub, configs[i], argv);
      TrainOptions opt;
      opt.quiet = true;
      const EvalMetrics m = dispatch_training(configs[i], dir, opt);
      csv << "ok," << format_number(m.top1) << ',' << format_number(m.mean_depth) << ',' << format_number(m.flops)
          << '\n';
      std::cerr << name << ": top1 " << m.top1 << " depth " << m.mean_depth << '\n';
    } catch (const std::exception& e) {
      ++failures;
      csv << "failed,,,\n";
      std::cerr << name << " failed: " << e.what() << '\n';
    }
  }
  write_text(out / "sweep.csv", csv.str());
  std::cout << csv.str();
  if (failures > 0) std::cerr << failures << " of " << points.size() << " runs failed\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv, argv + argc);
  CLI::App app{"Token propagation controller for vision transformers"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  Common train_c;
  TrainOptions train_opt;
  auto* train = app.add_subcommand("train", "train a model and evaluate it");
  add_common(train, train_c, true);
  train->add_flag("--trace", train_opt.trace, "write trace.csv (first image of every batch)");
  train->add_flag("--plots", train_opt.plots, "write loss.svg and depth.svg");
  train->add_option("--resume", train_opt.resume, "checkpoint to resume from");

  Common eval_c;
  std::string eval_ckpt;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval, eval_c, false);
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();

  Common bench_c;
  BenchArgs bench_a;
  auto* bench = app.add_subcommand("bench", "measure inference throughput");
  add_common(bench, bench_c, false);
  bench->add_option("--preset", bench_a.preset, "deit-t | deit-s | deit-b");
  bench->add_option("--batch", bench_a.batch, "images per timed batch")->capture_default_str();
  bench->add_option("--reps", bench_a.reps, "timed repetitions")->capture_default_str();
  bench->add_option("--warmup", bench_a.warmup, "untimed warmup repetitions")->capture_default_str();
  bench->add_option("--threads", bench_a.threads, "worker threads, capped by TPC_THREADS")->capture_default_str();
  bench->add_option("--schedule", bench_a.schedule, "forced halting: half | none")->capture_default_str();
  bench->add_flag("!--no-compare", bench_a.compare, "skip the dense baseline");

  Common trace_c;
  std::string trace_ckpt;
  int trace_samples = 4;
  auto* trace = app.add_subcommand("trace", "write controller events for a few eval images");
  add_common(trace, trace_c, false);
  trace->add_option("--checkpoint", trace_ckpt, "checkpoint file");
  trace->add_option("--samples", trace_samples, "images to trace")->capture_default_str();

  Common flops_c;
  flops_c.out = "";
  std::string flops_preset;
  std::string flops_schedule;
  int mac_factor = 1;
  auto* flops = app.add_subcommand("flops", "print the analytic FLOP ledger");
  add_common(flops, flops_c, false);
  flops->add_option("--preset", flops_preset, "deit-t | deit-s | deit-b");
  flops->add_option("--schedule", flops_schedule, "file with one active-token count per layer");
  flops->add_option("--mac-factor", mac_factor, "FLOPs per multiply-accumulate (1 or 2)")->capture_default_str();

  Common sweep_c;
  std::vector<std::string> axis_specs;
  auto* sweep = app.add_subcommand("sweep", "one training run per axis value");
  add_common(sweep, sweep_c, true);
  sweep->add_option("--axis", axis_specs, "key=v1,v2,... (repeatable)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*train) return cmd_train(train_c, train_opt, args);
    if (*eval) return cmd_eval(eval_c, eval_ckpt, args);
    if (*bench) return cmd_bench(bench_c, bench_a, args);
    if (*trace) return cmd_trace(trace_c, trace_ckpt, trace_samples, args);
    if (*flops) return cmd_flops(flops_c, flops_preset, flops_schedule, mac_factor, args);
    if (*sweep) return cmd_sweep(sweep_c, axis_specs, args);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kExitConfig;
}
