#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "atsc/checkpoint.hpp"
#include "atsc/config.hpp"
#include "atsc/trainer.hpp"

// Run orchestration behind the command-line verbs.
//
// A run directory holds:
//   metrics.csv    one row per (epoch, split), see kMetricsHeader
//   summary.json   final accuracies, drift trajectory, parameter report, status
//   config.json    the resolved configuration
//   checkpoint/    last completed epoch (the initial state until the first epoch finishes)

namespace atsc {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitDiverged = 3;

struct CliOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool deterministic = false;
  std::vector<std::string> inputs;  // report: run or sweep directories
};

inline std::string encoder_label(const EncoderSpec& s) {
  std::ostringstream os;
  os << (s.kind == EncoderSpec::Kind::mlp ? "mlp" : "cnn") << '[';
  for (std::size_t i = 0; i < s.widths.size(); ++i) {
    if (i) os << ' ';
    os << s.widths[i];
    if (i < s.pool.size() && s.pool[i]) os << 'p';
  }
  os << ']';
  return os.str();
}

inline std::string dataset_label(const DatasetSpec& d) {
  std::ostringstream os;
  if (d.kind == DatasetSpec::Kind::synthetic) {
    os << "synthetic(K=" << d.num_classes << " d=" << d.dims << " n=" << d.train_size << '/' << d.test_size
       << " sep=" << format_number(d.separation) << " noise=" << format_number(d.noise);
    if (d.modes_per_class > 1) os << " modes=" << d.modes_per_class;
    os << " seed=" << d.seed << ')';
  } else {
    os << "images(" << d.path << " K=" << d.num_classes << ' ' << d.image_h << 'x' << d.image_w << 'x' << d.channels
       << ')';
  }
  return os.str();
}

/// Finds the checkpoint behind a teacher reference: either a checkpoint directory or a run
/// directory containing `checkpoint/`.
inline fs::path resolve_checkpoint_dir(const std::string& ref) {
  const fs::path p(ref);
  if (fs::exists(p / "manifest.json")) return p;
  if (fs::exists(p / "checkpoint" / "manifest.json")) return p / "checkpoint";
  throw StartupError("teacher checkpoint not found: " + ref);
}

/// Loads pretrained teachers (or builds shape templates for online modes) for `cfg`.
inline ModelSetup<double> build_setup(const RunConfig& cfg) {
  ModelSetup<double> setup;
  setup.student_spec = cfg.student;
  setup.num_classes = cfg.dataset.num_classes;
  setup.reduction = cfg.reduction_factor;
  if (cfg.mode == TrainMode::STANDALONE_STUDENT) return setup;
  for (std::size_t i = 0; i < cfg.teachers.size(); ++i) {
    const auto& ref = cfg.teachers[i];
    const auto ctx = "teachers[" + std::to_string(i) + "]";
    if (!ref.checkpoint.empty()) {
      Checkpoint<double> ck(resolve_checkpoint_dir(ref.checkpoint));
      auto enc = ck.encoder("teacher");
      if (ref.spec && !(*ref.spec == enc.spec()))
        throw ConfigError(ctx + ".spec: does not match the architecture stored in " + ref.checkpoint);
      setup.teachers.push_back(std::move(enc));
      setup.classifiers.push_back(ck.classifier("classifier"));
    } else {
      setup.teachers.emplace_back(*ref.spec, Role::teacher);
      setup.classifiers.emplace_back(ref.spec->out_channels(), cfg.dataset.num_classes);
    }
    const auto& spec = setup.teachers.back().spec();
    const auto in = cfg.dataset.input_shape();
    if (spec.in_h != in[0] || spec.in_w != in[1] || spec.in_ch != in[2])
      throw ConfigError(ctx + ": teacher input shape does not match the dataset");
  }
  return setup;
}

inline std::string scenario_label(const RunConfig& cfg, const ModelSetup<double>& setup) {
  std::string s = dataset_label(cfg.dataset) + " T=";
  if (setup.teachers.empty()) s += "none";
  for (std::size_t i = 0; i < setup.teachers.size(); ++i) {
    if (i) s += '+';
    s += encoder_label(setup.teachers[i].spec());
  }
  return s + " S=" + encoder_label(cfg.student);
}

/// Hyperparameters that must agree for runs to be averaged together (everything but the seed).
inline std::string hyper_label(const RunConfig& cfg) {
  std::ostringstream os;
  if (uses_alpha(cfg.mode)) os << "alpha=" << format_number(cfg.alpha) << ' ';
  if (cfg.mode != TrainMode::STANDALONE_STUDENT) os << "r=" << cfg.reduction_factor << ' ';
  const auto& o = cfg.optim;
  os << "lr=" << format_number(o.base_lr) << " ep=" << o.epochs << " bs=" << o.batch_size;
  return os.str();
}

inline json param_report_json(const ParamReport& p) {
  return {{"teacher", p.teacher},
          {"classifier", p.classifier},
          {"student", p.student},
          {"projector", p.projector},
          {"student_with_projector", p.student + p.projector},
          {"increase_percent", p.increase_percent}};
}

inline void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw Error("cannot write " + file.string());
  out << text;
  if (!out) throw Error("failed writing " + file.string());
}

inline void save_train_checkpoint(const TrainState<double>& st, const RunConfig& cfg, int epoch, const fs::path& dir) {
  CheckpointWriter<double> w;
  w.meta() = {{"mode", to_string(st.mode)}, {"seed", cfg.seed},          {"epoch", epoch},
              {"alpha", cfg.alpha},         {"r", cfg.reduction_factor}, {"dataset", dataset_to_json(cfg.dataset)}};
  for (std::size_t i = 0; i < st.teachers.size(); ++i) {
    w.add("teacher" + std::to_string(i), st.teachers[i]);
    w.add("classifier" + std::to_string(i), st.classifiers[i]);
    w.add("projector" + std::to_string(i), st.projectors[i]);
  }
  w.add("student", st.student);
  if (st.student_classifier) w.add("student_classifier", *st.student_classifier);
  w.save(dir);
}

struct TrainOutcome {
  RunRecord record;
  std::string scenario;
  bool diverged = false;
  std::string error;
  int last_good_epoch = -1;  // -1: only the initial state was checkpointed
};

/// Trains one configuration into `out`. Divergence is reported in the outcome (and summary.json)
/// rather than thrown; the checkpoint of the last completed epoch stays in place.
inline TrainOutcome run_train(const RunConfig& cfg, const Dataset<double>& ds, const fs::path& out) {
  cfg.validate();
  fs::create_directories(out);
  auto setup = build_setup(cfg);
  TrainOutcome res;
  res.scenario = scenario_label(cfg, setup);
  auto st = init_state<double>(cfg.mode, std::move(setup), cfg.seed, cfg.optim, cfg.steps);

  write_text(out / "config.json", run_config_to_json(cfg).dump(2) + "\n");
  std::ofstream metrics(out / "metrics.csv", std::ios::binary);
  if (!metrics) throw Error("cannot write " + (out / "metrics.csv").string());
  metrics << kMetricsHeader << '\n';
  save_train_checkpoint(st, cfg, -1, out / "checkpoint");

  TrainObserver<double> obs;
  obs.on_row = [&](const MetricRow& r) { metrics << to_csv(r) << '\n' << std::flush; };
  obs.on_epoch_end = [&](const TrainState<double>& s, int epoch) {
    save_train_checkpoint(s, cfg, epoch, out / "checkpoint");
    res.last_good_epoch = epoch;
  };
  try {
    res.record = train_state(st, ds, cfg, obs);
  } catch (const DivergenceError& e) {
    res.diverged = true;
    res.error = e.what();
    res.record.mode = cfg.mode;
    res.record.params = param_report(st);
  }
  metrics.close();

  const auto& r = res.record;
  json summary{{"mode", to_string(cfg.mode)},
               {"seed", cfg.seed},
               {"status", res.diverged ? "diverged" : "ok"},
               {"scenario", res.scenario},
               {"hyper", hyper_label(cfg)},
               {"alpha", cfg.alpha},
               {"reduction_factor", cfg.reduction_factor},
               {"epochs_completed", res.diverged ? res.last_good_epoch + 1 : r.epochs_completed},
               {"params", param_report_json(param_report(st))}};
  if (res.diverged) {
    summary["error"] = res.error;
    summary["last_good_epoch"] = res.last_good_epoch;
  } else {
    summary["student_top1"] = r.student_top1;
    summary["student_train_top1"] = r.train_top1;
    if (!r.teacher_top1.empty()) {
      summary["teacher_top1"] = r.teacher_top1;
      summary["pretrained_teacher_top1"] = r.pretrained_teacher_top1;
      if (r.teacher_top1.size() > 1 && r.ensemble_teacher_top1) summary["ensemble_teacher_top1"] = *r.ensemble_teacher_top1;
      summary["teacher_drift_rms"] = r.drift;
    }
  }
  write_text(out / "summary.json", summary.dump(2) + "\n");
  return res;
}

inline std::string fixed(double v, int digits = 2) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

// ---------------------------------------------------------------------------------------------
// Verbs.

inline int cmd_pretrain(const CliOptions& opt) {
  auto cfg = parse_pretrain_config(cfg::read_json_file(opt.config));
  if (opt.seed) cfg.seed = *opt.seed;
  if (!opt.out.empty()) cfg.out_dir = opt.out;
  if (cfg.out_dir.empty()) throw ConfigError("out: no output directory (use --out)");
  cfg.deterministic = opt.deterministic;
  const fs::path out(cfg.out_dir);
  fs::create_directories(out);

  const auto ds = load_dataset<double>(cfg.dataset);
  std::ofstream metrics(out / "metrics.csv", std::ios::binary);
  metrics << kMetricsHeader << '\n';
  auto res = pretrain_teacher<double>(cfg, ds, [&](const MetricRow& r) { metrics << to_csv(r) << '\n' << std::flush; });

  CheckpointWriter<double> w;
  w.meta() = {{"mode", "PRETRAIN"},
              {"seed", cfg.seed},
              {"epoch", cfg.optim.epochs - 1},
              {"test_top1", res.test_top1},
              {"dataset", dataset_to_json(cfg.dataset)}};
  w.add("teacher", res.encoder);
  w.add("classifier", res.classifier);
  w.save(out / "checkpoint");
  std::cout << "teacher " << encoder_label(cfg.model) << " test top-1 " << fixed(res.test_top1) << "% -> "
            << (out / "checkpoint").string() << '\n';
  return kExitOk;
}

inline int cmd_train(const CliOptions& opt) {
  auto cfg = parse_run_config(cfg::read_json_file(opt.config));
  if (opt.seed) cfg.seed = *opt.seed;
  if (!opt.out.empty()) cfg.out_dir = opt.out;
  if (cfg.out_dir.empty()) throw ConfigError("out: no output directory (use --out)");
  cfg.deterministic = opt.deterministic;
  const auto ds = load_dataset<double>(cfg.dataset);
  const auto res = run_train(cfg, ds, cfg.out_dir);
  if (res.diverged) {
    std::cerr << "error: " << res.error << "; last good checkpoint: epoch " << res.last_good_epoch << " in "
              << (fs::path(cfg.out_dir) / "checkpoint").string() << '\n';
    return kExitDiverged;
  }
  const auto& r = res.record;
  std::cout << to_string(cfg.mode) << " student top-1 " << fixed(r.student_top1) << '%';
  for (std::size_t i = 0; i < r.teacher_top1.size(); ++i)
    std::cout << ", teacher" << i << " " << fixed(r.pretrained_teacher_top1[i]) << "% -> " << fixed(r.teacher_top1[i])
              << '%';
  if (!r.drift.empty()) std::cout << ", drift " << format_number(r.drift.back());
  if (r.params.teacher_total() > 0) std::cout << ", increase " << fixed(r.params.increase_percent) << '%';
  std::cout << '\n';
  return kExitOk;
}

/// Sample mean and standard deviation (n - 1 denominator; 0 for a single value).
inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {MetricRow::kNone, MetricRow::kNone};
  double m = 0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  if (v.size() == 1) return {m, 0.0};
  double ss = 0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

struct SweepCell {
  double value = 0;
  std::uint64_t seed = 0;
  bool diverged = false;
  bool failed = false;
  std::string error;
  double top1 = MetricRow::kNone;
  double drift = MetricRow::kNone;
};

struct SweepRow {
  double value = 0;
  std::size_t runs = 0;
  std::size_t diverged = 0;
  std::size_t failed = 0;
  double top1_mean = MetricRow::kNone, top1_std = MetricRow::kNone;
  double drift_mean = MetricRow::kNone, drift_std = MetricRow::kNone;

  std::string status() const { return diverged ? "diverged" : failed ? "failed" : "ok"; }
};

inline std::vector<SweepRow> aggregate_sweep(const std::vector<double>& values, const std::vector<SweepCell>& cells) {
  std::vector<SweepRow> rows;
  for (double v : values) {
    SweepRow row;
    row.value = v;
    std::vector<double> acc, drift;
    for (const auto& c : cells) {
      if (c.value != v) continue;
      ++row.runs;
      row.diverged += c.diverged;
      row.failed += c.failed;
      if (c.diverged || c.failed) continue;
      acc.push_back(c.top1);
      if (!std::isnan(c.drift)) drift.push_back(c.drift);
    }
    if (!row.diverged && !row.failed) std::tie(row.top1_mean, row.top1_std) = mean_std(acc);
    std::tie(row.drift_mean, row.drift_std) = mean_std(drift);
    rows.push_back(row);
  }
  return rows;
}

inline constexpr const char* kSweepHeader =
    "param,value,runs,diverged,failed,status,top1_mean,top1_std,drift_mean,drift_std";

inline std::string sweep_csv(SweepSpec::Param param, const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << kSweepHeader << '\n';
  for (const auto& r : rows)
    os << to_string(param) << ',' << format_number(r.value) << ',' << r.runs << ',' << r.diverged << ',' << r.failed
       << ',' << r.status() << ',' << format_number(r.top1_mean) << ',' << format_number(r.top1_std) << ','
       << format_number(r.drift_mean) << ',' << format_number(r.drift_std) << '\n';
  return os.str();
}

/// Accuracy (top panel) and teacher drift (bottom panel) against the swept value, mean +- std.
inline std::string sweep_svg(SweepSpec::Param param, const std::vector<SweepRow>& rows) {
  const double W = 640, H = 520, left = 70, right = 20, top = 30, panel = 190, gap = 60;
  bool logx = param == SweepSpec::Param::alpha && rows.size() > 1;
  for (const auto& r : rows) logx = logx && r.value > 0;
  auto xv = [&](double v) { return logx ? std::log10(v) : v; };
  double xmin = 1e300, xmax = -1e300;
  for (const auto& r : rows) {
    xmin = std::min(xmin, xv(r.value));
    xmax = std::max(xmax, xv(r.value));
  }
  if (xmax == xmin) {
    xmin -= 1;
    xmax += 1;
  }
  auto px = [&](double v) { return left + (xv(v) - xmin) / (xmax - xmin) * (W - left - right); };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  auto draw_panel = [&](double y0, const std::string& title, auto mean_of, auto std_of, const char* colour) {
    double lo = 1e300, hi = -1e300;
    for (const auto& r : rows) {
      const double m = mean_of(r), s = std_of(r);
      if (std::isnan(m)) continue;
      lo = std::min(lo, m - (std::isnan(s) ? 0 : s));
      hi = std::max(hi, m + (std::isnan(s) ? 0 : s));
    }
    if (lo > hi) {
      lo = 0;
      hi = 1;
    }
    if (hi - lo < 1e-12) {
      lo -= 0.5;
      hi += 0.5;
    }
    const double pad = 0.08 * (hi - lo);
    lo -= pad;
    hi += pad;
    auto py = [&](double v) { return y0 + panel - (v - lo) / (hi - lo) * panel; };
    os << "<rect x=\"" << left << "\" y=\"" << y0 << "\" width=\"" << W - left - right << "\" height=\"" << panel
       << "\" fill=\"none\" stroke=\"#444\"/>\n";
    os << "<text x=\"" << left << "\" y=\"" << y0 - 8 << "\">" << title << "</text>\n";
    for (int t = 0; t <= 4; ++t) {
      const double v = lo + (hi - lo) * t / 4.0;
      os << "<text x=\"" << left - 6 << "\" y=\"" << py(v) + 4 << "\" text-anchor=\"end\">" << format_number(std::round(v * 1000) / 1000)
         << "</text>\n";
    }
    std::string path;
    for (const auto& r : rows) {
      const double m = mean_of(r), s = std_of(r), x = px(r.value);
      if (std::isnan(m)) {
        os << "<text x=\"" << x << "\" y=\"" << y0 + panel - 6 << "\" text-anchor=\"middle\" fill=\"#c00\">"
           << r.status() << "</text>\n";
        continue;
      }
      path += (path.empty() ? "M" : " L") + format_number(x) + "," + format_number(py(m));
      if (!std::isnan(s) && s > 0)
        os << "<line x1=\"" << x << "\" y1=\"" << py(m - s) << "\" x2=\"" << x << "\" y2=\"" << py(m + s)
           << "\" stroke=\"" << colour << "\"/>\n";
      os << "<circle cx=\"" << x << "\" cy=\"" << py(m) << "\" r=\"3.5\" fill=\"" << colour << "\"/>\n";
    }
    if (!path.empty()) os << "<path d=\"" << path << "\" fill=\"none\" stroke=\"" << colour << "\"/>\n";
  };
  draw_panel(top, "student top-1 (%), mean +- std", [](const SweepRow& r) { return r.top1_mean; },
             [](const SweepRow& r) { return r.top1_std; }, "#1f5fa8");
  draw_panel(top + panel + gap, "final teacher drift (RMS)", [](const SweepRow& r) { return r.drift_mean; },
             [](const SweepRow& r) { return r.drift_std; }, "#b5561b");
  const double base = top + 2 * panel + gap;
  for (const auto& r : rows)
    os << "<text x=\"" << px(r.value) << "\" y=\"" << base + 18 << "\" text-anchor=\"middle\">" << format_number(r.value)
       << "</text>\n";
  os << "<text x=\"" << (W + left - right) / 2 << "\" y=\"" << base + 38 << "\" text-anchor=\"middle\">"
     << to_string(param) << (logx ? " (log scale)" : "") << "</text>\n</svg>\n";
  return os.str();
}

struct SweepResult {
  std::vector<SweepCell> cells;
  std::vector<SweepRow> rows;
};

inline std::string cell_dir_name(SweepSpec::Param p, double v) { return std::string(to_string(p)) + "=" + format_number(v); }

/// Runs every (value, seed) cell; a failing cell is recorded and never stops the others.
inline SweepResult run_sweep(const SweepSpec& spec, const fs::path& out, bool deterministic) {
  spec.validate();
  fs::create_directories(out);
  const auto ds = load_dataset<double>(spec.base.dataset);
  std::vector<SweepCell> cells;
  for (double v : spec.values)
    for (auto s : spec.seeds) {
      SweepCell c;
      c.value = v;
      c.seed = s;
      cells.push_back(std::move(c));
    }

  std::atomic<std::size_t> next{0};
  std::mutex log_mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      auto& c = cells[i];
      const auto dir = out / "cells" / cell_dir_name(spec.param, c.value) / ("seed=" + std::to_string(c.seed));
      try {
        auto cfg = sweep_cell_config(spec, c.value, c.seed);
        cfg.deterministic = deterministic;
        cfg.out_dir = dir.string();
        const auto res = run_train(cfg, ds, dir);
        if (res.diverged) {
          c.diverged = true;
          c.error = res.error;
        } else {
          c.top1 = res.record.student_top1;
          if (!res.record.drift.empty()) c.drift = res.record.drift.back();
        }
      } catch (const std::exception& e) {
        c.failed = true;
        c.error = e.what();
      }
      std::lock_guard lock(log_mu);
      std::cerr << "[" << cell_dir_name(spec.param, c.value) << " seed=" << c.seed << "] "
                << (c.diverged ? "diverged: " + c.error
                               : c.failed ? "failed: " + c.error : "top-1 " + fixed(c.top1) + "%")
                << '\n';
    }
  };
  const auto n_threads = std::min<std::size_t>(static_cast<std::size_t>(spec.parallel), cells.size());
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  SweepResult res{cells, aggregate_sweep(spec.values, cells)};
  write_text(out / "sweep.csv", sweep_csv(spec.param, res.rows));
  std::ostringstream runs;
  runs << "param,value,seed,status,top1,drift\n";
  for (const auto& c : cells)
    runs << to_string(spec.param) << ',' << format_number(c.value) << ',' << c.seed << ','
         << (c.diverged ? "diverged" : c.failed ? "failed" : "ok") << ',' << format_number(c.top1) << ','
         << format_number(c.drift) << '\n';
  write_text(out / "sweep_runs.csv", runs.str());
  write_text(out / "sweep.svg", sweep_svg(spec.param, res.rows));
  return res;
}

inline int cmd_sweep(const CliOptions& opt) {
  auto spec = parse_sweep_config(cfg::read_json_file(opt.config));
  if (opt.seed) spec.seeds = {*opt.seed};
  if (!opt.out.empty()) spec.out_dir = opt.out;
  if (spec.out_dir.empty()) throw ConfigError("out: no output directory (use --out)");
  const auto res = run_sweep(spec, spec.out_dir, opt.deterministic);
  for (const auto& r : res.rows) {
    std::cout << to_string(spec.param) << '=' << format_number(r.value) << ": ";
    if (r.status() != "ok")
      std::cout << r.status() << " (" << r.diverged + r.failed << '/' << r.runs << " runs)";
    else
      std::cout << fixed(r.top1_mean) << " +- " << fixed(r.top1_std) << '%';
    if (!std::isnan(r.drift_mean)) std::cout << ", drift " << format_number(r.drift_mean);
    std::cout << '\n';
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------------------------
// Reports.

struct RunSummary {
  fs::path dir;
  std::string mode, scenario, hyper, status;
  std::uint64_t seed = 0;
  double top1 = MetricRow::kNone;
  json params;
};

/// Reads a run directory; the final accuracy comes from the last test row of metrics.csv.
inline RunSummary read_run(const fs::path& dir) {
  std::ifstream in(dir / "summary.json");
  if (!in) throw IngestionError(dir.string() + ": no summary.json");
  json s;
  try {
    s = json::parse(in);
  } catch (const json::exception& e) {
    throw IngestionError((dir / "summary.json").string() + ": " + e.what());
  }
  RunSummary r;
  r.dir = dir;
  r.mode = s.value("mode", "");
  r.scenario = s.value("scenario", "");
  r.hyper = s.value("hyper", "");
  r.status = s.value("status", "");
  r.seed = s.value("seed", std::uint64_t{0});
  r.params = s.value("params", json::object());
  if (r.status == "ok") {
    for (const auto& row : read_metrics_csv(dir / "metrics.csv"))
      if (row.split == "test") r.top1 = row.top1;
    if (std::isnan(r.top1)) throw IngestionError(dir.string() + ": metrics.csv has no test rows");
  }
  return r;
}

inline std::vector<fs::path> find_runs(const fs::path& root) {
  if (!fs::exists(root)) throw IngestionError("report: no such directory: " + root.string());
  std::vector<fs::path> out;
  if (fs::exists(root / "summary.json")) return {root};
  if (fs::is_directory(root))
    for (const auto& e : fs::recursive_directory_iterator(root))
      if (e.is_regular_file() && e.path().filename() == "summary.json") out.push_back(e.path().parent_path());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw IngestionError("report: no completed runs under " + root.string());
  return out;
}

struct ReportRow {
  std::string scenario, mode, hyper;
  std::size_t runs = 0, diverged = 0;
  double mean = MetricRow::kNone, std = MetricRow::kNone;
  json params;
};

inline std::vector<ReportRow> build_report(const std::vector<RunSummary>& runs) {
  std::map<std::tuple<std::string, std::string, std::string>, std::vector<const RunSummary*>> groups;
  for (const auto& r : runs) groups[{r.scenario, r.mode, r.hyper}].push_back(&r);
  std::vector<ReportRow> rows;
  for (const auto& [key, members] : groups) {
    ReportRow row;
    std::tie(row.scenario, row.mode, row.hyper) = key;
    std::vector<double> acc;
    for (const auto* m : members) {
      ++row.runs;
      if (m->status != "ok") {
        ++row.diverged;
        continue;
      }
      acc.push_back(m->top1);
    }
    std::tie(row.mean, row.std) = mean_std(acc);
    row.params = members.front()->params;
    rows.push_back(std::move(row));
  }
  return rows;
}

inline constexpr const char* kReportHeader =
    "scenario,mode,hyper,runs,diverged,top1_mean,top1_std,teacher_params,classifier_params,student_params,"
    "projector_params,increase_percent";

inline std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + '"';
}

inline std::string report_csv(const std::vector<ReportRow>& rows) {
  std::ostringstream os;
  os << kReportHeader << '\n';
  for (const auto& r : rows) {
    auto p = [&](const char* k) { return r.params.contains(k) ? r.params.at(k).dump() : std::string(); };
    os << csv_quote(r.scenario) << ',' << r.mode << ',' << csv_quote(r.hyper) << ',' << r.runs << ',' << r.diverged
       << ',' << format_number(r.mean) << ',' << format_number(r.std) << ',' << p("teacher") << ',' << p("classifier")
       << ',' << p("student") << ',' << p("projector") << ','
       << (r.params.contains("increase_percent") ? format_number(r.params.at("increase_percent").get<double>()) : "")
       << '\n';
  }
  return os.str();
}

inline std::string report_text(const std::vector<ReportRow>& rows) {
  std::ostringstream os;
  std::string current;
  for (const auto& r : rows) {
    if (r.scenario != current) {
      current = r.scenario;
      os << "\n== " << current << '\n';
      char head[160];
      std::snprintf(head, sizeof head, "%-20s %-34s %5s %18s %9s %9s %9s\n", "mode", "hyper", "runs", "top-1 (%)",
                    "student", "projector", "incr(%)");
      os << head;
    }
    std::string acc = std::isnan(r.mean) ? "diverged" : fixed(r.mean) + " +- " + fixed(r.std);
    if (r.diverged && !std::isnan(r.mean)) acc += " *";
    const auto num = [&](const char* k) {
      return r.params.contains(k) ? std::to_string(r.params.at(k).get<std::size_t>()) : std::string("-");
    };
    const std::string incr =
        r.params.value("teacher", 0) > 0 ? fixed(r.params.value("increase_percent", 0.0)) : std::string("-");
    char line[256];
    std::snprintf(line, sizeof line, "%-20s %-34s %5zu %18s %9s %9s %9s\n", r.mode.c_str(), r.hyper.c_str(), r.runs,
                  acc.c_str(), num("student").c_str(), num("projector").c_str(), incr.c_str());
    os << line;
  }
  return os.str();
}

inline int cmd_report(const CliOptions& opt) {
  if (opt.inputs.empty()) throw ConfigError("report: at least one run directory is required");
  std::vector<RunSummary> runs;
  for (const auto& in : opt.inputs)
    for (const auto& dir : find_runs(in)) runs.push_back(read_run(dir));
  std::vector<std::string> scenarios;
  for (const auto& r : runs)
    if (std::find(scenarios.begin(), scenarios.end(), r.scenario) == scenarios.end()) scenarios.push_back(r.scenario);
  if (scenarios.size() > 1)
    warn("report mixes " + std::to_string(scenarios.size()) + " incompatible scenarios; each is grouped separately");
  const auto rows = build_report(runs);
  const auto text = report_text(rows);
  std::cout << text;
  if (!opt.out.empty()) {
    fs::create_directories(opt.out);
    write_text(fs::path(opt.out) / "report.txt", text);
    write_text(fs::path(opt.out) / "report.csv", report_csv(rows));
  }
  return kExitOk;
}

/// Maps library errors onto exit codes and prints the diagnostic.
template <class F>
int guarded(F&& body) {
  try {
    return body();
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitDiverged;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
}

}  // namespace atsc
