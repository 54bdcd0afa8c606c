#pragma once

// Command-line front end:
//
//   sr2seg <command> [--config PATH] [--seed N] [--out DIR] [key=value ...]
//
// commands: degrade, synth, train, eval, report, sweep. Exit status 0 on
// success, 2 on usage or config errors, 1 on runtime failures. Each command
// stages its output in `<out>.partial` and renames it into place when done;
// the finished directory holds run.json (command, arguments, config
// fingerprint, seed, version, start time) and artifacts.txt (every file
// written, relative to the output directory).

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sr2seg/config.hpp"
#include "sr2seg/dataset.hpp"
#include "sr2seg/report.hpp"
#include "sr2seg/synth.hpp"
#include "sr2seg/trainer.hpp"

namespace sr2seg {

inline constexpr const char* kVersion = "0.3.0";
inline constexpr const char* kDataRootEnv = "SRSEG_DATA_ROOT";

/// Predefined loss-weight grid materialized by `sweep`.
inline const std::vector<double> kSweepAlphas{0.001, 0.01, 0.1, 1};
inline const std::vector<double> kSweepBetas{1, 10, 100, 1000, 10000, 100000};

namespace cli {

namespace fs = std::filesystem;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Output directory written under `<final>.partial`, renamed on commit.
class StagedDir {
 public:
  StagedDir(fs::path final_dir, bool keep_partial = false) : final_(std::move(final_dir)) {
    if (final_.empty()) throw UsageError("empty output directory");
    partial_ = final_;
    partial_ += ".partial";
    if (!keep_partial && fs::exists(partial_)) fs::remove_all(partial_);
    fs::create_directories(partial_);
  }
  const fs::path& path() const { return partial_; }
  const fs::path& final_path() const { return final_; }

  void record(const fs::path& p) {
    fs::path rel = p.lexically_relative(partial_);
    if (rel.empty() || *rel.begin() == "..") rel = p;
    artifacts_.push_back(rel.generic_string());
  }
  void record_all(const std::vector<fs::path>& ps) {
    for (const auto& p : ps) record(p);
  }

  void commit(const nlohmann::json& run_meta) {
    write_text_file(partial_ / "run.json", run_meta.dump(2) + "\n");
    record(partial_ / "run.json");
    std::sort(artifacts_.begin(), artifacts_.end());
    artifacts_.erase(std::unique(artifacts_.begin(), artifacts_.end()), artifacts_.end());
    std::string list;
    for (const auto& a : artifacts_) list += a + "\n";
    list += "artifacts.txt\n";
    write_text_file(partial_ / "artifacts.txt", list);
    if (fs::exists(final_)) fs::remove_all(final_);
    fs::rename(partial_, final_);
  }

 private:
  fs::path final_, partial_;
  std::vector<std::string> artifacts_;
};

inline std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline nlohmann::json run_meta(const std::string& command, const std::vector<std::string>& args) {
  nlohmann::json j;
  j["command"] = command;
  j["args"] = args;
  j["version"] = kVersion;
  j["started"] = utc_now();
  return j;
}

/// config file < data-root environment variable < command-line key=value.
inline RunConfig build_config(const std::optional<std::string>& path, const std::vector<std::string>& overrides) {
  RunConfig cfg = path ? load_config_file(*path) : RunConfig{};
  if (const char* env = std::getenv(kDataRootEnv); env && *env) cfg.data.root = env;
  apply_overrides(cfg, overrides);
  return cfg;
}

inline DatasetSplits load_for(const RunConfig& cfg) {
  return load_dataset(cfg.data.root, cfg.data.dataset, cfg.data.degradation, cfg.data.tile);
}

inline void save_sample_files(const fs::path& dir, const DatasetManifest& m, StagedDir& stage) {
  for (const auto& s : m.samples) {
    const auto img = dir / "images" / (s.source_id + ".png");
    const auto lab = dir / "labels" / (s.source_id + ".png");
    save_image_png(img, s.hr);
    save_label_ids_png(lab, s.labels);
    stage.record(img);
    stage.record(lab);
  }
}

struct Args {
  std::vector<std::string> raw;
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::vector<std::string> overrides;
  // synth
  std::size_t n = 16, n_test = 0, classes = 3, tile = 96;
  int factor = 4;
  // train
  std::optional<std::string> mode, resume;
  std::size_t panels = 4;
  // eval
  std::string checkpoint = "last", run = "run";
  // report
  std::vector<std::string> runs;
};

inline int cmd_degrade(const Args& a, std::ostream& out) {
  RunConfig cfg = build_config(a.config, a.overrides);
  const DatasetSplits d = load_for(cfg);
  StagedDir stage(a.out.value_or("cache"));
  for (const auto* m : {&d.train, &d.test}) {
    stage.record_all(write_degraded_cache(stage.path() / to_string(m->split), *m));
    const auto manifest = stage.path() / (std::string(to_string(m->split)) + "_manifest.tsv");
    write_manifest_tsv(manifest, *m);
    stage.record(manifest);
  }
  auto meta = run_meta("degrade", a.raw);
  meta["fingerprint"] = cfg.fingerprint();
  meta["dataset"] = cfg.data.dataset;
  meta["factor"] = cfg.data.degradation.factor;
  stage.commit(meta);
  out << "degraded " << d.train.samples.size() << " train and " << d.test.samples.size() << " test tiles at x"
      << cfg.data.degradation.factor << " into " << stage.final_path().string() << "\n";
  return 0;
}

inline int cmd_synth(const Args& a, std::ostream& out) {
  const std::uint64_t seed = a.seed.value_or(0);
  DegradationSpec spec;
  spec.factor = a.factor;
  const DatasetSplits d = synth_splits(seed, a.n, a.n_test, a.classes, a.tile, spec);
  StagedDir stage(a.out.value_or("data/synthetic"));
  save_sample_files(stage.path() / "train", d.train, stage);
  if (a.n_test) save_sample_files(stage.path() / "test", d.test, stage);
  write_text_file(stage.path() / "classes.txt", std::to_string(a.classes) + "\n");
  stage.record(stage.path() / "classes.txt");
  for (const auto* m : {&d.train, &d.test}) {
    const auto manifest = stage.path() / (std::string(to_string(m->split)) + "_manifest.tsv");
    DatasetManifest rel = *m;
    for (auto& s : rel.samples) {
      s.hr_path = std::string(to_string(m->split)) + "/images/" + s.source_id + ".png";
      s.label_path = std::string(to_string(m->split)) + "/labels/" + s.source_id + ".png";
    }
    write_manifest_tsv(manifest, rel);
    stage.record(manifest);
  }
  auto meta = run_meta("synth", a.raw);
  meta["seed"] = seed;
  meta["classes"] = a.classes;
  meta["tile"] = a.tile;
  meta["factor"] = a.factor;
  meta["train_samples"] = d.train.samples.size();
  meta["test_samples"] = a.n_test;
  stage.commit(meta);
  out << "manifest with " << d.train.samples.size() << " samples (" << a.n_test << " test) written to "
      << stage.final_path().string() << "\n";
  return 0;
}

inline int cmd_train(const Args& a, std::ostream& out) {
  RunConfig cfg = build_config(a.config, a.overrides);
  if (a.mode) cfg.set("mode", *a.mode);
  if (a.seed) cfg.train.seed = *a.seed;
  cfg.validate();
  const DatasetSplits d = load_for(cfg);
  const fs::path final_dir = a.out.value_or("run");
  fs::path partial = final_dir;
  partial += ".partial";
  std::optional<fs::path> resume;
  if (a.resume) resume = fs::absolute(*a.resume);
  // Resuming from a checkpoint inside an interrupted staging directory keeps
  // that directory (and its log) instead of wiping it.
  const bool keep = resume && fs::exists(partial) &&
                    resume->lexically_normal().string().rfind(fs::absolute(partial).lexically_normal().string(), 0) == 0;
  StagedDir stage(final_dir, keep);

  ExperimentOptions opt;
  opt.out_dir = stage.path();
  opt.resume_from = resume;
  opt.panel_count = a.panels;
  opt.on_epoch = [&](const EpochRecord& e) {
    out << "epoch " << e.epoch + 1 << "/" << cfg.train.epochs << " l1=" << e.l1 << " ce=" << e.ce
        << " total=" << e.total << " lr=" << e.lr;
    if (e.skipped) out << " skipped=" << e.skipped;
    out << "\n";
  };
  ExperimentResult res = run_experiment<float>(d.train, d.test, cfg, opt);
  stage.record_all(res.artifacts);
  for (const auto& e : fs::directory_iterator(stage.path() / "checkpoints")) stage.record(e.path());

  std::string hist = "epoch,l1,ce,total,lr,skipped\n";
  for (const auto& e : res.history)
    hist += std::to_string(e.epoch) + "," + detail::fmt_g(e.l1) + "," + detail::fmt_g(e.ce) + "," +
            detail::fmt_g(e.total) + "," + detail::fmt_g(e.lr) + "," + std::to_string(e.skipped) + "\n";
  write_text_file(stage.path() / "history.csv", hist);
  stage.record(stage.path() / "history.csv");
  write_text_file(stage.path() / "config.cfg", cfg.to_text());
  stage.record(stage.path() / "config.cfg");
  if (!res.incidents.empty()) {
    std::string inc;
    for (const auto& s : res.incidents) inc += s + "\n";
    write_text_file(stage.path() / "incidents.log", inc);
    stage.record(stage.path() / "incidents.log");
  }
  if (res.evaluation) {
    stage.record_all(emit_evaluation(stage.path() / "eval", *res.evaluation));
    out << report_table({res.evaluation->report});
  }
  auto meta = run_meta("train", a.raw);
  meta["fingerprint"] = cfg.fingerprint();
  meta["seed"] = cfg.train.seed;
  meta["mode"] = to_string(cfg.train.mode);
  meta["epochs"] = cfg.train.epochs;
  if (resume) meta["resumed_from"] = resume->string();
  stage.commit(meta);
  return 0;
}

inline fs::path resolve_checkpoint(const Args& a) {
  if (a.checkpoint == "last") return fs::path(a.run) / "checkpoints" / "last.ckpt";
  return a.checkpoint;
}

inline int cmd_eval(const Args& a, std::ostream& out) {
  const fs::path ckpath = resolve_checkpoint(a);
  const Checkpoint ck = Checkpoint::load(ckpath);
  RunConfig cfg;
  apply_config_text(cfg, ck.get_text("config"), ckpath.string());
  if (a.config) apply_config_text(cfg, [&] {
      std::ifstream in(*a.config);
      if (!in) throw ConfigError("cannot read config file " + *a.config);
      std::stringstream ss;
      ss << in.rdbuf();
      return ss.str();
    }(), *a.config);
  if (const char* env = std::getenv(kDataRootEnv); env && *env) cfg.data.root = env;
  apply_overrides(cfg, a.overrides);
  if (cfg.fingerprint() != ck.meta("fingerprint"))
    throw ConfigError("eval overrides may only change data.root; the config no longer matches the checkpoint");
  const DatasetSplits d = load_for(cfg);
  if (d.test.samples.empty()) throw std::runtime_error("dataset has no test samples");
  JointTrainer<float> trainer(cfg.train, cfg.sr, resolve_classes(cfg, d.test).seg);
  trainer.load_state(ck);
  Evaluation ev = trainer.evaluate(d.test, a.panels);
  ev.report.metadata["fingerprint"] = cfg.fingerprint();
  StagedDir stage(a.out.value_or((fs::path(a.run) / "eval").string()));
  stage.record_all(emit_evaluation(stage.path(), ev));
  auto meta = run_meta("eval", a.raw);
  meta["checkpoint"] = ckpath.string();
  meta["fingerprint"] = cfg.fingerprint();
  meta["seed"] = cfg.train.seed;
  stage.commit(meta);
  out << report_table({ev.report});
  return 0;
}

inline fs::path find_metrics(const fs::path& run) {
  for (const auto& cand : {run, run / "eval" / "metrics.json", run / "metrics.json"})
    if (fs::is_regular_file(cand)) return cand;
  throw std::runtime_error("no metrics.json found for run " + run.string());
}

inline int cmd_report(const Args& a, std::ostream& out) {
  if (a.runs.empty()) throw UsageError("report needs --runs");
  std::vector<MetricsReport> reports;
  for (const auto& r : a.runs) reports.push_back(load_report(find_metrics(r)));
  const std::string table = report_table(reports);  // validates before anything is written
  StagedDir stage(a.out.value_or("report"));
  stage.record_all(emit_report(stage.path(), reports));
  auto meta = run_meta("report", a.raw);
  meta["runs"] = a.runs;
  stage.commit(meta);
  out << table;
  return 0;
}

inline int cmd_sweep(const Args& a, std::ostream& out) {
  RunConfig base = build_config(a.config, a.overrides);
  if (a.seed) base.train.seed = *a.seed;
  base.validate();
  StagedDir stage(a.out.value_or("sweep"));
  std::string plan = "name\talpha\tbeta\tconfig\n";
  for (double alpha : kSweepAlphas)
    for (double beta : kSweepBetas) {
      RunConfig c = base;
      c.train.mode = Mode::end2end;
      c.train.weights = {alpha, beta};
      const std::string name = "alpha" + detail::fmt_g(alpha) + "_beta" + detail::fmt_g(beta);
      const auto path = stage.path() / (name + ".cfg");
      write_text_file(path, c.to_text());
      stage.record(path);
      plan += name + "\t" + detail::fmt_g(alpha) + "\t" + detail::fmt_g(beta) + "\t" + name + ".cfg\n";
    }
  write_text_file(stage.path() / "sweep.tsv", plan);
  stage.record(stage.path() / "sweep.tsv");
  auto meta = run_meta("sweep", a.raw);
  meta["fingerprint"] = base.fingerprint();
  meta["children"] = kSweepAlphas.size() * kSweepBetas.size();
  stage.commit(meta);
  out << "wrote " << kSweepAlphas.size() * kSweepBetas.size() << " child configs to " << stage.final_path().string()
      << " (not launched)\n";
  return 0;
}

}  // namespace cli

/// Parses and runs one command. Never throws; returns the exit status.
inline int cmd_dispatch(const std::vector<std::string>& argv, std::ostream& out = std::cout,
                        std::ostream& err = std::cerr) {
  using namespace cli;
  Args a;
  a.raw = argv;
  CLI::App app{"super-resolution + segmentation training tool", "sr2seg"};
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", kVersion);

  auto kv_check = [](const std::string& s) {
    return s.find('=') == std::string::npos ? std::string("expected key=value, got '" + s + "'") : std::string();
  };
  auto common = [&](CLI::App* sub, bool with_config, bool with_overrides) {
    if (with_config) sub->add_option("--config", a.config, "run config file (key = value lines)")->check(CLI::ExistingFile);
    sub->add_option("--seed", a.seed, "random seed");
    sub->add_option("--out", a.out, "output directory");
    if (with_overrides) sub->add_option("overrides", a.overrides, "config overrides key=value")->check(kv_check);
  };

  auto* degrade = app.add_subcommand("degrade", "tile a dataset and write its bicubic LR cache");
  common(degrade, true, true);
  auto* synth = app.add_subcommand("synth", "generate a synthetic mosaic dataset");
  common(synth, false, false);
  synth->add_option("--n", a.n, "training samples")->check(CLI::PositiveNumber);
  synth->add_option("--n-test", a.n_test, "test samples");
  synth->add_option("--classes", a.classes, "number of classes")->check(CLI::Range(2, 254));
  synth->add_option("--tile", a.tile, "tile size in pixels")->check(CLI::PositiveNumber);
  synth->add_option("--factor", a.factor, "degradation factor")->check(CLI::IsMember({2, 4, 8}));
  auto* train = app.add_subcommand("train", "train in one mode and evaluate on the test split");
  common(train, true, true);
  train->add_option("--mode", a.mode, "lr, hr or end2end");
  train->add_option("--resume", a.resume, "checkpoint to continue from")->check(CLI::ExistingFile);
  train->add_option("--panels", a.panels, "test tiles rendered as image panels");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  common(eval, true, true);
  eval->add_option("--checkpoint", a.checkpoint, "'last' or a checkpoint path");
  eval->add_option("--run", a.run, "run directory that 'last' refers to");
  eval->add_option("--panels", a.panels, "test tiles rendered as image panels");
  auto* report = app.add_subcommand("report", "comparison table across runs");
  common(report, false, false);
  report->add_option("--runs", a.runs, "run directories or metrics.json files")->required();
  auto* sweep = app.add_subcommand("sweep", "write the alpha/beta grid as child configs");
  common(sweep, true, true);

  std::vector<std::string> rev(argv.rbegin(), argv.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 2;
  }
  try {
    if (degrade->parsed()) return cmd_degrade(a, out);
    if (synth->parsed()) return cmd_synth(a, out);
    if (train->parsed()) return cmd_train(a, out);
    if (eval->parsed()) return cmd_eval(a, out);
    if (report->parsed()) return cmd_report(a, out);
    if (sweep->parsed()) return cmd_sweep(a, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace sr2seg
