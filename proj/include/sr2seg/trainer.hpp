#pragma once

// Joint training of the SR and segmentation networks under
//   total = alpha * L1(hr, SR(lr)) + beta * CE(labels, Seg(SR(lr)))
// plus the two segmentation-only baselines (bicubic-upsampled LR input and
// native HR input).

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sr2seg/checkpoint.hpp"
#include "sr2seg/config.hpp"
#include "sr2seg/dataset.hpp"
#include "sr2seg/dbpn.hpp"
#include "sr2seg/metrics.hpp"
#include "sr2seg/ops.hpp"
#include "sr2seg/optim.hpp"
#include "sr2seg/raster_io.hpp"
#include "sr2seg/resample.hpp"
#include "sr2seg/segnet.hpp"

namespace sr2seg {

struct JointLossVars {
  VarId total;
  VarId l1;
  VarId ce;
};

/// Combines the reconstruction and segmentation terms. `sr_out` is the raw
/// reconstruction, `scores` the segmentation output computed from it.
template <class T>
JointLossVars joint_loss(Tape<T>& tape, VarId sr_out, VarId hr_target, VarId scores,
                         const std::vector<std::int32_t>& labels, const SegConfig& seg, const LossWeights& w) {
  w.validate();
  VarId l1 = l1_loss(tape, sr_out, hr_target);
  VarId ce = cross_entropy(tape, scores, labels, seg.ignore_ids, seg.class_weights);
  VarId total = weighted_sum(tape, l1, static_cast<T>(w.alpha), ce, static_cast<T>(w.beta));
  return {total, l1, ce};
}

/// Step schedule: base_lr for the first half of the epochs, base_lr / decay after.
inline double lr_at_epoch(std::size_t epoch, const TrainConfig& cfg) {
  if (epoch >= cfg.epochs) throw std::out_of_range("epoch index beyond configured epochs");
  return 2 * epoch < cfg.epochs ? cfg.base_lr : cfg.base_lr / cfg.decay_factor;
}

struct StepRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double l1 = 0;
  double ce = 0;
  double total = 0;
  double lr = 0;
  double sr_grad_norm = 0;
  double seg_grad_norm = 0;
  bool skipped = false;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double l1 = 0, ce = 0, total = 0, lr = 0;
  std::size_t skipped = 0;
};

/// Visual comparison strip for one test tile.
struct PanelSet {
  std::string source_id;
  RasterImage hr, lr_upsampled, reconstruction;
  LabelMap truth, prediction;
};

struct Evaluation {
  MetricsReport report;
  std::vector<std::pair<std::string, LabelMap>> predictions;
  std::vector<PanelSet> panels;
};

template <class T>
class JointTrainer {
 public:
  JointTrainer(TrainConfig train, SRConfig sr_cfg, SegConfig seg_cfg) : cfg_(std::move(train)) {
    cfg_.validate();
    seg_ = std::make_unique<SegNet<T>>(std::move(seg_cfg), derive_seed(cfg_.seed, 2));
    seg_opt_ = Adam<T>(seg_->params(), cfg_.seg_optimizer);
    if (cfg_.mode == Mode::end2end) {
      sr_ = std::make_unique<Dbpn<T>>(sr_cfg, derive_seed(cfg_.seed, 1));
      sr_opt_ = Adam<T>(sr_->params(), cfg_.sr_optimizer);
    }
  }

  static std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream)};
    std::uint32_t out[2];
    seq.generate(out, out + 2);
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
  }

  const TrainConfig& config() const { return cfg_; }
  TrainConfig& mutable_config() { return cfg_; }
  bool has_sr() const { return static_cast<bool>(sr_); }
  Dbpn<T>& sr() {
    if (!sr_) throw std::logic_error("baseline trainers have no SR network");
    return *sr_;
  }
  SegNet<T>& seg() { return *seg_; }
  Adam<T>& seg_optimizer() { return seg_opt_; }
  Adam<T>& sr_optimizer() { return sr_opt_; }
  const std::vector<std::string>& incidents() const { return incidents_; }

  struct Forward {
    std::optional<SrOutput<T>> sr;
    VarId seg_input;
    VarId scores;
  };

  /// Records the mode's forward graph for one sample.
  Forward forward(Tape<T>& tape, const RasterSample& s) {
    Forward f;
    switch (cfg_.mode) {
      case Mode::end2end: {
        f.sr = sr_->forward(tape, tape.constant(s.lr.to_unit<T>()));
        f.seg_input = f.sr->clamped;
        break;
      }
      case Mode::lr_baseline:
        f.seg_input = tape.constant(bicubic_upsample(s.lr, s.hr.height(), s.hr.width()).to_unit<T>());
        break;
      case Mode::hr_baseline:
        f.seg_input = tape.constant(s.hr.to_unit<T>());
        break;
    }
    f.scores = seg_->forward(tape, f.seg_input);
    return f;
  }

  struct Losses {
    VarId total;
    std::optional<VarId> l1;
    VarId ce;
  };

  Losses losses(Tape<T>& tape, const Forward& f, const RasterSample& s) {
    const SegConfig& sc = seg_->config();
    if (cfg_.mode == Mode::end2end) {
      auto j = joint_loss(tape, f.sr->raw, tape.constant(s.hr.to_unit<T>()), f.scores, s.labels.ids(), sc, cfg_.weights);
      return {j.total, j.l1, j.ce};
    }
    VarId ce = cross_entropy(tape, f.scores, s.labels.ids(), sc.ignore_ids, sc.class_weights);
    return {ce, std::nullopt, ce};
  }

  /// Loss values without recording gradients.
  StepRecord evaluate_loss(const RasterSample& s) {
    Tape<T> tape(false);
    Forward f = forward(tape, s);
    Losses l = losses(tape, f, s);
    return record_values(tape, l);
  }

  /// Zeroes gradients, then runs forward and backward; no parameter update.
  StepRecord compute_gradients(const RasterSample& s) {
    if (sr_) sr_->params().zero_grad();
    seg_->params().zero_grad();
    Tape<T> tape(true);
    Forward f = forward(tape, s);
    Losses l = losses(tape, f, s);
    StepRecord r = record_values(tape, l);
    if (!std::isfinite(r.total)) return r;
    tape.backward(l.total);
    if (sr_) r.sr_grad_norm = sr_->params().grad_norm();
    r.seg_grad_norm = seg_->params().grad_norm();
    return r;
  }

  /// One optimizer update per network involved. Non-finite losses or
  /// gradients abort the step and restore the previous state.
  StepRecord train_step(const RasterSample& s, double lr) {
    StepRecord r = compute_gradients(s);
    r.lr = lr;
    const bool grads_ok = std::isfinite(r.total) && seg_->params().grads_finite() && (!sr_ || sr_->params().grads_finite());
    if (!grads_ok) return abort_step(r, s, "non-finite loss or gradient");
    auto seg_backup = snapshot(seg_->params(), seg_opt_);
    std::optional<Snapshot> sr_backup;
    if (sr_) sr_backup = snapshot(sr_->params(), sr_opt_);
    seg_opt_.step(seg_->params(), lr * cfg_.seg_optimizer.lr_scale);
    if (sr_) sr_opt_.step(sr_->params(), lr * cfg_.sr_optimizer.lr_scale);
    if (!seg_->params().values_finite() || (sr_ && !sr_->params().values_finite())) {
      restore(seg_->params(), seg_opt_, seg_backup);
      if (sr_) restore(sr_->params(), sr_opt_, *sr_backup);
      return abort_step(r, s, "non-finite parameters after update");
    }
    return r;
  }

  /// SR-only update on alpha * L1 (the reconstruction term alone). `lr` is
  /// used as given; lr_scale applies to joint steps only.
  StepRecord sr_step(const RasterSample& s, double lr) {
    Dbpn<T>& net = sr();
    net.params().zero_grad();
    Tape<T> tape(true);
    SrOutput<T> out = net.forward(tape, tape.constant(s.lr.to_unit<T>()));
    VarId l1 = l1_loss(tape, out.raw, tape.constant(s.hr.to_unit<T>()));
    VarId total = scale(tape, l1, static_cast<T>(cfg_.weights.alpha));
    tape.backward(total);
    StepRecord r;
    r.l1 = tape.value(l1).item();
    r.total = tape.value(total).item();
    r.lr = lr;
    r.sr_grad_norm = net.params().grad_norm();
    sr_opt_.step(net.params(), lr);
    return r;
  }

  /// Runs the frozen networks over a manifest; `panel_count` tiles also get
  /// image panels.
  Evaluation evaluate(const DatasetManifest& m, std::size_t panel_count = 0) {
    Evaluation ev;
    const std::size_t k = seg_->config().num_classes;
    ConfusionMatrix cm(k);
    std::set<std::int32_t> skip = m.excluded_classes;
    skip.insert(seg_->config().ignore_ids.begin(), seg_->config().ignore_ids.end());
    double psnr_sum = 0;
    std::size_t psnr_n = 0, identical_n = 0;
    for (const auto& s : m.samples) {
      Tape<T> tape(false);
      Forward f = forward(tape, s);
      LabelMap pred(s.labels.height(), s.labels.width(), k, SegNet<T>::predict(tape.value(f.scores)));
      pred.set_palette(s.labels.palette());
      cm.accumulate(pred.ids(), s.labels.ids(), skip);
      std::optional<RasterImage> recon;
      if (cfg_.mode != Mode::hr_baseline) {
        recon = RasterImage::from_unit(tape.value(f.seg_input));
        const Psnr p = psnr(*recon, s.hr);
        if (p.identical) {
          ++identical_n;
        } else {
          psnr_sum += p.db;
          ++psnr_n;
        }
      }
      if (ev.panels.size() < panel_count) {
        PanelSet ps;
        ps.source_id = s.source_id;
        ps.hr = s.hr;
        ps.lr_upsampled = bicubic_upsample(s.lr, s.hr.height(), s.hr.width());
        ps.reconstruction = recon ? *recon : s.hr;
        ps.truth = s.labels;
        ps.prediction = pred;
        ev.panels.push_back(std::move(ps));
      }
      ev.predictions.emplace_back(s.source_id, std::move(pred));
    }
    MetricsReport& r = ev.report;
    r.dataset = m.name;
    r.degradation = m.factor;
    r.method = method_label(cfg_.mode);
    if (cfg_.mode != Mode::hr_baseline && (psnr_n || identical_n))
      r.psnr = psnr_n ? Psnr{false, psnr_sum / static_cast<double>(psnr_n)} : Psnr{true, 0.0};
    r.confusion = cm;
    r.seg = compute_metrics(cm);
    r.class_names = m.class_names;
    r.excluded_classes = m.excluded_classes;
    r.metadata["mode"] = to_string(cfg_.mode);
    r.metadata["seed"] = std::to_string(cfg_.seed);
    r.metadata["test_samples"] = std::to_string(m.samples.size());
    return ev;
  }

  // --- checkpoint state -------------------------------------------------

  void save_state(Checkpoint& ck) const {
    ck.set_meta("mode", to_string(cfg_.mode));
    save_net(ck, "seg", seg_->params(), seg_opt_);
    if (sr_) save_net(ck, "sr", sr_->params(), sr_opt_);
  }

  void load_state(const Checkpoint& ck) {
    if (ck.meta("mode") != to_string(cfg_.mode))
      throw std::runtime_error("checkpoint mode " + ck.meta("mode") + " does not match trainer mode");
    load_net(ck, "seg", seg_->params(), seg_opt_);
    if (sr_) load_net(ck, "sr", sr_->params(), sr_opt_);
  }

 private:
  struct Snapshot {
    std::vector<Tensor<T>> values, m, v;
    std::uint64_t steps;
  };

  static Snapshot snapshot(const ParameterStore<T>& p, const Adam<T>& opt) {
    Snapshot s{{}, opt.first_moments(), opt.second_moments(), opt.steps()};
    for (const auto& prm : p) s.values.push_back(prm.value);
    return s;
  }
  static void restore(ParameterStore<T>& p, Adam<T>& opt, const Snapshot& s) {
    for (std::size_t i = 0; i < p.size(); ++i) p[i].value = s.values[i];
    opt.first_moments() = s.m;
    opt.second_moments() = s.v;
    opt.set_steps(s.steps);
  }

  StepRecord abort_step(StepRecord r, const RasterSample& s, const std::string& why) {
    r.skipped = true;
    incidents_.push_back("step skipped on " + s.source_id + ": " + why);
    return r;
  }

  StepRecord record_values(const Tape<T>& tape, const Losses& l) const {
    StepRecord r;
    r.total = tape.value(l.total).item();
    r.ce = tape.value(l.ce).item();
    r.l1 = l.l1 ? tape.value(*l.l1).item() : 0.0;
    return r;
  }

  static void save_net(Checkpoint& ck, const std::string& prefix, const ParameterStore<T>& p, const Adam<T>& opt) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      ck.put(prefix + "/" + p[i].name, p[i].value);
      ck.put("opt/" + prefix + "/m/" + p[i].name, opt.first_moments()[i]);
      ck.put("opt/" + prefix + "/v/" + p[i].name, opt.second_moments()[i]);
    }
    ck.set_meta("opt." + prefix + ".steps", std::to_string(opt.steps()));
  }

  static void load_net(const Checkpoint& ck, const std::string& prefix, ParameterStore<T>& p, Adam<T>& opt) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      auto load = [&](const std::string& name, Tensor<T>& dst) {
        Tensor<T> t = ck.get<T>(name);
        if (t.shape() != dst.shape())
          throw std::runtime_error("checkpoint tensor " + name + " has shape " + shape_str(t.shape()) +
                                   ", network expects " + shape_str(dst.shape()));
        dst = std::move(t);
      };
      load(prefix + "/" + p[i].name, p[i].value);
      load("opt/" + prefix + "/m/" + p[i].name, opt.first_moments()[i]);
      load("opt/" + prefix + "/v/" + p[i].name, opt.second_moments()[i]);
    }
    opt.set_steps(std::stoull(ck.meta("opt." + prefix + ".steps")));
  }

  TrainConfig cfg_;
  std::unique_ptr<Dbpn<T>> sr_;
  std::unique_ptr<SegNet<T>> seg_;
  Adam<T> sr_opt_, seg_opt_;
  std::vector<std::string> incidents_;
};

/// Fixed seeded shuffle of sample indices for one epoch.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x5348u};
  std::mt19937_64 rng(seq);
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  return order;
}

struct ExperimentOptions {
  std::optional<std::filesystem::path> out_dir;     // logs + checkpoints; nothing written if empty
  std::optional<std::filesystem::path> resume_from;  // checkpoint to continue from
  std::optional<std::size_t> stop_after_epochs;      // stop early (checkpoint kept) after this many epochs
  std::size_t panel_count = 0;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct ExperimentResult {
  std::optional<Evaluation> evaluation;  // absent when stopped early
  std::vector<EpochRecord> history;
  std::vector<StepRecord> steps;         // only the steps run in this call
  Checkpoint checkpoint;
  std::vector<std::filesystem::path> artifacts;
  std::vector<std::string> incidents;
};

inline RunConfig resolve_classes(RunConfig cfg, const DatasetManifest& m) {
  if (cfg.seg.num_classes == 0) cfg.seg.num_classes = m.num_classes;
  if (cfg.seg.num_classes != m.num_classes)
    throw ConfigError("seg.num_classes = " + std::to_string(cfg.seg.num_classes) + " but dataset has " +
                      std::to_string(m.num_classes) + " classes");
  cfg.seg.validate();
  return cfg;
}

namespace detail {

inline std::string fmt_g(double v) {
  std::ostringstream os;
  os << std::setprecision(9) << v;
  return os.str();
}

template <class T>
Checkpoint make_checkpoint(const JointTrainer<T>& trainer, const RunConfig& cfg, std::size_t epochs_done,
                           std::size_t global_step, const std::vector<EpochRecord>& history) {
  Checkpoint ck;
  ck.set_meta("format", "sr2seg");
  ck.set_meta("epoch", std::to_string(epochs_done));
  ck.set_meta("step", std::to_string(global_step));
  ck.set_meta("fingerprint", cfg.fingerprint());
  ck.set_meta("seed", std::to_string(cfg.train.seed));
  ck.set_meta("scalar", sizeof(T) == 4 ? "f32" : "f64");
  ck.put_text("config", cfg.to_text());
  trainer.save_state(ck);
  const std::size_t n = history.size();
  Tensor<double> l1(Shape{std::max<std::size_t>(n, 1)}), ce(l1.shape()), tot(l1.shape()), lr(l1.shape()),
      skipped(l1.shape());
  for (std::size_t i = 0; i < n; ++i) {
    l1[i] = history[i].l1;
    ce[i] = history[i].ce;
    tot[i] = history[i].total;
    lr[i] = history[i].lr;
    skipped[i] = static_cast<double>(history[i].skipped);
  }
  ck.set_meta("history_length", std::to_string(n));
  ck.put("history/l1", l1);
  ck.put("history/ce", ce);
  ck.put("history/total", tot);
  ck.put("history/lr", lr);
  ck.put("history/skipped", skipped);
  return ck;
}

inline std::vector<EpochRecord> read_history(const Checkpoint& ck) {
  const std::size_t n = std::stoull(ck.meta("history_length"));
  std::vector<EpochRecord> h(n);
  if (n == 0) return h;
  auto l1 = ck.get<double>("history/l1"), ce = ck.get<double>("history/ce"), tot = ck.get<double>("history/total"),
       lr = ck.get<double>("history/lr"), sk = ck.get<double>("history/skipped");
  for (std::size_t i = 0; i < n; ++i)
    h[i] = {i, l1[i], ce[i], tot[i], lr[i], static_cast<std::size_t>(sk[i])};
  return h;
}

}  // namespace detail

/// Full training loop: seeded per-epoch shuffle, one step per sample, per-step
/// log lines, periodic checkpoints, then evaluation on the test manifest.
template <class T = float>
ExperimentResult run_experiment(const DatasetManifest& train, const DatasetManifest& test, RunConfig cfg,
                                const ExperimentOptions& opt = {}) {
  if (train.samples.empty()) throw std::invalid_argument("run_experiment: empty training manifest");
  cfg = resolve_classes(std::move(cfg), train);
  cfg.validate();
  JointTrainer<T> trainer(cfg.train, cfg.sr, cfg.seg);
  ExperimentResult res;
  std::size_t start_epoch = 0, global_step = 0;
  if (opt.resume_from) {
    Checkpoint ck = Checkpoint::load(*opt.resume_from);
    if (ck.meta("fingerprint") != cfg.fingerprint())
      throw std::runtime_error("checkpoint " + opt.resume_from->string() + " was written for a different config");
    trainer.load_state(ck);
    start_epoch = std::stoull(ck.meta("epoch"));
    global_step = std::stoull(ck.meta("step"));
    res.history = detail::read_history(ck);
  }

  std::ofstream log;
  if (opt.out_dir) {
    std::filesystem::create_directories(*opt.out_dir / "checkpoints");
    const auto log_path = *opt.out_dir / "train.log";
    const bool fresh = !std::filesystem::exists(log_path);
    log.open(log_path, std::ios::app);
    if (!log) throw std::runtime_error("cannot open " + log_path.string());
    if (fresh) log << "epoch,step,l1,ce,total,lr\n";
    res.artifacts.push_back(log_path);
  }

  if (start_epoch == 0 && cfg.train.mode == Mode::end2end && cfg.train.sr_warmup_epochs) {
    std::ofstream wlog;
    if (opt.out_dir) {
      const auto p = *opt.out_dir / "warmup.log";
      wlog.open(p, std::ios::trunc);
      wlog << "epoch,step,l1,ce,total,lr\n";
      res.artifacts.push_back(p);
    }
    std::size_t wstep = 0;
    const double warmup_lr = cfg.train.sr_warmup_lr > 0 ? cfg.train.sr_warmup_lr : cfg.train.base_lr;
    for (std::size_t we = 0; we < cfg.train.sr_warmup_epochs; ++we)
      for (std::size_t idx : epoch_order(train.samples.size(), ~cfg.train.seed, we)) {
        const StepRecord r = trainer.sr_step(train.samples[idx], warmup_lr);
        if (wlog)
          wlog << we << ',' << wstep << ',' << detail::fmt_g(r.l1) << ",0," << detail::fmt_g(r.total) << ','
               << detail::fmt_g(r.lr) << '\n';
        ++wstep;
      }
    // The joint phase starts with fresh optimizer moments.
    trainer.sr_optimizer() = Adam<T>(trainer.sr().params(), cfg.train.sr_optimizer);
  }

  const std::size_t end_epoch =
      opt.stop_after_epochs ? std::min(cfg.train.epochs, *opt.stop_after_epochs) : cfg.train.epochs;
  for (std::size_t epoch = start_epoch; epoch < end_epoch; ++epoch) {
    const double lr = lr_at_epoch(epoch, cfg.train);
    EpochRecord er;
    er.epoch = epoch;
    er.lr = lr;
    std::size_t counted = 0;
    for (std::size_t idx : epoch_order(train.samples.size(), cfg.train.seed, epoch)) {
      StepRecord r = trainer.train_step(train.samples[idx], lr);
      r.epoch = epoch;
      r.step = global_step++;
      if (log)
        log << epoch << ',' << r.step << ',' << detail::fmt_g(r.l1) << ',' << detail::fmt_g(r.ce) << ','
            << detail::fmt_g(r.total) << ',' << detail::fmt_g(r.lr) << '\n';
      if (r.skipped) {
        ++er.skipped;
      } else {
        er.l1 += r.l1;
        er.ce += r.ce;
        er.total += r.total;
        ++counted;
      }
      res.steps.push_back(r);
    }
    if (counted) {
      er.l1 /= static_cast<double>(counted);
      er.ce /= static_cast<double>(counted);
      er.total /= static_cast<double>(counted);
    }
    res.history.push_back(er);
    if (opt.on_epoch) opt.on_epoch(er);
    const bool last = epoch + 1 == end_epoch;
    const bool periodic = cfg.train.checkpoint_every && (epoch + 1) % cfg.train.checkpoint_every == 0;
    if (opt.out_dir && (last || periodic)) {
      Checkpoint ck = detail::make_checkpoint(trainer, cfg, epoch + 1, global_step, res.history);
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%04zu.ckpt", epoch + 1);
      const auto p = *opt.out_dir / "checkpoints" / name;
      ck.save(p);
      ck.save(*opt.out_dir / "checkpoints" / "last.ckpt");
      res.artifacts.push_back(p);
    }
  }
  if (log) log.flush();
  res.checkpoint = detail::make_checkpoint(trainer, cfg, end_epoch, global_step, res.history);
  if (opt.out_dir) {
    const auto last = *opt.out_dir / "checkpoints" / "last.ckpt";
    if (!std::filesystem::exists(last)) res.checkpoint.save(last);
    res.artifacts.push_back(last);
  }
  res.incidents = trainer.incidents();
  if (end_epoch == cfg.train.epochs && !test.samples.empty()) {
    res.evaluation = trainer.evaluate(test, opt.panel_count);
    res.evaluation->report.metadata["fingerprint"] = cfg.fingerprint();
  }
  return res;
}

/// Rebuilds a trainer from a checkpoint written by run_experiment.
template <class T = float>
JointTrainer<T> trainer_from_checkpoint(const Checkpoint& ck, RunConfig* cfg_out = nullptr) {
  RunConfig cfg;
  apply_config_text(cfg, ck.get_text("config"), "checkpoint config");
  JointTrainer<T> trainer(cfg.train, cfg.sr, cfg.seg);
  trainer.load_state(ck);
  if (cfg_out) *cfg_out = cfg;
  return trainer;
}

}  // namespace sr2seg
