// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
// fails. Tolerances and run settings are fixed here, not taken from flags.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "sr2seg/sr2seg.hpp"

using namespace sr2seg;

namespace {

constexpr double kGradTol = 1e-4;
constexpr double kMetricTol = 1e-12;
constexpr double kPsnrTol = 1e-9;
constexpr double kResampleOracleTol = 1e-6;
constexpr double kLinearityTol = 1e-9;
constexpr double kOverfitLossDrop = 0.90;
constexpr double kOverfitAccuracy = 0.95;
constexpr std::size_t kOverfitMaxSteps = 200;

// Miniature networks shared by the training criteria.
const std::vector<std::string> kMiniNets{"sr.feat0=16", "sr.nr=8", "sr.stages=3", "seg.encoder_plan=2x16,2x32"};

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

std::string g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

Tensor<double> uniform(Shape s, std::mt19937_64& rng, double lo, double hi) {
  Tensor<double> t(std::move(s));
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t.vec()) v = d(rng);
  return t;
}

// 1. SR output geometry.
Outcome sr_shapes() {
  Outcome o;
  std::mt19937_64 rng(1);
  for (int r : {4, 8})
    for (std::size_t stages : {1, 3, 7}) {
      SRConfig c;
      c.factor = r;
      c.stages = stages;
      c.feat0 = 4;
      c.nr = 2;
      Dbpn<float> net(c, 7);
      const std::size_t lr = 480 / static_cast<std::size_t>(r);
      Tape<float> tape(false);
      const auto out = net.forward(tape, tape.constant(uniform({3, lr, lr}, rng, 0, 1).cast<float>()));
      const bool ok = tape.value(out.raw).shape() == Shape{3, 480, 480} && tape.value(out.clamped).shape() == Shape{3, 480, 480};
      o.require(ok, "r=" + std::to_string(r) + " T=" + std::to_string(stages));
      const auto geo = c.projection();
      o.require(geo.kernel == (r == 4 ? 8u : 12u) && geo.stride == static_cast<std::size_t>(r) && geo.padding == 2,
                "projection triple for r=" + std::to_string(r));
    }
  o.detail << "r in {4,8}, T in {1,3,7}: 3x(480/r)^2 -> 3x480x480";
  return o;
}

// 2. Finite-difference gradient checks in double precision.
Outcome gradients() {
  Outcome o;
  SRConfig sc;
  sc.factor = 4;
  sc.stages = 2;
  sc.feat0 = 8;
  sc.nr = 4;
  SegConfig gc;
  gc.num_classes = 3;
  gc.encoder_plan = {{1, 4}, {1, 8}};
  Dbpn<double> sr(sc, 21);
  SegNet<double> seg(gc, 22);
  // Centre the reconstruction in [0, 1] so the clamp is inactive and the
  // composite loss is differentiable at the probe point.
  for (auto& v : sr.params().at("recon.weight").value.vec()) v *= 0.05;
  for (auto& v : sr.params().at("recon.bias").value.vec()) v = 0.5;
  std::mt19937_64 rng(23);
  const auto lr = uniform({3, 4, 4}, rng, 0, 1), hr = uniform({3, 16, 16}, rng, 0, 1);
  std::vector<std::int32_t> labels(256);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<std::int32_t>(rng() % 3);
  {
    Tape<double> t(false);
    const auto& v = t.value(sr.forward(t, t.constant(lr)).raw);
    const auto [lo, hi] = std::minmax_element(v.vec().begin(), v.vec().end());
    o.require(*lo > 0 && *hi < 1, "probe point has saturated SR outputs");
  }
  double worst = 0;
  auto record = [&](const char* what, const testing::GradCheckResult& r) {
    o.require(r.max_rel_error < kGradTol, std::string(what) + " " + r.worst);
    o.require(r.any_nonzero, std::string(what) + " all gradients zero");
    worst = std::max(worst, r.max_rel_error);
  };
  const SegConfig& gcfg = seg.config();
  record("l1/sr", testing::check_gradients(sr.params(), [&](Tape<double>& t) {
           return l1_loss(t, sr.forward(t, t.constant(lr)).raw, t.constant(hr));
         }));
  record("ce/seg", testing::check_gradients(seg.params(), [&](Tape<double>& t) {
           return cross_entropy(t, seg.forward(t, t.constant(hr)), labels, gcfg.ignore_ids);
         }));
  auto joint = [&](Tape<double>& t) {
    const auto out = sr.forward(t, t.constant(lr));
    return joint_loss(t, out.raw, t.constant(hr), seg.forward(t, out.clamped), labels, gcfg, LossWeights{}).total;
  };
  record("joint/sr", testing::check_gradients(sr.params(), joint));
  record("joint/seg", testing::check_gradients(seg.params(), joint));
  o.detail << "max relative error " << g(worst) << " (tol " << g(kGradTol) << ")";
  return o;
}

RunConfig mini_config(Mode mode, std::size_t tile) {
  RunConfig c;
  apply_overrides(c, kMiniNets);
  apply_overrides(c, {"data.tile=" + std::to_string(tile), "factor=4", "checkpoint_every=0"});
  c.train.mode = mode;
  c.seg.num_classes = 3;
  return c;
}

// 3. Coupling between the two networks through the joint loss.
Outcome coupling() {
  Outcome o;
  DegradationSpec spec;
  const auto data = synth_splits(31, 1, 0, 3, 32, spec);
  const RasterSample& s = data.train.samples[0];

  RunConfig a = mini_config(Mode::end2end, 32);
  a.train.weights = {0, 1000};
  JointTrainer<double> seg_only(a.train, a.sr, a.seg);
  const StepRecord ra = seg_only.compute_gradients(s);
  o.require(ra.sr_grad_norm > 0, "alpha=0: SR gradient is zero");
  std::size_t touched = 0, tensors = 0;
  for (const auto& p : seg_only.sr().params()) {
    ++tensors;
    touched += std::any_of(p.grad.vec().begin(), p.grad.vec().end(), [](double v) { return v != 0; });
  }
  o.require(touched == tensors, "alpha=0: some SR tensors get no gradient");

  RunConfig b = mini_config(Mode::end2end, 32);
  b.train.weights = {0.1, 0};
  JointTrainer<double> joint(b.train, b.sr, b.seg), standalone(b.train, b.sr, b.seg);
  const StepRecord rb = joint.compute_gradients(s);
  o.require(rb.seg_grad_norm == 0.0, "beta=0: segmentation gradient is nonzero");
  joint.train_step(s, 1e-3);
  standalone.sr_step(s, 1e-3);
  bool equal = true;
  for (const auto& p : joint.sr().params()) equal = equal && p.value.vec() == standalone.sr().params().at(p.name).value.vec();
  o.require(equal, "beta=0: joint SR step differs from standalone L1 step");
  o.detail << "alpha=0 SR grad norm " << g(ra.sr_grad_norm) << " over " << touched << "/" << tensors
           << " tensors; beta=0 seg grad norm " << rb.seg_grad_norm << ", SR step bit-equal " << (equal ? "yes" : "no");
  return o;
}

// 4. Metrics against a brute-force pixel-list implementation.
Outcome metric_oracle() {
  Outcome o;
  std::mt19937_64 rng(41);
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t k = 2 + rng() % 5;
    ConfusionMatrix cm(k);
    for (std::size_t i = 0; i < k * k; ++i) cm.at(i / k, i % k) = rng() % 4 ? rng() % 9 : 0;
    if (cm.total() == 0) cm.at(rng() % k, rng() % k) = 1;
    const auto m = compute_metrics(cm);
    const auto b = oracle::brute_force_metrics(cm.counts(), k);
    worst = std::max({worst, std::abs(m.acc - b.acc), std::abs(m.norm_acc - b.norm_acc), std::abs(m.miou - b.miou)});
    if (m.kappa.has_value() != b.kappa.has_value()) {
      o.require(false, "kappa definedness differs at trial " + std::to_string(trial));
    } else if (m.kappa) {
      worst = std::max(worst, std::abs(*m.kappa - *b.kappa));
    }
  }
  o.require(worst <= kMetricTol, "oracle deviation " + g(worst));
  ConfusionMatrix cm(2);
  cm.at(0, 0) = 8;
  cm.at(0, 1) = 2;
  cm.at(1, 0) = 1;
  cm.at(1, 1) = 9;
  const auto m = compute_metrics(cm);
  const bool hand = std::abs(m.acc - 0.85) < kMetricTol && std::abs(m.norm_acc - 0.85) < kMetricTol &&
                    std::abs(m.miou - (8.0 / 11 + 9.0 / 12) / 2) < kMetricTol && m.kappa &&
                    std::abs(*m.kappa - 0.7) < kMetricTol;
  o.require(hand, "[[8,2],[1,9]] hand values");
  o.detail << "1000 matrices, max deviation " << g(worst) << "; [[8,2],[1,9]] -> acc 0.85, kappa " << g(m.kappa.value_or(-1));
  return o;
}

// 5. PSNR closed forms.
Outcome psnr_closed_forms() {
  Outcome o;
  std::mt19937_64 rng(51);
  RasterImage a(24, 20, 3);
  o.require(psnr(a, a).identical && psnr(a, a).str() == "identical", "identical images");
  double worst = 0;
  for (double delta : {1.0, 16.0, 255.0}) {
    RasterImage base(24, 20, 3), off(24, 20, 3);
    std::uniform_int_distribution<int> d(0, static_cast<int>(255 - delta));
    for (std::size_t i = 0; i < base.tensor().numel(); ++i) {
      base.tensor()[i] = d(rng);
      off.tensor()[i] = base.tensor()[i] + delta;
    }
    const Psnr p = psnr(off, base);
    o.require(!p.identical, "delta " + g(delta) + " marked identical");
    worst = std::max(worst, std::abs(p.db - 20 * std::log10(255.0 / delta)));
  }
  o.require(worst <= kPsnrTol, "closed-form deviation " + g(worst));
  o.detail << "delta in {1,16,255}, max deviation " << g(worst) << " dB";
  return o;
}

// 6. Pooling invariants.
Outcome pooling() {
  Outcome o;
  std::mt19937_64 rng(61);
  std::size_t bad_sparsity = 0, bad_sum = 0, bad_trip = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t c = 1 + rng() % 4, h = 2 * (1 + rng() % 6), w = 2 * (1 + rng() % 6);
    const auto x = uniform({c, h, w}, rng, -1, 1);
    const auto [p, idx] = max_pool_with_indices(x);
    const auto u = max_unpool(p, idx);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; y += 2)
        for (std::size_t xx = 0; xx < w; xx += 2) {
          int nz = 0;
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx) nz += u.at(ch, y + dy, xx + dx) != 0.0;
          bad_sparsity += nz > 1;
        }
    bad_sum += std::abs(u.sum() - p.sum()) > 1e-12;
    const auto p2 = max_pool_with_indices(u).first;
    for (std::size_t i = 0; i < p.numel(); ++i) bad_trip += p[i] > 0 && p2[i] != p[i];
  }
  o.require(bad_sparsity == 0, std::to_string(bad_sparsity) + " windows with >1 nonzero");
  o.require(bad_sum == 0, std::to_string(bad_sum) + " maps lose mass");
  o.require(bad_trip == 0, std::to_string(bad_trip) + " round-trip mismatches");
  bool ties = true;
  for (int rep = 0; rep < 3; ++rep) {
    ties = ties && max_pool_with_indices(Tensor<double>(Shape{1, 2, 2}, 3.0)).second.argmax[0] == 0;
    ties = ties && max_pool_with_indices(Tensor<double>(Shape{1, 2, 2}, std::vector<double>{0, 5, 5, 5})).second.argmax[0] == 1;
  }
  o.require(ties, "tie-break not first in row-major order");
  o.detail << "1000 maps: sparsity, sum, round trip where p>0; ties -> first row-major";
  return o;
}

// 7. Bicubic degradation.
Outcome degradation() {
  Outcome o;
  std::mt19937_64 rng(71);
  double worst_const = 0, worst_lin = 0, worst_oracle = 0;
  for (int r : {2, 4, 8}) {
    DegradationSpec spec;
    spec.factor = r;
    const std::size_t n = 4 * static_cast<std::size_t>(r);
    for (int trial = 0; trial < 100; ++trial) {
      const double level = std::uniform_real_distribution<double>(0, 255)(rng);
      const auto lr = bicubic_downsample_linear(Tensor<double>(Shape{3, n, n + static_cast<std::size_t>(r)}, level), spec);
      for (double v : lr.vec()) worst_const = std::max(worst_const, std::abs(v - level));
      const auto x = uniform({3, n, n}, rng, -300, 300), y = uniform({3, n, n}, rng, -300, 300);
      const double a = std::uniform_real_distribution<double>(-2, 2)(rng), b = std::uniform_real_distribution<double>(-2, 2)(rng);
      Tensor<double> mix(Shape{3, n, n});
      for (std::size_t i = 0; i < mix.numel(); ++i) mix[i] = a * x[i] + b * y[i];
      const auto lm = bicubic_downsample_linear(mix, spec), lx = bicubic_downsample_linear(x, spec),
                 ly = bicubic_downsample_linear(y, spec);
      for (std::size_t i = 0; i < lm.numel(); ++i) worst_lin = std::max(worst_lin, std::abs(lm[i] - (a * lx[i] + b * ly[i])));
    }
    // Vertical and horizontal step edges at an off-grid position.
    Tensor<double> step(Shape{3, 6 * n, 6 * n});
    for (std::size_t ch = 0; ch < 3; ++ch)
      for (std::size_t yy = 0; yy < 6 * n; ++yy)
        for (std::size_t xx = 0; xx < 6 * n; ++xx) step.at(ch, yy, xx) = (xx > 2 * n + 1 ? 200.0 : 20.0) + (yy > 3 * n + 2 ? 30.0 : 0.0) * ch;
    const auto lib = bicubic_downsample_linear(step, spec);
    const auto ref = oracle::bicubic_downsample_dense(step, static_cast<std::size_t>(r), spec.cubic_a);
    for (std::size_t i = 0; i < lib.numel(); ++i) worst_oracle = std::max(worst_oracle, std::abs(lib[i] - ref[i]));
  }
  o.require(worst_const <= kLinearityTol, "constant preservation " + g(worst_const));
  o.require(worst_lin <= kLinearityTol, "linearity " + g(worst_lin));
  o.require(worst_oracle <= kResampleOracleTol, "step-image oracle " + g(worst_oracle));
  o.detail << "r in {2,4,8}: constant " << g(worst_const) << ", linearity " << g(worst_lin) << ", step oracle "
           << g(worst_oracle) << " (tol " << g(kResampleOracleTol) << ")";
  return o;
}

// Overfit settings: constant rate, no warmup, so every update counts.
RunConfig overfit_config() {
  RunConfig c = mini_config(Mode::end2end, 96);
  c.train.epochs = kOverfitMaxSteps / 2;
  c.train.base_lr = 2e-3;
  c.train.decay_factor = 1;
  c.sr.residual = true;
  return c;
}

// 8. Overfitting two samples.
Outcome overfit() {
  Outcome o;
  DegradationSpec spec;
  const auto data = synth_splits(1, 2, 0, 3, 96, spec);
  RunConfig cfg = overfit_config();
  const auto res = run_experiment<float>(data.train, data.train, cfg);
  const std::size_t steps = res.steps.size();
  const double first = res.history.front().total;
  double best = first;
  std::size_t reached_at = 0;
  for (const auto& e : res.history)
    if (e.total < best) {
      best = e.total;
      if (!reached_at && best <= (1 - kOverfitLossDrop) * first) reached_at = (e.epoch + 1) * data.train.samples.size();
    }
  const double drop = 1 - best / first;
  const double acc = res.evaluation->report.seg.acc;
  o.require(steps <= kOverfitMaxSteps, "too many steps");
  o.require(drop >= kOverfitLossDrop, "loss drop " + g(drop));
  o.require(acc >= kOverfitAccuracy, "pixel accuracy " + g(acc));
  o.detail << "joint loss " << g(first) << " -> " << g(best) << " (drop " << g(100 * drop) << "%";
  if (reached_at) o.detail << ", 90% by step " << reached_at;
  o.detail << ") in " << steps << " steps; pixel accuracy " << g(acc);
  return o;
}

// Directional comparison settings. The SR network predicts a correction to
// the bicubic upsampling, is first trained on the reconstruction loss alone,
// then joins at a hundredth of the segmentation rate.
RunConfig directional_config(Mode mode, std::uint64_t seed) {
  RunConfig c = mini_config(mode, 96);
  c.train.epochs = 30;
  c.train.base_lr = 1e-3;
  c.train.seed = seed;
  c.train.sr_warmup_epochs = 30;
  c.train.sr_optimizer.lr_scale = 0.01;
  c.sr.residual = true;
  return c;
}

// 9. End-to-end against the interpolated-LR baseline.
Outcome directional() {
  Outcome o;
  DegradationSpec spec;
  const auto data = synth_splits(100, 16, 8, 3, 96, spec);
  std::vector<double> lr_scores, e2e_scores;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    lr_scores.push_back(run_experiment<float>(data.train, data.test, directional_config(Mode::lr_baseline, seed))
                            .evaluation->report.seg.norm_acc);
    e2e_scores.push_back(run_experiment<float>(data.train, data.test, directional_config(Mode::end2end, seed))
                             .evaluation->report.seg.norm_acc);
  }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  const double ml = median(lr_scores), me = median(e2e_scores);
  o.require(me >= ml, "median end-to-end below LR baseline");
  o.detail << "median norm_acc end-to-end " << g(me) << " vs LR " << g(ml) << " (seeds:";
  for (std::size_t i = 0; i < 3; ++i) o.detail << " " << g(e2e_scores[i]) << "/" << g(lr_scores[i]);
  o.detail << ")";
  return o;
}

// 10. Schedule and resumption.
Outcome schedule_and_resume() {
  Outcome o;
  TrainConfig t;
  o.require(lr_at_epoch(0, t) == 1e-5 && lr_at_epoch(149, t) == 1e-5, "rate before epoch 150");
  o.require(std::abs(lr_at_epoch(150, t) - 1e-6) < 1e-18 && std::abs(lr_at_epoch(299, t) - 1e-6) < 1e-18,
            "rate from epoch 150");
  DegradationSpec spec;
  const auto data = synth_splits(81, 3, 1, 3, 32, spec);
  RunConfig cfg = mini_config(Mode::end2end, 32);
  cfg.train.epochs = 4;
  cfg.train.base_lr = 1e-3;
  cfg.train.sr_warmup_epochs = 1;
  const auto dir = std::filesystem::temp_directory_path() / "sr2seg_acceptance_resume";
  std::filesystem::remove_all(dir);
  const auto full = run_experiment<float>(data.train, data.test, cfg);
  ExperimentOptions first;
  first.out_dir = dir;
  first.stop_after_epochs = 2;
  run_experiment<float>(data.train, data.test, cfg, first);
  ExperimentOptions second;
  second.resume_from = dir / "checkpoints" / "last.ckpt";
  const auto rest = run_experiment<float>(data.train, data.test, cfg, second);
  const std::size_t offset = full.steps.size() - rest.steps.size();
  bool exact = offset == 2 * data.train.samples.size();
  for (std::size_t i = 0; exact && i < rest.steps.size(); ++i)
    exact = full.steps[offset + i].total == rest.steps[i].total && full.steps[offset + i].l1 == rest.steps[i].l1 &&
            full.steps[offset + i].ce == rest.steps[i].ce;
  exact = exact && full.evaluation->report.confusion == rest.evaluation->report.confusion;
  o.require(exact, "resumed losses differ from the uninterrupted run");
  std::filesystem::remove_all(dir);
  o.detail << "1e-5 -> 1e-6 at epoch 150 of 300; resume after 2 of 4 epochs bit-exact over " << rest.steps.size()
           << " steps";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  // Optional arguments restrict the run to the named criteria.
  const std::vector<std::string> only(argv + 1, argv + argc);
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"sr-shape", sr_shapes},        {"gradients", gradients},    {"coupling", coupling},
      {"metric-oracle", metric_oracle}, {"psnr", psnr_closed_forms}, {"pooling", pooling},
      {"degradation", degradation},   {"overfit", overfit},        {"directional", directional},
      {"schedule-resume", schedule_and_resume},
  };
  int failed = 0;
  std::size_t ran = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!only.empty() && std::find(only.begin(), only.end(), criteria[i].first) == only.end()) continue;
    ++ran;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "exception: " << e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::printf("%02zu %-16s %s  %s [%.1fs]\n", i + 1, criteria[i].first, o.pass ? "PASS" : "FAIL", o.detail.str().c_str(),
                secs);
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failed, ran);
  return failed ? 1 : 0;
}
