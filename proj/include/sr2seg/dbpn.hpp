#pragma once

// Dense back-projection super-resolution network.
//
// Layout: 3x3 conv (3 -> feat0) and 1x1 conv (feat0 -> nr) extract LR
// features; T up-projection units interleaved with T-1 down-projection units
// alternate between HR and LR feature spaces; all T HR maps are concatenated
// and a 3x3 conv reconstructs the image. From the second down-projection on,
// each unit sees the concatenation of all previous outputs of the opposite
// kind, squeezed back to nr channels by a 1x1 conv.

#include <algorithm>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "sr2seg/ops.hpp"
#include "sr2seg/resample.hpp"
#include "sr2seg/tape.hpp"

namespace sr2seg {

struct SRConfig {
  int factor = 4;
  std::size_t stages = 7;
  std::size_t feat0 = 256;
  std::size_t nr = 64;
  // Predict a correction on top of the bicubic upsampling of the input
  // instead of the image itself.
  bool residual = false;

  /// Projection kernel/stride/padding per scale factor.
  ConvGeometry projection() const {
    switch (factor) {
      case 2: return {6, 2, 2};
      case 4: return {8, 4, 2};
      case 8: return {12, 8, 2};
      default: throw std::invalid_argument("SR factor must be 2, 4 or 8, got " + std::to_string(factor));
    }
  }

  void validate() const {
    const ConvGeometry g = projection();
    if (stages < 1) throw std::invalid_argument("SR stages must be >= 1");
    if (feat0 < 1 || nr < 1) throw std::invalid_argument("SR channel widths must be >= 1");
    for (std::size_t h : {1u, 2u, 7u, 60u})
      if (g.deconv_out(h) != h * static_cast<std::size_t>(factor))
        throw std::invalid_argument("projection geometry violates (in-1)*stride - 2*pad + kernel = in*r");
  }
};

template <class T>
struct SrOutput {
  VarId raw;      // reconstruction conv output
  VarId clamped;  // clamped to [0, 1], straight-through gradient
};

template <class T>
class Dbpn {
 public:
  struct Layer {
    std::size_t weight = 0, bias = 0;
    std::optional<std::size_t> slope;  // PReLU slope, absent for the reconstruction conv
    ConvGeometry geom;
    bool transposed = false;
  };

  struct Unit {
    std::optional<Layer> compress;  // dense units only
    Layer first, second, third;
  };

  Dbpn(SRConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    const ConvGeometry proj = cfg_.projection();
    const std::size_t nr = cfg_.nr;
    feat0_ = make_layer("feat0", 3, cfg_.feat0, {3, 1, 1}, false, true, rng);
    feat1_ = make_layer("feat1", cfg_.feat0, nr, {1, 1, 0}, false, true, rng);
    for (std::size_t t = 0; t < cfg_.stages; ++t) {
      // up unit t consumes t LR maps once dense connections kick in (t >= 2)
      ups_.push_back(make_unit("up" + std::to_string(t + 1), t >= 2 ? t : 1, true, proj, rng));
      if (t + 1 < cfg_.stages)
        downs_.push_back(make_unit("down" + std::to_string(t + 1), t >= 1 ? t + 1 : 1, false, proj, rng));
    }
    recon_ = make_layer("recon", cfg_.stages * nr, 3, {3, 1, 1}, false, false, rng, cfg_.residual ? 0.1 : 1.0);
  }

  const SRConfig& config() const { return cfg_; }
  ParameterStore<T>& params() { return params_; }
  const ParameterStore<T>& params() const { return params_; }
  const Unit& up_unit(std::size_t i) const { return ups_.at(i); }
  const Unit& down_unit(std::size_t i) const { return downs_.at(i); }

  VarId apply(Tape<T>& tape, const Layer& l, VarId x) {
    VarId w = tape.parameter(params_[l.weight]);
    VarId b = tape.parameter(params_[l.bias]);
    VarId y = l.transposed ? conv_transpose2d(tape, x, w, b, l.geom) : conv2d(tape, x, w, b, l.geom);
    if (l.slope) y = prelu(tape, y, tape.parameter(params_[*l.slope]));
    return y;
  }

  /// H0 = up(L); L0 = down(H0); H1 = up(L0 - L); returns H0 + H1.
  VarId up_projection(Tape<T>& tape, const Unit& u, VarId lr) {
    check_channels(tape, u, lr, "up_projection");
    if (u.compress) lr = apply(tape, *u.compress, lr);
    VarId h0 = apply(tape, u.first, lr);
    VarId l0 = apply(tape, u.second, h0);
    VarId h1 = apply(tape, u.third, sub(tape, l0, lr));
    return add(tape, h1, h0);
  }

  /// L0 = down(H); H0 = up(L0); L1 = down(H0 - H); returns L0 + L1.
  VarId down_projection(Tape<T>& tape, const Unit& u, VarId hr) {
    check_channels(tape, u, hr, "down_projection");
    const auto r = static_cast<std::size_t>(cfg_.factor);
    const Tensor<T>& hv = tape.value(hr);
    if (hv.height() % r || hv.width() % r)
      throw std::invalid_argument("down_projection: input " + shape_str(hv.shape()) + " not divisible by factor");
    if (u.compress) hr = apply(tape, *u.compress, hr);
    VarId l0 = apply(tape, u.first, hr);
    VarId h0 = apply(tape, u.second, l0);
    VarId l1 = apply(tape, u.third, sub(tape, h0, hr));
    return add(tape, l1, l0);
  }

  /// lr: 3 x h x w in [0, 1]. Returns the raw 3 x rh x rw reconstruction and
  /// its clamped copy.
  SrOutput<T> forward(Tape<T>& tape, VarId lr) {
    const Tensor<T>& x = tape.value(lr);
    if (x.rank() != 3 || x.channels() != 3)
      throw std::invalid_argument("sr forward expects a 3-channel image, got " + shape_str(x.shape()));
    VarId f = apply(tape, feat1_, apply(tape, feat0_, lr));
    VarId h1 = up_projection(tape, ups_[0], f);
    VarId concat_h = h1;
    if (cfg_.stages >= 2) {
      VarId l1 = down_projection(tape, downs_[0], h1);
      VarId h2 = up_projection(tape, ups_[1], l1);
      concat_h = concat(tape, h2, h1);
      VarId concat_l = l1;
      for (std::size_t t = 2; t < cfg_.stages; ++t) {
        VarId l = down_projection(tape, downs_[t - 1], concat_h);
        concat_l = concat(tape, l, concat_l);
        VarId h = up_projection(tape, ups_[t], concat_l);
        concat_h = concat(tape, h, concat_h);
      }
    }
    VarId raw = apply(tape, recon_, concat_h);
    if (cfg_.residual) {
      const std::size_t r = static_cast<std::size_t>(cfg_.factor);
      Tensor<double> base = resample_linear(x.template cast<double>(), x.height() * r, x.width() * r, -0.5, false);
      for (auto& v : base.vec()) v = std::clamp(v, 0.0, 1.0);
      raw = add(tape, raw, tape.constant(base.cast<T>()));
    }
    return {raw, clamp_straight_through(tape, raw, T{0}, T{1})};
  }

 private:
  Layer make_layer(const std::string& name, std::size_t in, std::size_t out, ConvGeometry g, bool transposed,
                   bool activation, std::mt19937_64& rng, double gain = 1.4142135623730951) {
    Layer l;
    l.geom = g;
    l.transposed = transposed;
    const std::size_t k2 = g.kernel * g.kernel;
    if (transposed) {
      const std::size_t fan_in = std::max<std::size_t>(1, in * k2 / (g.stride * g.stride));
      l.weight = params_.add(name + ".weight", fan_in_normal<T>({in, out, g.kernel, g.kernel}, fan_in, rng, gain));
    } else {
      l.weight = params_.add(name + ".weight", fan_in_normal<T>({out, in, g.kernel, g.kernel}, in * k2, rng, gain));
    }
    l.bias = params_.add(name + ".bias", Tensor<T>(Shape{out}));
    if (activation) l.slope = params_.add(name + ".prelu", Tensor<T>(Shape{1}, T(0.25)));
    return l;
  }

  Unit make_unit(const std::string& name, std::size_t inputs, bool up, ConvGeometry proj, std::mt19937_64& rng) {
    const std::size_t nr = cfg_.nr;
    Unit u;
    if (inputs > 1) u.compress = make_layer(name + ".compress", inputs * nr, nr, {1, 1, 0}, false, true, rng);
    u.first = make_layer(name + ".conv1", nr, nr, proj, up, true, rng);
    u.second = make_layer(name + ".conv2", nr, nr, proj, !up, true, rng);
    u.third = make_layer(name + ".conv3", nr, nr, proj, up, true, rng);
    return u;
  }

  void check_channels(Tape<T>& tape, const Unit& u, VarId x, const char* what) const {
    const std::size_t expect = u.compress ? params_[u.compress->weight].value.dim(1) : cfg_.nr;
    const Tensor<T>& v = tape.value(x);
    if (v.rank() != 3 || v.channels() != expect)
      throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(expect) + " channels, got " +
                                  shape_str(v.shape()));
  }

  SRConfig cfg_;
  ParameterStore<T> params_;
  Layer feat0_, feat1_, recon_;
  std::vector<Unit> ups_, downs_;
};

}  // namespace sr2seg
